"""Quantum neural-network layer: angle embedding, variational layers, Pauli readout.

A :class:`CircuitTemplate` expands to a :class:`~hybridqc.qsim.CircuitProgram`
with the layout::

    embedding(features) -> depth x [rotation on every wire (trainable); entangler]
    -> measure every wire

Raw features are squashed to ``pi/2 * tanh(f)`` before they become angles so
that large activations cannot wrap around the rotation period.

Six fixed templates (``registry(1)`` ... ``registry(6)``) are shipped:

====  ======  =====  ============  ========  ==========
 id   qubits  depth  embedding     rotation  entangler
====  ======  =====  ============  ========  ==========
 1    4       1      H-then-RY     RY        ring-CNOT
 2    5       1      H-then-RY     RZ        ladder-CZ
 3    5       2      RX-only       RY        ladder-CRX
 4    5       2      H-then-RY     RY        ladder-CZ
 5    7       1      H-then-RY     RY        ring-CNOT
 6    4       3      U3-pairs      U3        ring-CNOT
====  ======  =====  ============  ========  ==========
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qsim
from .diffcore import Tensor, custom_op
from .exceptions import ConfigurationError, DimensionError
from .qsim import CircuitProgram, GateOp, Param

EMBEDDINGS = ("H-then-RY", "RX-only", "U3-pairs")
ENTANGLERS = ("ring-CNOT", "ladder-CZ", "ladder-CRX")
ROTATIONS = {"RY": 1, "RZ": 1, "U3": 3}

# fixed angle of the CRX entangler; the template's weights live only in the
# rotation layers
CRX_ANGLE = math.pi / 2


@dataclass(frozen=True)
class CircuitTemplate:
    n_qubits: int
    depth: int
    embedding: str = "H-then-RY"
    entangler: str = "ring-CNOT"
    rotation: str = "RY"
    basis: str = "Z"
    template_id: int | None = None

    def __post_init__(self):
        if not 1 <= self.n_qubits <= qsim.MAX_QUBITS:
            raise ConfigurationError(f"qubit count must be in [1, {qsim.MAX_QUBITS}], got {self.n_qubits}")
        if self.depth < 0:
            raise ConfigurationError(f"depth must be >= 0, got {self.depth}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigurationError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        if self.entangler not in ENTANGLERS:
            raise ConfigurationError(f"entangler must be one of {ENTANGLERS}, got {self.entangler!r}")
        if self.rotation not in ROTATIONS:
            raise ConfigurationError(f"rotation must be one of {tuple(ROTATIONS)}, got {self.rotation!r}")
        if self.basis not in qsim.BASES:
            raise ConfigurationError(f"basis must be X, Y or Z, got {self.basis!r}")

    @property
    def n_weights(self) -> int:
        return self.depth * self.n_qubits * ROTATIONS[self.rotation]

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id, "n_qubits": self.n_qubits, "depth": self.depth,
            "embedding": self.embedding, "entangler": self.entangler,
            "rotation": self.rotation, "basis": self.basis,
        }


_REGISTRY = {
    1: CircuitTemplate(4, 1, "H-then-RY", "ring-CNOT", "RY", template_id=1),
    2: CircuitTemplate(5, 1, "H-then-RY", "ladder-CZ", "RZ", template_id=2),
    3: CircuitTemplate(5, 2, "RX-only", "ladder-CRX", "RY", template_id=3),
    4: CircuitTemplate(5, 2, "H-then-RY", "ladder-CZ", "RY", template_id=4),
    5: CircuitTemplate(7, 1, "H-then-RY", "ring-CNOT", "RY", template_id=5),
    6: CircuitTemplate(4, 3, "U3-pairs", "ring-CNOT", "U3", template_id=6),
}


def registry(template_id: int) -> CircuitTemplate:
    """One of the six shipped templates."""
    try:
        return _REGISTRY[int(template_id)]
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError(f"unknown template id {template_id!r}; choose 1..6") from None


def squash(features):
    """Map unbounded features to rotation angles in (-pi/2, pi/2)."""
    return (math.pi / 2) * np.tanh(features)


def embed_features(template: CircuitTemplate, features=None) -> list[GateOp]:
    """Embedding gates; feature ``i`` is read through ``Param.feature(i)``.

    When ``features`` is given only its length is checked.
    """
    n = template.n_qubits
    if features is not None and np.shape(features)[-1] != n:
        raise DimensionError(f"template has {n} qubits but got {np.shape(features)[-1]} features")
    gates: list[GateOp] = []
    if template.embedding == "H-then-RY":
        gates += [GateOp("H", q) for q in range(n)]
        gates += [GateOp("RY", q, None, (Param.feature(q),)) for q in range(n)]
    elif template.embedding == "RX-only":
        gates += [GateOp("RX", q, None, (Param.feature(q),)) for q in range(n)]
    else:
        gates += [
            GateOp("U3", q, None, (Param.feature(q), Param.feature((q + 1) % n), Param.const(0.0)))
            for q in range(n)
        ]
    return gates


def _entangler(template: CircuitTemplate) -> list[GateOp]:
    n = template.n_qubits
    if n == 1:
        return []
    if template.entangler == "ring-CNOT":
        pairs = [(q, (q + 1) % n) for q in range(n)]
        return [GateOp("CNOT", t, c) for c, t in pairs]
    if template.entangler == "ladder-CZ":
        return [GateOp("CZ", q + 1, q) for q in range(n - 1)]
    return [GateOp("CRX", q + 1, q, (Param.const(CRX_ANGLE),)) for q in range(n - 1)]


def expand_template(template: CircuitTemplate, weights=None, features=None) -> CircuitProgram:
    """Full program for ``template``; ``weights``/``features`` are length-checked only."""
    if weights is not None and np.shape(weights)[-1] != template.n_weights:
        raise DimensionError(
            f"template expects {template.n_weights} weights, got {np.shape(weights)[-1]}"
        )
    n, k = template.n_qubits, ROTATIONS[template.rotation]
    gates = embed_features(template, features)
    for layer in range(template.depth):
        for q in range(n):
            base = (layer * n + q) * k
            gates.append(GateOp(template.rotation, q, None, tuple(Param.weight(base + j) for j in range(k))))
        gates += _entangler(template)
    meas = tuple((q, template.basis) for q in range(n))
    return CircuitProgram(n, tuple(gates), meas)


def init_weights(template: CircuitTemplate, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
    """Uniform(-scale, scale) starting angles."""
    return rng.uniform(-scale, scale, size=template.n_weights)


def qnn_forward(template: CircuitTemplate, features: Tensor, weights: Tensor,
                program: CircuitProgram | None = None) -> Tensor:
    """Differentiable quantum layer: squashed features -> Pauli expectations.

    ``features`` is ``(n_qubits,)`` or ``(batch, n_qubits)``. The backward
    pass uses adjoint differentiation through the circuit and the tanh squash.
    """
    if features.shape[-1] != template.n_qubits:
        raise DimensionError(
            f"template has {template.n_qubits} qubits but got features of shape {features.shape}"
        )
    if weights.shape != (template.n_weights,):
        raise DimensionError(f"template expects weights of shape ({template.n_weights},), got {weights.shape}")
    program = program or expand_template(template)
    angles = squash(features.data)
    out = qsim.run_circuit(program, angles, weights.data)

    def vjp(g):
        jf, jw = qsim.adjoint_gradients(program, angles, weights.data)
        dsquash = (math.pi / 2) * (1.0 - np.tanh(features.data) ** 2)
        if features.ndim == 1:
            gf = (g @ jf) * dsquash
            gw = g @ jw
        else:
            gf = np.einsum("bk,bkn->bn", g, jf) * dsquash
            gw = np.einsum("bk,bkw->w", g, jw)
        return gf, gw

    return custom_op("qnn", (features, weights), out, vjp)


@dataclass
class QnnLayer:
    """A template bound to a trainable weight vector."""

    template: CircuitTemplate
    weights: np.ndarray
    program: CircuitProgram = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.program = expand_template(self.template, self.weights)

    def __call__(self, features, weights: Tensor | None = None):
        if not isinstance(features, Tensor):
            features = Tensor(features)
        w = weights if weights is not None else Tensor(self.weights)
        return qnn_forward(self.template, features, w, self.program)
