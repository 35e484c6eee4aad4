"""Dense statevector simulation for 1-8 qubits with analytic gradients.

States are complex128 arrays of length ``2**n``; qubit 0 is the most
significant bit of the basis index. All entry points accept either a single
parameter set or a leading batch axis on ``features`` / ``weights``; gates are
applied to the whole batch at once.

Gate conventions::

    RX(t) = [[c, -i s], [-i s, c]]          c = cos(t/2), s = sin(t/2)
    RY(t) = [[c, -s], [s, c]]
    RZ(t) = diag(exp(-i t/2), exp(i t/2))
    U1(l) = diag(1, exp(i l))
    U2(p, l) = U3(pi/2, p, l)
    U3(t, p, l) = [[c, -exp(i l) s], [exp(i p) s, exp(i (p + l)) c]]

Two-qubit gates are written ``KIND control target``; CRX applies RX on the
target when the control is |1>.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .exceptions import ConfigurationError, DimensionError, FormatError, UnsupportedOracleError

MAX_QUBITS = 8

N_PARAMS = {
    "H": 0, "CNOT": 0, "CZ": 0,
    "RX": 1, "RY": 1, "RZ": 1, "U1": 1, "CRX": 1,
    "U2": 2, "U3": 3,
}
CONTROLLED = frozenset({"CNOT", "CZ", "CRX"})
BASES = ("X", "Y", "Z")

_SQ2 = 1.0 / math.sqrt(2.0)
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_FIXED = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQ2,
    "CNOT": _PAULI["X"],
    "CZ": _PAULI["Z"],
}


@dataclass(frozen=True)
class Param:
    """Where a gate angle comes from: a constant, a feature, or a weight."""

    role: str
    index: int = -1
    value: float = 0.0

    def __post_init__(self):
        if self.role not in ("const", "feature", "weight"):
            raise ConfigurationError(f"unknown parameter role {self.role!r}")
        if self.role != "const" and self.index < 0:
            raise ConfigurationError(f"{self.role} parameter needs a non-negative index")

    @classmethod
    def const(cls, value: float) -> "Param":
        return cls("const", value=float(value))

    @classmethod
    def feature(cls, index: int) -> "Param":
        return cls("feature", index=int(index))

    @classmethod
    def weight(cls, index: int) -> "Param":
        return cls("weight", index=int(index))

    def __str__(self) -> str:
        if self.role == "const":
            return f"const:{self.value!r}"
        return f"{self.role}:{self.index}"


@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: int | None = None
    params: tuple[Param, ...] = ()

    def __post_init__(self):
        if self.kind not in N_PARAMS:
            raise ConfigurationError(f"unknown gate kind {self.kind!r}")
        if len(self.params) != N_PARAMS[self.kind]:
            raise ConfigurationError(
                f"{self.kind} takes {N_PARAMS[self.kind]} parameters, got {len(self.params)}"
            )
        if (self.kind in CONTROLLED) != (self.control is not None):
            raise ConfigurationError(f"{self.kind}: control wire {'missing' if self.control is None else 'not allowed'}")
        if self.control is not None and self.control == self.target:
            raise ConfigurationError(f"{self.kind}: control and target are both wire {self.target}")

    @property
    def wires(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)


@dataclass(frozen=True)
class CircuitProgram:
    """Gate list plus the (wire, basis) pairs whose expectations are returned."""

    n_qubits: int
    gates: tuple[GateOp, ...]
    measurements: tuple[tuple[int, str], ...]
    n_features: int = field(init=False)
    n_weights: int = field(init=False)

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "measurements", tuple((int(w), b) for w, b in self.measurements))
        for g in self.gates:
            for w in g.wires:
                if not 0 <= w < self.n_qubits:
                    raise ConfigurationError(f"{g.kind} on wire {w} outside {self.n_qubits}-qubit register")
        wires = [w for w, _ in self.measurements]
        if len(set(wires)) != len(wires):
            raise ConfigurationError(f"measured wires must be distinct, got {wires}")
        for w, b in self.measurements:
            if not 0 <= w < self.n_qubits:
                raise ConfigurationError(f"measured wire {w} outside {self.n_qubits}-qubit register")
            if b not in BASES:
                raise ConfigurationError(f"measurement basis must be X, Y or Z, got {b!r}")
        for role in ("feature", "weight"):
            used = {p.index for g in self.gates for p in g.params if p.role == role}
            if used != set(range(len(used))):
                raise ConfigurationError(f"{role} indices must be dense 0..k-1, got {sorted(used)}")
            object.__setattr__(self, f"n_{role}s", len(used))


def _check_n_qubits(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in [1, {MAX_QUBITS}], got {n!r}")


def init_state(n_qubits: int) -> np.ndarray:
    """|0...0> on ``n_qubits`` wires."""
    _check_n_qubits(n_qubits)
    state = np.zeros(2 ** n_qubits, dtype=complex)
    state[0] = 1.0
    return state


# --------------------------------------------------------------------------
# gate matrices, batched over the leading axis of each angle array


def gate_matrix(kind: str, angles: list[np.ndarray]) -> np.ndarray:
    """Single-qubit (target) block of ``kind``; shape ``(batch, 2, 2)``."""
    if kind in _FIXED:
        return _FIXED[kind][None]
    if kind in ("RX", "CRX"):
        (t,) = angles
        c, s = np.cos(t / 2), np.sin(t / 2)
        return _stack(c, -1j * s, -1j * s, c)
    if kind == "RY":
        (t,) = angles
        c, s = np.cos(t / 2), np.sin(t / 2)
        return _stack(c, -s, s, c)
    if kind == "RZ":
        (t,) = angles
        z = np.zeros_like(t)
        return _stack(np.exp(-0.5j * t), z, z, np.exp(0.5j * t))
    if kind == "U1":
        (lam,) = angles
        z = np.zeros_like(lam)
        return _stack(np.ones_like(lam), z, z, np.exp(1j * lam))
    if kind == "U2":
        phi, lam = angles
        return _u3(np.full_like(phi, math.pi / 2), phi, lam)
    if kind == "U3":
        return _u3(*angles)
    raise ConfigurationError(f"unknown gate kind {kind!r}")


def gate_derivative(kind: str, angles: list[np.ndarray], slot: int) -> np.ndarray:
    """d(gate_matrix)/d(angles[slot]); controlled gates return the target block."""
    if kind in ("RX", "CRX"):
        (t,) = angles
        c, s = np.cos(t / 2) / 2, np.sin(t / 2) / 2
        return _stack(-s, -1j * c, -1j * c, -s)
    if kind == "RY":
        (t,) = angles
        c, s = np.cos(t / 2) / 2, np.sin(t / 2) / 2
        return _stack(-s, -c, c, -s)
    if kind == "RZ":
        (t,) = angles
        z = np.zeros_like(t)
        return _stack(-0.5j * np.exp(-0.5j * t), z, z, 0.5j * np.exp(0.5j * t))
    if kind == "U1":
        (lam,) = angles
        z = np.zeros_like(lam)
        return _stack(z, z, z, 1j * np.exp(1j * lam))
    if kind == "U2":
        phi, lam = angles
        return _du3(np.full_like(phi, math.pi / 2), phi, lam, slot + 1)
    if kind == "U3":
        return _du3(*angles, slot)
    raise ConfigurationError(f"{kind} has no parameters to differentiate")


def _stack(a, b, c, d) -> np.ndarray:
    a, b, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=complex) for v in (a, b, c, d)))
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def _u3(t, p, lam) -> np.ndarray:
    c, s = np.cos(t / 2), np.sin(t / 2)
    return _stack(c, -np.exp(1j * lam) * s, np.exp(1j * p) * s, np.exp(1j * (p + lam)) * c)


def _du3(t, p, lam, slot) -> np.ndarray:
    c, s = np.cos(t / 2), np.sin(t / 2)
    el, ep, epl = np.exp(1j * lam), np.exp(1j * p), np.exp(1j * (p + lam))
    z = np.zeros_like(t)
    if slot == 0:
        return _stack(-s / 2, -el * c / 2, ep * c / 2, -epl * s / 2)
    if slot == 1:
        return _stack(z, z, 1j * ep * s, 1j * epl * c)
    return _stack(z, -1j * el * s, z, 1j * epl * c)


# --------------------------------------------------------------------------
# application to stacks of states; ``psi`` has shape (batch, m, 2**n)


def _apply_1q(psi: np.ndarray, M: np.ndarray, target: int, n: int) -> np.ndarray:
    B, m, _ = psi.shape
    v = psi.reshape(B, m, 2 ** target, 2, 2 ** (n - target - 1))
    if M.shape[0] == 1:
        out = np.einsum("ij,bmajc->bmaic", M[0], v)
    else:
        out = np.einsum("bij,bmajc->bmaic", M, v)
    return out.reshape(B, m, -1)


def _apply_controlled(psi: np.ndarray, M: np.ndarray, control: int, target: int, n: int,
                      drop_idle: bool = False) -> np.ndarray:
    B, m, _ = psi.shape
    v = psi.reshape(B, m, 2 ** control, 2, 2 ** (n - control - 1))
    sub = np.ascontiguousarray(v[:, :, :, 1, :]).reshape(B, m, -1)
    t = target - 1 if target > control else target
    out = v.copy() if not drop_idle else np.zeros_like(v)
    out[:, :, :, 1, :] = _apply_1q(sub, M, t, n - 1).reshape(B, m, 2 ** control, -1)
    return out.reshape(B, m, -1)


def _apply(psi, gate: GateOp, M, n, drop_idle=False):
    if gate.control is None:
        return _apply_1q(psi, M, gate.target, n)
    return _apply_controlled(psi, M, gate.control, gate.target, n, drop_idle)


def _dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


# --------------------------------------------------------------------------
# parameter resolution


def _as_batch(features, weights, program: CircuitProgram):
    f = np.asarray([] if features is None else features, dtype=np.float64)
    w = np.asarray([] if weights is None else weights, dtype=np.float64)
    batched = f.ndim == 2 or w.ndim == 2
    f2 = f if f.ndim == 2 else f.reshape(1, -1)
    w2 = w if w.ndim == 2 else w.reshape(1, -1)
    if f2.shape[1] != program.n_features:
        raise DimensionError(f"program expects {program.n_features} features, got {f2.shape[1]}")
    if w2.shape[1] != program.n_weights:
        raise DimensionError(f"program expects {program.n_weights} weights, got {w2.shape[1]}")
    B = max(f2.shape[0], w2.shape[0])
    for arr, name in ((f2, "features"), (w2, "weights")):
        if arr.shape[0] not in (1, B):
            raise DimensionError(f"{name} batch size {arr.shape[0]} does not match batch size {B}")
    return f2, w2, B, batched


def _angles(gate: GateOp, f2, w2, B, shifts=None, gate_pos=None) -> list[np.ndarray]:
    out = []
    for slot, p in enumerate(gate.params):
        if p.role == "const":
            a = np.full(B, p.value)
        elif p.role == "feature":
            a = np.broadcast_to(f2[:, p.index], (B,)).astype(np.float64)
        else:
            a = np.broadcast_to(w2[:, p.index], (B,)).astype(np.float64)
        if shifts and (gate_pos, slot) in shifts:
            a = a + shifts[(gate_pos, slot)]
        out.append(a)
    return out


def apply_gate(state: np.ndarray, gate: GateOp, features=None, weights=None) -> np.ndarray:
    """Apply one gate to ``state`` (``(2**n,)`` or ``(batch, 2**n)``)."""
    state = np.asarray(state, dtype=complex)
    n = int(round(math.log2(state.shape[-1])))
    for w in gate.wires:
        if not 0 <= w < n:
            raise ConfigurationError(f"{gate.kind} on wire {w} outside {n}-qubit register")
    single = state.ndim == 1
    psi = state.reshape(-1, 1, state.shape[-1])
    f = np.atleast_2d(np.asarray([] if features is None else features, dtype=float))
    w = np.atleast_2d(np.asarray([] if weights is None else weights, dtype=float))
    B = max(psi.shape[0], f.shape[0], w.shape[0])
    M = gate_matrix(gate.kind, _angles(gate, f, w, B))
    if psi.shape[0] != B:
        psi = np.broadcast_to(psi, (B,) + psi.shape[1:])
    out = _apply(psi, gate, M, n)[:, 0]
    return out[0] if single and B == 1 else out


def expectation(state: np.ndarray, wire: int, basis: str) -> np.ndarray | float:
    """<psi| P_wire |psi> for a Pauli ``basis`` in X, Y, Z."""
    state = np.asarray(state, dtype=complex)
    n = int(round(math.log2(state.shape[-1])))
    if not 0 <= wire < n:
        raise ConfigurationError(f"wire {wire} outside {n}-qubit register")
    if basis not in BASES:
        raise ConfigurationError(f"basis must be X, Y or Z, got {basis!r}")
    psi = state.reshape(-1, 1, state.shape[-1])
    val = _expectations(psi, ((wire, basis),), n)[:, 0]
    return float(val[0]) if state.ndim == 1 else val


def _observables(psi: np.ndarray, measurements, n: int) -> np.ndarray:
    """Stack P_k psi for each measured Pauli; ``psi`` is (batch, 1, D)."""
    return np.concatenate([_apply_1q(psi, _PAULI[b][None], w, n) for w, b in measurements], axis=1)


def _expectations(psi: np.ndarray, measurements, n: int) -> np.ndarray:
    if not measurements:
        return np.zeros((psi.shape[0], 0))
    ops = _observables(psi, measurements, n)
    return np.einsum("bmd,bkd->bk", np.conj(psi), ops).real


def simulate(program: CircuitProgram, features=None, weights=None,
             callback: Callable[[int, GateOp, np.ndarray], None] | None = None,
             shifts: dict | None = None) -> np.ndarray:
    """Final state(s) of ``program``; shape ``(batch, 2**n)`` or ``(2**n,)``.

    ``callback(i, gate, states)`` runs after every gate. ``shifts`` maps
    ``(gate position, parameter slot)`` to an angle offset (used by the
    parameter-shift oracle).
    """
    f2, w2, B, batched = _as_batch(features, weights, program)
    n = program.n_qubits
    psi = np.zeros((B, 1, 2 ** n), dtype=complex)
    psi[:, 0, 0] = 1.0
    for i, gate in enumerate(program.gates):
        M = gate_matrix(gate.kind, _angles(gate, f2, w2, B, shifts, i))
        psi = _apply(psi, gate, M, n)
        if callback is not None:
            callback(i, gate, psi[:, 0])
    out = psi[:, 0]
    return out if batched else out[0]


def run_circuit(program: CircuitProgram, features=None, weights=None, shifts=None) -> np.ndarray:
    """Expectation value of each measured (wire, basis) pair."""
    f2, w2, B, batched = _as_batch(features, weights, program)
    psi = simulate(program, f2, w2, shifts=shifts).reshape(B, 1, -1)
    vals = _expectations(psi, program.measurements, program.n_qubits)
    return vals if batched else vals[0]


def adjoint_gradients(program: CircuitProgram, features=None, weights=None):
    """Exact Jacobians of the measured expectations by one reverse sweep.

    Returns ``(d_features, d_weights)`` with shapes ``(..., n_meas, n_features)``
    and ``(..., n_meas, n_weights)``; a gate angle reused across several gates
    accumulates every occurrence.
    """
    f2, w2, B, batched = _as_batch(features, weights, program)
    n = program.n_qubits
    K = len(program.measurements)
    jf = np.zeros((B, K, program.n_features))
    jw = np.zeros((B, K, program.n_weights))
    mats = []
    psi = np.zeros((B, 1, 2 ** n), dtype=complex)
    psi[:, 0, 0] = 1.0
    for gate in program.gates:
        angles = _angles(gate, f2, w2, B)
        M = gate_matrix(gate.kind, angles)
        mats.append((angles, M))
        psi = _apply(psi, gate, M, n)
    if K == 0:
        return (jf, jw) if batched else (jf[0], jw[0])
    lam = _observables(psi, program.measurements, n)
    for gate, (angles, M) in zip(reversed(program.gates), reversed(mats)):
        Md = _dagger(M)
        psi = _apply(psi, gate, Md, n)
        for slot, p in enumerate(gate.params):
            if p.role == "const":
                continue
            dM = gate_derivative(gate.kind, angles, slot)
            mu = _apply(psi, gate, dM, n, drop_idle=True)
            g = 2.0 * np.einsum("bkd,bmd->bk", np.conj(lam), mu).real
            target = jf if p.role == "feature" else jw
            target[:, :, p.index] += g
        lam = _apply(lam, gate, Md, n)
    return (jf, jw) if batched else (jf[0], jw[0])


# --------------------------------------------------------------------------
# parameter-shift oracle

_HALF_PI = math.pi / 2
_C_PLUS = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_C_MINUS = (math.sqrt(2) - 1) / (4 * math.sqrt(2))

# (coefficient, shift) terms of each gate's shift rule; CRX's generator has
# eigenvalues {0, +-1/2}, which needs the four-term rule
SHIFT_RULES = {
    kind: ((0.5, _HALF_PI), (-0.5, -_HALF_PI)) for kind in ("RX", "RY", "RZ", "U1", "U2", "U3")
}
SHIFT_RULES["CRX"] = (
    (_C_PLUS, _HALF_PI), (-_C_PLUS, -_HALF_PI),
    (-_C_MINUS, 3 * _HALF_PI), (_C_MINUS, -3 * _HALF_PI),
)


def parameter_shift_gradient(program: CircuitProgram, features, weights, parameter: tuple[str, int]):
    """d(expectations)/d(parameter) from shifted circuit evaluations.

    ``parameter`` is ``("feature", i)`` or ``("weight", i)``. Every gate that
    reads the parameter is shifted separately and the results are summed.
    """
    role, index = parameter
    count = program.n_features if role == "feature" else program.n_weights
    if role not in ("feature", "weight") or not 0 <= index < count:
        raise ConfigurationError(f"no {role} parameter with index {index}")
    occurrences = [
        (i, slot, g.kind)
        for i, g in enumerate(program.gates)
        for slot, p in enumerate(g.params)
        if p.role == role and p.index == index
    ]
    total = 0.0
    for i, slot, kind in occurrences:
        if kind not in SHIFT_RULES:
            raise UnsupportedOracleError(f"{role} {index} drives a {kind} gate; no shift rule")
        for coeff, shift in SHIFT_RULES[kind]:
            total = total + coeff * run_circuit(program, features, weights, shifts={(i, slot): shift})
    return total


# --------------------------------------------------------------------------
# text format: one gate per line


def dumps_program(program: CircuitProgram) -> str:
    """Serialize to the line-oriented template text format."""
    lines = [f"qubits {program.n_qubits}"]
    for g in program.gates:
        wires = " ".join(str(w) for w in g.wires)
        params = "".join(f" {p}" for p in g.params)
        lines.append(f"{g.kind} {wires}{params}")
    for w, b in program.measurements:
        lines.append(f"measure {w} {b}")
    return "\n".join(lines) + "\n"


def _parse_param(token: str, lineno: int) -> Param:
    role, sep, arg = token.partition(":")
    if not sep:
        raise FormatError(f"line {lineno}: parameter {token!r} is not role:value")
    try:
        if role == "const":
            return Param.const(float(arg))
        return Param(role, index=int(arg))
    except (ValueError, ConfigurationError) as exc:
        raise FormatError(f"line {lineno}: bad parameter {token!r}: {exc}") from None


def loads_program(text: str) -> CircuitProgram:
    """Parse the format written by :func:`dumps_program`. ``#`` starts a comment."""
    n_qubits = None
    gates: list[GateOp] = []
    meas: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        head = tok[0]
        try:
            if head == "qubits":
                n_qubits = int(tok[1])
            elif head == "measure":
                meas.append((int(tok[1]), tok[2]))
            else:
                if head not in N_PARAMS:
                    raise FormatError(f"line {lineno}: unknown gate {head!r}")
                n_w = 2 if head in CONTROLLED else 1
                wires = [int(t) for t in tok[1:1 + n_w]]
                params = tuple(_parse_param(t, lineno) for t in tok[1 + n_w:])
                if len(wires) != n_w:
                    raise FormatError(f"line {lineno}: {head} needs {n_w} wires")
                if n_w == 2:
                    gates.append(GateOp(head, wires[1], wires[0], params))
                else:
                    gates.append(GateOp(head, wires[0], None, params))
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"line {lineno}: cannot parse {raw!r}: {exc}") from None
    if n_qubits is None:
        raise FormatError("missing 'qubits N' line")
    try:
        return CircuitProgram(n_qubits, tuple(gates), tuple(meas))
    except ConfigurationError as exc:
        raise FormatError(str(exc)) from None


def random_program(n_qubits: int, depth: int, rng: np.random.Generator,
                   n_features: int | None = None, kinds: Iterable[str] | None = None) -> CircuitProgram:
    """Random layered program used by tests and benchmarks.

    Each layer puts one random parameterized gate on every wire followed by a
    random two-qubit gate on each neighbouring pair; every wire is measured
    in a random basis.
    """
    one_q = ["RX", "RY", "RZ", "U1", "U2", "U3", "H"]
    two_q = ["CNOT", "CZ", "CRX"]
    if kinds is not None:
        kinds = set(kinds)
        one_q = [k for k in one_q if k in kinds]
        two_q = [k for k in two_q if k in kinds]
    n_features = n_qubits if n_features is None else n_features
    gates: list[GateOp] = []
    n_f = n_w = 0

    def param():
        nonlocal n_f, n_w
        if n_f < n_features and rng.random() < 0.5:
            n_f += 1
            return Param.feature(n_f - 1)
        n_w += 1
        return Param.weight(n_w - 1)

    for _ in range(depth):
        for q in range(n_qubits):
            kind = str(rng.choice(one_q))
            gates.append(GateOp(kind, q, None, tuple(param() for _ in range(N_PARAMS[kind]))))
        if two_q and n_qubits > 1:
            for q in range(n_qubits - 1):
                kind = str(rng.choice(two_q))
                c, t = (q, q + 1) if rng.random() < 0.5 else (q + 1, q)
                gates.append(GateOp(kind, t, c, tuple(param() for _ in range(N_PARAMS[kind]))))
    # unused features are attached so indices stay dense
    for f in range(n_f, n_features):
        gates.append(GateOp("RY", f % n_qubits, None, (Param.feature(f),)))
    meas = tuple((q, str(rng.choice(BASES))) for q in range(n_qubits))
    return CircuitProgram(n_qubits, tuple(gates), meas)

