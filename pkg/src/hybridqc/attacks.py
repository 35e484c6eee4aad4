"""White-box, untargeted adversarial attacks on binary classifiers.

Any model exposing the :class:`WhiteBoxModel` methods can be attacked;
:class:`~hybridqc.model.HybridClassifier` does. All attacks work on batches
with a leading sample axis and operate in raw ``[0, 1]`` pixel space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .exceptions import ConfigurationError, DataError

ATTACKS = ("fgsm", "pgd", "deepfool")


class WhiteBoxModel(Protocol):
    def loss_input_gradient(self, X, y) -> tuple[np.ndarray, np.ndarray]: ...
    def margin_input_gradient(self, X) -> tuple[np.ndarray, np.ndarray]: ...
    def predict(self, X) -> np.ndarray: ...


@dataclass(frozen=True)
class AttackConfig:
    """Attack kind, L-inf budget and per-attack knobs.

    ``pgd_alpha=None`` means ``epsilon / 4``.
    """

    kind: str
    epsilon: float
    pgd_steps: int = 10
    pgd_alpha: float | None = None
    pgd_random_start: bool = False
    deepfool_max_iter: int = 50
    deepfool_overshoot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ATTACKS:
            raise ConfigurationError(f"attack must be one of {ATTACKS}, got {self.kind!r}")
        if not self.epsilon >= 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.pgd_steps < 1:
            raise ConfigurationError(f"PGD needs at least one step, got {self.pgd_steps}")
        if self.pgd_alpha is not None and not self.pgd_alpha > 0:
            raise ConfigurationError(f"PGD step size must be > 0, got {self.pgd_alpha}")
        if self.deepfool_max_iter < 0 or self.deepfool_overshoot < 0:
            raise ConfigurationError("DeepFool needs max_iter >= 0 and overshoot >= 0")

    @property
    def alpha(self) -> float:
        return self.epsilon / 4 if self.pgd_alpha is None else self.pgd_alpha


def _check_eps(epsilon):
    if not epsilon >= 0:
        raise ConfigurationError(f"epsilon must be >= 0, got {epsilon}")


def fgsm(model: WhiteBoxModel, X, y, epsilon: float) -> np.ndarray:
    """``clip(X + epsilon * sign(grad_X loss), 0, 1)`` with sign(0) = 0."""
    _check_eps(epsilon)
    X = np.asarray(X, dtype=np.float64)
    _, g = model.loss_input_gradient(X, y)
    return np.clip(X + epsilon * np.sign(g), 0.0, 1.0)


def pgd(model: WhiteBoxModel, X, y, epsilon: float, alpha: float | None = None, steps: int = 10,
        random_start: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterated signed-gradient ascent projected onto the epsilon box and [0, 1]."""
    _check_eps(epsilon)
    alpha = epsilon / 4 if alpha is None else alpha
    if alpha < 0 or (alpha == 0 and epsilon > 0) or steps < 1:
        raise ConfigurationError(f"PGD needs alpha > 0 and steps >= 1, got {alpha}, {steps}")
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X - epsilon, X + epsilon
    x = X.copy()
    if random_start:
        rng = rng or np.random.default_rng(0)
        x = np.clip(X + rng.uniform(-epsilon, epsilon, size=X.shape), 0.0, 1.0)
    for _ in range(steps):
        _, g = model.loss_input_gradient(x, y)
        x = np.clip(np.clip(x + alpha * np.sign(g), lo, hi), 0.0, 1.0)
    return x


@dataclass
class DeepFoolResult:
    adversarial: np.ndarray
    perturbation: np.ndarray      # (1 + overshoot) * accumulated step, before projection
    iterations: np.ndarray
    converged: np.ndarray
    stagnated: np.ndarray


def deepfool(model: WhiteBoxModel, X, max_iter: int = 50, overshoot: float = 0.02,
             epsilon: float | None = None) -> DeepFoolResult:
    """Binary DeepFool on the margin ``f = logit_1 - logit_0``.

    Each step moves by ``-f(x) w / |w|^2`` with ``w = grad f(x)``; a sample
    stops once ``X + (1 + overshoot) * total_step`` changes the predicted
    class, and the next linearization point is that overshot input. The final
    perturbation is optionally projected onto the ``epsilon`` L-inf ball, then
    the result is clipped to [0, 1]. Samples whose gradient vanishes
    (``|w| < 1e-12``) are flagged as stagnated and left unperturbed.
    """
    if max_iter < 0 or overshoot < 0:
        raise ConfigurationError("DeepFool needs max_iter >= 0 and overshoot >= 0")
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    flat = X.reshape(n, -1)
    r_tot = np.zeros_like(flat)
    iters = np.zeros(n, dtype=np.int64)
    converged = np.zeros(n, dtype=bool)
    stagnated = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    f0 = None
    x_cur = X
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f, w = model.margin_input_gradient(x_cur[idx])
        if f0 is None:
            f0 = f.copy()
            orig_pos = f0 > 0
        w = w.reshape(len(idx), -1)
        norm2 = np.einsum("ij,ij->i", w, w)
        stuck = norm2 < 1e-24
        if np.any(stuck):
            stagnated[idx[stuck]] = True
            active[idx[stuck]] = False
            r_tot[idx[stuck]] = 0.0
        ok = ~stuck
        moving = idx[ok]
        if moving.size == 0:
            continue
        step = -(f[ok] / norm2[ok])[:, None] * w[ok]
        r_tot[moving] += step
        iters[moving] += 1
        cand = (flat[moving] + (1 + overshoot) * r_tot[moving]).reshape((len(moving),) + X.shape[1:])
        fc, _ = _margins(model, cand)
        flipped = (fc > 0) != orig_pos[moving]
        converged[moving[flipped]] = True
        active[moving[flipped]] = False
        x_cur = x_cur.copy()
        x_cur[moving] = cand
    pert = ((1 + overshoot) * r_tot).reshape(X.shape)
    x_adv = X + pert
    if epsilon is not None:
        _check_eps(epsilon)
        x_adv = np.clip(x_adv, X - epsilon, X + epsilon)
    x_adv = np.clip(x_adv, 0.0, 1.0)
    return DeepFoolResult(x_adv, pert, iters, converged, stagnated)


def _margins(model, X) -> tuple[np.ndarray, None]:
    if hasattr(model, "decision_function"):
        return np.asarray(model.decision_function(X)), None
    f, _ = model.margin_input_gradient(X)
    return f, None


def attack(model: WhiteBoxModel, X, y, config: AttackConfig) -> np.ndarray:
    """Adversarial inputs for ``config``; labels are the true classes."""
    if config.kind == "fgsm":
        return fgsm(model, X, y, config.epsilon)
    if config.kind == "pgd":
        return pgd(model, X, y, config.epsilon, config.alpha, config.pgd_steps,
                   config.pgd_random_start, np.random.default_rng(config.seed))
    return deepfool(model, X, config.deepfool_max_iter, config.deepfool_overshoot,
                    epsilon=config.epsilon).adversarial


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    perturbed: np.ndarray
    clean_predictions: np.ndarray
    adversarial_predictions: np.ndarray
    linf: np.ndarray


@dataclass
class AttackReport:
    config: AttackConfig
    accuracy: float
    clean_accuracy: float
    mean_linf: float
    max_linf: float
    success_rate: float
    batch: AdversarialBatch


def evaluate_under_attack(model: WhiteBoxModel, X, y, config: AttackConfig) -> AttackReport:
    """Accuracy on adversarial versions of ``(X, y)``.

    ``success_rate`` is the fraction of originally correct samples whose
    prediction changed (NaN when none were correct).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0:
        raise DataError("cannot evaluate an attack on an empty set")
    clean = np.asarray(model.predict(X))
    x_adv = attack(model, X, y, config)
    adv = np.asarray(model.predict(x_adv))
    linf = np.abs(x_adv - X).reshape(len(X), -1).max(axis=1)
    correct = clean == y
    success = float(np.mean(adv[correct] != clean[correct])) if correct.any() else float("nan")
    return AttackReport(
        config=config,
        accuracy=float(np.mean(adv == y)),
        clean_accuracy=float(np.mean(correct)),
        mean_linf=float(linf.mean()),
        max_linf=float(linf.max()),
        success_rate=success,
        batch=AdversarialBatch(X, x_adv, clean, adv, linf),
    )
