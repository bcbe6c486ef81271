"""Online preference-update rules and their executable sanity checks.

Six rules share one signature style (state in, new state out; all pure):

* ``tk_update``       per-swipe projection damped by ``||a||^2 + alpha``;
                      raw magnitude is retained (no post-step normalization)
* ``k_nonorm_update`` plain Kaczmarz projection (the alpha -> 0 limit)
* ``nk_update``       fixed-step update followed by L2 re-normalization
* ``ogd_update``      fixed-rate gradient step on the unit candidate
* ``block_tk_update`` one regularized Gram solve over a whole session
* ``block_nk_update`` the block solve followed by a single normalization

A zero hinge residual is a no-op everywhere; the normalizing rules
re-project onto the unit sphere but never change direction.

Two checkable properties ship as operations rather than prose:
``norm_bound_check`` (the damped rule's norm growth bound) and
``decay_measurement`` (the exponential forgetting induced by per-step
normalization, measured on an orthogonal worst-case construction).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import HyperParams, PreferenceState, TagVector, normalize, row_norm_sq

__all__ = [
    "DecayMeasurement",
    "DegenerateUpdateError",
    "GramDiagnostics",
    "GramFactorizationError",
    "MethodKind",
    "NormBoundResult",
    "SessionBatch",
    "UpdateMethod",
    "apply_sequential",
    "block_nk_update",
    "block_tk_update",
    "decay_measurement",
    "gram_solve",
    "hinge_residual",
    "k_nonorm_update",
    "nk_update",
    "norm_bound_check",
    "ogd_update",
    "tk_update",
]


class DegenerateUpdateError(RuntimeError):
    """An update step produced an exactly-zero vector."""


class GramFactorizationError(RuntimeError):
    """The SPD factorization failed; carries the offending Gram matrix."""

    def __init__(self, message: str, gram: np.ndarray):
        super().__init__(message)
        self.gram = gram


class MethodKind(Enum):
    TK = "TK"
    BLOCK_TK = "Block-TK"
    BLOCK_NK = "Block-NK"
    NK = "NK"
    K_NONORM = "K-NoNorm"
    OGD = "OGD"


@dataclass(frozen=True)
class UpdateMethod:
    """An update rule plus its hyperparameters."""

    kind: MethodKind
    params: HyperParams = HyperParams()

    @property
    def name(self) -> str:
        if self.kind is MethodKind.OGD:
            return f"OGD-{self.params.eta:g}"
        return self.kind.value

    @property
    def is_block(self) -> bool:
        return self.kind in (MethodKind.BLOCK_TK, MethodKind.BLOCK_NK)

    @property
    def uses_normalized_candidates(self) -> bool:
        # the fixed-step rules consume unit candidates; the projection
        # rules consume raw tag vectors so their denominators vary
        return self.kind in (MethodKind.NK, MethodKind.OGD)


@dataclass(frozen=True)
class SessionBatch:
    """One session's raw candidate rows (k x d) and hinge residuals (k,).

    Rows whose residual is zero are kept: the joint solve may still
    assign them nonzero coefficients.
    """

    rows: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        res = np.asarray(self.residuals, dtype=np.float64)
        if rows.ndim != 2 or res.ndim != 1:
            raise ValueError("rows must be 2-D and residuals 1-D")
        if rows.shape[0] != res.shape[0]:
            raise ValueError(
                f"row/residual count mismatch: {rows.shape[0]} vs {res.shape[0]}"
            )
        if rows.shape[0] < 1:
            raise ValueError("a session batch needs at least one row")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "residuals", res)

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_swipes(
        cls, tags: Sequence[TagVector], residuals: Sequence[float]
    ) -> "SessionBatch":
        return cls(np.stack([t.bits for t in tags]), np.asarray(residuals))


@dataclass(frozen=True)
class GramDiagnostics:
    """Spectrum summary of the regularized Gram matrix (monitoring only)."""

    condition_number: float
    min_eigenvalue: float


def hinge_residual(score: float, label, theta: float, delta: float) -> float:
    """Signed margin violation driving every update rule.

    A like pulls until the score clears ``theta + delta``; a pass pushes
    until it drops below ``theta - delta``.  Zero means the margin is
    already satisfied and no update occurs.
    """
    if int(label) == 1:
        return max(0.0, (theta + delta) - score)
    return -max(0.0, score - (theta - delta))


def tk_update(
    v: PreferenceState, a: TagVector, r: float, alpha: float
) -> PreferenceState:
    """Damped projection step ``v + r / (||a||^2 + alpha) * a``.

    No normalization afterwards: the raw vector accumulates magnitude and
    only the inference-time direction is unit norm.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if r == 0.0:
        return v
    coef = r / (row_norm_sq(a) + alpha)
    return v.evolved(v.raw + coef * a.bits, observations=1)


def k_nonorm_update(v: PreferenceState, a: TagVector, r: float) -> PreferenceState:
    """Plain projection ``v + r / ||a||^2 * a`` (no damping, no renorm)."""
    if r == 0.0:
        return v
    coef = r / row_norm_sq(a)
    return v.evolved(v.raw + coef * a.bits, observations=1)


def nk_update(
    v: PreferenceState, a: TagVector, r: float, eta: float
) -> PreferenceState:
    """Fixed step on the unit candidate followed by L2 re-normalization.

    The output is always unit norm.  Exact cancellation of the stepped
    vector raises DegenerateUpdateError so the caller can skip the swipe.
    """
    if not 0 < eta <= 1:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    stepped = v.raw + (eta * r) * a.unit
    n = float(np.linalg.norm(stepped))
    if n == 0.0:
        raise DegenerateUpdateError("update cancelled the preference vector")
    return v.evolved(stepped / n, observations=1 if r != 0.0 else 0)


def ogd_update(
    v: PreferenceState, a: TagVector, r: float, eta: float
) -> PreferenceState:
    """Fixed-rate step ``v + eta * r * unit(a)``; no post-normalization.

    On unit-norm candidates this coincides with the damped projection at
    ``eta = 1 / (1 + alpha)``; on raw candidates the two genuinely differ.
    """
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if r == 0.0:
        return v
    return v.evolved(v.raw + (eta * r) * a.unit, observations=1)


def apply_sequential(
    v: PreferenceState, method: UpdateMethod, a: TagVector, r: float
) -> PreferenceState:
    """Dispatch one swipe through a per-swipe rule."""
    kind, hp = method.kind, method.params
    if kind is MethodKind.TK:
        return tk_update(v, a, r, hp.alpha)
    if kind is MethodKind.NK:
        return nk_update(v, a, r, hp.eta)
    if kind is MethodKind.K_NONORM:
        return k_nonorm_update(v, a, r)
    if kind is MethodKind.OGD:
        return ogd_update(v, a, r, hp.eta)
    raise ValueError(f"{method.name} is a block rule; build a SessionBatch")


def gram_solve(
    batch: SessionBatch, alpha: float
) -> Tuple[np.ndarray, GramDiagnostics]:
    """Solve ``(A A^T + alpha I) c = r`` via a Cholesky factorization.

    alpha > 0 makes the k x k system symmetric positive definite, so a
    direct SPD factorization is exact up to round-off.  Returns the
    coefficients and a spectrum summary of the regularized Gram matrix.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    rows = batch.rows
    gram = rows @ rows.T + alpha * np.eye(batch.k)
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as exc:  # unreachable for alpha > 0 in exact arithmetic
        raise GramFactorizationError(
            f"SPD factorization failed for a {batch.k}x{batch.k} Gram matrix",
            gram=gram,
        ) from exc
    coef = cho_solve(factor, batch.residuals)
    eigenvalues = np.linalg.eigvalsh(gram)
    diagnostics = GramDiagnostics(
        condition_number=float(eigenvalues[-1] / eigenvalues[0]),
        min_eigenvalue=float(eigenvalues[0]),
    )
    return coef, diagnostics


def block_tk_update(
    v: PreferenceState, batch: SessionBatch, alpha: float
) -> PreferenceState:
    """Session-level projection ``v + A^T (A A^T + alpha I)^{-1} r``.

    With a single row this reproduces tk_update up to factorization
    round-off.  An all-zero residual vector leaves the state untouched.
    """
    if not batch.residuals.any():
        return v
    coef, _ = gram_solve(batch, alpha)
    informative = int(np.count_nonzero(batch.residuals))
    return v.evolved(v.raw + batch.rows.T @ coef, observations=informative)


def block_nk_update(
    v: PreferenceState, batch: SessionBatch, alpha: float
) -> PreferenceState:
    """Block projection followed by one L2 normalization per session."""
    if not batch.residuals.any():
        return v.evolved(normalize(v.raw), observations=0)
    coef, _ = gram_solve(batch, alpha)
    stepped = v.raw + batch.rows.T @ coef
    n = float(np.linalg.norm(stepped))
    if n == 0.0:
        raise DegenerateUpdateError("block update cancelled the preference vector")
    informative = int(np.count_nonzero(batch.residuals))
    return v.evolved(stepped / n, observations=informative)


@dataclass(frozen=True)
class NormBoundResult:
    """Outcome of the norm growth bound ``||v_T|| <= ||v_0|| + R_T/(1+alpha)``.

    ``applicable`` is False when the bound's precondition (every row norm
    >= 1 and alpha <= the smallest row norm) does not hold; in that case
    ``holds`` is informational only.
    """

    lhs: float
    rhs: float
    holds: bool
    applicable: bool


def norm_bound_check(
    trajectory: Iterable[Tuple[float, TagVector]],
    v0: PreferenceState,
    alpha: float,
) -> NormBoundResult:
    """Run damped projections along `trajectory` and test the norm bound.

    The bound relies on ``x / (x^2 + alpha) <= 1 / (1 + alpha)`` which
    needs ``x >= 1`` and ``alpha <= x`` per step; binary tags with at
    least one bit satisfy the first, and the check reports (rather than
    fails) when the second is violated.
    """
    steps = list(trajectory)
    norms = [a.norm for _, a in steps]
    applicable = all(n >= 1.0 for n in norms) and (
        not norms or alpha <= min(norms)
    )
    v = v0
    total_residual = 0.0
    for r, a in steps:
        v = tk_update(v, a, r, alpha)
        total_residual += abs(r)
    lhs = v.norm
    rhs = v0.norm + total_residual / (1.0 + alpha)
    return NormBoundResult(
        lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs + 1e-9), applicable=applicable
    )


@dataclass(frozen=True)
class DecayMeasurement:
    """Measured influence of the starting vector under per-step renorm.

    ``weights[t]`` is the coefficient of the initial direction after t
    normalized updates along mutually orthogonal unit candidates with
    unit residuals (the worst-case alignment regime).  Two envelopes are
    provided: the per-step contraction product ``(1+eta^2)^(-t/2)``,
    which the construction attains, and the steeper ``eta^t`` curve,
    whose empirical validity is reported but not asserted.
    """

    eta: float
    weights: np.ndarray
    eta_envelope: np.ndarray
    contraction_envelope: np.ndarray

    @property
    def eta_envelope_holds(self) -> bool:
        return bool(np.all(self.weights <= self.eta_envelope + 1e-12))


def decay_measurement(eta: float, steps: int, dim: int = 60) -> DecayMeasurement:
    """Measure how fast per-step normalization forgets the starting vector.

    Uses one-hot candidates along distinct axes, orthogonal to the
    starting direction and to each other, so it needs ``steps <= dim - 1``.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if steps > dim - 1:
        raise ValueError(
            f"{steps} orthogonal directions need dim >= {steps + 1}, got {dim}"
        )
    origin = np.zeros(dim)
    origin[0] = 1.0
    v = PreferenceState(origin)
    weights = [1.0]
    for t in range(1, steps + 1):
        bits = np.zeros(dim)
        bits[t] = 1.0
        v = nk_update(v, TagVector(bits, id=t), r=1.0, eta=eta)
        weights.append(float(v.raw[0]))
    t = np.arange(steps + 1)
    return DecayMeasurement(
        eta=eta,
        weights=np.array(weights),
        eta_envelope=eta**t.astype(float),
        contraction_envelope=(1.0 + eta * eta) ** (-0.5 * t),
    )
