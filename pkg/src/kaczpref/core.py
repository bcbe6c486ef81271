"""Vector primitives shared across the preference-learning stack.

Candidate profiles are raw binary tag vectors; learned preferences are
real vectors whose magnitude is part of the learner's state.  Anything
that compares the two (scoring, alignment metrics) works on unit-norm
views, never on raw magnitudes, so every scoring path goes through
:func:`normalize` / :func:`cosine_score`.

Dimensionality is a run-time value: tests use tiny vectors, the default
simulation uses ``DEFAULT_DIM = 60``.  Degenerate (zero-norm) inputs
raise :class:`DegenerateVectorError` instead of propagating NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "DEFAULT_DIM",
    "DegenerateVectorError",
    "HyperParams",
    "Label",
    "PreferenceState",
    "TagVector",
    "cosine_score",
    "normalize",
    "row_norm_sq",
]

DEFAULT_DIM = 60


class DegenerateVectorError(ValueError):
    """A zero-norm (or non-finite) vector reached a direction-dependent op."""


class Label(IntEnum):
    """Swipe outcome: ``LIKE`` (+1) or ``PASS`` (-1)."""

    LIKE = 1
    PASS = -1


@dataclass(frozen=True)
class HyperParams:
    """Update-rule knobs.

    alpha    damping constant for the regularized projections (> 0)
    eta      step size for the normalized / fixed-rate rules, in (0, 1]
    theta    swipe threshold used by the hinge residual
    delta    hinge margin around theta
    block_k  session block size for the batched rules
    """

    alpha: float = 1.0
    eta: float = 0.5
    theta: float = 0.52
    delta: float = 0.05
    block_k: int = 32

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        lo, hi = self.theta - self.delta, self.theta + self.delta
        if not (-1.0 < lo and hi < 1.0):
            raise ValueError(
                f"theta +/- delta must stay inside (-1, 1), got [{lo}, {hi}]"
            )
        if self.block_k < 1:
            raise ValueError(f"block_k must be >= 1, got {self.block_k}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class TagVector:
    """Binary attribute vector with at least one set bit.

    Stores the raw 0/1 coordinates plus cached derived views (tag count,
    Euclidean norm, unit vector) because scoring touches them constantly.
    """

    __slots__ = ("bits", "id", "count", "norm", "unit")

    def __init__(self, bits, id=None):
        arr = np.asarray(bits, dtype=np.float64).copy()
        if arr.ndim != 1:
            raise ValueError(f"tag vector must be 1-D, got shape {arr.shape}")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError("tag vector coordinates must be 0 or 1")
        count = int(arr.sum())
        if count == 0:
            raise DegenerateVectorError("tag vector has no set bits")
        self.bits = _frozen(arr)
        self.id = id
        self.count = count
        self.norm = float(np.sqrt(count))
        self.unit = _frozen(arr / self.norm)

    def __len__(self) -> int:
        return self.bits.shape[0]

    def __repr__(self) -> str:
        return f"TagVector(id={self.id!r}, count={self.count}, d={len(self)})"


class PreferenceState:
    """Learned preference vector.

    The raw magnitude is part of the state and is never normalized in
    place; scoring reads the cached unit-norm ``direction`` view.
    ``update_count`` tracks how many informative (nonzero-residual)
    observations produced this state.
    """

    __slots__ = ("raw", "update_count", "_norm", "_direction")

    def __init__(self, raw, update_count: int = 0):
        arr = np.asarray(raw, dtype=np.float64).copy()
        if arr.ndim != 1:
            raise ValueError(f"preference vector must be 1-D, got {arr.shape}")
        self.raw = _frozen(arr)
        self.update_count = int(update_count)
        self._norm = None
        self._direction = None

    @classmethod
    def uniform(cls, dim: int) -> "PreferenceState":
        """All-ones start scaled to unit norm."""
        return cls(np.full(dim, 1.0 / np.sqrt(dim)))

    @property
    def norm(self) -> float:
        if self._norm is None:
            self._norm = float(np.linalg.norm(self.raw))
        return self._norm

    @property
    def direction(self) -> np.ndarray:
        """Unit-norm view used by every scoring path."""
        if self._direction is None:
            n = self.norm
            if n == 0.0 or not np.isfinite(n):
                raise DegenerateVectorError(
                    "preference vector has no usable direction"
                )
            self._direction = _frozen(self.raw / n)
        return self._direction

    def evolved(self, raw: np.ndarray, observations: int) -> "PreferenceState":
        """Successor state after consuming `observations` informative swipes."""
        return PreferenceState(raw, self.update_count + observations)

    def __repr__(self) -> str:
        return (
            f"PreferenceState(d={self.raw.shape[0]}, "
            f"update_count={self.update_count})"
        )


def normalize(v) -> np.ndarray:
    """Scale `v` to unit Euclidean norm.

    Raises DegenerateVectorError on zero or non-finite input rather than
    returning NaNs, so downstream metric traces cannot be silently
    corrupted.
    """
    arr = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(arr))
    if n == 0.0 or not np.isfinite(n):
        raise DegenerateVectorError("cannot normalize a zero/non-finite vector")
    return arr / n


def cosine_score(v, a: TagVector) -> float:
    """Cosine similarity between a preference vector and a tag vector.

    Equals ``normalize(v) . normalize(a)``, clipped to [-1, 1] to absorb
    last-ulp round-off.  For binary tags and a nonnegative `v` the result
    lies in [0, 1].
    """
    s = float(normalize(v) @ a.unit)
    return min(1.0, max(-1.0, s))


def row_norm_sq(a: TagVector) -> float:
    """Squared norm of a tag vector; for 0/1 bits this is the tag count."""
    return float(a.count)
