"""Candidate pipeline: hard filters, bidirectional scoring, weighted
sampling, and cooldown bookkeeping.

A presentation batch is produced in three stages: non-negotiable
predicates cut the pool (self-exclusion is always applied), a cooldown
ledger removes recently seen profiles (relaxed if that would starve the
batch), and one of two samplers draws the batch without replacement:

* ``row_norm_sample``   selection probability proportional to tag count
* ``cosine_subsample``  uniform pre-draw, then weights proportional to
                        the positive cosine with the viewer's current
                        preference direction

Both samplers order the returned batch for display: bidirectional score
descending, ties broken by candidate id ascending.  Everything here is a
pure function of (pool, ledger snapshot, rng stream), so concurrent
viewers need no locking as long as each owns its rng and ledger.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence

import numpy as np

from .core import PreferenceState, TagVector, cosine_score

__all__ = [
    "CandidatePool",
    "CooldownLedger",
    "FilterPredicate",
    "PoolEntry",
    "PoolExhaustedError",
    "bidirectional_score",
    "cooldown_filter",
    "cosine_subsample",
    "hard_filter",
    "ranked_for_display",
    "row_norm_sample",
]


class PoolExhaustedError(ValueError):
    """The pool is smaller than the requested sample."""


@dataclass(frozen=True)
class PoolEntry:
    """One candidate: id, raw tags, and a preference state for backward scoring."""

    uid: int
    tags: TagVector
    preference: PreferenceState


FilterPredicate = Callable[[PoolEntry, PoolEntry], bool]
"""Deterministic keep/drop rule evaluated as predicate(viewer, candidate)."""


class CandidatePool:
    """Immutable collection of candidates with unique ids."""

    __slots__ = ("_entries", "_tag_counts")

    def __init__(self, entries: Iterable[PoolEntry]):
        entries = tuple(entries)
        uids = [e.uid for e in entries]
        if len(set(uids)) != len(uids):
            raise ValueError("candidate pool has duplicate ids")
        self._entries = entries
        self._tag_counts = None

    @property
    def entries(self) -> tuple:
        return self._entries

    @property
    def tag_counts(self) -> np.ndarray:
        if self._tag_counts is None:
            self._tag_counts = np.array(
                [e.tags.count for e in self._entries], dtype=np.float64
            )
        return self._tag_counts

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)


class CooldownLedger:
    """Per-(viewer, candidate) record of the last interaction session.

    ``window`` sessions after an interaction the candidate is excluded
    from that viewer's sampling.  Session indices may only move forward
    for a given pair.
    """

    def __init__(self, window: int = 14):
        if window < 0:
            raise ValueError(f"cooldown window must be >= 0, got {window}")
        self.window = int(window)
        self._last: dict = {}
        self._buckets: dict = {}  # viewer -> session -> [candidate ids]

    def record(self, viewer: int, candidate: int, session: int) -> None:
        key = (viewer, candidate)
        prev = self._last.get(key)
        if prev is not None and session < prev:
            raise ValueError(
                f"session index moved backwards for {key}: {prev} -> {session}"
            )
        self._last[key] = session
        self._buckets.setdefault(viewer, {}).setdefault(session, []).append(candidate)

    def last_interaction(self, viewer: int, candidate: int):
        return self._last.get((viewer, candidate))

    def recently_seen(self, viewer: int, session: int) -> set:
        """Candidates interacted with in the preceding `window` sessions."""
        buckets = self._buckets.get(viewer)
        if not buckets:
            return set()
        seen: set = set()
        for s, cands in buckets.items():
            if session - self.window <= s < session:
                seen.update(cands)
        return seen


def bidirectional_score(viewer: PoolEntry, candidate: PoolEntry) -> float:
    """Geometric mean of the forward and backward cosine scores.

    Each leg is clamped to [0, 1] before the product: a pair with a
    negative leg is a non-match and scores 0, and the clamp keeps the
    square root real.  Symmetric under viewer/candidate swap.
    """
    fwd = cosine_score(viewer.preference.raw, candidate.tags)
    bwd = cosine_score(candidate.preference.raw, viewer.tags)
    fwd = min(1.0, max(0.0, fwd))
    bwd = min(1.0, max(0.0, bwd))
    return float(np.sqrt(fwd * bwd))


def ranked_for_display(
    entries: Sequence[PoolEntry], viewer: PoolEntry
) -> List[PoolEntry]:
    """Display order: bidirectional score descending, then uid ascending."""
    return sorted(entries, key=lambda e: (-bidirectional_score(viewer, e), e.uid))


def hard_filter(
    pool: CandidatePool,
    viewer: PoolEntry,
    predicates: Sequence[FilterPredicate],
) -> CandidatePool:
    """Keep entries passing every predicate; the viewer is always dropped."""
    kept = [
        e
        for e in pool.entries
        if e.uid != viewer.uid and all(p(viewer, e) for p in predicates)
    ]
    return CandidatePool(kept)


def cooldown_filter(
    pool: CandidatePool,
    viewer_uid: int,
    ledger: CooldownLedger,
    session: int,
    batch_size: int,
) -> CandidatePool:
    """Drop recently seen candidates, unless that would starve the batch.

    If fewer than `batch_size` entries survive, the unfiltered input pool
    is returned instead, so the output always has at least
    ``min(batch_size, len(pool))`` entries.
    """
    if session < 0:
        raise ValueError(f"session index must be >= 0, got {session}")
    recent = ledger.recently_seen(viewer_uid, session)
    if not recent:
        return pool
    kept = [e for e in pool.entries if e.uid not in recent]
    if len(kept) < batch_size:
        return pool
    return CandidatePool(kept)


def _weighted_draws_without_replacement(
    weights: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Sequential weighted draws with removal.

    Each draw picks index i with probability w_i over the remaining mass
    and zeroes it out.  If the remaining mass hits zero before n draws
    (possible when many weights are zero), the leftover slots are filled
    uniformly from the untaken indices.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    if np.any(w < 0):
        raise ValueError("sampling weights must be nonnegative")
    out = np.empty(n, dtype=np.intp)
    taken = np.zeros(w.size, dtype=bool)
    for j in range(n):
        if w.sum() <= 0.0:
            w = (~taken).astype(np.float64)
        cdf = np.cumsum(w)
        r = rng.random() * cdf[-1]
        idx = int(np.searchsorted(cdf, r, side="right"))
        idx = min(idx, w.size - 1)
        while w[idx] == 0.0 and idx > 0:
            idx -= 1
        out[j] = idx
        w[idx] = 0.0
        taken[idx] = True
    return out


def row_norm_sample(
    pool: CandidatePool,
    viewer: PoolEntry,
    n: int,
    rng: np.random.Generator,
) -> List[PoolEntry]:
    """Draw n distinct candidates with probability proportional to tag count.

    Candidates with more tags constrain more coordinates per swipe, which
    is the classic row-norm sampling condition for projection methods.
    The returned batch is display-ordered.
    """
    if len(pool) < n:
        raise PoolExhaustedError(f"pool has {len(pool)} entries, need {n}")
    idx = _weighted_draws_without_replacement(pool.tag_counts, n, rng)
    return ranked_for_display([pool.entries[i] for i in idx], viewer)


def cosine_subsample(
    pool: CandidatePool,
    viewer: PoolEntry,
    pool_draw: int,
    keep: int,
    rng: np.random.Generator,
) -> List[PoolEntry]:
    """Two-stage adaptive draw: uniform `pool_draw`, then `keep` by cosine.

    Stage 2 weights are ``max(0, cos(viewer direction, candidate))``
    against the viewer's current preference direction; if every weight is
    zero the stage falls back to a uniform draw over the stage-1 set.
    The returned batch is display-ordered.
    """
    if keep < 1 or pool_draw < keep:
        raise ValueError(
            f"need pool_draw >= keep >= 1, got pool_draw={pool_draw}, keep={keep}"
        )
    if len(pool) < pool_draw:
        raise PoolExhaustedError(
            f"pool has {len(pool)} entries, need {pool_draw}"
        )
    stage1 = rng.choice(len(pool), size=pool_draw, replace=False)
    direction = viewer.preference.direction
    weights = np.array(
        [
            max(0.0, float(direction @ pool.entries[i].tags.unit))
            for i in stage1
        ]
    )
    if not np.any(weights > 0.0):
        weights = np.ones(pool_draw)
    picks = _weighted_draws_without_replacement(weights, keep, rng)
    return ranked_for_display([pool.entries[stage1[p]] for p in picks], viewer)
