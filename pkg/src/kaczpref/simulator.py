"""Deterministic population simulator for the preference-update family.

A population of synthetic users (uniform binary tags plus a latent
binary "soulmate" target per user) swipes through sampled candidate
batches for a configured number of sessions.  Labels come from the
target vector, optionally corrupted by independent flips, and every
update rule consumes the identical stream of candidates and flip
decisions under the row-norm condition so methods are directly
comparable.  Under the adaptive condition candidate selection feeds back
on the evolving preference direction, so schedules are per method.

Determinism contract: everything derives from ``master_seed`` through
named counter-based substreams (population, active-user choice, one
schedule stream per user, one adaptive stream per method/user pair).
Results are bit-identical for any worker count because per-user work is
isolated and aggregation always runs in ascending user order.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Label, PreferenceState, TagVector, cosine_score, normalize
from .sampling import (
    CandidatePool,
    CooldownLedger,
    PoolEntry,
    cooldown_filter,
    cosine_subsample,
    hard_filter,
    row_norm_sample,
)
from .updaters import (
    DegenerateUpdateError,
    HyperParams,
    MethodKind,
    SessionBatch,
    UpdateMethod,
    apply_sequential,
    block_nk_update,
    block_tk_update,
    hinge_residual,
)

__all__ = [
    "ConfigValidationError",
    "DEFAULT_NOISE_FLIPS",
    "ExperimentMetrics",
    "ExperimentResult",
    "InvariantViolation",
    "NoiseSweepResult",
    "Population",
    "PresentationSchedule",
    "SimConfig",
    "SimulatedUser",
    "TrajectoryResult",
    "active_user_ids",
    "build_schedule",
    "compute_align_at",
    "compute_direction_stability",
    "default_methods",
    "flip_label",
    "generate_population",
    "label_oracle",
    "noise_sweep",
    "run_experiment",
    "run_user_trajectory",
]

log = logging.getLogger(__name__)

LABEL_RULES = ("raw-dot", "normalized-cos")
SAMPLING_MODES = ("row-norm", "adaptive")
INIT_MODES = ("ones", "own-tags", "random-binary")

DEFAULT_NOISE_FLIPS = (0.0, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35)

# substream namespaces under the master seed
_STREAM_POPULATION = 0
_STREAM_ACTIVE = 1
_STREAM_SCHEDULE = 2
_STREAM_ADAPTIVE = 3
_STREAM_INIT = 4


class ConfigValidationError(ValueError):
    """The simulation configuration is internally inconsistent."""


class InvariantViolation(RuntimeError):
    """An online invariant check (norm bound, schedule sharing) failed."""


def _substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent named generator derived from the master seed."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    )


def default_methods(
    alpha: float = 1.0,
    eta_nk: float = 0.5,
    eta_ogd: float = 0.1,
    theta: float = 0.52,
    delta: float = 0.05,
    block_k: int = 32,
) -> Tuple[UpdateMethod, ...]:
    """The six benchmark methods with their standard hyperparameters."""
    shared = dict(alpha=alpha, theta=theta, delta=delta, block_k=block_k)
    return (
        UpdateMethod(MethodKind.TK, HyperParams(eta=eta_nk, **shared)),
        UpdateMethod(MethodKind.BLOCK_TK, HyperParams(eta=eta_nk, **shared)),
        UpdateMethod(MethodKind.BLOCK_NK, HyperParams(eta=eta_nk, **shared)),
        UpdateMethod(MethodKind.NK, HyperParams(eta=eta_nk, **shared)),
        UpdateMethod(MethodKind.K_NONORM, HyperParams(eta=eta_nk, **shared)),
        UpdateMethod(MethodKind.OGD, HyperParams(eta=eta_ogd, **shared)),
    )


@dataclass(frozen=True)
class SimConfig:
    """Full experiment configuration; everything flows from master_seed."""

    population: int = 2000
    active_users: int = 100
    dimension: int = 60
    sessions: int = 200
    swipes_per_session: int = 32
    theta: float = 0.52
    p_flip: float = 0.2
    label_rule: str = "raw-dot"
    sampling: str = "row-norm"
    adaptive_pool: int = 32
    adaptive_keep: int = 16
    master_seed: int = 42
    methods: Tuple[UpdateMethod, ...] = field(default_factory=default_methods)
    init: str = "ones"
    cooldown_enabled: bool = True
    cooldown_window: int = 14
    drop_satisfied_rows: bool = False
    noise_flips: Tuple[float, ...] = DEFAULT_NOISE_FLIPS

    @property
    def total_swipes(self) -> int:
        return self.sessions * self.swipes_per_session

    def adaptive_variant(self) -> "SimConfig":
        """Adaptive-condition counterpart: sessions doubled, swipes halved
        (total swipes unchanged), cosine subsampling, calibrated labels."""
        if self.swipes_per_session % 2 != 0:
            raise ConfigValidationError(
                "swipes_per_session must be even to derive the adaptive variant"
            )
        keep = self.swipes_per_session // 2
        return replace(
            self,
            sessions=self.sessions * 2,
            swipes_per_session=keep,
            adaptive_keep=keep,
            sampling="adaptive",
            label_rule="normalized-cos",
        )

    def validate(self) -> None:
        problems: List[str] = []
        if self.population < 2:
            problems.append(f"population must be >= 2, got {self.population}")
        if not 1 <= self.active_users <= self.population:
            problems.append(
                f"active_users must be in [1, population], got {self.active_users}"
            )
        if self.dimension < 1:
            problems.append(f"dimension must be >= 1, got {self.dimension}")
        if self.sessions < 0:
            problems.append(f"sessions must be >= 0, got {self.sessions}")
        if self.swipes_per_session < 1:
            problems.append(
                f"swipes_per_session must be >= 1, got {self.swipes_per_session}"
            )
        if not 0.0 <= self.p_flip < 1.0:
            problems.append(f"p_flip must be in [0, 1), got {self.p_flip}")
        if self.label_rule not in LABEL_RULES:
            problems.append(
                f"label_rule must be one of {LABEL_RULES}, got {self.label_rule!r}"
            )
        if self.sampling not in SAMPLING_MODES:
            problems.append(
                f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}"
            )
        if self.init not in INIT_MODES:
            problems.append(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.cooldown_window < 0:
            problems.append(
                f"cooldown_window must be >= 0, got {self.cooldown_window}"
            )
        if not self.methods:
            problems.append("at least one update method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            problems.append(f"method names must be unique, got {names}")
        if self.sampling == "row-norm":
            if self.swipes_per_session > self.population - 1:
                problems.append(
                    "swipes_per_session cannot exceed the candidate pool "
                    f"(population - 1 = {self.population - 1})"
                )
        else:
            if not 1 <= self.adaptive_keep <= self.adaptive_pool:
                problems.append(
                    "need adaptive_pool >= adaptive_keep >= 1, got "
                    f"{self.adaptive_pool} / {self.adaptive_keep}"
                )
            if self.adaptive_pool > self.population - 1:
                problems.append(
                    "adaptive_pool cannot exceed the candidate pool "
                    f"(population - 1 = {self.population - 1})"
                )
            if self.swipes_per_session != self.adaptive_keep:
                problems.append(
                    "under adaptive sampling swipes_per_session must equal "
                    f"adaptive_keep, got {self.swipes_per_session} vs "
                    f"{self.adaptive_keep}"
                )
        for p in self.noise_flips:
            if not 0.0 <= p < 1.0:
                problems.append(f"noise flip ratios must be in [0, 1), got {p}")
        if problems:
            raise ConfigValidationError("; ".join(problems))


@dataclass(frozen=True)
class SimulatedUser:
    uid: int
    tags: TagVector
    soulmate: TagVector
    preference: PreferenceState  # initial state, shared by every method

    def pool_entry(self) -> PoolEntry:
        return PoolEntry(uid=self.uid, tags=self.tags, preference=self.preference)


class Population:
    """User collection plus cached matrix views for the hot loops."""

    def __init__(self, users: Sequence[SimulatedUser]):
        self.users = tuple(users)
        self.tags_matrix = np.stack([u.tags.bits for u in self.users])
        self.tag_counts = np.array([u.tags.count for u in self.users], dtype=float)
        self.unit_tags = self.tags_matrix / np.sqrt(self.tag_counts)[:, None]
        soul_counts = np.array([u.soulmate.count for u in self.users], dtype=float)
        self.soul_matrix = np.stack([u.soulmate.bits for u in self.users])
        self.unit_soulmates = self.soul_matrix / np.sqrt(soul_counts)[:, None]
        self._pool: Optional[CandidatePool] = None

    def __len__(self) -> int:
        return len(self.users)

    @property
    def pool(self) -> CandidatePool:
        if self._pool is None:
            self._pool = CandidatePool([u.pool_entry() for u in self.users])
        return self._pool


def _draw_binary_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Uniform 0/1 rows; all-zero rows are redrawn."""
    rows = rng.integers(0, 2, size=(n, d)).astype(np.float64)
    while True:
        zero = np.flatnonzero(rows.sum(axis=1) == 0)
        if zero.size == 0:
            return rows
        rows[zero] = rng.integers(0, 2, size=(zero.size, d)).astype(np.float64)


def generate_population(config: SimConfig) -> Population:
    """Draw tags and soulmate targets; fully determined by master_seed."""
    rng = _substream(config.master_seed, _STREAM_POPULATION)
    tags = _draw_binary_rows(rng, config.population, config.dimension)
    souls = _draw_binary_rows(rng, config.population, config.dimension)

    if config.init == "ones":
        shared = PreferenceState.uniform(config.dimension)
        prefs = [shared] * config.population
    elif config.init == "own-tags":
        prefs = [PreferenceState(normalize(tags[i])) for i in range(config.population)]
    else:  # random-binary
        init_rng = _substream(config.master_seed, _STREAM_INIT)
        bits = _draw_binary_rows(init_rng, config.population, config.dimension)
        prefs = [PreferenceState(normalize(bits[i])) for i in range(config.population)]

    users = [
        SimulatedUser(
            uid=i,
            tags=TagVector(tags[i], id=i),
            soulmate=TagVector(souls[i], id=i),
            preference=prefs[i],
        )
        for i in range(config.population)
    ]
    return Population(users)


def active_user_ids(config: SimConfig) -> np.ndarray:
    """Seed-determined active subset, returned in ascending order."""
    rng = _substream(config.master_seed, _STREAM_ACTIVE)
    perm = rng.permutation(config.population)
    return np.sort(perm[: config.active_users])


def label_oracle(g: TagVector, a: TagVector, rule: str, theta: float) -> Label:
    """Ground-truth swipe decision for target `g` against candidate `a`.

    ``normalized-cos`` thresholds the cosine; ``raw-dot`` thresholds the
    raw integer dot product, which for binary vectors fires on any
    overlap at all and therefore produces a near-saturated like rate.
    """
    if rule == "raw-dot":
        score = float(g.bits @ a.bits)
    elif rule == "normalized-cos":
        score = cosine_score(g.bits, a)
    else:
        raise ValueError(f"unknown label rule {rule!r}")
    return Label.LIKE if score >= theta else Label.PASS


def flip_label(label: Label, p_flip: float, decision: float) -> Label:
    """Negate `label` iff the precomputed uniform coin falls below p_flip.

    The coin belongs to the (user, session, swipe) slot, not to the
    method, so one stored coin serves every method and every flip ratio.
    """
    if not 0.0 <= p_flip <= 1.0:
        raise ValueError(f"p_flip must be in [0, 1], got {p_flip}")
    if decision < p_flip:
        return Label(-int(label))
    return label


@dataclass(frozen=True)
class PresentationSchedule:
    """Frozen per-user presentation stream for the row-norm condition.

    Candidate ids are display-ordered per session; coins are uniform
    [0, 1) draws thresholded by p_flip at replay time.  Replaying the
    schedule under any method yields identical candidates and flips.
    """

    uid: int
    candidate_ids: np.ndarray  # (sessions, swipes) int64
    coins: np.ndarray  # (sessions, swipes) float64


def build_schedule(
    population: Population, user: SimulatedUser, config: SimConfig
) -> PresentationSchedule:
    """Generate the shared candidate/coin stream for one user.

    Sampling weights are tag counts and the cooldown depends only on
    past presentations, so the stream is method-independent; display
    ordering uses the population's initial preference states.
    """
    rng = _substream(config.master_seed, _STREAM_SCHEDULE, user.uid)
    k = config.swipes_per_session
    ids = np.empty((config.sessions, k), dtype=np.int64)
    coins = np.empty((config.sessions, k), dtype=np.float64)
    base = hard_filter(population.pool, user.pool_entry(), ())
    ledger = CooldownLedger(window=config.cooldown_window)
    viewer = user.pool_entry()
    for s in range(config.sessions):
        pool_s = base
        if config.cooldown_enabled:
            pool_s = cooldown_filter(base, user.uid, ledger, s, k)
        batch = row_norm_sample(pool_s, viewer, k, rng)
        ids[s] = [e.uid for e in batch]
        coins[s] = rng.random(k)
        for e in batch:
            ledger.record(user.uid, e.uid, s)
    return PresentationSchedule(uid=user.uid, candidate_ids=ids, coins=coins)


@dataclass
class TrajectoryResult:
    """Per-(user, method) outcome of one simulated run."""

    method: str
    trace: Optional[np.ndarray]  # per-swipe alignment with the target
    final_alignment: float
    like_count: int
    stability: float  # mean consecutive session-end cosine (nan if < 2)
    ids_digest: str
    flips_digest: str
    skipped: int
    bound_checked: bool  # True iff the TK norm bound held on every prefix


def _hinge_vec(
    scores: np.ndarray, labels: np.ndarray, theta: float, delta: float
) -> np.ndarray:
    """Vectorized hinge residuals; elementwise-identical to hinge_residual."""
    pull = np.maximum(0.0, (theta + delta) - scores)
    push = -np.maximum(0.0, scores - (theta - delta))
    return np.where(labels > 0, pull, push)


def _clean_labels(
    population: Population, user: SimulatedUser, ids: np.ndarray, config: SimConfig
) -> np.ndarray:
    """Oracle labels (+1/-1) for a block of candidate ids."""
    if config.label_rule == "raw-dot":
        scores = population.tags_matrix[ids] @ user.soulmate.bits
    else:
        scores = population.unit_tags[ids] @ population.unit_soulmates[user.uid]
    return np.where(scores >= config.theta, 1, -1).astype(np.int8)


def run_user_trajectory(
    user: SimulatedUser,
    method: UpdateMethod,
    config: SimConfig,
    population: Population,
    schedule: Optional[PresentationSchedule] = None,
    rng: Optional[np.random.Generator] = None,
    p_flip: Optional[float] = None,
) -> TrajectoryResult:
    """Simulate one user under one method.

    Row-norm condition: pass the user's frozen `schedule`.  Adaptive
    condition: pass the method-specific `rng`; candidates are then drawn
    per session with cosine subsampling against the current direction.

    Sequential rules update per swipe.  Block rules accumulate the
    session (residuals scored against the session-start vector) and
    apply one update at session end; their intra-session trace repeats
    the session-start alignment until that update lands.
    """
    if (schedule is None) == (rng is None):
        raise ValueError("pass exactly one of schedule= (row-norm) or rng= (adaptive)")
    p = config.p_flip if p_flip is None else p_flip
    hp = method.params
    sessions, k = config.sessions, config.swipes_per_session
    total = sessions * k

    v = user.preference
    ghat = population.unit_soulmates[user.uid]
    users = population.users

    trace = np.empty(total, dtype=np.float64)
    likes = 0
    skipped = 0
    ids_digest = hashlib.sha256()
    flips_digest = hashlib.sha256()

    clean_all = None
    base_pool = None
    ledger = None
    if schedule is not None:
        if schedule.candidate_ids.shape != (sessions, k):
            raise ValueError("schedule geometry does not match the config")
        if sessions:
            clean_all = _clean_labels(
                population, user, schedule.candidate_ids.reshape(-1), config
            ).reshape(sessions, k)
    else:
        base_pool = hard_filter(population.pool, user.pool_entry(), ())
        ledger = CooldownLedger(window=config.cooldown_window)

    # online norm-growth check for the damped sequential rule
    check_bound = method.kind is MethodKind.TK
    bound_start = v.norm if check_bound else 0.0
    bound_budget = 0.0
    bound_scale = 1.0 / (1.0 + hp.alpha)

    cur_align = float(np.clip(v.direction @ ghat, -1.0, 1.0)) if total else math.nan
    prev_dir = None
    ds_sum = 0.0

    for s in range(sessions):
        if schedule is not None:
            ids_s = schedule.candidate_ids[s]
            coins_s = schedule.coins[s]
            clean_s = clean_all[s]
        else:
            pool_s = base_pool
            if config.cooldown_enabled:
                pool_s = cooldown_filter(
                    base_pool, user.uid, ledger, s, config.adaptive_pool
                )
            viewer = PoolEntry(uid=user.uid, tags=user.tags, preference=v)
            batch_entries = cosine_subsample(
                pool_s, viewer, config.adaptive_pool, config.adaptive_keep, rng
            )
            ids_s = np.array([e.uid for e in batch_entries], dtype=np.int64)
            coins_s = rng.random(k)
            for e in batch_entries:
                ledger.record(user.uid, e.uid, s)
            clean_s = _clean_labels(population, user, ids_s, config)

        flips_s = coins_s < p
        ids_digest.update(ids_s.tobytes())
        flips_digest.update(flips_s.astype(np.uint8).tobytes())
        labels_s = np.where(flips_s, -clean_s, clean_s)
        likes += int((labels_s > 0).sum())
        t0 = s * k

        if method.is_block:
            start_dir = v.direction
            scores = population.unit_tags[ids_s] @ start_dir
            residuals = _hinge_vec(scores, labels_s, hp.theta, hp.delta)
            trace[t0 : t0 + k - 1] = cur_align
            rows = population.tags_matrix[ids_s]
            if config.drop_satisfied_rows:
                keep = residuals != 0.0
                rows, residuals = rows[keep], residuals[keep]
            changed = False
            if residuals.size and residuals.any():
                batch = SessionBatch(rows, residuals)
                try:
                    if method.kind is MethodKind.BLOCK_TK:
                        v = block_tk_update(v, batch, hp.alpha)
                    else:
                        v = block_nk_update(v, batch, hp.alpha)
                    changed = True
                except DegenerateUpdateError:
                    log.warning(
                        "degenerate block update skipped (user %d, session %d)",
                        user.uid,
                        s,
                    )
                    skipped += 1
            elif method.kind is MethodKind.BLOCK_NK:
                v = v.evolved(normalize(v.raw), observations=0)
                changed = True
            if changed:
                cur_align = float(np.clip(v.direction @ ghat, -1.0, 1.0))
            trace[t0 + k - 1] = cur_align
        else:
            for j in range(k):
                cid = int(ids_s[j])
                a = users[cid].tags
                score = float(v.direction @ a.unit)
                r = hinge_residual(score, int(labels_s[j]), hp.theta, hp.delta)
                if r != 0.0:
                    try:
                        v = apply_sequential(v, method, a, r)
                    except DegenerateUpdateError:
                        log.warning(
                            "degenerate update skipped (user %d, swipe %d)",
                            user.uid,
                            t0 + j,
                        )
                        skipped += 1
                    else:
                        cur_align = float(np.clip(v.direction @ ghat, -1.0, 1.0))
                        if check_bound:
                            if hp.alpha > a.norm:
                                check_bound = False  # bound precondition broken
                            else:
                                bound_budget += abs(r)
                                limit = bound_start + bound_budget * bound_scale
                                if v.norm > limit + 1e-9:
                                    raise InvariantViolation(
                                        f"norm bound violated for user {user.uid} "
                                        f"at swipe {t0 + j}: {v.norm} > {limit}"
                                    )
                trace[t0 + j] = cur_align

        end_dir = v.direction
        if prev_dir is not None:
            ds_sum += float(end_dir @ prev_dir)
        prev_dir = end_dir

    stability = ds_sum / (sessions - 1) if sessions >= 2 else math.nan
    final = float(trace[-1]) if total else math.nan
    return TrajectoryResult(
        method=method.name,
        trace=trace,
        final_alignment=final,
        like_count=likes,
        stability=float(stability),
        ids_digest=ids_digest.hexdigest(),
        flips_digest=flips_digest.hexdigest(),
        skipped=skipped,
        bound_checked=(method.kind is MethodKind.TK) and check_bound,
    )


@dataclass(frozen=True)
class ExperimentMetrics:
    """Per-method aggregates over the active users."""

    method: str
    alignment_trace: np.ndarray  # per-swipe mean over users
    alignment_std: np.ndarray  # per-swipe std (population) over users
    align_at_20: float
    direction_stability: float
    like_rate: float
    final_alignment: float
    final_std: float


@dataclass(frozen=True)
class ExperimentResult:
    config: SimConfig
    metrics: Dict[str, ExperimentMetrics]
    digests: Dict[str, Dict[int, Tuple[str, str]]]  # method -> uid -> (ids, flips)
    norm_bound_checked: Dict[str, bool]  # TK-kind methods only


@dataclass(frozen=True)
class NoiseSweepResult:
    config: SimConfig
    flips: Tuple[float, ...]
    # method -> list of (p_flip, mean final alignment, std over users)
    curves: Dict[str, List[Tuple[float, float, float]]]


def _run_users_chunk(
    config: SimConfig,
    uids: Sequence[int],
    flips: Tuple[float, ...],
    keep_traces: bool,
) -> Dict[Tuple[int, float, str], TrajectoryResult]:
    """Simulate a block of users across all methods and flip ratios.

    Regenerates the population locally (cheap and seed-determined), so
    worker processes need no shared state.
    """
    population = generate_population(config)
    out: Dict[Tuple[int, float, str], TrajectoryResult] = {}
    for uid in uids:
        user = population.users[int(uid)]
        schedule = None
        if config.sampling == "row-norm":
            schedule = build_schedule(population, user, config)
        for p in flips:
            for mi, method in enumerate(config.methods):
                if schedule is not None:
                    res = run_user_trajectory(
                        user, method, config, population,
                        schedule=schedule, p_flip=p,
                    )
                else:
                    res = run_user_trajectory(
                        user, method, config, population,
                        rng=_substream(config.master_seed, _STREAM_ADAPTIVE, mi, int(uid)),
                        p_flip=p,
                    )
                if not keep_traces:
                    res.trace = None
                out[(int(uid), p, method.name)] = res
    return out


def _collect_user_runs(
    config: SimConfig,
    uids: np.ndarray,
    flips: Tuple[float, ...],
    keep_traces: bool,
    workers: int,
) -> Dict[Tuple[int, float, str], TrajectoryResult]:
    uid_list = [int(u) for u in uids]
    if workers <= 1 or len(uid_list) <= 1:
        return _run_users_chunk(config, uid_list, flips, keep_traces)
    chunks = [c for c in np.array_split(uid_list, workers) if len(c)]
    merged: Dict[Tuple[int, float, str], TrajectoryResult] = {}
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [
            pool.submit(_run_users_chunk, config, [int(u) for u in c], flips, keep_traces)
            for c in chunks
        ]
        for fut in futures:
            merged.update(fut.result())
    return merged


def _check_schedule_sharing(
    config: SimConfig,
    uids: Sequence[int],
    p: float,
    runs: Dict[Tuple[int, float, str], TrajectoryResult],
) -> None:
    """Every method must have consumed identical slots per user."""
    names = [m.name for m in config.methods]
    for uid in uids:
        digests = {
            (runs[(uid, p, name)].ids_digest, runs[(uid, p, name)].flips_digest)
            for name in names
        }
        if len(digests) > 1:
            raise InvariantViolation(
                f"schedule sharing broken for user {uid}: methods consumed "
                "different candidate/flip streams"
            )


def run_experiment(config: SimConfig, workers: int = 1) -> ExperimentResult:
    """Run every configured method over the active users and aggregate.

    Row-norm condition: one frozen schedule per user, replayed by every
    method, with the sharing invariant re-checked from the consumed
    streams.  Adaptive condition: candidate streams are method-specific
    by design.  Aggregation order is fixed (ascending user id) so output
    is bit-identical for any worker count.
    """
    config.validate()
    uids = [int(u) for u in active_user_ids(config)]
    p = config.p_flip
    runs = _collect_user_runs(config, np.array(uids), (p,), True, workers)
    if config.sampling == "row-norm" and len(config.methods) > 1:
        _check_schedule_sharing(config, uids, p, runs)

    total = config.total_swipes
    n_users = len(uids)
    metrics: Dict[str, ExperimentMetrics] = {}
    digests: Dict[str, Dict[int, Tuple[str, str]]] = {}
    bound_checked: Dict[str, bool] = {}
    for method in config.methods:
        name = method.name
        acc = np.zeros(total)
        acc_sq = np.zeros(total)
        likes = 0
        stabilities = []
        digests[name] = {}
        checked = []
        for uid in uids:
            res = runs[(uid, p, name)]
            acc += res.trace
            acc_sq += res.trace * res.trace
            likes += res.like_count
            stabilities.append(res.stability)
            digests[name][uid] = (res.ids_digest, res.flips_digest)
            checked.append(res.bound_checked)
        mean = acc / n_users
        std = np.sqrt(np.maximum(acc_sq / n_users - mean * mean, 0.0))
        metrics[name] = ExperimentMetrics(
            method=name,
            alignment_trace=mean,
            alignment_std=std,
            align_at_20=float(mean[19]) if total >= 20 else math.nan,
            direction_stability=float(np.mean(stabilities)),
            like_rate=likes / (n_users * total) if total else math.nan,
            final_alignment=float(mean[-1]) if total else math.nan,
            final_std=float(std[-1]) if total else math.nan,
        )
        if method.kind is MethodKind.TK:
            bound_checked[name] = all(checked)
    return ExperimentResult(
        config=config,
        metrics=metrics,
        digests=digests,
        norm_bound_checked=bound_checked,
    )


def noise_sweep(
    config: SimConfig,
    flips: Optional[Iterable[float]] = None,
    workers: int = 1,
) -> NoiseSweepResult:
    """Final alignment per (method, flip ratio) under shared schedules.

    Candidate streams and flip coins are frozen per user; each ratio only
    moves the coin threshold, which couples the sweep points and isolates
    the noise variable.  Adaptive sampling has no fixed schedule to hold,
    so the sweep requires the row-norm condition.
    """
    flips = tuple(config.noise_flips if flips is None else flips)
    if not flips:
        raise ConfigValidationError("noise sweep needs at least one flip ratio")
    for p in flips:
        if not 0.0 <= p < 1.0:
            raise ConfigValidationError(f"flip ratios must be in [0, 1), got {p}")
    if config.sampling != "row-norm":
        raise ConfigValidationError(
            "the noise sweep holds candidate schedules fixed and is defined "
            "for row-norm sampling only"
        )
    config.validate()
    uids = [int(u) for u in active_user_ids(config)]
    runs = _collect_user_runs(config, np.array(uids), flips, False, workers)

    curves: Dict[str, List[Tuple[float, float, float]]] = {}
    for method in config.methods:
        name = method.name
        points = []
        ref_ids = None
        for p in flips:
            finals = np.array([runs[(uid, p, name)].final_alignment for uid in uids])
            points.append((p, float(np.mean(finals)), float(np.std(finals))))
            ids_now = [runs[(uid, p, name)].ids_digest for uid in uids]
            if ref_ids is None:
                ref_ids = ids_now
            elif ids_now != ref_ids:
                raise InvariantViolation(
                    f"candidate schedules drifted across flip ratios for {name}"
                )
        curves[name] = points
    return NoiseSweepResult(config=config, flips=flips, curves=curves)


def compute_direction_stability(
    session_end_vectors: Iterable[np.ndarray],
) -> float:
    """Mean cosine between consecutive session-end unit vectors.

    Input is one (sessions, d) array per user; pairs are averaged within
    a user, then across users.  Users with fewer than two sessions are
    undefined and make the result NaN.
    """
    per_user = []
    for seq in session_end_vectors:
        arr = np.asarray(seq, dtype=float)
        if arr.ndim != 2:
            raise ValueError("each user needs a (sessions, d) array")
        if arr.shape[0] < 2:
            per_user.append(math.nan)
        else:
            per_user.append(float(np.mean(np.sum(arr[:-1] * arr[1:], axis=1))))
    if not per_user:
        return math.nan
    return float(np.mean(per_user))


def compute_align_at(trace: np.ndarray, t: int) -> float:
    """Alignment at 1-based swipe slot `t` of a trace."""
    arr = np.asarray(trace, dtype=float)
    if not 1 <= t <= arr.shape[0]:
        raise ValueError(f"swipe index {t} outside trace of length {arr.shape[0]}")
    return float(arr[t - 1])
