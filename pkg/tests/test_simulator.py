import math

import numpy as np
import pytest

from kaczpref.core import HyperParams, Label, PreferenceState, TagVector
from kaczpref.simulator import (
    ConfigValidationError,
    PresentationSchedule,
    SimConfig,
    SimulatedUser,
    Population,
    active_user_ids,
    build_schedule,
    compute_align_at,
    compute_direction_stability,
    default_methods,
    flip_label,
    generate_population,
    label_oracle,
    noise_sweep,
    run_experiment,
    run_user_trajectory,
    _clean_labels,
    _hinge_vec,
)
from kaczpref.updaters import MethodKind, UpdateMethod, hinge_residual


def small_config(**kw):
    base = dict(
        population=120,
        active_users=8,
        dimension=24,
        sessions=12,
        swipes_per_session=8,
        master_seed=11,
    )
    base.update(kw)
    return SimConfig(**base)


def method_by_kind(config, kind):
    for m in config.methods:
        if m.kind is kind:
            return m
    raise KeyError(kind)


# ------------------------------------------------------------- validation

@pytest.mark.parametrize(
    "kw",
    [
        {"population": 1},
        {"active_users": 0},
        {"active_users": 500},
        {"p_flip": 1.0},
        {"label_rule": "nope"},
        {"sampling": "nope"},
        {"init": "nope"},
        {"swipes_per_session": 0},
        {"swipes_per_session": 120},
        {"cooldown_window": -1},
        {"methods": ()},
        {"noise_flips": (0.2, 1.0)},
        {"sampling": "adaptive", "adaptive_pool": 4, "adaptive_keep": 8},
        {"sampling": "adaptive", "adaptive_pool": 300, "adaptive_keep": 8},
    ],
)
def test_config_validation_rejects(kw):
    with pytest.raises(ConfigValidationError):
        small_config(**kw).validate()


def test_config_adaptive_variant_geometry():
    cfg = SimConfig()
    ad = cfg.adaptive_variant()
    assert ad.sessions == 400
    assert ad.swipes_per_session == 16
    assert ad.adaptive_keep == 16
    assert ad.sampling == "adaptive"
    assert ad.label_rule == "normalized-cos"
    assert ad.total_swipes == cfg.total_swipes == 6400
    ad.validate()


# ------------------------------------------------------------- population

def test_population_deterministic():
    cfg = SimConfig(population=200, dimension=30)
    a = generate_population(cfg)
    b = generate_population(cfg)
    assert np.array_equal(a.tags_matrix, b.tags_matrix)
    assert np.array_equal(a.soul_matrix, b.soul_matrix)


def test_population_no_zero_vectors_and_fair_coins():
    cfg = SimConfig()  # 2000 users, d=60
    pop = generate_population(cfg)
    assert pop.tag_counts.min() >= 1
    assert min(u.soulmate.count for u in pop.users) >= 1
    # mean tag count ~ Binomial(60, 1/2): mean 30, sd of the mean over
    # 2000 users is sqrt(15/2000)
    sigma = np.sqrt(15.0 / 2000.0)
    assert abs(pop.tag_counts.mean() - 30.0) <= 3 * sigma


def test_population_init_modes():
    ones = generate_population(small_config(init="ones"))
    assert np.allclose(ones.users[0].preference.raw, 1 / np.sqrt(24))
    own = generate_population(small_config(init="own-tags"))
    u = own.users[3]
    assert np.allclose(u.preference.raw, u.tags.unit)
    rnd = generate_population(small_config(init="random-binary"))
    assert abs(np.linalg.norm(rnd.users[5].preference.raw) - 1.0) < 1e-12


def test_active_user_ids_sorted_and_seeded():
    cfg = small_config()
    ids = active_user_ids(cfg)
    assert len(ids) == cfg.active_users
    assert np.all(np.diff(ids) > 0)
    assert np.array_equal(ids, active_user_ids(cfg))
    other = active_user_ids(small_config(master_seed=99))
    assert not np.array_equal(ids, other)


# ------------------------------------------------------------ label oracle

def test_label_oracle_self_match_likes():
    a = TagVector([1, 0, 1, 0], id=0)
    assert label_oracle(a, a, "raw-dot", 0.52) is Label.LIKE
    assert label_oracle(a, a, "normalized-cos", 0.52) is Label.LIKE


def test_label_oracle_disjoint_passes():
    g = TagVector([1, 1, 0, 0], id=0)
    a = TagVector([0, 0, 1, 1], id=1)
    assert label_oracle(g, a, "raw-dot", 0.52) is Label.PASS
    assert label_oracle(g, a, "normalized-cos", 0.52) is Label.PASS


def test_label_oracle_raw_dot_is_near_saturated():
    # random 60-d pairs overlap in ~15 coordinates, so the raw dot
    # threshold fires almost always; with 20% flips the observed like
    # rate sits at 0.8
    rng = np.random.default_rng(3)
    n = 100_000
    g = (rng.random((n, 60)) < 0.5)
    a = (rng.random((n, 60)) < 0.5)
    ok = (g & a).sum(axis=1) >= 0.52
    clean_rate = ok.mean()
    assert clean_rate >= 0.999
    coins = rng.random(n)
    observed = np.where(coins < 0.2, ~ok, ok)
    sigma = np.sqrt(0.8 * 0.2 / n)
    assert abs(observed.mean() - 0.8) <= 4 * sigma


def test_clean_labels_matches_scalar_oracle():
    cfg = small_config()
    pop = generate_population(cfg)
    user = pop.users[0]
    ids = np.arange(1, 40)
    for rule in ("raw-dot", "normalized-cos"):
        c = cfg if rule == cfg.label_rule else small_config(label_rule=rule)
        vec = _clean_labels(pop, user, ids, c)
        for i, cid in enumerate(ids):
            want = label_oracle(user.soulmate, pop.users[cid].tags, rule, c.theta)
            assert int(vec[i]) == int(want)


# -------------------------------------------------------------- flip label

def test_flip_label_edge_probabilities():
    assert flip_label(Label.LIKE, 0.0, 0.5) is Label.LIKE
    assert flip_label(Label.PASS, 0.0, 0.0) is Label.PASS
    assert flip_label(Label.LIKE, 1.0, 0.999999) is Label.PASS
    assert flip_label(Label.PASS, 1.0, 0.0) is Label.LIKE


def test_flip_label_empirical_rate():
    rng = np.random.default_rng(5)
    n = 100_000
    coins = rng.random(n)
    flipped = sum(
        flip_label(Label.LIKE, 0.3, float(c)) is Label.PASS for c in coins[:10_000]
    )
    sigma = np.sqrt(0.3 * 0.7 / 10_000)
    assert abs(flipped / 10_000 - 0.3) <= 4 * sigma


def test_hinge_vec_matches_scalar():
    rng = np.random.default_rng(7)
    scores = rng.uniform(-1, 1, size=500)
    labels = rng.choice([-1, 1], size=500)
    vec = _hinge_vec(scores, labels, 0.52, 0.05)
    for s, y, r in zip(scores, labels, vec):
        assert r == hinge_residual(float(s), int(y), 0.52, 0.05)


# --------------------------------------------------------------- schedules

def test_schedule_deterministic_and_geometry():
    cfg = small_config()
    pop = generate_population(cfg)
    user = pop.users[int(active_user_ids(cfg)[0])]
    s1 = build_schedule(pop, user, cfg)
    s2 = build_schedule(pop, user, cfg)
    assert np.array_equal(s1.candidate_ids, s2.candidate_ids)
    assert np.array_equal(s1.coins, s2.coins)
    assert s1.candidate_ids.shape == (cfg.sessions, cfg.swipes_per_session)
    assert user.uid not in s1.candidate_ids
    # distinct candidates within a session
    for row in s1.candidate_ids:
        assert len(set(row.tolist())) == len(row)
    assert np.all((s1.coins >= 0) & (s1.coins < 1))


def test_schedule_respects_cooldown():
    cfg = small_config(population=60, swipes_per_session=4, cooldown_window=3)
    pop = generate_population(cfg)
    user = pop.users[0]
    sched = build_schedule(pop, user, cfg)
    for s in range(1, cfg.sessions):
        lo = max(0, s - cfg.cooldown_window)
        recent = set(sched.candidate_ids[lo:s].ravel().tolist())
        # pool is 59 with at most 12 in cooldown, so no relaxation occurs
        assert not recent & set(sched.candidate_ids[s].tolist())


# ------------------------------------------------------------ trajectories

def test_trajectory_zero_sessions_flags_undefined():
    cfg = small_config(sessions=0)
    pop = generate_population(cfg)
    user = pop.users[0]
    sched = build_schedule(pop, user, cfg)
    res = run_user_trajectory(
        user, method_by_kind(cfg, MethodKind.TK), cfg, pop, schedule=sched
    )
    assert res.trace.shape == (0,)
    assert math.isnan(res.stability)
    assert math.isnan(res.final_alignment)


def test_trajectory_requires_exactly_one_stream():
    cfg = small_config()
    pop = generate_population(cfg)
    user = pop.users[0]
    with pytest.raises(ValueError):
        run_user_trajectory(user, cfg.methods[0], cfg, pop)


def test_tk_fixed_point_run_is_monotone():
    # soulmate-identical candidate repeatedly, no label noise: alignment
    # climbs until the like margin saturates
    d = 60
    g_bits = np.zeros(d)
    g_bits[:5] = 1.0
    viewer = SimulatedUser(
        uid=0,
        tags=TagVector(np.ones(d), id=0),
        soulmate=TagVector(g_bits, id=0),
        preference=PreferenceState.uniform(d),
    )
    cand = SimulatedUser(
        uid=1,
        tags=TagVector(g_bits, id=1),
        soulmate=TagVector(np.ones(d), id=1),
        preference=PreferenceState.uniform(d),
    )
    pop = Population([viewer, cand])
    cfg = small_config(
        population=2, active_users=1, dimension=d, sessions=25,
        swipes_per_session=8, p_flip=0.0,
    )
    sched = PresentationSchedule(
        uid=0,
        candidate_ids=np.full((25, 8), 1, dtype=np.int64),
        coins=np.full((25, 8), 0.5),
    )
    res = run_user_trajectory(
        viewer, method_by_kind(cfg, MethodKind.TK), cfg, pop, schedule=sched
    )
    assert np.all(np.diff(res.trace) >= -1e-12)
    assert res.trace[0] < 0.45  # slot 1 records after the first pull
    assert 0.5 <= res.final_alignment <= 0.65


def test_block_with_unit_sessions_equals_sequential():
    cfg = small_config(
        sessions=64,
        swipes_per_session=1,
        methods=default_methods(block_k=1),
    )
    pop = generate_population(cfg)
    user = pop.users[int(active_user_ids(cfg)[0])]
    sched = build_schedule(pop, user, cfg)
    tk = run_user_trajectory(
        user, method_by_kind(cfg, MethodKind.TK), cfg, pop, schedule=sched
    )
    blk = run_user_trajectory(
        user, method_by_kind(cfg, MethodKind.BLOCK_TK), cfg, pop, schedule=sched
    )
    assert np.max(np.abs(tk.trace - blk.trace)) <= 1e-12
    assert abs(tk.stability - blk.stability) <= 1e-12


def test_nk_forgets_faster_than_tk_on_shared_schedule():
    # the per-step renormalization erodes the warm start: NK's early
    # alignment sits below TK's on the identical candidate stream
    cfg = small_config(population=300, active_users=10, dimension=60,
                       sessions=30, swipes_per_session=16)
    res = run_experiment(cfg)
    assert res.metrics["NK"].align_at_20 < res.metrics["TK"].align_at_20


def test_trace_values_bounded_no_nan():
    cfg = small_config()
    res = run_experiment(cfg)
    for m in res.metrics.values():
        assert not np.any(np.isnan(m.alignment_trace))
        assert np.all(m.alignment_trace >= -1.0) and np.all(m.alignment_trace <= 1.0)
        assert np.all(m.alignment_std >= 0.0)


def test_norm_bound_checked_on_tk_runs():
    cfg = small_config()
    res = run_experiment(cfg)
    assert res.norm_bound_checked["TK"] is True


def test_norm_bound_inapplicable_at_large_alpha():
    cfg = small_config(methods=(UpdateMethod(MethodKind.TK, HyperParams(alpha=25.0)),))
    res = run_experiment(cfg)
    assert res.norm_bound_checked["TK"] is False


# ------------------------------------------------------------- experiment

def test_experiment_deterministic_and_worker_independent():
    cfg = small_config()
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=2)
    for name in a.metrics:
        ma, mb = a.metrics[name], b.metrics[name]
        assert np.array_equal(ma.alignment_trace, mb.alignment_trace)
        assert np.array_equal(ma.alignment_std, mb.alignment_std)
        assert ma.like_rate == mb.like_rate
        assert ma.direction_stability == mb.direction_stability


def test_experiment_schedule_sharing_digests():
    cfg = small_config()
    res = run_experiment(cfg)
    names = list(res.metrics)
    for uid in res.digests[names[0]]:
        slots = {res.digests[name][uid] for name in names}
        assert len(slots) == 1


def test_experiment_like_rate_matches_flip_level():
    cfg = small_config(population=300, active_users=10, dimension=60,
                       sessions=30, swipes_per_session=16)
    res = run_experiment(cfg)
    rates = {m.like_rate for m in res.metrics.values()}
    assert len(rates) == 1  # identical labels across methods
    total = 10 * 30 * 16
    sigma = np.sqrt(0.8 * 0.2 / total)
    assert abs(rates.pop() - 0.8) <= 4 * sigma


def test_experiment_initial_alignment_matches_analytic_value():
    # with the all-ones start, alignment at the first slots is about
    # sqrt(tag_count / d) averaged over the active users
    cfg = small_config(population=300, active_users=40, dimension=60,
                       sessions=2, swipes_per_session=8)
    pop = generate_population(cfg)
    act = active_user_ids(cfg)
    expected = np.mean(
        [np.sqrt(pop.users[int(u)].soulmate.count / 60.0) for u in act]
    )
    res = run_experiment(cfg)
    assert abs(res.metrics["TK"].alignment_trace[0] - expected) <= 0.05


def test_adaptive_condition_runs_and_differs_per_method():
    cfg = small_config(
        population=200,
        active_users=6,
        dimension=60,
        sessions=20,
        swipes_per_session=8,
        sampling="adaptive",
        adaptive_pool=16,
        adaptive_keep=8,
        label_rule="normalized-cos",
        methods=default_methods()[:4],
    )
    res = run_experiment(cfg)
    assert set(res.metrics) == {"TK", "Block-TK", "Block-NK", "NK"}
    # adaptive streams are method-specific: digests usually differ
    uid = next(iter(res.digests["TK"]))
    assert res.digests["TK"][uid] != res.digests["NK"][uid]


# ------------------------------------------------------------- noise sweep

def test_noise_sweep_shapes_and_anchor():
    cfg = small_config(population=300, active_users=10, dimension=60,
                       sessions=40, swipes_per_session=16)
    sweep = noise_sweep(cfg, flips=(0.0, 0.1, 0.3))
    for name, pts in sweep.curves.items():
        assert [p for p, _, _ in pts] == [0.0, 0.1, 0.3]
        clean = pts[0][1]
        assert clean > pts[1][1]  # any flip noise hurts vs the clean anchor
        assert all(np.isfinite(v) for _, v, _ in pts)


def test_noise_sweep_rejects_adaptive():
    cfg = small_config(
        sampling="adaptive", adaptive_pool=16, adaptive_keep=8,
        swipes_per_session=8,
    )
    with pytest.raises(ConfigValidationError):
        noise_sweep(cfg, flips=(0.1,))


# ---------------------------------------------------------------- metrics

def test_direction_stability_constant_and_orthogonal():
    const = np.tile(np.array([1.0, 0.0]), (5, 1))
    assert compute_direction_stability([const]) == pytest.approx(1.0)
    alt = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    assert compute_direction_stability([alt]) == pytest.approx(0.0)
    assert math.isnan(compute_direction_stability([const[:1]]))


def test_compute_align_at_bounds():
    trace = np.array([0.1, 0.2, 0.3])
    assert compute_align_at(trace, 1) == pytest.approx(0.1)
    assert compute_align_at(trace, 3) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        compute_align_at(trace, 0)
    with pytest.raises(ValueError):
        compute_align_at(trace, 4)
