import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geogrpo.errors import ConfigError, EmptyGroupError
from geogrpo.grpo import (
    GrpoConfig,
    Rollout,
    RolloutGroup,
    clipped_term,
    clipped_term_grad,
    gaussian_step_logdensity,
    group_advantages,
    grpo_objective,
    kl_gaussian,
    objective_sensitivities,
    select_best_of_n,
)

seeds = st.integers(0, 2**32 - 1)


def make_group(scores, masks=None):
    masks = masks if masks is not None else [np.ones(len(np.atleast_1d(s)), bool) for s in scores]
    return RolloutGroup([Rollout(np.atleast_1d(np.asarray(s, float)), np.asarray(m, bool)) for s, m in zip(scores, masks)])


def random_group(rng, g=None, k=None, t=None, masked=True):
    g = g or int(rng.integers(2, 5))
    k = k or int(rng.integers(1, 4))
    t = t or int(rng.integers(1, 4))
    rollouts = []
    for _ in range(g):
        mask = rng.random(k) > 0.25 if masked else np.ones(k, bool)
        old = rng.normal(size=t)
        rollouts.append(
            Rollout(
                scores=-rng.random(k) * 2,
                mask=mask,
                old_logp=old,
                new_logp=old + rng.normal(scale=0.3, size=t),
                kl=rng.random(t),
            )
        )
    if not any(r.mask.any() for r in rollouts):
        rollouts[0].mask[0] = True
    return RolloutGroup(rollouts)


def prepared(rng, cfg, **kw):
    group = group_advantages(random_group(rng, **kw), cfg.stability)
    n = len(group)
    top = max(1, n // 2)
    return select_best_of_n(group, top, max(1, n - top))


# --- config ---------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = GrpoConfig()
    assert (cfg.group_size, cfg.top_count, cfg.bottom_count) == (16, 4, 4)
    assert (cfg.total_steps, cfg.sde_steps, cfg.sde_noise_level, cfg.kl_weight) == (14, 3, 0.7, 1e-4)
    for bad in (
        dict(group_size=1),
        dict(top_count=0),
        dict(group_size=6, top_count=4, bottom_count=4),
        dict(clip_range=0),
        dict(kl_weight=-1),
        dict(stability=0),
        dict(sde_steps=15),
        dict(sde_noise_level=1.5),
    ):
        with pytest.raises(ConfigError):
            GrpoConfig(**bad)


# --- advantages -----------------------------------------------------------


def test_two_point_zscore():
    group = group_advantages(make_group([[-1.0], [-3.0]]), 0.0)
    assert (group.mean, group.std) == (-2.0, 1.0)
    assert [r.advantages[0] for r in group.rollouts] == [1.0, -1.0]


def test_equal_scores_give_zero_advantages():
    group = group_advantages(make_group([[-0.4, -0.4], [-0.4, -0.4], [-0.4, -0.4]]), 1e-4)
    for r in group.rollouts:
        assert np.all(r.advantages == 0)


def test_advantages_pool_unmasked_segments_only():
    group = make_group([[-1.0, -100.0], [-3.0, -2.0]], [[True, False], [True, True]])
    group = group_advantages(group, 1e-8)
    values = np.array([-1.0, -3.0, -2.0])
    assert group.mean == pytest.approx(values.mean())
    assert group.std == pytest.approx(values.std())
    assert np.isnan(group.rollouts[0].advantages[1])
    np.testing.assert_allclose(group.rollouts[1].advantages, (values[1:] - values.mean()) / (values.std() + 1e-8))


def test_all_masked_group_is_empty():
    with pytest.raises(EmptyGroupError):
        group_advantages(make_group([[-1.0], [-2.0]], [[False], [False]]), 1e-8)


def test_shift_invariance_is_exact_for_dyadic_values():
    rng = np.random.default_rng(0)
    scores = [rng.integers(-64, 0, size=3) / 8.0 for _ in range(6)]
    base = group_advantages(make_group(scores), 1e-8)
    for c in (-4.0, 0.5, 16.0):
        shifted = group_advantages(make_group([s + c for s in scores]), 1e-8)
        for a, b in zip(base.rollouts, shifted.rollouts):
            np.testing.assert_array_equal(a.advantages, b.advantages)


@given(seeds, st.floats(-10, 10))
def test_shift_invariance_random(seed, c):
    rng = np.random.default_rng(seed)
    scores = [-rng.random(3) for _ in range(5)]
    base = group_advantages(make_group(scores), 1e-8)
    shifted = group_advantages(make_group([s + c for s in scores]), 1e-8)
    for a, b in zip(base.rollouts, shifted.rollouts):
        np.testing.assert_allclose(a.advantages, b.advantages, atol=1e-6)
    assert select_best_of_n(base, 2, 2).selected_indices == select_best_of_n(shifted, 2, 2).selected_indices


# --- selection ------------------------------------------------------------


def test_selection_examples():
    assert select_best_of_n(make_group([[-1.0], [-2.0]]), 1, 1).selected_indices == [0, 1]
    assert select_best_of_n(make_group([[0.0], [-1.0], [-2.0], [-3.0]]), 1, 1).selected_indices == [0, 3]
    with pytest.raises(ConfigError):
        select_best_of_n(make_group([[0.0], [-1.0], [-2.0]]), 2, 2)


def test_selection_ties_broken_by_index():
    group = make_group([[-1.0], [-1.0], [-1.0], [-1.0], [-1.0]])
    assert select_best_of_n(group, 1, 1).selected_indices == [0, 1]
    group = make_group([[0.0], [-1.0], [-1.0], [-1.0], [-2.0], [-2.0]])
    assert select_best_of_n(group, 2, 1).selected_indices == [0, 1, 4]


@given(seeds)
def test_selection_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    scores = [-rng.random(4) for _ in range(16)]
    group = select_best_of_n(make_group(scores), 4, 4)
    means = np.array([s.mean() for s in scores])
    order = np.argsort(-means, kind="stable")
    assert set(group.selected_indices) == set(order[:4]) | set(order[-4:])
    assert len(group.selected_indices) == 8


def test_selection_skips_fully_masked_rollouts():
    group = make_group([[0.0], [5.0], [-1.0], [-2.0]], [[True], [False], [True], [True]])
    assert select_best_of_n(group, 1, 1).selected_indices == [0, 3]
    group = make_group([[0.0], [5.0], [-1.0]], [[True], [False], [True]])
    assert select_best_of_n(group, 1, 1).selected_indices == [0, 2]


# --- clipped term ---------------------------------------------------------


def test_clipped_term_examples():
    assert clipped_term(1.0, 2.0, 0.2) == 2.0
    assert clipped_term(1.5, 1.0, 0.2) == pytest.approx(1.2)
    # negative advantage: min(rA, clip(r)A) = A * max(r, 1 - Δ), the pessimistic branch
    assert clipped_term(0.5, -1.0, 0.2) == pytest.approx(-0.8)


@given(st.floats(1e-3, 10), st.floats(-5, 5), st.floats(0.01, 0.9))
def test_clipped_term_case_analysis(r, a, d):
    lo, hi = 1 - d, 1 + d
    if a >= 0:
        expect = a * min(r, hi)
    else:
        expect = a * max(r, lo)
    assert clipped_term(r, a, d) == pytest.approx(expect, abs=1e-12)


@given(st.floats(0.01, 0.9), st.floats(0.01, 5), st.floats(0, 10))
def test_clip_flatness(d, a, extra):
    assert clipped_term(1 + d + extra, a, d) == pytest.approx(clipped_term(1 + d, a, d), abs=1e-12)
    lo = (1 - d) * math.exp(-extra)
    assert clipped_term(lo, -a, d) == pytest.approx(clipped_term(1 - d, -a, d), abs=1e-12)


@given(st.floats(0.05, 3), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_clipped_term_grad_matches_fd(r, a):
    d = 0.2
    if min(abs(r - 1 - d), abs(r - 1 + d)) < 1e-4:
        return
    h = 1e-6
    fd = (clipped_term(r + h, a, d) - clipped_term(r - h, a, d)) / (2 * h)
    assert float(clipped_term_grad(r, a, d)) == pytest.approx(fd, rel=1e-6, abs=1e-9)


# --- densities ------------------------------------------------------------


def test_logdensity_examples():
    for d in (1, 3, 6):
        assert gaussian_step_logdensity(np.zeros(d), np.zeros(d), 1.0) == pytest.approx(-d / 2 * math.log(2 * math.pi))
    mode = gaussian_step_logdensity([0.0], [0.0], 0.3)
    assert gaussian_step_logdensity([0.3], [0.0], 0.3) == pytest.approx(mode - 0.5, abs=1e-12)
    with pytest.raises(ValueError):
        gaussian_step_logdensity([0.0], [0.0], 0.0)


@given(seeds)
def test_logdensity_matches_product_of_univariate(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 10))
    x, m = rng.normal(size=d), rng.normal(size=d)
    s = float(rng.uniform(0.05, 3))
    oracle = sum(math.log(math.exp(-((xi - mi) ** 2) / (2 * s * s)) / (s * math.sqrt(2 * math.pi))) for xi, mi in zip(x, m)
                 if abs(xi - mi) / s < 20)
    if np.all(np.abs(x - m) / s < 20):
        assert gaussian_step_logdensity(x, m, s) == pytest.approx(oracle, abs=1e-12 * max(1, abs(oracle)))


def test_kl_examples():
    assert kl_gaussian([1.0, 2.0], [1.0, 2.0], 0.4) == 0.0
    assert kl_gaussian([0.0, 0.0, 0.4], [0.0, 0.0, 0.0], 0.4) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        kl_gaussian([0.0], [0.0], -1)


@given(seeds)
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=6), rng.normal(size=6)
    assert kl_gaussian(a, b, 0.5) > 0
    assert kl_gaussian(a, a, 0.5) == 0


def test_kl_monte_carlo():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.normal(size=6), rng.normal(size=6)
        s = float(rng.uniform(0.5, 2))
        x = a + s * rng.normal(size=(100_000, 6))
        log_ratio = (np.sum((x - b) ** 2, 1) - np.sum((x - a) ** 2, 1)) / (2 * s * s)
        se = log_ratio.std() / math.sqrt(len(x))
        assert abs(log_ratio.mean() - kl_gaussian(a, b, s)) < 3 * se


# --- objective ------------------------------------------------------------


def brute_force_objective(group, cfg):
    num = den = kl = nkl = 0.0
    for r in group.rollouts:
        if not r.selected:
            continue
        for t in range(len(r.old_logp)):
            ratio = math.exp(r.new_logp[t] - r.old_logp[t])
            lo, hi = 1 - cfg.clip_range, 1 + cfg.clip_range
            for k in range(len(r.scores)):
                if not r.mask[k]:
                    continue
                a = r.advantages[k]
                num += min(ratio * a, min(max(ratio, lo), hi) * a)
                den += 1
            kl += r.kl[t]
            nkl += 1
    return (num / den if den else 0.0) - cfg.kl_weight * kl / nkl


@settings(max_examples=50)
@given(seeds)
def test_objective_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    cfg = GrpoConfig(kl_weight=float(rng.uniform(0, 1)))
    group = prepared(rng, cfg)
    assert grpo_objective(group, cfg) == pytest.approx(brute_force_objective(group, cfg), abs=1e-12)


def test_objective_at_old_policy_is_mean_selected_advantage():
    rng = np.random.default_rng(2)
    cfg = GrpoConfig()
    group = prepared(rng, cfg, g=4, k=3, t=3)
    for r in group.rollouts:
        r.new_logp = r.old_logp.copy()
        r.kl = np.zeros_like(r.old_logp)
    adv = np.concatenate([r.advantages[r.mask] for r in group.rollouts if r.selected])
    assert grpo_objective(group, cfg) == pytest.approx(adv.mean(), abs=1e-12)


def test_zero_advantages_zero_objective():
    rng = np.random.default_rng(3)
    cfg = GrpoConfig(kl_weight=0.0)
    group = prepared(rng, cfg)
    for r in group.rollouts:
        r.advantages = np.where(r.mask, 0.0, np.nan)
        r.new_logp = r.old_logp + rng.uniform(-0.15, 0.15, size=r.old_logp.shape)
    assert grpo_objective(group, cfg) == 0.0


def test_objective_requires_populated_group():
    cfg = GrpoConfig()
    group = select_best_of_n(group_advantages(make_group([[-1.0], [-2.0]]), 1e-8), 1, 1)
    with pytest.raises(ValueError):
        grpo_objective(group, cfg)
    with pytest.raises(EmptyGroupError):
        grpo_objective(make_group([[-1.0], [-2.0]]), cfg)


def test_objective_shift_invariant():
    rng = np.random.default_rng(4)
    cfg = GrpoConfig()
    raw = random_group(rng, g=4, k=2, t=3, masked=False)
    for r in raw.rollouts:
        r.scores = rng.integers(-32, 0, size=2) / 4.0
    values = []
    for c in (0.0, 8.0):
        g = RolloutGroup([Rollout(r.scores + c, r.mask, r.old_logp, r.new_logp, r.kl) for r in raw.rollouts])
        g = select_best_of_n(group_advantages(g, cfg.stability), 2, 2)
        values.append(grpo_objective(g, cfg))
    assert values[0] == values[1]


@settings(max_examples=30)
@given(seeds)
def test_sensitivities_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cfg = GrpoConfig(kl_weight=0.3)
    group = prepared(rng, cfg)
    sens = objective_sensitivities(group, cfg)
    h = 1e-6
    for (d_logp, d_kl), gi in zip(sens, group.selected_indices):
        r = group.rollouts[gi]
        for t in range(len(r.new_logp)):
            ratio = math.exp(r.new_logp[t] - r.old_logp[t])
            if min(abs(ratio - 1.2), abs(ratio - 0.8)) < 1e-4:
                continue
            base = r.new_logp[t]
            r.new_logp[t] = base + h
            up = grpo_objective(group, cfg)
            r.new_logp[t] = base - h
            down = grpo_objective(group, cfg)
            r.new_logp[t] = base
            assert d_logp[t] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)
            r.kl[t] += h
            up = grpo_objective(group, cfg)
            r.kl[t] -= h
            assert d_kl[t] == pytest.approx((up - grpo_objective(group, cfg)) / h, rel=1e-5, abs=1e-9)


def test_objective_deterministic():
    cfg = GrpoConfig()
    a = grpo_objective(prepared(np.random.default_rng(5), cfg), cfg)
    b = grpo_objective(prepared(np.random.default_rng(5), cfg), cfg)
    assert a == b
