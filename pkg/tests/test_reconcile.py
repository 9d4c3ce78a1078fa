"""Reconciliation methods against scalar oracles, plus coherence and fixed-point properties."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from hierrec import (
    ForecastSet,
    InputError,
    WeightMatrix,
    average_methods,
    bottom_up,
    ccc,
    ccc_combine,
    ccc_pooled,
    coherence_residual,
    lcc_average,
    lcc_endogenous,
    lcc_exogenous,
    lcc_exogenous_gl,
    level_matrix,
    mint,
    reconcile_nonnegative,
    top_down_hp,
)
from hierrec.hierarchy import coherence_tolerance
from hierrec.reconcile import MethodContext, run_method, validate_method_key, with_bottoms
from hierrec.seasonal import seasonal_average_forecast
from hierrec.synthetic import random_hierarchy
from hierrec.weights import CombinationWeights


def fs(h, values):
    return ForecastSet.for_hierarchy(h, np.asarray(values, dtype=float))


def dense(m):
    return m.toarray() if sparse.issparse(m) else np.asarray(m)


def coherent(h, rng, H=1):
    return dense(h.S) @ rng.uniform(0.5, 5.0, (h.n_b, H))


# ---------------------------------------------------------------- bottom-up and top-down

def test_bottom_up_examples(toy):
    r = bottom_up(fs(toy, [99, 99, 99, 1, 1, 1, 1, 1]), toy)
    np.testing.assert_array_equal(r.values[:3, 0], [5, 2, 3])
    r = bottom_up(fs(toy, [0, 0, 0, -1, 1, 1, 1, 1]), toy)
    assert r.bottom[0, 0] == -1
    y = toy.S @ np.array([1.0, 2, 3, 4, 5])
    np.testing.assert_array_equal(bottom_up(fs(toy, y), toy).values[:, 0], y)


def test_bottom_up_nonneg_clips(toy):
    r = bottom_up(fs(toy, [0, 0, 0, -1, 1, 1, 1, 1]), toy, nonneg=True)
    np.testing.assert_array_equal(r.values[:, 0], [4, 1, 3, 0, 1, 1, 1, 1])


def test_top_down_constant_shares(two_bottom):
    hist = np.array([[10.0, 4, 6], [20, 8, 12], [5, 2, 3]])
    r = top_down_hp([10.0], hist, two_bottom)
    np.testing.assert_allclose(r.bottom[:, 0], [4, 6], atol=1e-14)
    r = top_down_hp([0.0], hist, two_bottom)
    np.testing.assert_array_equal(r.values, 0)


def test_top_down_seasonal_strata(two_bottom):
    # stratum 0 shares (0.5, 0.5), stratum 1 shares (0.25, 0.75); window ends on stratum 1
    hist = np.array([[4.0, 2, 2], [4, 1, 3], [8, 4, 4], [8, 2, 6]])
    r = top_down_hp([8.0, 8.0], hist, two_bottom, seasonal_period=2)
    np.testing.assert_allclose(r.bottom, [[4, 2], [4, 6]], atol=1e-14)


def test_top_down_ratio_of_averages(two_bottom, rng):
    hist = rng.uniform(1, 5, (12, 2))
    hist = np.column_stack([hist.sum(axis=1), hist])
    a1 = rng.uniform(1, 10, 3)
    r = top_down_hp(a1, hist, two_bottom, seasonal_period=3, start=4)
    strata = (4 + np.arange(12)) % 3
    for j in range(3):
        s = (4 + 11 + j + 1) % 3
        share = hist[strata == s, 1:].mean(axis=0) / hist[strata == s, 0].mean()
        np.testing.assert_allclose(r.bottom[:, j], share * a1[j], rtol=1e-14)


def test_top_down_nonnegative_for_nonnegative_top(random_h, rng):
    hist = dense(random_h.S) @ rng.uniform(0, 3, (random_h.n_b, 24))
    r = top_down_hp(rng.uniform(0, 9, 4), hist.T, random_h, seasonal_period=4)
    assert np.min(r.values) >= 0


def test_top_down_zero_total_stratum(two_bottom):
    hist = np.array([[0.0, 0, 0], [4, 1, 3], [0, 0, 0], [8, 2, 6]])
    with pytest.raises(InputError, match="zero average"):
        top_down_hp([1.0, 1.0], hist, two_bottom, seasonal_period=2)


# ---------------------------------------------------------------- level-conditional, exogenous

def test_lcc_exogenous_examples(toy):
    r = lcc_exogenous(fs(toy, [10, 0, 0, 1, 1, 1, 1, 1]), toy, 1, WeightMatrix.diag(np.ones(5)))
    np.testing.assert_allclose(r.bottom[:, 0], 2, atol=1e-14)
    r = lcc_exogenous(fs(toy, [0, 4, 9, 1, 1, 1, 1, 1]), toy, 2, WeightMatrix.diag([1.0, 1, 2, 2, 2]))
    np.testing.assert_allclose(r.bottom[:, 0], [2, 2, 3, 3, 3], atol=1e-14)


def test_lcc_exogenous_can_go_negative(two_bottom):
    W = WeightMatrix.diag([1.0, 1.0])
    r = lcc_exogenous(fs(two_bottom, [0, 0.1, 0.1]), two_bottom, 1, W)
    np.testing.assert_allclose(r.bottom[:, 0], [0, 0], atol=1e-15)
    r = lcc_exogenous(fs(two_bottom, [0, 0.3, 0.1]), two_bottom, 1, W)
    np.testing.assert_allclose(r.bottom[:, 0], [0.1, -0.1], atol=1e-15)
    r = reconcile_nonnegative(lcc_exogenous, fs(two_bottom, [0, 0.3, 0.1]), two_bottom, 1, W)
    np.testing.assert_allclose(r.bottom[:, 0], [0, 0], atol=1e-15)
    assert r.nonneg


def test_lcc_exogenous_toy_scalar_oracle(toy, rng):
    for _ in range(200):
        v = rng.uniform(0.1, 5, 5)
        y = rng.normal(size=8) * 4
        b = y[3:]
        r1 = lcc_exogenous(fs(toy, y), toy, 1, WeightMatrix.diag(v))
        np.testing.assert_allclose(r1.bottom[:, 0], b + v / v.sum() * (y[0] - b.sum()), rtol=0, atol=1e-10)
        r2 = lcc_exogenous(fs(toy, y), toy, 2, WeightMatrix.diag(v))
        x_gap, y_gap = y[1] - b[:2].sum(), y[2] - b[2:].sum()
        expect = np.concatenate([b[:2] + v[:2] / v[:2].sum() * x_gap, b[2:] + v[2:] / v[2:].sum() * y_gap])
        np.testing.assert_allclose(r2.bottom[:, 0], expect, rtol=0, atol=1e-10)


def test_lcc_exogenous_keeps_level_forecasts(random_h, rng):
    h = random_h
    y = rng.normal(size=(h.n, 3)) * 3
    for l in range(1, h.L + 1):
        r = lcc_exogenous(fs(h, y), h, l, WeightMatrix.diag(rng.uniform(0.1, 3, h.n_b)))
        a = fs(h, y).level(h, l)
        np.testing.assert_allclose(dense(level_matrix(h, l)) @ r.bottom, a, atol=1e-9 * (1 + np.abs(a).max()))


def test_lcc_exogenous_per_horizon_weights(toy, rng):
    y = rng.normal(size=(8, 2))
    Ws = [WeightMatrix.diag(rng.uniform(0.5, 2, 5)) for _ in range(2)]
    both = lcc_exogenous(fs(toy, y), toy, 1, Ws)
    for j in range(2):
        one = lcc_exogenous(fs(toy, y[:, [j]]), toy, 1, Ws[j])
        np.testing.assert_allclose(both.values[:, j], one.values[:, 0], rtol=0, atol=1e-14)
    with pytest.raises(InputError):
        lcc_exogenous(fs(toy, y), toy, 1, Ws[:1])


def test_lcc_gl_examples(two_bottom):
    base = fs(two_bottom, [10, 4, 4])
    np.testing.assert_allclose(lcc_exogenous_gl(base, two_bottom, 1, [0.5, 0.5]).bottom[:, 0], [5, 5], atol=1e-15)
    np.testing.assert_allclose(lcc_exogenous_gl(base, two_bottom, 1, [0.25, 0.75]).bottom[:, 0], [4.5, 5.5], atol=1e-15)


def test_lcc_gl_matches_covariance_bridge(random_h, rng):
    h = random_h
    y = rng.normal(size=(h.n, 2))
    for l in range(1, h.L + 1):
        P = CombinationWeights.from_vector(h, l, rng.uniform(0.1, 1, h.n_b), normalize=True)
        gl = lcc_exogenous_gl(fs(h, y), h, l, P)
        exo = lcc_exogenous(fs(h, y), h, l, WeightMatrix.diag(P.vector()))
        np.testing.assert_allclose(gl.values, exo.values, rtol=0, atol=1e-10)


def test_lcc_gl_rejects_wrong_level(toy):
    P = CombinationWeights.from_vector(toy, 2, [0.5, 0.5, 0.2, 0.3, 0.5])
    with pytest.raises(InputError):
        lcc_exogenous_gl(fs(toy, np.ones(8)), toy, 1, P)


def test_top_level_augmented_inverse(rng):
    # the augmented level-1 structure [0, 1'; p, I] has the closed-form inverse [-1, 1'; p, I - p1']
    for nb in (2, 3, 7):
        p = rng.uniform(0.1, 1, nb)
        p /= p.sum()
        A = np.block([[np.zeros((1, 1)), np.ones((1, nb))], [p[:, None], np.eye(nb)]])
        closed = np.block([[-np.ones((1, 1)), np.ones((1, nb))], [p[:, None], np.eye(nb) - np.outer(p, np.ones(nb))]])
        np.testing.assert_allclose(np.linalg.inv(A), closed, atol=1e-12)


# ---------------------------------------------------------------- level-conditional, endogenous

def test_lcc_endogenous_three_series_equal_variances():
    from hierrec import HierarchySpec, build_hierarchy

    h = build_hierarchy(HierarchySpec([["T"]], ["X", "Y"], [("T", "X"), ("T", "Y")]))
    # each series absorbs a third of the gap 10 - 8; the output must still add up
    r = lcc_endogenous(fs(h, [10, 4, 4]), h, 1, WeightMatrix.diag(np.ones(3)))
    np.testing.assert_allclose(r.values[:, 0], [28 / 3, 14 / 3, 14 / 3], atol=1e-14)
    r = lcc_endogenous(fs(h, [8, 3, 5]), h, 1, WeightMatrix.diag(np.ones(3)))
    np.testing.assert_array_equal(r.values[:, 0], [8, 3, 5])


def test_lcc_endogenous_top_level_shares(toy, rng):
    for c in (0.5, 1.0, 7.0):
        y = rng.normal(size=8) * 3
        W = WeightMatrix.diag(np.array([6.0, 1, 1, 1, 1, 1]) * c)
        r = lcc_endogenous(fs(toy, y), toy, 1, W)
        gap = y[0] - y[3:].sum()
        assert r.values[0, 0] == pytest.approx(y[0] - 6 / 11 * gap, abs=1e-12)
        np.testing.assert_allclose(r.bottom[:, 0], y[3:] + gap / 11, atol=1e-12)


def test_lcc_endogenous_second_level_oracle(toy, rng):
    for _ in range(200):
        v = rng.uniform(0.1, 5, 7)  # X, Y, A..E
        y = rng.normal(size=8) * 4
        r = lcc_endogenous(fs(toy, y), toy, 2, WeightMatrix.diag(v))
        xh, yh, b = y[1], y[2], y[3:]
        sx = v[0] + v[2] + v[3]
        sy = v[1] + v[4:].sum()
        gx, gy = xh - b[:2].sum(), yh - b[2:].sum()
        expect = np.concatenate([b[:2] + v[2:4] / sx * gx, b[2:] + v[4:] / sy * gy])
        np.testing.assert_allclose(r.bottom[:, 0], expect, rtol=0, atol=1e-10)
        assert r.values[1, 0] == pytest.approx(xh - v[0] / sx * gx, abs=1e-10)
        assert r.values[2, 0] == pytest.approx(yh - v[1] / sy * gy, abs=1e-10)


def test_lcc_endogenous_revises_level(toy):
    r = lcc_endogenous(fs(toy, [0, 3, 6, 1, 1, 1, 1, 1]), toy, 2, WeightMatrix.diag(np.ones(7)))
    np.testing.assert_allclose(r.values[1:3, 0], [8 / 3, 5.25], atol=1e-14)


def test_lcc_endogenous_nonneg(toy, rng):
    y = np.array([0, 1.0, 2, -3, 1, 1, -2, 1])
    W = WeightMatrix.diag(rng.uniform(0.5, 2, 7))
    free = lcc_endogenous(fs(toy, y), toy, 2, W)
    bound = lcc_endogenous(fs(toy, y), toy, 2, W, nonneg=True)
    assert free.bottom.min() < 0
    assert bound.bottom.min() >= -1e-9
    d = bound.diagnostics[0]
    assert d.active_set_size >= 1 and d.kkt_residual <= 1e-7


# ---------------------------------------------------------------- MinT

def test_mint_ols_two_bottom(two_bottom):
    r = mint(fs(two_bottom, [10, 4, 4]), two_bottom, WeightMatrix.diag(np.ones(3)))
    np.testing.assert_allclose(r.values[:, 0], [28 / 3, 14 / 3, 14 / 3], atol=1e-14)


def test_mint_matches_projection_matrix(random_h, rng):
    from hierrec import projection_matrix

    h = random_h
    y = rng.normal(size=(h.n, 2))
    Q = rng.normal(size=(h.n, h.n))
    W = WeightMatrix("full", Q @ Q.T / h.n + np.eye(h.n))
    np.testing.assert_allclose(mint(fs(h, y), h, W).values, projection_matrix(h, W) @ y, atol=1e-9)


def test_mint_nonneg_brute_force_grid(two_bottom):
    # minimize (A+B-1)^2 + (A+2)^2 + (B-2)^2 over A, B >= 0
    W = WeightMatrix.diag(np.ones(3))
    free = mint(fs(two_bottom, [1, -2, 2]), two_bottom, W)
    np.testing.assert_allclose(free.bottom[:, 0], [-5 / 3, 7 / 3], atol=1e-14)
    r = reconcile_nonnegative(mint, fs(two_bottom, [1, -2, 2]), two_bottom, W)
    grid = np.linspace(0, 3, 3001)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    obj = (a + b - 1) ** 2 + (a + 2) ** 2 + (b - 2) ** 2
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    np.testing.assert_allclose(r.bottom[:, 0], [grid[i], grid[j]], atol=1e-3)
    np.testing.assert_allclose(r.bottom[:, 0], [0, 1.5], atol=1e-14)

    def objective(v):
        return float(np.sum((v - [1, -2, 2]) ** 2))

    assert objective(r.values[:, 0]) >= objective(free.values[:, 0])


def test_shr_full_intensity_equals_wls(toy, rng):
    from hierrec.weights import residual_variance_weights, shrinkage_covariance

    res = rng.normal(size=(30, toy.n))
    y = rng.normal(size=(toy.n, 2))
    a = mint(fs(toy, y), toy, shrinkage_covariance(res, intensity=1.0))
    b = mint(fs(toy, y), toy, residual_variance_weights(res))
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


# ---------------------------------------------------------------- combinations

def test_ccc_combine_examples(two_bottom):
    m1 = bottom_up(fs(two_bottom, [0, 2, 2]), two_bottom)
    m2 = bottom_up(fs(two_bottom, [0, 4, 4]), two_bottom)
    np.testing.assert_array_equal(ccc_combine([m1, m2], [1.0, 0.0]).values, m1.values)
    np.testing.assert_array_equal(ccc_combine([m1, m2], [0.5, 0.5]).bottom[:, 0], [3, 3])
    with pytest.raises(InputError):
        ccc_combine([m1, m2], [0.6, 0.5])
    with pytest.raises(InputError):
        ccc_combine([m1, m2], [1.2, -0.2])
    with pytest.raises(InputError):
        ccc_combine([])


def test_ccc_top_identity(toy, rng):
    for _ in range(100):
        y = rng.normal(size=8) * 5
        r = ccc(fs(toy, y), toy, WeightMatrix.diag(rng.uniform(0.1, 4, 5)))
        assert r.values[0, 0] == pytest.approx((y[0] + y[1] + y[2] + y[3:].sum()) / 3, abs=1e-12)


def test_lcc_average_is_mean_of_levels(random_h, rng):
    h = random_h
    y = rng.normal(size=(h.n, 2))
    W = WeightMatrix.diag(rng.uniform(0.5, 2, h.n_b))
    members = [lcc_exogenous(fs(h, y), h, l, W).values for l in range(1, h.L + 1)]
    np.testing.assert_allclose(lcc_average(fs(h, y), h, W).values, np.mean(members, axis=0), atol=1e-12)


def test_ccc_combine_order_invariant(toy, rng):
    y = rng.normal(size=(8, 3))
    W = WeightMatrix.diag(rng.uniform(0.5, 2, 5))
    members = [lcc_exogenous(fs(toy, y), toy, l, W) for l in (1, 2)] + [bottom_up(fs(toy, y), toy)]
    ref = ccc_combine(members).values
    for perm in itertools.permutations(members):
        np.testing.assert_allclose(ccc_combine(list(perm)).values, ref, rtol=0, atol=1e-15 * (1 + np.abs(ref).max()) * 4)


def test_ccc_pooled_single_level(two_bottom):
    ets = fs(two_bottom, [10, 4, 4])
    sa = fs(two_bottom, [0, 3, 5])
    r = ccc_pooled(ets, sa, two_bottom, WeightMatrix.diag([1.0, 1.0]))
    np.testing.assert_allclose(r.values[:, 0], [9, 4, 5], atol=1e-14)


def test_ccc_pooled_degenerates_to_ccc(toy, rng):
    y = rng.normal(size=(8, 2))
    W = WeightMatrix.diag(rng.uniform(0.5, 2, 5))
    np.testing.assert_allclose(ccc_pooled(fs(toy, y), fs(toy, y), toy, W).values, ccc(fs(toy, y), toy, W).values, atol=1e-14)


def test_ccc_pooled_ignores_deeper_upper_rows(two_bottom):
    ets = fs(two_bottom, [10, 4, 4])
    sa_bottom = ForecastSet(np.array([[3.0], [5.0]]), two_bottom.bottom_labels)
    r = ccc_pooled(ets, sa_bottom, two_bottom, WeightMatrix.diag([1.0, 1.0]))
    np.testing.assert_allclose(r.bottom[:, 0], [4, 5], atol=1e-14)


def test_average_methods(two_bottom):
    a = bottom_up(fs(two_bottom, [0, 2, 4]), two_bottom)
    b = bottom_up(fs(two_bottom, [0, 4, 2]), two_bottom)
    np.testing.assert_array_equal(average_methods(a, a).values, a.values)
    np.testing.assert_array_equal(average_methods(a, b).bottom[:, 0], [3, 3])
    r = average_methods(a, b)
    assert np.max(r.coherence) <= max(np.max(a.coherence), np.max(b.coherence)) + 1e-15


def test_combination_mismatch(two_bottom, toy):
    a = bottom_up(fs(two_bottom, [0, 2, 4]), two_bottom)
    c = bottom_up(fs(toy, np.ones(8)), toy)
    with pytest.raises(InputError):
        average_methods(a, c)
    b2 = bottom_up(fs(two_bottom, np.ones((3, 2))), two_bottom)
    with pytest.raises(InputError):
        average_methods(a, b2)


def test_nonneg_combinations_stay_nonneg(random_h, rng):
    h = random_h
    y = rng.normal(size=(h.n, 2)) + 0.5
    y[: h.n_a] = np.abs(y[: h.n_a]) + h.n_b
    W = WeightMatrix.diag(rng.uniform(0.5, 2, h.n_b))
    for fn in (lcc_average, ccc):
        r = fn(fs(h, y), h, W, nonneg=True)
        assert r.bottom.min() >= -1e-9


# ---------------------------------------------------------------- properties across methods

def all_methods(h, base, rng, sa_shift=0.3):
    Wb = WeightMatrix.diag(rng.uniform(0.2, 3, h.n_b))
    W = WeightMatrix.diag(rng.uniform(0.2, 3, h.n))
    out = {"bu": bottom_up(base, h), "mint": mint(base, h, W), "lcc": lcc_average(base, h, Wb), "ccc": ccc(base, h, Wb)}
    for l in range(1, h.L + 1):
        nl = h.level_sizes[l - 1]
        out[f"exo{l}"] = lcc_exogenous(base, h, l, Wb)
        out[f"endo{l}"] = lcc_endogenous(base, h, l, WeightMatrix.diag(rng.uniform(0.2, 3, nl + h.n_b)))
    hist = (dense(h.S) @ rng.uniform(0.5, 3, (h.n_b, 8))).T
    out["td"] = top_down_hp(base, hist, h, seasonal_period=2)
    out["ccc-h"] = ccc_pooled(base, with_bottoms(base, h, base.rows(h, "bottom") + sa_shift), h, Wb)
    return out


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["nested", "grouped"]))
def test_every_method_is_coherent(seed, kind):
    h = random_hierarchy(seed, kind=kind)
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(h.n, 2)) * rng.uniform(0.1, 100)
    for name, r in all_methods(h, fs(h, y), rng).items():
        assert np.all(coherence_residual(r.values, h) <= coherence_tolerance(y) + 1e-8 * np.abs(r.values).max()), name


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["nested", "grouped"]))
def test_coherent_inputs_are_fixed_points(seed, kind):
    h = random_hierarchy(seed, kind=kind)
    rng = np.random.default_rng(seed)
    y = coherent(h, rng, 2)
    for name, r in all_methods(h, fs(h, y), rng, sa_shift=0.0).items():
        if name == "td":
            continue
        np.testing.assert_allclose(r.values, y, rtol=0, atol=1e-11 * (1 + np.abs(y).max()), err_msg=name)


def test_duplicated_nodes_reconcile(unbalanced, rng):
    y = rng.normal(size=(unbalanced.n, 2))
    for name, r in all_methods(unbalanced, fs(unbalanced, y), rng).items():
        i, j = unbalanced.index["C"], unbalanced.index["C_dup"]
        np.testing.assert_allclose(r.values[i], r.values[j], atol=1e-12, err_msg=name)


def test_non_finite_base_rejected(toy):
    y = np.ones(8)
    y[4] = np.nan
    with pytest.raises(InputError):
        lcc_exogenous(fs(toy, y), toy, 1, WeightMatrix.diag(np.ones(5)))
    with pytest.raises(InputError):
        bottom_up(fs(toy, y), toy)


# ---------------------------------------------------------------- registry

@pytest.fixture
def context(toy, rng):
    hist = (toy.S @ rng.uniform(1, 4, (5, 24))).T + rng.normal(0, 0.1, (24, 8))
    base = fs(toy, rng.uniform(1, 10, (8, 3)))
    sa = ForecastSet(seasonal_average_forecast(hist, 4, 3, 0), toy.labels, 23, "sa")
    return MethodContext(toy, base, sa, hist, 0, 4)


@pytest.mark.parametrize(
    "key",
    ["bu", "td-hp", "ols", "wls", "shr", "lcc-exo:1", "lcc-exo:2", "lcc-endo:2", "lcc", "ccc", "ccc-h",
     "avg:wls+ccc", "wls@sa", "avg:wls+wls@sa"],
)
def test_registry_runs_every_key(context, key):
    r = run_method(key, context)
    assert r.method == key
    assert r.values.shape == (8, 3)
    assert np.all(coherence_residual(r.values, context.hierarchy) <= 1e-9 * (1 + np.abs(r.values).max()))


def test_registry_ols_is_identity_mint(context):
    r = run_method("ols", context)
    np.testing.assert_allclose(r.values, mint(context.base, context.hierarchy, WeightMatrix.diag(np.ones(8))).values)


def test_registry_sa_bottoms(context):
    r = run_method("bu@sa", context)
    np.testing.assert_allclose(r.bottom, context.sa.rows(context.hierarchy, "bottom"))


@pytest.mark.parametrize("key", ["lcc-exo:3", "lcc-exo:x", "nope", "avg:bu", "avg:bu+"])
def test_registry_rejects_bad_keys(toy, key):
    with pytest.raises(InputError):
        validate_method_key(key, toy)


def test_registry_needs_history(toy):
    ctx = MethodContext(toy, fs(toy, np.ones(8)))
    with pytest.raises(InputError, match="training window"):
        run_method("wls", ctx)
    with pytest.raises(InputError):
        run_method("ccc-h", ctx)
