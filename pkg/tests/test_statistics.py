import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import evar_grid, quantile_enum, superquantile_enum

from cdte.errors import DomainError
from cdte.statistics import (
    NuisanceValues,
    StatisticSpec,
    alpha_vector,
    boundary_rows,
    dual_objective,
    dual_objective_kl,
    kl_clamp_count,
    pinball_loss,
    rho,
    weighted_evar,
    weighted_evar_rows,
    weighted_quantile,
    weighted_superquantile,
)

weights_st = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30)


def _instance(draw_vals, draw_w):
    n = min(len(draw_vals), len(draw_w))
    v, w = np.array(draw_vals[:n]), np.array(draw_w[:n])
    if w.sum() <= 1e-9:
        w = np.ones(n)
    return v, w


# -- spec construction -------------------------------------------------------

@pytest.mark.parametrize("tau", [0.0, 1.0, 1.5, -0.1, float("nan")])
def test_tau_outside_unit_interval(tau):
    with pytest.raises(DomainError):
        StatisticSpec.quantile(tau)


def test_negative_delta():
    with pytest.raises(DomainError):
        StatisticSpec.klrisk(-0.1)


def test_names_and_dimensions():
    assert StatisticSpec.superquantile(0.5).m == 1
    assert StatisticSpec.klrisk(1.0).m == 2
    assert StatisticSpec.quantile(0.5).name == "CQTE"


# -- moment function ---------------------------------------------------------

def test_rho_quantile():
    np.testing.assert_allclose(rho(StatisticSpec.quantile(0.75), 1.0, NuisanceValues(2.0)), [-0.25])


def test_rho_mean():
    np.testing.assert_allclose(rho(StatisticSpec.mean(), 3.0, NuisanceValues(3.0)), [0.0])


def test_rho_superquantile():
    r = rho(StatisticSpec.superquantile(0.75), 4.0, NuisanceValues(4.0, (2.0,)))
    np.testing.assert_allclose(r, [12.0, 0.75])


def test_rho_wrong_aux_length():
    with pytest.raises(DomainError):
        rho(StatisticSpec.superquantile(0.75), 4.0, NuisanceValues(4.0))


def test_rho_klrisk_gradient_matches_finite_difference():
    spec = StatisticSpec.klrisk(0.7)
    y, beta, lam = 1.3, 0.8, 0.4
    r = rho(spec, y, NuisanceValues(0.0, (beta, lam)))
    eps = 1e-6
    db = (dual_objective_kl(y, beta + eps, lam, 0.7) - dual_objective_kl(y, beta - eps, lam, 0.7)) / (2 * eps)
    dl = (dual_objective_kl(y, beta, lam + eps, 0.7) - dual_objective_kl(y, beta, lam - eps, 0.7)) / (2 * eps)
    np.testing.assert_allclose(r[1:], [db, dl], rtol=1e-6)


# -- KL dual -----------------------------------------------------------------

def test_dual_objective_examples():
    lam = 0.7
    assert dual_objective_kl(lam, 1.0, lam, 0.0) == pytest.approx(lam + math.exp(-1))
    assert dual_objective_kl(0.0, 1.0, 0.0, 1.0) == pytest.approx(1 + math.exp(-1))
    assert dual_objective(0.0, 1.0, 0.0, 1.0) == pytest.approx(1 + math.exp(-1))


def test_dual_objective_rejects_nonpositive_beta():
    with pytest.raises(DomainError):
        dual_objective_kl(1.0, 0.0, 0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-20, 20), st.floats(0.0, 5.0), st.floats(0.05, 10), st.floats(-5, 5), st.floats(0, 3))
def test_dual_objective_increasing_in_y(y, dy, beta, lam, delta):
    assert dual_objective_kl(y + dy, beta, lam, delta) >= dual_objective_kl(y, beta, lam, delta)


def test_exp_clamp_is_counted():
    assert kl_clamp_count(np.array([0.0, 2000.0]), np.array([1.0, 1.0]), np.array([0.0, 0.0])) == 1
    assert np.isfinite(dual_objective_kl(2000.0, 1.0, 0.0, 1.0))


# -- debiasing vector --------------------------------------------------------

def test_alpha_quantile():
    np.testing.assert_allclose(alpha_vector(StatisticSpec.quantile(0.5), NuisanceValues(1.0), 0.5), [-2.0])


def test_alpha_klrisk():
    np.testing.assert_allclose(alpha_vector(StatisticSpec.klrisk(1.0), NuisanceValues(1.0, (1.0, 0.0))),
                               [-1.0, 0.0, 0.0])


def test_alpha_superquantile_sign():
    # the second entry carries +q/(1-tau); see the ledger for the sign
    a = alpha_vector(StatisticSpec.superquantile(0.75), NuisanceValues(3.0, (2.0,)))
    np.testing.assert_allclose(a, [-1.0, 8.0])


def test_alpha_quantile_needs_positive_density():
    with pytest.raises(DomainError):
        alpha_vector(StatisticSpec.quantile(0.5), NuisanceValues(1.0), 0.0)


# -- weighted quantile -------------------------------------------------------

def test_weighted_quantile_examples():
    assert weighted_quantile([1, 2, 3, 4], [1, 1, 1, 1], 0.5) == 2
    assert weighted_quantile([5], [1], 0.3) == 5
    assert weighted_quantile([1, 2], [0.9, 0.1], 0.95) == 2


def test_weighted_quantile_rejects_bad_weights():
    with pytest.raises(DomainError):
        weighted_quantile([1, 2], [0, 0], 0.5)
    with pytest.raises(DomainError):
        weighted_quantile([1, 2], [-1, 2], 0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), weights_st, st.floats(0.01, 0.99))
def test_weighted_quantile_matches_enumeration(vals, ws, tau):
    v, w = _instance(vals, ws)
    assert weighted_quantile(v, w, tau) == pytest.approx(quantile_enum(v, w, tau), abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.floats(0.01, 0.5), st.floats(0.0, 0.49))
def test_weighted_quantile_monotone_in_tau(vals, t1, dt):
    w = np.ones(len(vals))
    assert weighted_quantile(vals, w, t1) <= weighted_quantile(vals, w, t1 + dt)


# -- weighted superquantile --------------------------------------------------

def test_weighted_superquantile_examples():
    mu, q = weighted_superquantile([1, 2, 3, 4], [1, 1, 1, 1], 0.5)
    assert (mu, q) == (pytest.approx(3.5), 2.0)
    assert weighted_superquantile([5], [1], 0.9)[0] == 5.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), weights_st, st.floats(0.01, 0.99))
def test_weighted_superquantile_matches_enumeration(vals, ws, tau):
    v, w = _instance(vals, ws)
    mu, q = weighted_superquantile(v, w, tau)
    assert mu == pytest.approx(superquantile_enum(v, w, tau), abs=1e-6 * max(1.0, abs(mu)))
    assert mu >= q


# -- weighted EVaR -----------------------------------------------------------

def test_evar_point_mass():
    assert weighted_evar([5.0], [1.0], 2.0).R == 5.0
    assert weighted_evar([5.0, 5.0, 7.0], [0.5, 0.5, 0.0], 2.0).R == 5.0


def test_evar_delta_zero_is_mean():
    rng = np.random.default_rng(1)
    v, w = rng.normal(size=20), rng.uniform(size=20)
    assert weighted_evar(v, w, 0.0).R == pytest.approx(np.average(v, weights=w), abs=1e-6)


def test_evar_two_points_matches_grid():
    r = weighted_evar([0.0, 1.0], [0.5, 0.5], 0.2)
    assert r.R == pytest.approx(evar_grid([0.0, 1.0], [0.5, 0.5], 0.2), abs=1e-4)
    assert r.lam == pytest.approx(r.R - r.beta * 1.2)


def test_evar_bounds_and_monotone():
    rng = np.random.default_rng(2)
    v, w = rng.lognormal(size=30), rng.uniform(size=30)
    Rs = [weighted_evar(v, w, d).R for d in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert all(a <= b + 1e-9 for a, b in zip(Rs, Rs[1:]))
    assert np.average(v, weights=w) - 1e-9 <= Rs[0] and Rs[-1] <= v.max()


def test_evar_rows_batch_matches_single():
    rng = np.random.default_rng(3)
    v = rng.normal(size=15)
    W = rng.uniform(size=(4, 15))
    R, _, _ = weighted_evar_rows(v, W, 0.8)
    for i in range(4):
        assert R[i] == pytest.approx(weighted_evar(v, W[i], 0.8).R, abs=1e-12)


def test_evar_boundary_flag_for_tiny_delta():
    assert boundary_rows([0.0, 1.0], np.array([[0.5, 0.5]]), 1e-12)[0]
    assert not boundary_rows([0.0, 1.0], np.array([[0.5, 0.5]]), 0.5)[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=20), weights_st, st.floats(0.05, 3.0))
def test_evar_dominates_superquantile(vals, ws, delta):
    v, w = _instance(vals, ws)
    tau = 1.0 - math.exp(-delta)
    assert weighted_evar(v, w, delta).R >= weighted_superquantile(v, w, tau)[0] - 1e-6


def test_pinball_loss():
    assert pinball_loss([1.0, 3.0], [2.0, 2.0], 0.75) == pytest.approx((0.25 + 0.75) / 2)
