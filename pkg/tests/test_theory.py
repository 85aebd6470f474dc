import math

import numpy as np
import pytest

from smoothem import theory
from smoothem.theory import (
    ConstantSet, InvalidRadiusError, NoContractionError, TheoryInputs,
    convergence_rate, gamma_bound, iterations_to, lipschitz_L, nu, q_hessian, verify_bounds,
)


def table_inputs(sigma, r, frac, **kw):
    return TheoryInputs.from_sd(sigma, r, frac, **kw)


# --- constants ------------------------------------------------------------------

@pytest.mark.parametrize("sigma,r,nu_val,L_val", [
    (2.1, 0.7, 0.008816, 0.076989),
    (1.1, 0.37, 0.010853, 1.451928),
])
def test_nu_and_L_direct_values(sigma, r, nu_val, L_val):
    inp = table_inputs(sigma, r, 0.1)
    assert nu(inp) == pytest.approx(nu_val, rel=1e-4)
    assert lipschitz_L(inp) == pytest.approx(L_val, rel=1e-5)


def test_nu_hand_evaluation():
    # sigma*^2 = 4.41, r = 0.7, 1 - alpha* = 0.1
    s2, r, p = 4.41, 0.7, 0.1
    cross = p * r / (s2 - r) ** 2
    t1 = (s2 - r) / (2 * (s2 + r) ** 3) - cross
    t2 = p / (s2 + r) - cross
    assert nu(table_inputs(2.1, 0.7, 0.1)) == pytest.approx(min(t1, t2), rel=1e-14)


def test_nu_positive_in_small_radius_limit():
    for sigma in (1.1, 2.1, 5.1):
        for frac in (0.05, 0.1, 0.3):
            inp = table_inputs(sigma, 1e-9, frac)
            s2 = sigma**2
            assert nu(inp) == pytest.approx(min(1 / (2 * s2**2), frac / s2), rel=1e-6)
            assert theory.nu_is_positive(inp)


def test_nu_alpha_term_forms_agree():
    rng = np.random.default_rng(0)
    for _ in range(200):
        inp = TheoryInputs(rng.uniform(0.05, 0.95), rng.uniform(1, 5), rng.uniform(0.01, 0.9),
                           constant_set="full")
        assert theory.nu_alpha_term(inp, "printed") == theory.nu_alpha_term(inp, "proof")


def test_full_unknown_floor_blows_up():
    inp = TheoryInputs(0.9, 4.0, 0.5, constant_set=ConstantSet.FULL_UNKNOWN, omega=1e-3)
    # (1 - alpha*) - r < 0, so the omega^-2 floor takes over
    assert lipschitz_L(inp) >= 0.1 / 1e-6
    known = TheoryInputs(0.9, 4.0, 0.5)
    assert lipschitz_L(known) < 1.0


def test_invalid_radius():
    with pytest.raises(InvalidRadiusError):
        TheoryInputs(0.9, 1.0, 1.0)
    with pytest.raises(InvalidRadiusError):
        TheoryInputs(0.9, 1.0, -0.1)


# --- gamma ----------------------------------------------------------------------------

def test_gamma_tiny_for_large_separation():
    # mu*=50, sigma*=1 with an O(1) exponent scale
    inp = TheoryInputs(0.9, 1.0, 0.1, mu_star=50.0, omega0=1.0)
    assert gamma_bound(inp) < 1e-10


def test_gamma_decreasing_in_mu_beyond_turning_point():
    s2, r, w0 = 1.0, 0.1, 1.0
    start = 5 * (s2 + r) / w0
    mus = np.linspace(start + 0.1, 200, 60)
    vals = [gamma_bound(TheoryInputs(0.9, s2, r, mu_star=m, omega0=w0)) for m in mus]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_gamma_idealized_is_zero():
    assert gamma_bound(table_inputs(2.1, 0.7, 0.1), idealized=True) == 0.0


# --- rates -----------------------------------------------------------------------------

def test_convergence_rate_examples():
    assert convergence_rate(0.3, 0.3) == 0.0
    inp = table_inputs(2.1, 0.7, 0.1)
    assert convergence_rate(nu(inp), lipschitz_L(inp)) == pytest.approx(0.795, abs=0.005)
    inp = table_inputs(1.1, 0.37, 0.1)
    assert convergence_rate(nu(inp), lipschitz_L(inp)) == pytest.approx(0.984, abs=0.005)
    with pytest.raises(NoContractionError):
        convergence_rate(0.1, 1.0, gamma=0.2)
    with pytest.raises(ValueError):
        convergence_rate(2.0, 1.0)


@pytest.mark.parametrize("rate,target,k", [(0.795, 1e-4, 41), (0.5, 0.25, 3), (0.1, 1e-4, 5)])
def test_iterations(rate, target, k):
    assert iterations_to(rate, target) == k
    assert rate**k < target <= rate ** (k - 1)


def test_iterations_rejects_non_contraction():
    with pytest.raises(NoContractionError):
        iterations_to(1.0)


def test_rate_table_shape_and_flags():
    rows = theory.rate_table()
    assert len(rows) == 10 and all(not r.flag for r in rows)
    bad = theory.rate_row(1.0, 1.5, 0.1)
    assert bad.flag.startswith("invalid_radius") and math.isnan(bad.rate)
    nocon = theory.rate_row(2.1, 0.7, 0.1, idealized_gamma=False)
    assert nocon.flag.startswith("no_contraction")


# --- Hessian ---------------------------------------------------------------------------

def test_hessian_symmetric_and_offdiag_vanish_at_truth():
    star = np.array([0.9, 12.0, 4.41])
    H = q_hessian(star, star)
    np.testing.assert_array_equal(H, H.T)
    assert H[1, 2] == 0.0 and H[2, 1] == 0.0
    H2 = q_hessian([0.85, 11.5, 4.0], star, exact=True)
    np.testing.assert_array_equal(H2, H2.T)


def _fd_hessian(f, theta, steps):
    d = len(theta)
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            def shifted(si, sj):
                t = np.array(theta, dtype=float)
                t[i] += si * steps[i]
                t[j] += sj * steps[j]
                return f(t)
            H[i, j] = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4 * steps[i] * steps[j])
    return H


@pytest.mark.parametrize("theta,exact", [
    ((0.88, 10.5, 4.9), True),
    ((0.9, 12.0, 4.9), False),
])
def test_hessian_matches_monte_carlo(theta, exact):
    star = np.array([0.9, 12.0, 4.41])
    rng = np.random.default_rng(0)
    z = rng.random(1_000_000) >= star[0]
    xi = rng.normal(np.where(z, star[1], 0.0), math.sqrt(star[2]))
    f = lambda t: theory.neg_q_monte_carlo(t, star, sample=xi)
    fd = _fd_hessian(f, theta, steps=(1e-3, 1e-3, 1e-3))
    H = q_hessian(theta, star, exact=exact)
    scale = np.abs(H).max()
    np.testing.assert_allclose(fd, H, rtol=1e-2, atol=1e-2 * scale)
    for i in range(3):
        assert fd[i, i] == pytest.approx(H[i, i], rel=1e-2)
    if theta[1] != star[1]:
        # the displayed form misses the (mu* - mu)^2 term and is detectably off here
        assert abs(fd[2, 2] - q_hessian(theta, star)[2, 2]) > 0.05 * abs(fd[2, 2])


def test_displayed_hessian_differs_off_truth():
    star = np.array([0.9, 12.0, 4.41])
    theta = (0.9, 11.3, 4.0)
    gap = q_hessian(theta, star, exact=True)[2, 2] - q_hessian(theta, star)[2, 2]
    assert gap == pytest.approx(0.1 * 0.7**2 / 4.0**3)


# --- sandwich check --------------------------------------------------------------------

def test_bounds_hold_on_table_setting():
    rep = verify_bounds(table_inputs(2.1, 0.7, 0.1), n_samples=10_000)
    assert rep.ok and rep.n_skipped == 0
    assert rep.nu <= rep.min_eig and rep.max_eig <= rep.L


def test_inflated_nu_is_falsified():
    inp = table_inputs(2.1, 0.7, 0.1)
    rep = verify_bounds(inp, n_samples=10_000, nu_value=2 * nu(inp))
    assert rep.nu_violations > 0 and not rep.ok


def test_smaller_ball_still_clean():
    rep = verify_bounds(table_inputs(2.1, 0.35, 0.1), n_samples=10_000,
                        nu_value=nu(table_inputs(2.1, 0.7, 0.1)), L_value=lipschitz_L(table_inputs(2.1, 0.7, 0.1)))
    assert rep.ok
