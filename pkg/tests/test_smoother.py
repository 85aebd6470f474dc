import numpy as np
import pytest

from smoothem import smoother
from smoothem.bspline import design_matrix, make_knots, penalty_matrix
from smoothem.pipeline import DEFAULT_LAMBDA_GRID, PipelineConfig, build_design
from smoothem.simgen import Scenario, generate
from smoothem.smoother import DegenerateSmootherError, SingularSystemError


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(0)
    xs = np.sort(rng.random(150))
    kv = make_knots((0, 1), 25, 4)
    N = design_matrix(kv, xs)
    return xs, kv, N, rng


@pytest.mark.parametrize("q", [1, 2, 3])
@pytest.mark.parametrize("lam", DEFAULT_LAMBDA_GRID)
def test_constant_data_fit_exactly(setup, q, lam):
    xs, kv, N, _ = setup
    sf = smoother.fit(N, np.full(xs.size, 3.7), lam, penalty_matrix(kv, q))
    np.testing.assert_allclose(sf.fitted, 3.7, atol=1e-8)
    dense = smoother.predict(sf, kv, np.linspace(0, 1, 300))
    np.testing.assert_allclose(dense, 3.7, atol=1e-8)


def test_polynomial_in_null_space_reproduced(setup):
    xs, kv, N, _ = setup
    P = penalty_matrix(kv, 2)
    y = 1.5 - 4.0 * xs
    for lam in (1e-4, 1.0, 1e3):
        sf = smoother.fit(N, y, lam, P)
        assert np.max(np.abs(smoother.residuals(sf, y))) <= 1e-8


def test_lambda_zero_is_least_squares(setup):
    xs, kv, N, rng = setup
    y = np.sin(6 * xs) + rng.normal(0, 0.1, xs.size)
    sf = smoother.fit(N, y, 0.0, penalty_matrix(kv, 2))
    ols = np.linalg.lstsq(N, y, rcond=None)[0]
    np.testing.assert_allclose(sf.fitted, N @ ols, atol=1e-8)


def test_linear_in_y(setup):
    xs, kv, N, rng = setup
    P = penalty_matrix(kv, 2)
    mask = rng.random(xs.size) > 0.2
    y1, y2 = rng.normal(size=xs.size), rng.normal(size=xs.size)
    grid = np.linspace(0, 1, 50)
    f = lambda y: smoother.predict(smoother.fit(N, y, 1e-3, P, mask), kv, grid)
    np.testing.assert_allclose(f(y1 + y2), f(y1) + f(y2), atol=1e-10)


def test_predict_at_training_points_equals_fitted(setup):
    xs, kv, N, rng = setup
    sf = smoother.fit(N, rng.normal(size=xs.size), 1e-2, penalty_matrix(kv, 2))
    np.testing.assert_allclose(smoother.predict(sf, kv, xs), sf.fitted, atol=1e-12)


def test_perfect_fit_zero_residuals(setup):
    xs, kv, N, _ = setup
    sf = smoother.fit(N, 2 * xs, 1.0, penalty_matrix(kv, 2))
    np.testing.assert_allclose(smoother.residuals(sf, 2 * xs), 0.0, atol=1e-10)


def test_mask_consistency_and_stationarity(setup):
    xs, kv, N, rng = setup
    P = penalty_matrix(kv, 2)
    y = np.cos(5 * xs) + rng.normal(0, 0.2, xs.size)
    mask = rng.random(xs.size) > 0.3
    lam = 1e-3
    sf = smoother.fit(N, y, lam, P, mask)
    # masked fit equals the fit to the included subset only
    sub = smoother.fit(N[mask], y[mask], lam, P)
    np.testing.assert_allclose(sf.coefficients, sub.coefficients, atol=1e-10)
    assert sf.n_used == mask.sum() and sf.fitted.shape == y.shape
    r = smoother.residuals(sf, y)[mask]
    lhs = N[mask].T @ r / mask.sum()
    np.testing.assert_allclose(lhs, lam * P.matrix @ sf.coefficients, atol=1e-8)


def test_sparse_and_dense_design_agree(setup):
    xs, kv, N, rng = setup
    P = penalty_matrix(kv, 2)
    y = rng.normal(size=xs.size)
    dense = smoother.fit(N, y, 1e-2, P)
    sp = smoother.fit(design_matrix(kv, xs, as_sparse=True), y, 1e-2, P)
    np.testing.assert_allclose(dense.coefficients, sp.coefficients, atol=1e-12)


def test_roughness_monotone_in_lambda(setup):
    xs, kv, N, rng = setup
    P = penalty_matrix(kv, 2)
    y = np.sin(9 * xs) + rng.normal(0, 0.3, xs.size)
    rough = [smoother.fit(N, y, lam, P).roughness(P) for lam in sorted(DEFAULT_LAMBDA_GRID)]
    assert all(a >= b - 1e-9 * max(a, 1.0) for a, b in zip(rough, rough[1:]))


def test_masked_spikes_keep_large_residuals():
    d = generate(Scenario(n=500, stn=2, alpha_star=0.8, seed=4))
    des = build_design(d.xs, PipelineConfig())
    sf = smoother.fit(des.N, d.ys, 1e-2, des.P, ~d.true_labels)
    r = smoother.residuals(sf, d.ys)
    assert np.min(r[d.true_labels]) > 6.0
    assert np.max(np.abs(r[~d.true_labels])) < 5.0


def test_hat_trace_bounds_and_monotone(setup):
    xs, kv, N, _ = setup
    P = penalty_matrix(kv, 2)
    traces = [smoother.hat_trace(N, lam, P) for lam in sorted(DEFAULT_LAMBDA_GRID)]
    assert all(0 < t <= kv.dim + 1e-9 for t in traces)
    assert all(a >= b - 1e-9 for a, b in zip(traces, traces[1:]))
    # large lambda leaves the 2-dimensional null space of the q=2 penalty
    assert smoother.hat_trace(N, 1e8, P) == pytest.approx(2.0, abs=1e-3)
    # exact oracle: trace of the explicit smoother matrix
    lam = 1e-3
    H = N.T @ N / xs.size + lam * P.matrix
    S = N @ np.linalg.solve(H, N.T) / xs.size
    assert smoother.hat_trace(N, lam, P) == pytest.approx(np.trace(S), rel=1e-10)


def test_gcv_formula_and_degenerate(setup):
    xs, kv, N, rng = setup
    P = penalty_matrix(kv, 2)
    y = rng.normal(size=xs.size)
    lam = 1e-2
    sf = smoother.fit(N, y, lam, P)
    tr = smoother.hat_trace(N, lam, P)
    n = xs.size
    assert smoother.gcv(N, y, lam, P) == pytest.approx(n * np.sum((y - sf.fitted) ** 2) / (n - tr) ** 2)
    kv_big = make_knots((0, 1), 10, 4)
    x_small = np.linspace(0, 1, 8)
    with pytest.raises(DegenerateSmootherError):
        smoother.gcv(design_matrix(kv_big, x_small), np.sin(x_small), 0.0, penalty_matrix(kv_big, 2))


def test_gcv_prefers_smallest_lambda_on_clumped_spikes():
    d = generate(Scenario(n=500, stn=2, alpha_star=0.8, spike_process="nhpp", seed=1))
    des = build_design(d.xs, PipelineConfig())
    scores = [smoother.gcv(des.N, d.ys, lam, des.P) for lam in DEFAULT_LAMBDA_GRID]
    assert DEFAULT_LAMBDA_GRID[int(np.argmin(scores))] == min(DEFAULT_LAMBDA_GRID)


def test_rank_deficient_system_rescued_by_jitter():
    kv = make_knots((0, 1), 10, 4)
    N = design_matrix(kv, np.full(5, 0.5))
    sf = smoother.fit(N, np.ones(5), 0.0, np.zeros((kv.dim, kv.dim)))
    np.testing.assert_allclose(sf.fitted, 1.0, atol=1e-6)


def test_indefinite_system_raises():
    kv = make_knots((0, 1), 10, 4)
    N = design_matrix(kv, np.linspace(0, 1, 30))
    with pytest.raises(SingularSystemError):
        smoother.fit(N, np.ones(30), 1.0, -np.eye(kv.dim))


def test_input_validation(setup):
    xs, kv, N, _ = setup
    P = penalty_matrix(kv, 2)
    with pytest.raises(ValueError):
        smoother.fit(N, np.ones(xs.size + 1), 1.0, P)
    with pytest.raises(ValueError):
        smoother.fit(N, np.ones(xs.size), -1.0, P)
    with pytest.raises(ValueError):
        smoother.fit(N, np.ones(xs.size), 1.0, P, np.zeros(xs.size, dtype=bool))
