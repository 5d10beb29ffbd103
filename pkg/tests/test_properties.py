"""Property-based checks of the stated invariants."""
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sgdrl.certificates import lp_error, rate_fit
from sgdrl.core_math import LyapunovSpec, lyapunov_gradient
from sgdrl.drift import check_contraction, default_samples, linear_drift, scalar_drift
from sgdrl.engine import BoundedNoise, Ensemble, GaussianNoise, SaaProblem, ZeroNoise, simulate_ensemble
from sgdrl.gronwall import CertificateUnavailable, RecursionSpec, bound_constant
from sgdrl.linreg import gaussian_model, loss, setup, spd_contraction_constant, true_minimizer, two_point_model
from sgdrl.schedules import check_admissibility, gamma, polynomial
from sgdrl.streams import trajectory_generator, uniforms

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(d=st.integers(1, 5), q=st.integers(2, 8), a=finite, b=finite, seed=st.integers(0, 2**32 - 1))
def test_lyapunov_gradient_is_linear_in_direction(d, q, a, b, seed):
    rng = np.random.default_rng(seed)
    target, theta, v, w = rng.standard_normal((4, d))
    spec = LyapunovSpec(target, q)
    lhs = lyapunov_gradient(spec, theta, a * v + b * w)
    rhs = a * lyapunov_gradient(spec, theta, v) + b * lyapunov_gradient(spec, theta, w)
    scale = (abs(a) * np.linalg.norm(v) + abs(b) * np.linalg.norm(w)) * q * np.linalg.norm(theta - target) ** (q - 1)
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1e-300)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(1e-3, 1e3), nu=st.floats(-2, 3), n=st.integers(0, 10**9))
def test_rates_are_positive(alpha, nu, n):
    assume(alpha * max(n, 1) ** (-nu) > 1e-300)
    assert gamma(polynomial(alpha, nu), n) > 0


@settings(max_examples=25, deadline=None)
@given(nu=st.floats(0.05, 0.95), c=st.floats(0.05, 20), k=st.integers(1, 4),
       horizon=st.sampled_from([10**3, 10**4, 10**5]))
def test_admissibility_is_monotone_in_horizon(nu, c, k, horizon):
    s = polynomial(1.0, nu)
    if check_admissibility(s, c, k, horizon).admissible:
        assert check_admissibility(s, c, k, 2 * horizon).admissible


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3), shrink=st.floats(0.01, 0.99))
def test_contraction_is_monotone_in_c(seed, d, shrink):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = B @ B.T + 0.1 * np.eye(d)
    g = linear_drift(A, rng.standard_normal(d))
    samples = default_samples(g.target, n_directions=50, seed=seed % 100)
    c = spd_contraction_constant(A, sharp=False).c
    assert check_contraction(g, c, samples).valid
    assert check_contraction(g, c * shrink, samples).valid


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_spd_constant_holds_on_three_radii(seed, d):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    A = B @ B.T / d + 10 ** rng.uniform(-2, 1) * np.eye(d)
    g = linear_drift(A, np.zeros(d))
    u = rng.standard_normal((10**4, d))
    u *= rng.uniform(size=(10**4, 1)) ** (1 / d) / np.linalg.norm(u, axis=1, keepdims=True)
    radii = np.repeat([1e-3, 1.0, 1e3], -(-10**4 // 3))[: 10**4, None]
    assert check_contraction(g, spd_contraction_constant(A, sharp=False).c, u * radii).valid


def gronwall_spec(rng, kappa=None, prefix=None):
    N = 5
    return RecursionSpec(N, 1.0, kappa if kappa is not None else float(rng.uniform(0.1, 5)), 0.7,
                         polynomial(0.5, 0.6), tuple(prefix if prefix is not None else rng.uniform(0, 2, N + 1)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bump=st.floats(0.0, 10.0), scale=st.floats(1e-3, 1e3))
def test_gronwall_lambda_monotone_and_linear(seed, bump, scale):
    rng = np.random.default_rng(seed)
    base = gronwall_spec(rng)
    try:
        lam = bound_constant(base, 10**4).lam
    except CertificateUnavailable:
        return
    more_kappa = gronwall_spec(rng, kappa=base.kappa + bump, prefix=base.e_prefix)
    assert bound_constant(more_kappa, 10**4).lam >= lam
    raised = list(base.e_prefix)
    raised[int(rng.integers(0, len(raised)))] += bump
    assert bound_constant(gronwall_spec(rng, kappa=base.kappa, prefix=raised), 10**4).lam >= lam
    scaled = gronwall_spec(rng, kappa=base.kappa * scale, prefix=[scale * e for e in base.e_prefix])
    assert bound_constant(scaled, 10**4).lam == pytest.approx(scale * lam, rel=1e-12)


def test_fixed_point_is_kept_exactly():
    target = np.array([0.3, -7.1])
    p = SaaProblem(linear_drift([[2.0, 0.5], [0.5, 1.0]], target), ZeroNoise(2))
    ens = simulate_ensemble(p, polynomial(0.7, 0.5), target, [0, 1, 10, 1000], 0, 3)
    assert np.all(ens.states == target)


@pytest.mark.parametrize("name", ["gauss", "bounded", "two_point", "gauss_regression"])
def test_builtin_noise_is_centered(name):
    if name == "gauss":
        problem = SaaProblem(linear_drift(np.eye(2), [0.0, 0.0]), GaussianNoise(1.5, 2))
    elif name == "bounded":
        problem = SaaProblem(linear_drift(np.eye(2), [0.0, 0.0]), BoundedNoise(2.0, 2))
    elif name == "two_point":
        problem = setup(two_point_model()).problem
    else:
        problem = setup(gaussian_model([1.0, -2.0], [[1.0, 0.2], [0.2, 0.5]])).problem
    rng = np.random.default_rng(0)
    draws = 10**5
    for i, theta in enumerate(problem.target + 2 * rng.standard_normal((10, problem.dim))):
        u = uniforms(trajectory_generator(i, 0), (draws, problem.noise.n_uniforms))
        d = problem.noise(np.tile(theta, (draws, 1)), u)
        mean, se = d.mean(axis=0), d.std(axis=0, ddof=1) / np.sqrt(draws)
        assert np.all(np.abs(mean) <= 4 * se + 1e-12)


@settings(max_examples=100, deadline=None)
@given(expo=st.floats(-3, 3), const=st.floats(1e-3, 1e3), lo=st.integers(1, 10), count=st.integers(4, 12))
def test_rate_fit_recovers_power_laws(expo, const, lo, count):
    n = np.array([2.0**k for k in range(lo, lo + count)])
    assert rate_fit(np.column_stack([n, const * n**expo])).slope == pytest.approx(expo, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p1=st.floats(0.5, 6), p2=st.floats(0.5, 6))
def test_lp_error_power_mean_and_jensen(seed, p1, p2):
    rng = np.random.default_rng(seed)
    states = rng.standard_normal((int(rng.integers(2, 50)), 1, 2)) * 10 ** rng.uniform(-2, 2)
    ens = Ensemble(np.array([0]), states, np.full(len(states), -1), 0, "t")
    lo, hi = sorted((p1, p2))
    e = lambda p: lp_error(ens, [0.0, 0.0], p, 0).estimate
    assert e(lo) <= e(hi) * (1 + 1e-12)
    even = 2 * int(np.ceil(hi / 2))
    assert e(hi) <= e(even) * (1 + 1e-12)


def test_minimizer_zeroes_mean_gradient():
    for model in (two_point_model(), gaussian_model([1.0, 2.0, -1.0], np.diag([1.0, 2.0, 3.0]))):
        mini = true_minimizer(model)
        m = mini.moments
        assert np.linalg.norm(2 * m.M2 @ mini.theta - 2 * m.b) <= 1e-10 * (1 + np.linalg.norm(m.b))


def test_objective_means_are_finite_and_stable():
    model = gaussian_model([1.0, -1.0], [[1.0, 0.3], [0.3, 1.0]])
    for theta in ([0.0, 0.0], [3.0, 1.0]):
        means = []
        for budget in (10**4, 2 * 10**4, 4 * 10**4):
            x, hv = model.draw(budget, seed=budget)
            vals = loss(np.array(theta), x, hv)
            assert np.all(np.isfinite(vals))
            means.append(vals.mean())
        assert np.ptp(means) <= 0.1 * np.mean(means)


def test_two_point_sgd_error_shrinks_in_every_percentile():
    lr = setup(two_point_model())
    ens = simulate_ensemble(lr.problem, polynomial(0.1, 0.5), [0.0], [0, 2**6, 2**13], 0, 2000)
    early = np.abs(ens.column(2**6)[:, 0] - 1.4)
    late = np.abs(ens.column(2**13)[:, 0] - 1.4)
    qs = np.arange(1, 100)
    assert np.all(np.percentile(late, qs) < np.percentile(early, qs))
