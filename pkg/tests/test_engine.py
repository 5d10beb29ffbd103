import csv

import numpy as np
import pytest

from sgdrl.drift import linear_drift, scalar_drift
from sgdrl.engine import (
    BoundedNoise,
    DivergenceError,
    GaussianNoise,
    SaaProblem,
    ZeroNoise,
    ensemble_moments,
    simulate,
    simulate_ensemble,
    step,
)
from sgdrl.linreg import deterministic_model, setup, two_point_model
from sgdrl.schedules import polynomial, tabulated
from sgdrl.streams import trajectory_generator, uniforms


def zero_noise_problem(target=(0.0,), c=1.0):
    return SaaProblem(scalar_drift(c, target), ZeroNoise(len(target)))


def test_deterministic_step():
    p = zero_noise_problem((2.0,))
    rng = trajectory_generator(0, 0)
    half = tabulated([0.5, 0.5])
    np.testing.assert_array_equal(step(p, (3.0,), 1, half, rng), [2.5])
    np.testing.assert_array_equal(step(p, (2.0,), 1, half, rng), [2.0])


def test_step_is_reproducible_with_gaussian_noise():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    s = polynomial(1.0, 0.5)
    a = step(p, (1.0,), 3, s, trajectory_generator(5, 0))
    b = step(p, (1.0,), 3, s, trajectory_generator(5, 0))
    assert a.tobytes() == b.tobytes()


def test_step_reports_divergence():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), ZeroNoise(1))
    with pytest.raises(DivergenceError):
        step(p, (1e308,), 1, polynomial(1e10, 0.5), trajectory_generator(0, 0))


def test_uniforms_are_open_interval():
    u = uniforms(trajectory_generator(1, 2), (10**5,))
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 5 / np.sqrt(12 * 10**5)


def test_one_step_exact_solve():
    # gamma_1 = 1 jumps onto the target; 5 - 4.5 is exact in binary
    traj = simulate(zero_noise_problem((0.5,)), polynomial(1.0, 1.0), (5.0,), [0, 1, 10], seed=0)
    np.testing.assert_array_equal(traj.state_at(0), [5.0])
    np.testing.assert_array_equal(traj.state_at(1), [0.5])
    np.testing.assert_array_equal(traj.state_at(10), [0.5])


def test_linear_trajectory_matches_matrix_product():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    A = A @ A.T / 3 + np.eye(3)
    target = rng.standard_normal(3)
    theta0 = rng.standard_normal(3) * 4
    s = polynomial(0.3, 0.6)
    cps = np.arange(101)
    traj = simulate(SaaProblem(linear_drift(A, target), ZeroNoise(3)), s, theta0, cps, seed=0)
    g = s.gammas(100)
    e = theta0 - target
    for n in range(1, 101):
        e = (np.eye(3) - g[n] * A) @ e
        ref = target + e
        assert np.linalg.norm(traj.state_at(n) - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)


def test_same_seed_same_path_different_seed_different_path():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    s = polynomial(0.5, 0.5)
    a = simulate(p, s, (1.0,), [0, 10, 100], seed=9)
    b = simulate(p, s, (1.0,), [0, 10, 100], seed=9)
    c = simulate(p, s, (1.0,), [0, 10, 100], seed=10)
    assert a.states.tobytes() == b.states.tobytes()
    assert not np.array_equal(a.states[1:], c.states[1:])


def test_single_member_ensemble_equals_simulate():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(0.3, 1))
    s = polynomial(0.5, 0.5)
    ens = simulate_ensemble(p, s, (1.0,), [0, 5, 50], 4, 1)
    traj = simulate(p, s, (1.0,), [0, 5, 50], seed=4, trajectory_id=0)
    np.testing.assert_array_equal(ens[0].states, traj.states)


def test_ensemble_trajectory_matches_stream(tmp_path):
    p = SaaProblem(linear_drift(np.diag([1.0, 2.0]), [0.0, 1.0]), BoundedNoise(1.0, 2))
    s = polynomial(0.2, 0.6)
    ens = simulate_ensemble(p, s, (1.0, 1.0), [0, 3, 700, 1500], 11, 600)
    traj = simulate(p, s, (1.0, 1.0), [0, 3, 700, 1500], seed=11, trajectory_id=555)
    np.testing.assert_array_equal(ens[555].states, traj.states)


def test_worker_count_does_not_change_output(tmp_path):
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    s = polynomial(0.5, 0.5)
    outs = []
    for workers in (1, 8):
        ens = simulate_ensemble(p, s, (1.0,), [0, 16, 256], 3, 100, workers=workers)
        path = tmp_path / f"w{workers}.csv"
        ens.to_csv(path)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    big = [simulate_ensemble(p, s, (1.0,), [0, 64], 3, 1500, workers=w).states.tobytes() for w in (1, 3)]
    assert big[0] == big[1]


def test_ensemble_starts_at_theta0():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    ens = simulate_ensemble(p, polynomial(0.5, 0.5), (2.5,), [0, 4], 0, 50)
    assert np.all(ens.column(0) == 2.5)


def test_divergence_truncates_and_flags():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    ens = simulate_ensemble(p, polynomial(1e200, 0.0), (1.0,), [0, 1, 2, 3, 5], 0, 4)
    assert ens.divergence_count == 4
    for traj in ens:
        assert traj.diverged_at is not None
        assert np.all(np.isfinite(traj.states))
        assert traj.checkpoints.max() < traj.diverged_at


def test_csv_layout(tmp_path):
    p = SaaProblem(linear_drift(np.eye(2), [0.0, 0.0]), ZeroNoise(2))
    ens = simulate_ensemble(p, polynomial(0.5, 0.5), (1.0, 0.0), [0, 1], 7, 2)
    path = tmp_path / "e.csv"
    ens.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["d=2", "seed=7", "schedule=poly:alpha=0.5,nu=0.5"]
    assert rows[1] == ["trajectory_id", "n", "coord_0", "coord_1"]
    assert rows[3] == ["0", "1", "0.5", "0"]
    assert len(rows) == 2 + 2 * 2


def test_checkpoints_must_increase():
    with pytest.raises(ValueError):
        simulate(zero_noise_problem(), polynomial(1, 0.5), (1.0,), [5, 3], seed=0)


def test_streaming_moments_agree_with_checkpoints():
    p = SaaProblem(scalar_drift(1.0, (0.0,)), GaussianNoise(1.0, 1))
    s = polynomial(0.5, 0.5)
    table = ensemble_moments(p, s, (1.0,), 40, (2.0, 4.0), 5, 700)
    ens = simulate_ensemble(p, s, (1.0,), [0, 17, 40], 5, 700)
    for n in (0, 17, 40):
        x = ens.column(n)[:, 0]
        assert table.column(2.0)[0][n] == pytest.approx(np.mean(x**2), rel=1e-12)
        assert table.column(4.0)[0][n] == pytest.approx(np.mean(x**4), rel=1e-12)


class RecordingNoise:
    """Zero noise that counts how many states it has been shown."""

    n_uniforms = 0

    def init_memory(self, m, d):
        return {"seen": 0}

    def remember(self, memory, theta):
        memory["seen"] += 1

    def __call__(self, theta, u, memory):
        return np.zeros_like(theta)


def test_history_hook_sees_every_step():
    noise = RecordingNoise()
    p = SaaProblem(scalar_drift(1.0, (0.0,)), noise)
    memory_box = {}
    original = noise.init_memory
    noise.init_memory = lambda m, d: memory_box.setdefault("mem", original(m, d))
    simulate_ensemble(p, polynomial(0.5, 0.5), (1.0,), [0, 30], 0, 3)
    assert memory_box["mem"]["seen"] == 30


def test_sgd_noise_is_zero_for_deterministic_inputs():
    lr = setup(deterministic_model([1.0], 2.0))
    theta = np.array([[0.3], [5.0]])
    u = uniforms(trajectory_generator(0, 0), (2, lr.model.n_uniforms))
    np.testing.assert_allclose(lr.problem.noise(theta, u), 0.0, atol=1e-15)


def test_sgd_noise_has_mean_zero():
    lr = setup(two_point_model())
    draws = 10**5
    theta = np.full((draws, 1), 0.3)
    u = uniforms(trajectory_generator(1, 0), (draws, lr.model.n_uniforms))
    d = lr.problem.noise(theta, u)[:, 0]
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / np.sqrt(draws)
    np.testing.assert_allclose(lr.problem.drift(lr.minimizer.theta), 0.0, atol=1e-15)
