"""The stochastic approximation recursion theta_n = theta_{n-1} + gamma_n (g(theta_{n-1}) + D_n).

Noise models receive the previous states and a block of uniforms and must
return draws with conditional mean zero. Built-in models are written as
(raw draw) - (its conditional mean), so the martingale-difference property
holds by construction.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .core_math import as_point
from .drift import DriftField
from .schedules import Schedule, gamma
from .streams import trajectory_generator, uniforms

MAX_CHECKPOINT = 10**7
BLOCK_SIZE = 512
STEP_CHUNK = 1024


class DivergenceError(RuntimeError):
    def __init__(self, n: int):
        super().__init__(f"non-finite state at step {n}")
        self.n = n


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class ZeroNoise:
    dim: int
    n_uniforms: int = 0

    def __call__(self, theta, u):
        return np.zeros_like(theta)


@dataclass(frozen=True)
class GaussianNoise:
    """Additive N(0, sigma^2 I) noise."""

    sigma: float
    dim: int

    @property
    def n_uniforms(self) -> int:
        return self.dim

    def __call__(self, theta, u):
        return self.sigma * ndtri(u)


@dataclass(frozen=True)
class BoundedNoise:
    """Coordinates uniform on [-radius/sqrt(d), radius/sqrt(d)], so ||D|| <= radius."""

    radius: float
    dim: int

    @property
    def n_uniforms(self) -> int:
        return self.dim

    def __call__(self, theta, u):
        return self.radius / np.sqrt(self.dim) * (2.0 * u - 1.0)


@dataclass(frozen=True)
class CenteredNoise:
    """raw(theta, u) - mean(theta), where mean is the conditional mean of raw given theta."""

    raw: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mean: Callable[[np.ndarray], np.ndarray]
    n_uniforms: int

    def __call__(self, theta, u):
        return self.raw(theta, u) - self.mean(theta)


# A noise model may also depend on the path: if it defines
# ``init_memory(m, d)`` and ``remember(memory, theta)``, the engine passes the
# memory as a keyword argument at every step and reports each new state back.


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class SaaProblem:
    drift: DriftField
    noise: Any
    name: str = "saa"

    @property
    def dim(self) -> int:
        return self.drift.dim

    @property
    def target(self) -> np.ndarray:
        return self.drift.target


@dataclass(frozen=True)
class SgdProblem:
    """Stochastic gradient problem. ``data_sampler`` maps an (m, n_uniforms) block of uniforms to a data batch."""

    stochastic_gradient: Callable[[np.ndarray, Any], np.ndarray]
    data_sampler: Callable[[np.ndarray], Any]
    n_uniforms: int
    target: np.ndarray
    mean_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "sgd"


def from_sgd(sgd: SgdProblem, estimate_draws: int = 0, seed: int = 0) -> SaaProblem:
    """Drift -E[grad F] and noise E[grad F] - grad F(theta, X_n).

    Without a closed-form mean gradient, ``estimate_draws`` fixed data points
    (drawn once from ``seed``) define an empirical mean gradient.
    """
    mean_gradient = sgd.mean_gradient
    if mean_gradient is None:
        if estimate_draws <= 0:
            raise ValueError("mean_gradient is absent and estimation is disabled")
        gen = trajectory_generator(seed, 0)
        data = sgd.data_sampler(uniforms(gen, (estimate_draws, sgd.n_uniforms)))
        target = as_point(sgd.target)

        def mean_gradient(theta):
            rows = [sgd.stochastic_gradient(np.broadcast_to(row, (estimate_draws, target.size)), data) for row in theta]
            return np.array([r.mean(axis=0) for r in rows])

    drift = DriftField(lambda theta: -mean_gradient(theta), sgd.target, sgd.name)
    noise = CenteredNoise(
        raw=lambda theta, u: -sgd.stochastic_gradient(theta, sgd.data_sampler(u)),
        mean=lambda theta: -mean_gradient(theta),
        n_uniforms=sgd.n_uniforms,
    )
    return SaaProblem(drift, noise, sgd.name)


def step(problem: SaaProblem, theta_prev, n: int, schedule: Schedule, rng: np.random.Generator) -> np.ndarray:
    """One step of the recursion; uniforms are drawn from ``rng``."""
    if n < 1:
        raise ValueError("steps are numbered from 1")
    theta = as_point(theta_prev)[None, :]
    u = uniforms(rng, (1, problem.noise.n_uniforms))
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = theta + gamma(schedule, n) * (problem.drift(theta) + problem.noise(theta, u))
    if not np.all(np.isfinite(nxt)):
        raise DivergenceError(n)
    return nxt[0]


# ---------------------------------------------------------------------------
# trajectories and ensembles


@dataclass(frozen=True)
class Trajectory:
    checkpoints: np.ndarray
    states: np.ndarray
    seed: int
    trajectory_id: int
    schedule_id: str
    diverged_at: int | None = None

    def state_at(self, n: int) -> np.ndarray:
        hits = np.flatnonzero(self.checkpoints == n)
        if not hits.size:
            raise KeyError(f"checkpoint {n} not recorded")
        return self.states[hits[0]]


@dataclass(frozen=True)
class Ensemble(Sequence):
    """Checkpoint states of M trajectories; diverged ones hold NaN past their divergence step."""

    checkpoints: np.ndarray
    states: np.ndarray  # (M, K, d)
    diverged_at: np.ndarray  # (M,), -1 when finite throughout
    master_seed: int
    schedule_id: str
    problem_name: str = "saa"

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        i = range(len(self))[i]
        div = int(self.diverged_at[i])
        keep = self.checkpoints < div if div >= 0 else np.ones(self.checkpoints.size, bool)
        return Trajectory(
            self.checkpoints[keep], self.states[i][keep], self.master_seed, i, self.schedule_id, div if div >= 0 else None
        )

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def divergence_count(self) -> int:
        return int(np.count_nonzero(self.diverged_at >= 0))

    def column(self, n: int) -> np.ndarray:
        """States of every trajectory at checkpoint n, shape (M, d)."""
        hits = np.flatnonzero(self.checkpoints == n)
        if not hits.size:
            raise KeyError(f"checkpoint {n} not recorded")
        return self.states[:, hits[0], :]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"d={self.dim}", f"seed={self.master_seed}", f"schedule={self.schedule_id}"])
            w.writerow(["trajectory_id", "n", *(f"coord_{j}" for j in range(self.dim))])
            for traj in self:
                for n, state in zip(traj.checkpoints, traj.states):
                    w.writerow([traj.trajectory_id, int(n), *(fmt(x) for x in state)])


def fmt(x: float) -> str:
    """Round-trip decimal with 17 significant digits."""
    return format(float(x), ".17g")


def _validate_checkpoints(checkpoints) -> np.ndarray:
    cps = np.asarray(checkpoints, dtype=np.int64).ravel()
    if cps.size == 0 or cps[0] < 0 or np.any(np.diff(cps) <= 0):
        raise ValueError("checkpoints must be non-negative and strictly increasing")
    if cps[-1] > MAX_CHECKPOINT:
        raise ValueError(f"largest checkpoint exceeds {MAX_CHECKPOINT}")
    return cps


@dataclass
class _BlockResult:
    states: np.ndarray
    diverged_at: np.ndarray
    sums: np.ndarray | None = None
    sumsq: np.ndarray | None = None
    alive: np.ndarray | None = None


def _run_block(problem: SaaProblem, gam: np.ndarray, theta0: np.ndarray, cps: np.ndarray,
               master_seed: int, ids: range, powers: tuple[float, ...] = ()) -> _BlockResult:
    """Advance trajectories ``ids`` together to step cps[-1].

    States are buffered one chunk of steps at a time; divergence is located
    exactly from the buffer, and with ``powers`` the per-step sums of
    ||theta_n - target||^q over still-finite trajectories are accumulated.
    """
    m, d, n_max = len(ids), theta0.size, int(cps[-1])
    k = problem.noise.n_uniforms
    gens = [trajectory_generator(master_seed, i) for i in ids]
    theta = np.tile(theta0, (m, 1))
    states = np.full((m, cps.size, d), np.nan)
    diverged = np.full(m, -1, dtype=np.int64)
    memory = problem.noise.init_memory(m, d) if hasattr(problem.noise, "init_memory") else None
    noise = problem.noise if memory is None else (lambda th, u: problem.noise(th, u, memory=memory))
    drift, target = problem.drift.evaluator, problem.target

    track = bool(powers)
    sums = np.zeros((n_max + 1, len(powers)))
    sumsq = np.zeros_like(sums)
    counts = np.zeros(n_max + 1, dtype=np.int64)

    def accumulate(first: int, buf: np.ndarray):
        """buf holds states of steps first.. first+len-1, NaN where diverged."""
        dist = np.sqrt(np.einsum("mtd,mtd->tm", buf - target, buf - target))
        finite = np.isfinite(dist)
        dist = np.where(finite, dist, 0.0)
        rows = slice(first, first + buf.shape[1])
        counts[rows] = finite.sum(axis=1)
        for j, q in enumerate(powers):
            v = dist**q
            sums[rows, j] = v.sum(axis=1)
            sumsq[rows, j] = (v * v).sum(axis=1)

    if track:
        accumulate(0, theta[:, None, :])
    slot = 0
    if cps[0] == 0:
        states[:, 0, :] = theta
        slot = 1
    buf = np.empty((m, STEP_CHUNK, d))
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(1, n_max + 1, STEP_CHUNK):
            stop = min(start + STEP_CHUNK, n_max + 1)
            block = np.stack([uniforms(gen, (stop - start, k)) for gen in gens])
            slot0 = slot
            for n in range(start, stop):
                theta = theta + gam[n] * (drift(theta) + noise(theta, block[:, n - start, :]))
                if memory is not None:
                    problem.noise.remember(memory, theta)
                buf[:, n - start, :] = theta
                if slot < cps.size and n == cps[slot]:
                    slot += 1
            chunk = buf[:, : stop - start, :]
            bad_step = ~np.isfinite(chunk).all(axis=2)
            if bad_step.any():
                for i in np.flatnonzero(bad_step.any(axis=1)):
                    first = int(np.argmax(bad_step[i]))
                    if diverged[i] < 0:
                        diverged[i] = start + first
                    chunk[i, first:, :] = np.nan
                    theta[i] = np.nan
            for j in range(slot0, slot):
                states[:, j, :] = chunk[:, cps[j] - start, :]
            if track:
                accumulate(start, chunk)
    return _BlockResult(states, diverged, sums, sumsq, counts) if track else _BlockResult(states, diverged)


def _blocks(M: int) -> list[range]:
    return [range(a, min(a + BLOCK_SIZE, M)) for a in range(0, M, BLOCK_SIZE)]


def _run_blocks(problem, schedule, theta0, cps, master_seed, M, workers, powers=()):
    theta0 = as_point(theta0, "theta0")
    if theta0.size != problem.dim:
        raise ValueError(f"theta0 has d={theta0.size}, problem has d={problem.dim}")
    if M < 1:
        raise ValueError("ensemble size must be >= 1")
    gam = schedule.gammas(int(cps[-1]))
    jobs = _blocks(M)
    run = lambda ids: _run_block(problem, gam, theta0, cps, master_seed, ids, powers)
    if workers <= 1 or len(jobs) == 1:
        return [run(ids) for ids in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))


def simulate_ensemble(problem: SaaProblem, schedule: Schedule, theta0, checkpoints, master_seed: int, M: int,
                      workers: int = 1) -> Ensemble:
    """M trajectories; trajectory i draws from the stream keyed by (master_seed, i).

    Trajectories are processed in fixed blocks whatever the worker count, so the
    output is identical for every ``workers`` value.
    """
    cps = _validate_checkpoints(checkpoints)
    parts = _run_blocks(problem, schedule, theta0, cps, master_seed, M, workers)
    return Ensemble(
        cps,
        np.concatenate([p.states for p in parts]),
        np.concatenate([p.diverged_at for p in parts]),
        int(master_seed),
        schedule.describe(),
        problem.name,
    )


def simulate(problem: SaaProblem, schedule: Schedule, theta0, checkpoints, seed: int,
             trajectory_id: int = 0) -> Trajectory:
    """A single trajectory drawing from the stream keyed by (seed, trajectory_id)."""
    cps = _validate_checkpoints(checkpoints)
    theta0 = as_point(theta0, "theta0")
    gam = schedule.gammas(int(cps[-1]))
    res = _run_block(problem, gam, theta0, cps, seed, range(trajectory_id, trajectory_id + 1))
    ens = Ensemble(cps, res.states, res.diverged_at, int(seed), schedule.describe(), problem.name)
    traj = ens[0]
    return Trajectory(traj.checkpoints, traj.states, int(seed), trajectory_id, traj.schedule_id, traj.diverged_at)


@dataclass(frozen=True)
class MomentTable:
    """Per-step Monte Carlo means of ||theta_n - target||^q with standard errors."""

    powers: tuple[float, ...]
    mean: np.ndarray  # (n_max + 1, len(powers))
    std_error: np.ndarray
    counts: np.ndarray  # trajectories still finite at each step
    divergence_count: int = 0
    extra: dict = field(default_factory=dict)

    def column(self, q: float) -> tuple[np.ndarray, np.ndarray]:
        j = self.powers.index(q)
        return self.mean[:, j], self.std_error[:, j]


def ensemble_moments(problem: SaaProblem, schedule: Schedule, theta0, n_max: int, powers, master_seed: int, M: int,
                     workers: int = 1) -> MomentTable:
    """Streaming moments at every step 0..n_max without storing the paths."""
    powers = tuple(float(q) for q in powers)
    cps = _validate_checkpoints([n_max])
    parts = _run_blocks(problem, schedule, theta0, cps, master_seed, M, workers, powers)
    sums = sum(p.sums for p in parts)
    sumsq = sum(p.sumsq for p in parts)
    counts = sum(p.alive for p in parts)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts[:, None]
        var = np.maximum(sumsq / counts[:, None] - mean**2, 0.0) * counts[:, None] / np.maximum(counts[:, None] - 1, 1)
        se = np.sqrt(var / counts[:, None])
    diverged = int(sum(np.count_nonzero(p.diverged_at >= 0) for p in parts))
    return MomentTable(powers, mean, se, counts, diverged)
