"""Explicit mean-square and L^p error certificates, and Monte Carlo error estimates.

A stage with Lyapunov power q and rate exponent k = q/2 certifies

    E||theta_n - target||^q <= lam_q * gamma_n^k

with lam_q = max(kappa_q / C_q, max_{l <= N_q} E||theta_l - target||^q / gamma_l^k), where

    N_q is the smallest index with sup_{l > N_q} gamma_l <= min(c / (2 kappa_q), c)
        and a positive tail infimum,
    C_q = inf_{l > N_q} (gamma_l^k - gamma_{l-1}^k) / gamma_l^(k+1) + (c/2) gamma_{l-1}^k / gamma_l^k.

The mean-square stage uses kappa_2 = 2 kappa. Higher stages use
kappa_q = q 2^(q+1) kappa max(lam_{q-2}, 1) with kappa >= 1. Prefix moments come from
Monte Carlo, so every certificate is labelled "certified-empirical".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_math import as_point
from .drift import check_contraction
from .engine import Ensemble, SaaProblem, Trajectory, ensemble_moments, fmt
from .gronwall import CANCELLATION_RTOL
from .schedules import Schedule, check_admissibility, gronwall_terms
from .streams import trajectory_generator, uniforms

DEFAULT_HORIZON = 10**6
DEFAULT_MC_BUDGET = 2000


class CertificateError(RuntimeError):
    """A certificate stage could not be built. ``stage`` is the Lyapunov power q."""

    def __init__(self, stage: int, reason: str, completed: Sequence["LpCertificate"] = ()):
        super().__init__(f"stage q={stage}: {reason}")
        self.stage = stage
        self.reason = reason
        self.completed = list(completed)


@dataclass(frozen=True)
class LpCertificate:
    q: int
    lam: float
    N: int
    C: float
    C_argmin: int
    kappa_stage: float
    horizon: int
    prefix_l: np.ndarray
    prefix_mean: np.ndarray
    prefix_se: np.ndarray
    status: str = "certified-empirical"
    provenance: dict = field(default_factory=dict)

    @property
    def k(self) -> float:
        return self.q / 2

    def bound(self, gamma_n) -> np.ndarray:
        return self.lam * np.asarray(gamma_n, dtype=float) ** self.k

    @property
    def prefix_max_ratio(self) -> float:
        return float(self.provenance.get("prefix_max_ratio", 0.0))


def select_burn_in(schedule: Schedule, c: float, gamma_cap: float, k: float, horizon: int):
    """Smallest N < horizon with sup_{(N, horizon]} gamma <= gamma_cap and a positive
    infimum of the c/2-weighted coefficient over (N, horizon].

    Returns (N, C, argmin) or None.
    """
    g = schedule.gammas(horizon)
    idx = np.arange(1, horizon + 1)
    first, second = gronwall_terms(schedule, k, c / 2, idx, split=True)
    values = first + second
    positive = values > CANCELLATION_RTOL * (np.abs(first) + np.abs(second))
    # tail_ok[j] says every l >= j+1 satisfies both conditions
    ok = (g[1:] <= gamma_cap) & positive
    tail_ok = np.logical_and.accumulate(ok[::-1])[::-1]
    if not tail_ok.any():
        return None
    N = int(np.argmax(tail_ok))  # first index j with tail_ok; the tail starts at l = j + 1
    tail = values[N:]
    i = int(np.argmin(tail))
    return N, float(tail[i]), N + 1 + i


def _stage(problem: SaaProblem, schedule: Schedule, c: float, kappa_stage: float, q: int, theta0,
           horizon: int, mc_budget: int, master_seed: int, workers: int, completed=()) -> LpCertificate:
    k = q / 2
    cap = min(c / (2 * kappa_stage), c)
    found = select_burn_in(schedule, c, cap, k, horizon)
    if found is None:
        raise CertificateError(
            q, f"no burn-in N below horizon {horizon}: need gamma_l <= {cap!r} and a positive tail coefficient",
            completed,
        )
    N, C, argmin = found
    table = ensemble_moments(problem, schedule, theta0, N, (float(q),), master_seed, mc_budget, workers)
    if table.divergence_count:
        raise CertificateError(q, f"{table.divergence_count} trajectories diverged during prefix estimation", completed)
    mean, se = table.column(float(q))
    g = schedule.gammas(N)
    ratios = mean / g**k
    lam = float(max(kappa_stage / C, ratios.max()))
    provenance = {
        "c": c,
        "gamma_cap": cap,
        "schedule": schedule.describe(),
        "theta0": tuple(as_point(theta0)),
        "mc_budget": mc_budget,
        "master_seed": master_seed,
        "kappa_over_C": kappa_stage / C,
        "prefix_max_ratio": float(ratios.max()),
        "prefix_argmax": int(np.argmax(ratios)),
    }
    return LpCertificate(q, lam, N, C, argmin, kappa_stage, horizon, np.arange(N + 1), mean, se,
                         provenance=provenance)


def _require_contraction(problem: SaaProblem, c: float, stage: int):
    cert = check_contraction(problem.drift, c)
    if not cert.valid:
        raise CertificateError(stage, f"contraction condition fails with c={c!r} (max violation {cert.max_violation:.3g})")


def l2_bound_certificate(problem: SaaProblem, schedule: Schedule, c: float, kappa: float, theta0,
                         horizon: int = DEFAULT_HORIZON, mc_budget: int = DEFAULT_MC_BUDGET, master_seed: int = 0,
                         workers: int = 1) -> LpCertificate:
    """Mean-square certificate E||theta_n - target||^2 <= lam_2 gamma_n, assuming
    E||D_n||^2 <= kappa (1 + E||theta_{n-1} - target||^2)."""
    if c <= 0 or kappa <= 0:
        raise ValueError("need c > 0 and kappa > 0")
    _require_contraction(problem, c, 2)
    return _stage(problem, schedule, c, 2 * kappa, 2, theta0, horizon, mc_budget, master_seed, workers)


def lp_induction_chain(problem: SaaProblem, schedule: Schedule, c: float, kappa: float, p: int, theta0,
                       horizon: int = DEFAULT_HORIZON, mc_budget: int = DEFAULT_MC_BUDGET, master_seed: int = 0,
                       workers: int = 1) -> list[LpCertificate]:
    """Certificates for q = 2, 4, ..., p, assuming the centered moment bound
    E||D_n||^p <= kappa (1 + ||theta_{n-1} - target||^p).

    For p > 2 kappa is raised to at least 1, which lets the p-th moment bound
    control every lower even moment.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    if c <= 0 or kappa <= 0:
        raise ValueError("need c > 0 and kappa > 0")
    kappa_eff = kappa if p == 2 else max(kappa, 1.0)
    report = check_admissibility(schedule, c, p // 2)
    if not report.admissible:
        raise CertificateError(2, f"schedule not admissible for k <= {p // 2} (verdict {report.verdict})")
    _require_contraction(problem, c, 2)
    certs: list[LpCertificate] = []
    kappa_stage = 2 * kappa_eff
    for q in range(2, p + 1, 2):
        if q > 2:
            kappa_stage = q * 2.0 ** (q + 1) * kappa_eff * max(certs[-1].lam, 1.0)
        certs.append(_stage(problem, schedule, c, kappa_stage, q, theta0, horizon, mc_budget, master_seed, workers,
                            certs))
    return certs


# ---------------------------------------------------------------------------
# Monte Carlo error estimates


@dataclass(frozen=True)
class LpErrorEstimate:
    estimate: float
    std_error: float
    excluded: int
    used: int


def _column(ensemble, n: int) -> tuple[np.ndarray, int]:
    if isinstance(ensemble, Ensemble):
        col = ensemble.column(n)
        ok = ensemble.diverged_at < 0
        return col[ok], int(np.count_nonzero(~ok))
    rows, excluded = [], 0
    for traj in ensemble:
        if traj.diverged_at is not None:
            excluded += 1
            continue
        rows.append(traj.state_at(n))
    return np.array(rows), excluded


def lp_error(ensemble: Ensemble | Sequence[Trajectory], target, p: float, n: int) -> LpErrorEstimate:
    """(E||theta_n - target||^p)^(1/p) with a delta-method standard error."""
    if p <= 0:
        raise ValueError("p must be positive")
    states, excluded = _column(ensemble, n)
    if len(states) == 0:
        raise ValueError("no finite trajectories at this checkpoint")
    y = np.linalg.norm(states - as_point(target), axis=1) ** p
    m = float(y.mean())
    se_m = float(y.std(ddof=1) / np.sqrt(len(y))) if len(y) > 1 else float("nan")
    if m == 0.0:
        return LpErrorEstimate(0.0, 0.0 if len(y) > 1 else se_m, excluded, len(y))
    return LpErrorEstimate(m ** (1 / p), m ** (1 / p - 1) * se_m / p, excluded, len(y))


def moment_estimate(ensemble, target, q: float, n: int) -> tuple[float, float]:
    """Mean of ||theta_n - target||^q and its standard error."""
    states, _ = _column(ensemble, n)
    y = np.linalg.norm(states - as_point(target), axis=1) ** q
    se = float(y.std(ddof=1) / np.sqrt(len(y))) if len(y) > 1 else float("nan")
    return float(y.mean()), se


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def rate_fit(points) -> RateFit:
    """Least-squares line through (log n, log error)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (n, error) points")
    n, err = pts[:, 0], pts[:, 1]
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("errors must be positive and finite")
    if np.any(np.diff(n) <= 0) or n[0] <= 0:
        raise ValueError("n must be positive and strictly increasing")
    x, y = np.log(n), np.log(err)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


@dataclass(frozen=True)
class DominanceRow:
    n: int
    estimate: float
    std_error: float
    bound: float

    @property
    def ok(self) -> bool:
        margin = 3 * self.std_error if np.isfinite(self.std_error) else 0.0  # one trajectory: no margin
        return self.estimate <= self.bound + margin


def check_dominance(cert: LpCertificate, ensemble: Ensemble, target, schedule: Schedule, checkpoints) -> list[DominanceRow]:
    """Compare E||theta_n - target||^q on an ensemble with lam_q gamma_n^(q/2)."""
    rows = []
    g = schedule.gammas(int(max(checkpoints)))
    for n in checkpoints:
        est, se = moment_estimate(ensemble, target, cert.q, n)
        rows.append(DominanceRow(int(n), est, se, float(cert.bound(g[n]))))
    return rows


# ---------------------------------------------------------------------------
# noise moments


@dataclass(frozen=True)
class NoiseMomentRow:
    theta: np.ndarray
    estimate: float
    std_error: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.estimate

    @property
    def ok(self) -> bool:
        return self.estimate <= self.bound + 4 * self.std_error


@dataclass(frozen=True)
class NoiseMomentReport:
    p: float
    kappa: float
    form: str
    rows: list[NoiseMomentRow]

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.rows)


def noise_moment_check(problem: SaaProblem, p: float, kappa: float, theta_samples, draws_per_theta: int = 10**4,
                       seed: int = 0, centered: bool = False) -> NoiseMomentReport:
    """Monte Carlo E||D||^p at fixed states against kappa (1 + ||theta||^p).

    With ``centered`` the bound is kappa (1 + ||theta - target||^p).
    """
    if draws_per_theta < 1000:
        raise ValueError("draws_per_theta must be >= 1000")
    thetas = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    ref = problem.target if centered else np.zeros(problem.dim)
    rows = []
    for i, theta in enumerate(thetas):
        gen = trajectory_generator(seed, i)
        batch = np.tile(theta, (draws_per_theta, 1))
        u = uniforms(gen, (draws_per_theta, problem.noise.n_uniforms))
        noise = problem.noise
        if hasattr(noise, "init_memory"):
            memory = noise.init_memory(draws_per_theta, problem.dim)
            draws = noise(batch, u, memory=memory)
        else:
            draws = noise(batch, u)
        y = np.linalg.norm(draws, axis=1) ** p
        bound = kappa * (1.0 + np.linalg.norm(theta - ref) ** p)
        rows.append(NoiseMomentRow(theta, float(y.mean()), float(y.std(ddof=1) / np.sqrt(len(y))), float(bound)))
    return NoiseMomentReport(float(p), float(kappa), "centered" if centered else "uncentered", rows)


# ---------------------------------------------------------------------------
# output


def certificate_csv_rows(certs: Sequence[LpCertificate]) -> list[list[str]]:
    rows = [["q", "lambda", "N", "C", "status"]]
    rows += [[str(c.q), fmt(c.lam), str(c.N), fmt(c.C), c.status] for c in certs]
    return rows


def certificate_text(cert: LpCertificate) -> str:
    items = {
        "q": cert.q,
        "k": fmt(cert.k),
        "lambda": fmt(cert.lam),
        "N": cert.N,
        "C": fmt(cert.C),
        "C_argmin": cert.C_argmin,
        "kappa_stage": fmt(cert.kappa_stage),
        "horizon": cert.horizon,
        "status": cert.status,
    }
    items.update({k: fmt(v) if isinstance(v, float) else v for k, v in cert.provenance.items()})
    return "".join(f"{k}={v}\n" for k, v in items.items())
