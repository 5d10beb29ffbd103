"""Least-squares regression F(theta, x) = (<theta, x> - h(x))^2 as a stochastic approximation problem.

The minimizer solves E[X X^T] theta = E[h(X) X], the mean gradient is
2 E[X X^T] (theta - minimizer), and the induced drift -2 E[X X^T](theta - minimizer)
satisfies the contraction condition with the constant from ``spd_contraction_constant``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .core_math import as_point, parse_matrix, parse_params, parse_vector
from .engine import SaaProblem, SgdProblem, from_sgd
from .streams import trajectory_generator, uniforms

COND_LIMIT = 1e12
DEFAULT_MC_BUDGET = 10**6


@dataclass(frozen=True)
class RegressionModel:
    """Distribution of (X, h(X)).

    ``sampler`` maps an (m, n_uniforms) block of uniforms to (x of shape (m, d), h(x) of shape (m,)).
    ``support`` is (points (K, d), probabilities (K,), h values (K,)) when X is finitely supported.
    """

    sampler: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    n_uniforms: int
    dim: int
    exact_moments: tuple[np.ndarray, np.ndarray] | None = None
    support: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    name: str = "linreg"

    def __post_init__(self):
        if self.support is not None:
            pts, probs, hv = (np.asarray(a, dtype=float) for a in self.support)
            pts = pts.reshape(len(probs), self.dim)
            if np.any(probs <= 0) or not np.isclose(probs.sum(), 1.0, rtol=0, atol=1e-12):
                raise ValueError("support probabilities must be positive and sum to 1")
            object.__setattr__(self, "support", (pts, probs, hv))
        if self.exact_moments is not None:
            M2, b = (np.atleast_1d(np.asarray(a, dtype=float)) for a in self.exact_moments)
            M2 = M2.reshape(self.dim, self.dim)
            if not np.allclose(M2, M2.T, rtol=1e-12, atol=0):
                raise ValueError("second-moment matrix must be symmetric")
            object.__setattr__(self, "exact_moments", (M2, b))

    def draw(self, count: int, seed: int):
        gen = trajectory_generator(seed, 0)
        return self.sampler(uniforms(gen, (count, self.n_uniforms)))


def finite_support_model(points, probs, h_values, name: str = "linreg:custom") -> RegressionModel:
    """X takes the rows of ``points`` with the given probabilities; sampled by inverse CDF."""
    probs = np.asarray(probs, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(len(probs), -1)
    hv = np.asarray(h_values, dtype=float)
    edges = np.cumsum(probs)
    edges[-1] = 1.0

    def sampler(u):
        i = np.minimum(np.searchsorted(edges, u[:, 0], side="right"), len(probs) - 1)
        return pts[i], hv[i]

    return RegressionModel(sampler, 1, pts.shape[1], support=(pts, probs, hv), name=name)


def two_point_model() -> RegressionModel:
    """X uniform on {-1, 2}, h(x) = x^2."""
    return finite_support_model([[-1.0], [2.0]], [0.5, 0.5], [1.0, 4.0], name="linreg:two_point")


def deterministic_model(x, h_value: float) -> RegressionModel:
    """X is the constant vector x."""
    x = as_point(x)
    return finite_support_model([x], [1.0], [h_value], name="linreg:deterministic")


def gaussian_model(beta, cov) -> RegressionModel:
    """X ~ N(0, cov) and h(x) = <beta, x>, so the minimizer is beta."""
    beta = as_point(beta, "beta")
    cov = np.asarray(cov, dtype=float).reshape(beta.size, beta.size)
    chol = np.linalg.cholesky(cov)

    def sampler(u):
        x = ndtri(u) @ chol.T
        return x, x @ beta

    return RegressionModel(sampler, beta.size, beta.size, exact_moments=(cov, cov @ beta), name="linreg:gauss")


def load_support_table(path) -> RegressionModel:
    """Rows "probability, x_1, ..., x_d, h" (commas or whitespace)."""
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(t) for t in line.replace(",", " ").split()])
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 3:
        raise ValueError(f"{path}: need rows of equal length >= 3")
    table = np.array(rows)
    return finite_support_model(table[:, 1:-1], table[:, 0], table[:, -1], name=f"linreg:custom:{path}")


def parse_model(text: str) -> RegressionModel:
    """"linreg:two_point", "linreg:gauss:d=<n>,beta=<vec>,cov=<matrix>" or "linreg:custom:<path>"."""
    parts = text.strip().split(":", 2)
    if len(parts) < 2 or parts[0] != "linreg":
        raise ValueError(f"not a regression model string: {text!r}")
    kind = parts[1]
    if kind == "two_point" and len(parts) == 2:
        return two_point_model()
    if kind == "gauss" and len(parts) == 3:
        params = parse_params(parts[2])
        d = int(params["d"])
        beta = parse_vector(params["beta"])
        if beta.size != d:
            raise ValueError(f"beta has {beta.size} entries, d={d}")
        return gaussian_model(beta, parse_matrix(params["cov"], d))
    if kind == "custom" and len(parts) == 3:
        return load_support_table(parts[2])
    raise ValueError(f"unknown regression model {text!r}")


# ---------------------------------------------------------------------------
# moments and minimizer


@dataclass(frozen=True)
class Moments:
    M2: np.ndarray
    b: np.ndarray
    source: str  # exact | enumerated | estimated


def moments(model: RegressionModel, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> Moments:
    """E[X X^T] and E[h(X) X]: closed form, else support enumeration, else Monte Carlo."""
    if model.exact_moments is not None:
        return Moments(*model.exact_moments, "exact")
    if model.support is not None:
        pts, probs, hv = model.support
        return Moments(np.einsum("k,ki,kj->ij", probs, pts, pts), (probs * hv) @ pts, "enumerated")
    x, hv = model.draw(mc_budget, seed)
    return Moments(x.T @ x / mc_budget, hv @ x / mc_budget, "estimated")


@dataclass(frozen=True)
class Minimizer:
    theta: np.ndarray
    source: str
    moments: Moments


def true_minimizer(model: RegressionModel, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> Minimizer:
    mom = moments(model, mc_budget, seed)
    cond = np.linalg.cond(mom.M2)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ValueError(f"E[X X^T] is singular or ill-conditioned (condition number {cond:.3g})")
    source = "estimated" if mom.source == "estimated" else "exact"
    return Minimizer(np.linalg.solve(mom.M2, mom.b), source, mom)


def gradient(theta, x, h_val) -> np.ndarray:
    """2 (<theta, x> - h) x, row-wise for batches."""
    theta, x = np.asarray(theta, dtype=float), np.asarray(x, dtype=float)
    if theta.shape[-1] != x.shape[-1]:
        raise ValueError("dimension mismatch")
    resid = np.sum(theta * x, axis=-1) - np.asarray(h_val, dtype=float)
    return 2.0 * resid[..., None] * x


def loss(theta, x, h_val) -> np.ndarray:
    theta, x = np.asarray(theta, dtype=float), np.asarray(x, dtype=float)
    return (np.sum(theta * x, axis=-1) - np.asarray(h_val, dtype=float)) ** 2


# ---------------------------------------------------------------------------
# contraction constant


@dataclass(frozen=True)
class SpdConstant:
    c: float
    lambda_min: float
    lambda_max: float
    sharp_c: float | None = None


def spd_contraction_constant(A, sharp: bool = True, n_directions: int = 10**4, seed: int = 0) -> SpdConstant:
    """c = lambda_min * min(1, 1/lambda_max^2) guarantees <v, A v> >= c max(||v||^2, ||A v||^2).

    ``sharp_c`` is the smallest ratio <v, A v> / max(||v||^2, ||A v||^2) over random
    directions and the eigenvectors, reported for diagnostics only.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=1e-12, atol=1e-14 * np.abs(A).max()):
        raise ValueError("matrix must be square and symmetric")
    evals, evecs = np.linalg.eigh(A)
    if evals[0] <= 0:
        raise ValueError(f"matrix is not positive definite (smallest eigenvalue {evals[0]!r})")
    lo, hi = float(evals[0]), float(evals[-1])
    c = lo * min(1.0, 1.0 / hi**2)
    sharp_c = None
    if sharp:
        dirs = np.random.default_rng(seed).standard_normal((n_directions, A.shape[0]))
        dirs = np.vstack([dirs / np.linalg.norm(dirs, axis=1, keepdims=True), evecs.T])
        Av = dirs @ A.T
        ratio = np.einsum("ij,ij->i", dirs, Av) / np.maximum(1.0, np.einsum("ij,ij->i", Av, Av))
        sharp_c = float(ratio.min())
    return SpdConstant(c, lo, hi, sharp_c)


# ---------------------------------------------------------------------------
# SGD problem


@dataclass(frozen=True)
class LinregSetup:
    model: RegressionModel
    minimizer: Minimizer
    sgd: SgdProblem
    problem: SaaProblem
    contraction: SpdConstant


def build_sgd_problem(model: RegressionModel, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> SgdProblem:
    """SGD on the squared loss with mean gradient 2 E[X X^T](theta - minimizer).

    This equals 2 E[X X^T] theta - 2 E[h(X) X] and vanishes exactly at the minimizer.
    """
    mini = true_minimizer(model, mc_budget, seed)
    M2, target = mini.moments.M2, mini.theta

    def stochastic_gradient(theta, data):
        x, hv = data
        return gradient(theta, x, hv)

    return SgdProblem(
        stochastic_gradient=stochastic_gradient,
        data_sampler=model.sampler,
        n_uniforms=model.n_uniforms,
        target=target,
        mean_gradient=lambda theta: 2.0 * (theta - target) @ M2,
        name=model.name,
    )


def setup(model: RegressionModel, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> LinregSetup:
    sgd = build_sgd_problem(model, mc_budget, seed)
    mini = true_minimizer(model, mc_budget, seed)
    return LinregSetup(model, mini, sgd, from_sgd(sgd), spd_contraction_constant(2.0 * mini.moments.M2))


# ---------------------------------------------------------------------------
# noise moment constants


@dataclass(frozen=True)
class NoiseConstant:
    kappa: float
    p: int
    form: str  # centered | uncentered
    source: str
    detail: dict


def _expect(model: RegressionModel, fn, mc_budget: int, seed: int) -> tuple[float, str]:
    """E[fn(x, h)] by enumeration when possible, else Monte Carlo."""
    if model.support is not None:
        pts, probs, hv = model.support
        return float(probs @ fn(pts, hv)), "enumerated"
    x, hv = model.draw(mc_budget, seed)
    return float(np.mean(fn(x, hv))), "estimated"


def affine_noise_kappa(model: RegressionModel, p: int, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> NoiseConstant:
    """Centered noise constant from the affine form of the noise.

    The noise is D = 2 (M2 - x x^T) e + 2 x (h - <x, minimizer>) with e = theta - minimizer,
    so ||D||^p <= 2^(p-1) (||2(M2 - x x^T)||^p ||e||^p + ||2 x (h - <x, minimizer>)||^p)
    and E||D||^p <= kappa (1 + ||e||^p) with kappa = 2^(p-1) max of the two expectations.
    """
    mini = true_minimizer(model, mc_budget, seed)
    M2, target = mini.moments.M2, mini.theta

    def op_norm_p(x, hv):
        mats = 2.0 * (M2[None] - x[:, :, None] * x[:, None, :])
        return np.abs(np.linalg.eigvalsh(mats)).max(axis=1) ** p

    def offset_p(x, hv):
        return np.linalg.norm(2.0 * x * (hv - x @ target)[:, None], axis=1) ** p

    a, src_a = _expect(model, op_norm_p, mc_budget, seed)
    v, src_v = _expect(model, offset_p, mc_budget, seed)
    source = "estimated" if "estimated" in (src_a, src_v, mini.source) else "exact"
    return NoiseConstant(2.0 ** (p - 1) * max(a, v), p, "centered", source, {"E_op_norm_p": a, "E_offset_p": v})


def explicit_noise_kappa(model: RegressionModel, p: int, mc_budget: int = DEFAULT_MC_BUDGET, seed: int = 0) -> NoiseConstant:
    """The generic constant 2^(3p+2) max(E||X||^2p, E||h X||^p, L^p ||minimizer||^p, L^p).

    L is a Lipschitz constant of the mean gradient (the largest eigenvalue of 2 M2).
    This bounds E||D||^p by kappa (1 + ||theta||^p), the uncentered form.
    """
    mini = true_minimizer(model, mc_budget, seed)
    lip = float(np.linalg.eigvalsh(2.0 * mini.moments.M2)[-1])
    ex, src_x = _expect(model, lambda x, hv: np.linalg.norm(x, axis=1) ** (2 * p), mc_budget, seed)
    ehx, src_h = _expect(model, lambda x, hv: np.linalg.norm(hv[:, None] * x, axis=1) ** p, mc_budget, seed)
    kappa = 2.0 ** (3 * p + 2) * max(ex, ehx, lip**p * np.linalg.norm(mini.theta) ** p, lip**p)
    source = "estimated" if "estimated" in (src_x, src_h, mini.source) else "exact"
    return NoiseConstant(float(kappa), p, "uncentered", source, {"E_norm_x_2p": ex, "E_norm_hx_p": ehx, "lipschitz": lip})


def centered_kappa(kappa: float, p: int, target) -> float:
    """Turn a bound kappa (1 + ||theta||^p) into one of the form kappa' (1 + ||theta - target||^p)."""
    t = np.linalg.norm(as_point(target)) ** p
    return float(kappa * max(1.0 + 2.0**p * t, 2.0**p))


# ---------------------------------------------------------------------------
# gradient / expectation interchange


@dataclass(frozen=True)
class InterchangeReport:
    thetas: np.ndarray
    fd_gradients: np.ndarray
    mean_gradients: np.ndarray
    allowances: np.ndarray
    mode: str

    @property
    def discrepancies(self) -> np.ndarray:
        return np.linalg.norm(self.fd_gradients - self.mean_gradients, axis=1)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.discrepancies <= self.allowances))


def interchange_check(model: RegressionModel, theta_samples, mc_budget: int = 10**4, fd_step: float = 1e-4,
                      seed: int = 0) -> InterchangeReport:
    """Central differences of theta -> E[F(theta, X)] against 2 M2 theta - 2 b.

    The expectation uses exact enumeration when X has finite support, otherwise
    a fixed Monte Carlo sample shared by every stencil point. The allowance is
    the rounding error of the stencil plus, in Monte Carlo mode, four standard
    errors of the differenced estimator. The loss is quadratic, so the central
    difference has no truncation error.
    """
    if mc_budget < 10**4:
        raise ValueError("mc_budget must be >= 1e4")
    thetas = np.atleast_2d(np.asarray(theta_samples, dtype=float))
    mom = moments(model, mc_budget, seed)
    closed = 2.0 * thetas @ mom.M2 - 2.0 * mom.b
    if model.support is not None:
        pts, probs, hv = model.support
        weights, mode = probs, "enumerated"
    else:
        pts, hv = model.draw(mc_budget, seed + 1)
        weights, mode = np.full(len(hv), 1.0 / len(hv)), "monte_carlo"
    d = thetas.shape[1]
    fd = np.empty_like(thetas)
    allow = np.empty(len(thetas))
    for i, theta in enumerate(thetas):
        scale = 0.0
        var = 0.0
        for j in range(d):
            step = np.zeros(d)
            step[j] = fd_step
            up, down = loss(theta + step, pts, hv), loss(theta - step, pts, hv)
            fd[i, j] = weights @ (up - down) / (2 * fd_step)
            scale = max(scale, weights @ np.abs(up) + weights @ np.abs(down))
            if mode == "monte_carlo":
                var += np.var((up - down) / (2 * fd_step)) / len(hv)
        moments_scale = np.abs(mom.M2).sum() * np.linalg.norm(theta, 1) + np.abs(mom.b).sum()
        # the closed form carries its own moment estimation error in Monte Carlo mode
        if mode == "monte_carlo" and mom.source == "estimated":
            var += np.var(gradient(theta, pts, hv), axis=0).sum() / len(hv)
        allow[i] = 64 * np.finfo(float).eps * (scale / fd_step + moments_scale) * np.sqrt(d) + 4 * np.sqrt(var)
    return InterchangeReport(thetas, fd, closed, allow, mode)
