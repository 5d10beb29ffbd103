"""Sampled verification of the drift contraction condition and its equivalent forms.

The contraction condition reads

    <theta - target, g(theta)> <= -c * max(||theta - target||^2, ||g(theta)||^2).

Five equivalent stability properties are handled, labelled "i" to "v":

    i    contraction with constant c
    ii   one explicit Euler step of size rho contracts: ||e + rho g||^2 <= (1 - c rho)||e||^2
    iii  the same for every step r in [0, rho]
    iv   some step r has sup ||e + r g||^2 / ||e||^2 <= s < 1
    v    sup (2<e, g> + r||g||^2) / ||e||^2 <= -C

where e = theta - target. All checks are spot checks on sample points;
violations are reported scale-free, divided by max(||e||^2, ||g||^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_math import as_point, parse_matrix, parse_params, parse_vector

DEFAULT_TOL = 1e-9
R_GRID_POINTS = 33
PROPERTIES = ("i", "ii", "iii", "iv", "v")


@dataclass(frozen=True)
class DriftField:
    """Drift g with its zero ``target``.

    ``evaluator`` maps an (m, d) array of states to the (m, d) array of drifts.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    target: np.ndarray
    name: str = "drift"

    def __post_init__(self):
        object.__setattr__(self, "target", as_point(self.target, "target"))

    @property
    def dim(self) -> int:
        return self.target.size

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        flat = theta.ndim == 1
        batch = np.atleast_2d(theta)
        if batch.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: drift has d={self.dim}, got {batch.shape[1]}")
        out = np.asarray(self.evaluator(batch), dtype=float)
        if out.shape != batch.shape:
            raise ValueError(f"drift returned shape {out.shape}, expected {batch.shape}")
        return out[0] if flat else out

    @classmethod
    def pointwise(cls, f: Callable[[np.ndarray], np.ndarray], target, name: str = "drift"):
        """Wrap a function of a single state."""
        return cls(lambda batch: np.array([f(row) for row in batch]), target, name)


def linear_drift(A, target) -> DriftField:
    """g(theta) = -A (theta - target)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    target = as_point(target, "target")
    if A.shape != (target.size, target.size):
        raise ValueError(f"matrix shape {A.shape} does not match d={target.size}")
    return DriftField(lambda x: -(x - target) @ A.T, target, "linear")


def scalar_drift(c: float, target=(0.0,)) -> DriftField:
    """g(theta) = -c (theta - target)."""
    target = as_point(target, "target")
    return DriftField(lambda x: -c * (x - target), target, "scalar")


def parse_drift(text: str) -> DriftField:
    """Build a drift from "linear:A=<row-major>,theta_star=<vec>" or "scalar:c=<f>[,theta_star=<vec>]".

    Vectors and matrices separate entries with ';' (e.g. "A=2;0;0;8").
    """
    kind, _, rest = text.strip().partition(":")
    params = parse_params(rest)
    if kind == "linear":
        target = parse_vector(params["theta_star"])
        return linear_drift(parse_matrix(params["A"], target.size), target)
    if kind == "scalar":
        target = parse_vector(params.get("theta_star", "0"))
        return scalar_drift(float(params["c"]), target)
    raise ValueError(f"unknown drift kind {kind!r}")


def default_samples(
    target,
    n_radii: int = 10,
    n_directions: int = 1000,
    radii: tuple[float, float] = (1e-3, 1e3),
    seed: int = 0,
) -> np.ndarray:
    """Target plus a log-spaced radial grid times uniform directions on the sphere."""
    target = as_point(target, "target")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, target.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = np.geomspace(*radii, n_radii)
    pts = target + (r[:, None, None] * dirs[None]).reshape(-1, target.size)
    return np.vstack([target, pts])


@dataclass(frozen=True)
class ContractionCertificate:
    mode: str
    constants: tuple[float, ...]
    samples_checked: int
    max_violation: float
    tol: float

    @property
    def valid(self) -> bool:
        return self.max_violation <= self.tol

    @property
    def c(self) -> float:
        return self.constants[0]


def _evaluate(g: DriftField, samples) -> tuple[np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    if pts.size == 0:
        raise ValueError("no samples")
    if pts.shape[1] != g.dim:
        raise ValueError(f"dimension mismatch: samples have d={pts.shape[1]}, drift d={g.dim}")
    vals = g(pts)
    if not np.all(np.isfinite(vals)):
        raise ValueError("drift produced non-finite values")
    return pts - g.target, vals


def _scaled(excess: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """excess / scale, where a zero scale means both sides vanish."""
    out = np.zeros_like(excess)
    pos = scale > 0
    out[pos] = excess[pos] / scale[pos]
    out[~pos] = np.where(excess[~pos] > 0, np.inf, 0.0)
    return out


def _sq(x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, x)


def _step_excess(e, v, r, bound) -> np.ndarray:
    """||e + r v||^2 - bound ||e||^2, scaled."""
    ee, vv = _sq(e), _sq(v)
    return _scaled(_sq(e + r * v) - bound * ee, np.maximum(ee, vv))


def _violations(e: np.ndarray, v: np.ndarray, prop: str, constants, r_grid=None) -> np.ndarray:
    ee, vv = _sq(e), _sq(v)
    scale = np.maximum(ee, vv)
    if prop == "i":
        (c,) = constants
        return _scaled(np.einsum("ij,ij->i", e, v) + c * scale, scale)
    if prop == "ii":
        c, rho = constants
        return _step_excess(e, v, rho, 1 - c * rho)
    if prop == "iii":
        c, rho = constants
        grid = np.linspace(0, rho, R_GRID_POINTS) if r_grid is None else np.asarray(r_grid)
        if np.any(grid < 0) or np.any(grid > rho):
            raise ValueError("r_grid must lie in [0, rho]")
        return np.max([_step_excess(e, v, r, 1 - c * r) for r in grid], axis=0)
    if prop == "iv":
        r, s = constants
        if not s < 1:
            return np.full(len(e), np.inf)
        return _step_excess(e, v, r, s)
    if prop == "v":
        C, r = constants
        return _scaled(2 * np.einsum("ij,ij->i", e, v) + r * vv + C * ee, scale)
    raise ValueError(f"unknown property {prop!r}")


def check_property(g: DriftField, prop: str, constants, samples=None, tol: float = DEFAULT_TOL, r_grid=None):
    """Spot-check one of the stability properties with the given constants."""
    constants = tuple(float(x) for x in constants)
    if any(x <= 0 for x in constants):
        raise ValueError("constants must be positive")
    samples = default_samples(g.target) if samples is None else samples
    e, v = _evaluate(g, samples)
    worst = float(np.max(_violations(e, v, prop, constants, r_grid)))
    return ContractionCertificate(prop, constants, len(e), worst, tol)


def check_contraction(g: DriftField, c: float, samples=None, tol: float = DEFAULT_TOL) -> ContractionCertificate:
    return check_property(g, "i", (c,), samples, tol)


@dataclass(frozen=True)
class DerivedBoundsReport:
    c1: float
    c2: float
    hypothesis_violation: float
    items: dict[str, float]
    tol: float

    @property
    def hypothesis_ok(self) -> bool:
        return self.hypothesis_violation <= self.tol

    def item_ok(self, key: str) -> bool:
        return self.items[key] <= self.tol

    @property
    def ok(self) -> bool:
        return self.hypothesis_ok and all(self.item_ok(k) for k in self.items)


def derived_bounds_check(g: DriftField, c1: float, c2: float, samples=None, tol: float = DEFAULT_TOL):
    """Check the consequences of <e, g> <= -max(c1 ||e||^2, c2 ||g||^2) on samples.

    Items: (a) g(target) = 0, (b) c1 c2 <= 1, (c) c1||e|| <= ||g|| <= ||e||/c2,
    (d) ||e + r g||^2 <= (1 - c1 r (2 - r/c2)) ||e||^2 on [0, 2 c2],
    (e) ||e + r g||^2 <= (1 - c1 r) ||e||^2 on [0, c2].
    Every item is reported even when the hypothesis fails.
    """
    samples = default_samples(g.target) if samples is None else samples
    e, v = _evaluate(g, samples)
    ee, vv = _sq(e), _sq(v)
    scale = np.maximum(ee, vv)
    hyp = _scaled(np.einsum("ij,ij->i", e, v) + np.maximum(c1 * ee, c2 * vv), scale)
    at_target = np.linalg.norm(g(g.target))
    ne, nv = np.sqrt(ee), np.sqrt(vv)
    norm_scale = np.maximum(ne, nv)
    items = {
        "a": float(at_target),
        "b": c1 * c2 - 1.0,
        "c": float(np.max(np.maximum(_scaled(c1 * ne - nv, norm_scale), _scaled(nv - ne / c2, norm_scale)))),
        "d": float(
            np.max([_step_excess(e, v, r, 1 - c1 * r * (2 - r / c2)) for r in np.linspace(0, 2 * c2, R_GRID_POINTS)])
        ),
        "e": float(np.max([_step_excess(e, v, r, 1 - c1 * r) for r in np.linspace(0, c2, R_GRID_POINTS)])),
    }
    return DerivedBoundsReport(float(c1), float(c2), float(np.max(hyp)), items, tol)


def euler_monotonicity_check(g: DriftField, c: float, rho: float, samples=None, r_grid=None, tol: float = DEFAULT_TOL) -> bool:
    """A contracting Euler step of size rho implies contraction for every smaller step."""
    samples = default_samples(g.target) if samples is None else samples
    if not check_property(g, "ii", (c, rho), samples, tol).valid:
        raise ValueError(f"no contraction at step rho={rho} with c={c}")
    return check_property(g, "iii", (c, rho), samples, tol, r_grid).valid


# proof chain i -> ii -> iii -> iv -> v -> i
_EDGES = {
    "i": ("ii", lambda c: (c, c)),
    "ii": ("iii", lambda c, rho: (c, rho)),
    "iii": ("iv", lambda c, rho: (rho, 1 - c * rho)),
    "iv": ("v", lambda r, s: ((1 - s) / r, r)),
    "v": ("i", lambda C, r: (min(C, r) / 2,)),
}


def transport_constants(source: str, constants, target: str) -> tuple[float, ...]:
    """Move constants along the implication chain i -> ii -> iii -> iv -> v -> i.

    Constants per property: i (c,), ii (c, rho), iii (c, rho), iv (r, s), v (C, r).
    """
    if source not in _EDGES or target not in _EDGES:
        raise ValueError(f"unknown property {source!r} or {target!r}")
    if source == target:
        raise ValueError("source and target coincide")
    constants = tuple(float(x) for x in constants)
    if any(x <= 0 for x in constants):
        raise ValueError("constants must be positive")
    if source == "iv" and not constants[1] < 1:
        raise ValueError("property iv needs s < 1")
    if source == "iii" and constants[0] * constants[1] >= 1:
        raise ValueError("property iii with c*rho >= 1 carries no contraction rate")
    prop = source
    while prop != target:
        prop, move = _EDGES[prop]
        constants = move(*constants)
    return constants


def estimate_property_iv(g: DriftField, samples=None, r_grid=None) -> tuple[float, float]:
    """Best (r, s) over a finite step grid, where s = sup ||e + r g||^2 / ||e||^2."""
    samples = default_samples(g.target) if samples is None else samples
    e, v = _evaluate(g, samples)
    ee = _sq(e)
    keep = ee > 0
    e, v, ee = e[keep], v[keep], ee[keep]
    grid = np.geomspace(1e-4, 1e2, 121) if r_grid is None else np.asarray(r_grid, dtype=float)
    s = np.array([np.max(_sq(e + r * v) / ee) for r in grid])
    i = int(np.argmin(s))
    return float(grid[i]), float(s[i])


def estimate_property_v(g: DriftField, samples=None, r_grid=None) -> tuple[float, float]:
    """Best (C, r) over a finite grid, ranked by the resulting contraction constant min(C, r)/2."""
    samples = default_samples(g.target) if samples is None else samples
    e, v = _evaluate(g, samples)
    ee = _sq(e)
    keep = ee > 0
    e, v, ee = e[keep], v[keep], ee[keep]
    grid = np.geomspace(1e-4, 1e2, 121) if r_grid is None else np.asarray(r_grid, dtype=float)
    ev, vv = np.einsum("ij,ij->i", e, v), _sq(v)
    C = np.array([-np.max((2 * ev + r * vv) / ee) for r in grid])
    i = int(np.argmax(np.minimum(C, grid)))
    return float(C[i]), float(grid[i])
