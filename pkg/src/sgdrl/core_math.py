"""Euclidean helpers, norm-power inequalities and the Lyapunov family ||theta - target||^q."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REL_TOL = 1e-12
ABS_FLOOR = 1e-300


def as_point(v, name: str = "point") -> np.ndarray:
    """Convert to a finite 1-d float array with at least one coordinate."""
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    u, v = as_point(u, "u"), as_point(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.size} vs {v.size}")
    return u, v


def inner(u, v) -> float:
    u, v = _pair(u, v)
    return float(np.dot(u, v))


def norm(v) -> float:
    return float(np.linalg.norm(as_point(v)))


def leq(lhs: float, rhs: float, rel: float = REL_TOL) -> bool:
    """lhs <= rhs up to rounding slack rel*max(|lhs|, |rhs|) with an absolute floor."""
    return lhs <= rhs + max(rel * max(abs(lhs), abs(rhs)), ABS_FLOOR)


def check_power_convexity(v, w, p: float) -> bool:
    """||v + w||^p <= 2^(p-1) (||v||^p + ||w||^p) for p >= 1."""
    if p < 1:
        raise ValueError("p must be >= 1")
    v, w = _pair(v, w)
    lhs = np.linalg.norm(v + w) ** p
    rhs = 2.0 ** (p - 1) * (np.linalg.norm(v) ** p + np.linalg.norm(w) ** p)
    return leq(float(lhs), float(rhs))


def check_power_reverse_triangle(v, w, p: int) -> bool:
    """| ||v||^p - ||w||^p | <= 2^p ||v-w|| (min(||v||,||w||)^(p-1) + ||v-w||^(p-1))."""
    if int(p) != p or p < 1:
        raise ValueError("p must be an integer >= 1")
    v, w = _pair(v, w)
    nv, nw, nd = (float(np.linalg.norm(x)) for x in (v, w, v - w))
    lhs = abs(nv**p - nw**p)
    rhs = 2.0**p * nd * (min(nv, nw) ** (p - 1) + nd ** (p - 1))
    # the two norm powers are each rounded, so the slack scales with them
    return lhs <= rhs + max(REL_TOL * max(nv**p, nw**p, rhs), ABS_FLOOR)


@dataclass(frozen=True)
class LyapunovSpec:
    target: np.ndarray
    power: int

    def __post_init__(self):
        object.__setattr__(self, "target", as_point(self.target, "target"))
        if self.power < 2:
            raise ValueError("Lyapunov power must be >= 2")


def lyapunov_value(spec: LyapunovSpec, theta) -> float:
    theta, target = _pair(theta, spec.target)
    return float(np.linalg.norm(theta - target) ** spec.power)


def lyapunov_gradient(spec: LyapunovSpec, theta, v) -> float:
    """Directional derivative q ||theta - target||^(q-2) <theta - target, v>.

    Returns 0 at theta == target, the continuous extension for every q >= 2.
    """
    theta, target = _pair(theta, spec.target)
    _, v = _pair(theta, v)
    diff = theta - target
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        return 0.0
    return float(spec.power * dist ** (spec.power - 2) * np.dot(diff, v))


def parse_vector(text: str) -> np.ndarray:
    """Parse numbers separated by ';' or whitespace, e.g. "1;2.5;-3"."""
    parts = [t for t in text.replace(";", " ").split() if t]
    if not parts:
        raise ValueError(f"empty vector {text!r}")
    return as_point([float(t) for t in parts])


def parse_matrix(text: str, dim: int | None = None) -> np.ndarray:
    """Parse a row-major square matrix given as a flat vector."""
    flat = parse_vector(text)
    d = dim if dim is not None else int(round(np.sqrt(flat.size)))
    if d * d != flat.size:
        raise ValueError(f"matrix with {flat.size} entries is not {d}x{d}")
    return flat.reshape(d, d)


def parse_params(text: str) -> dict[str, str]:
    """Split "a=1,b=2" into a dict of strings."""
    params = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"malformed parameter {item!r}")
        params[key.strip()] = value.strip()
    return params
