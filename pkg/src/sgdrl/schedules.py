"""Learning-rate sequences and their admissibility checks.

Polynomial schedules are gamma_n = alpha * n**(-nu) for n >= 1 with the
convention gamma_0 = alpha. The value at n = 0 never multiplies a step; it only
enters bound constants through e_0 / gamma_0**k, where any positive value is valid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import parse_params

DEFAULT_TOL = 1e-6
DEFAULT_HORIZON = 10**6
# closed-form schedules can be probed far past the requested horizon
MAX_PROBE_HORIZON = 1e300
EXACT_TAIL_LIMIT = 2 * 10**6
PROBE_POINTS = 4097


@dataclass(frozen=True)
class PolynomialSchedule:
    alpha: float
    nu: float

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError("alpha must be a positive finite number")
        if not np.isfinite(self.nu):
            raise ValueError("nu must be finite")

    @property
    def length(self) -> float:
        return float("inf")

    def describe(self) -> str:
        return f"poly:alpha={self.alpha!r},nu={self.nu!r}"

    def gammas(self, n_max: int) -> np.ndarray:
        """gamma_0 .. gamma_{n_max} as an array."""
        n = np.arange(n_max + 1, dtype=float)
        n[0] = 1.0
        return self.alpha * n ** (-self.nu)

    def log_gamma(self, n: np.ndarray) -> np.ndarray:
        n = np.maximum(np.asarray(n, dtype=float), 1.0)
        return np.log(self.alpha) - self.nu * np.log(n)

    def log_ratio(self, n: np.ndarray) -> np.ndarray:
        """log(gamma_{n-1} / gamma_n), with gamma_0 = gamma_1 handled at n = 1."""
        n = np.asarray(n, dtype=float)
        with np.errstate(divide="ignore"):
            out = -self.nu * np.log1p(-1.0 / np.maximum(n, 2.0))
        return np.where(n <= 1, 0.0, out)


@dataclass(frozen=True)
class TabulatedSchedule:
    values: np.ndarray = field(repr=False)
    source: str = "<inline>"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size == 0:
            raise ValueError("tabulated schedule is empty")
        if not np.all(np.isfinite(vals) & (vals > 0)):
            raise ValueError("tabulated rates must be positive and finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def length(self) -> int:
        return self.values.size

    def describe(self) -> str:
        return f"table:{self.source}"

    def gammas(self, n_max: int) -> np.ndarray:
        if n_max >= self.values.size:
            raise IndexError(f"tabulated schedule has {self.values.size} entries, need index {n_max}")
        return self.values[: n_max + 1]


Schedule = PolynomialSchedule | TabulatedSchedule


def polynomial(alpha: float, nu: float) -> PolynomialSchedule:
    return PolynomialSchedule(float(alpha), float(nu))


def tabulated(values, source: str = "<inline>") -> TabulatedSchedule:
    return TabulatedSchedule(np.asarray(values, dtype=float), source)


def gamma(s: Schedule, n: int) -> float:
    if n < 0:
        raise ValueError("schedule index must be >= 0")
    if isinstance(s, TabulatedSchedule):
        if n >= s.values.size:
            raise IndexError(f"tabulated schedule has {s.values.size} entries, need index {n}")
        return float(s.values[n])
    return s.alpha if n == 0 else s.alpha * float(n) ** (-s.nu)


def parse_schedule(text: str) -> Schedule:
    """Build a schedule from "poly:alpha=<f>,nu=<f>" or "table:<path>"."""
    kind, _, rest = text.strip().partition(":")
    if kind == "poly":
        params = parse_params(rest)
        if set(params) != {"alpha", "nu"}:
            raise ValueError(f"poly schedule needs exactly alpha and nu, got {sorted(params)}")
        return polynomial(float(params["alpha"]), float(params["nu"]))
    if kind == "table":
        path = Path(rest)
        values = [float(line) for line in path.read_text(encoding="utf-8").split()]
        return tabulated(values, rest)
    raise ValueError(f"unknown schedule kind {kind!r} in {text!r}")


# ---------------------------------------------------------------------------
# Gronwall coefficient  D(l) = (g_l^k - g_{l-1}^k) / g_l^(k+1) + w * g_{l-1}^k / g_l^k


def gronwall_terms(s: Schedule, k: float, weight: float, idx, split: bool = False):
    """Evaluate D(l) at indices l >= 1.

    ``weight`` multiplies the second term: c in the deterministic recursion,
    c/2 in the stochastic propositions. Polynomial schedules are evaluated in
    log space so indices far beyond 2**53 stay accurate.
    """
    idx = np.asarray(idx)
    if isinstance(s, PolynomialSchedule):
        log_r = k * s.log_ratio(idx)
        jump = -np.expm1(log_r)  # 1 - (g_{l-1}/g_l)^k
        with np.errstate(divide="ignore", over="ignore"):
            first = np.sign(jump) * np.exp(np.log(np.abs(jump)) - s.log_gamma(idx))
        first = np.where(jump == 0, 0.0, first)
        second = weight * np.exp(log_r)
    else:
        idx = idx.astype(np.int64)
        g = s.gammas(int(idx.max()))
        cur, prev = g[idx], g[idx - 1]
        first = (cur**k - prev**k) / cur ** (k + 1)
        second = weight * prev**k / cur**k
    return (first, second) if split else first + second


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class AdmissibilityReport:
    c: float
    k_max: int
    horizon: float
    requested_horizon: int
    limsup_ok: bool
    tail_gamma_max: float
    per_k_min_tail: tuple[tuple[int, float], ...]
    verdict: str
    analytic_verdict: str | None = None

    @property
    def admissible(self) -> bool:
        return self.verdict == "admissible"


def _tail_indices(horizon: float) -> np.ndarray:
    lo = horizon / 2
    if horizon <= EXACT_TAIL_LIMIT:
        return np.arange(int(lo) + 1, int(horizon) + 1, dtype=float)
    return np.geomspace(lo, horizon, PROBE_POINTS)


def _tail_scan(s: Schedule, c: float, k_max: int, horizon: float):
    idx = _tail_indices(horizon)
    if isinstance(s, PolynomialSchedule):
        with np.errstate(over="ignore", under="ignore"):
            gmax = float(np.exp(s.log_gamma(idx)).max())
    else:
        gmax = float(s.gammas(int(horizon))[idx.astype(np.int64)].max())
    mins = tuple((k, float(np.min(gronwall_terms(s, k, c / 2, idx)))) for k in range(1, k_max + 1))
    return gmax, mins


def _verdict(limsup_ok: bool, mins, tol: float) -> str:
    worst = min(m for _, m in mins)
    if limsup_ok and worst > tol:
        return "admissible"
    if limsup_ok and 0 <= worst <= tol:
        return "inconclusive"
    return "inadmissible"


def analytic_verdict(s: PolynomialSchedule) -> str:
    """The closed-form dichotomy for alpha * n**(-nu): admissible exactly for 0 < nu < 1."""
    return "admissible" if 0 < s.nu < 1 else "inadmissible"


def check_admissibility(
    s: Schedule,
    c: float,
    k_max: int = 1,
    horizon: int = DEFAULT_HORIZON,
    tol: float = DEFAULT_TOL,
) -> AdmissibilityReport:
    """Check limsup gamma_n = 0 and liminf D_k > 0 (weight c/2) for k = 1..k_max.

    The liminf is approximated by the minimum over the tail half of a finite
    horizon. For polynomial schedules the sequences have a closed form, so the
    window is pushed out by factors of ten (up to 1e300) while the tail is still
    moving: toward its limit when the verdict is undecided, or downward when
    it currently reads admissible.
    """
    if horizon < 100:
        raise ValueError("horizon must be >= 100")
    if c <= 0 or k_max < 1:
        raise ValueError("need c > 0 and k_max >= 1")
    if isinstance(s, TabulatedSchedule) and s.length <= horizon:
        raise ValueError(f"tabulated schedule has {s.length} entries, horizon {horizon} needs more")

    h = float(horizon)
    gmax, mins = _tail_scan(s, c, k_max, h)
    verdict = _verdict(gmax < tol, mins, tol)
    if isinstance(s, PolynomialSchedule):
        while True:
            if h * 10 > MAX_PROBE_HORIZON:
                if verdict != "admissible":
                    verdict = "inconclusive"
                break
            g2, m2 = _tail_scan(s, c, k_max, h * 10)
            if verdict == "admissible":
                # a tail minimum that is still falling may yet cross zero
                if not any(b < a - 1e-12 * abs(a) for (_, a), (_, b) in zip(mins, m2)):
                    break
                h, gmax, mins = h * 10, g2, m2
                verdict = _verdict(gmax < tol, mins, tol)
                continue
            gamma_moving = gmax >= tol and g2 < gmax
            d_moving = any(b > a for (_, a), (_, b) in zip(mins, m2) if a <= tol)
            gamma_settled = gmax < tol or gamma_moving
            d_settled = all(a > tol for _, a in mins) or d_moving
            if not (gamma_settled and d_settled and (gamma_moving or d_moving)):
                break
            h, gmax, mins = h * 10, g2, m2
            verdict = _verdict(gmax < tol, mins, tol)
    return AdmissibilityReport(
        c=float(c),
        k_max=int(k_max),
        horizon=h,
        requested_horizon=int(horizon),
        limsup_ok=gmax < tol,
        tail_gamma_max=gmax,
        per_k_min_tail=mins,
        verdict=verdict,
        analytic_verdict=analytic_verdict(s) if isinstance(s, PolynomialSchedule) else None,
    )


def decay_ratio(beta: float, delta: float, n) -> np.ndarray:
    """|n^-delta - (n-1)^-delta| / n^-beta, evaluated in log space."""
    n = np.asarray(n, dtype=float)
    jump = np.abs(np.expm1(-delta * np.log1p(-1.0 / n)))
    with np.errstate(over="ignore"):
        return np.exp((beta - delta) * np.log(n) + np.log(jump))


def decay_ratio_check(beta: float, delta: float, horizon: int = DEFAULT_HORIZON) -> bool:
    """True iff the ratio is below 1e-3 at the horizon and fell over the last decade.

    While the ratio is still falling but not yet small, the horizon is pushed
    out by factors of ten (the ratio has a closed form).
    """
    if horizon < 100:
        raise ValueError("horizon must be >= 100")
    h = float(horizon)
    while True:
        now, before = decay_ratio(beta, delta, [h, h / 10])
        falling = now < before
        if now < 1e-3 or not falling or h * 10 > MAX_PROBE_HORIZON:
            return bool(now < 1e-3 and falling)
        h *= 10
