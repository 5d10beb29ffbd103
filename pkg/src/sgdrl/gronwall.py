"""Explicit bound for the recursion e_n <= (1 - c g_n) e_{n-1} + kappa g_n^(k+1).

If g_n <= 1/c for n > N and

    C = inf_{l > N} (g_l^k - g_{l-1}^k) / g_l^(k+1) + c g_{l-1}^k / g_l^k > 0,

then e_n <= lam * g_n^k with lam = max(e_0/g_0^k, ..., e_N/g_N^k, kappa/C).
The infimum is taken over a finite horizon and reported with its location.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedules import Schedule, gronwall_terms

DEFAULT_HORIZON = 10**6
VERIFY_RTOL = 1e-9
# a minimum this small relative to the size of its two terms is treated as a cancellation to zero
CANCELLATION_RTOL = 1e-9


class CertificateUnavailable(ValueError):
    """The hypotheses needed for an explicit bound fail on the evaluated horizon."""


@dataclass(frozen=True)
class RecursionSpec:
    N: int
    k: float
    kappa: float
    c: float
    schedule: Schedule
    e_prefix: tuple[float, ...]

    def __post_init__(self):
        prefix = tuple(float(x) for x in self.e_prefix)
        object.__setattr__(self, "e_prefix", prefix)
        if self.N < 0 or len(prefix) != self.N + 1:
            raise ValueError(f"e_prefix must hold e_0..e_N ({self.N + 1} values), got {len(prefix)}")
        if any(x < 0 for x in prefix):
            raise ValueError("prefix values must be non-negative")
        if self.k <= 0 or self.kappa < 0 or self.c <= 0:
            raise ValueError("need k > 0, kappa >= 0, c > 0")


@dataclass(frozen=True)
class BoundCertificate:
    lam: float
    k: float
    C_inf: float
    argmin: int
    horizon: int
    provenance: dict = field(default_factory=dict)

    def bound(self, schedule: Schedule, n_max: int) -> np.ndarray:
        return self.lam * schedule.gammas(n_max) ** self.k


def recursion_envelope(spec: RecursionSpec, n_max: int) -> np.ndarray:
    """Worst case consistent with the recursion: equality for n > N, the given prefix up to N."""
    if n_max <= spec.N:
        raise ValueError("n_max must exceed N")
    g = spec.schedule.gammas(n_max)
    factor = 1.0 - spec.c * g
    bad = np.flatnonzero(factor[spec.N + 1 :] < 0)
    if bad.size:
        n = spec.N + 1 + int(bad[0])
        raise ValueError(f"1 - c*gamma_n < 0 at n={n} (gamma_n={g[n]!r}, c={spec.c!r})")
    forcing = spec.kappa * g ** (spec.k + 1)
    out = np.empty(n_max + 1)
    out[: spec.N + 1] = spec.e_prefix
    e = out[spec.N]
    fac, frc = factor.tolist(), forcing.tolist()
    for n in range(spec.N + 1, n_max + 1):
        e = fac[n] * e + frc[n]
        out[n] = e
    return out


def bound_constant(spec: RecursionSpec, horizon: int = DEFAULT_HORIZON) -> BoundCertificate:
    if horizon <= spec.N:
        raise ValueError("horizon must exceed N")
    g = spec.schedule.gammas(horizon)
    tail = g[spec.N + 1 :]
    if np.any(tail > 1.0 / spec.c):
        n = spec.N + 1 + int(np.argmax(tail > 1.0 / spec.c))
        raise CertificateUnavailable(f"gamma_{n}={g[n]!r} exceeds 1/c={1.0 / spec.c!r}")
    idx = np.arange(spec.N + 1, horizon + 1)
    first, second = gronwall_terms(spec.schedule, spec.k, spec.c, idx, split=True)
    values = first + second
    i = int(np.argmin(values))
    C_inf = float(values[i])
    if C_inf <= CANCELLATION_RTOL * (abs(first[i]) + abs(second[i])):
        raise CertificateUnavailable(f"certificate unavailable: infimum {C_inf!r} at l={int(idx[i])} is not positive")
    prefix_ratios = np.asarray(spec.e_prefix) / g[: spec.N + 1] ** spec.k
    lam = float(max(prefix_ratios.max(), spec.kappa / C_inf))
    prefix_flags = [int(n) for n in np.flatnonzero(1.0 - spec.c * g[1 : spec.N + 1] < 0) + 1]
    provenance = {
        "N": spec.N,
        "k": spec.k,
        "kappa": spec.kappa,
        "c": spec.c,
        "schedule": spec.schedule.describe(),
        "e_prefix": spec.e_prefix,
        "prefix_steps_exceeding_1_over_c": prefix_flags,
    }
    return BoundCertificate(lam, float(spec.k), C_inf, int(idx[i]), int(horizon), provenance)


def verify_bound(cert: BoundCertificate, envelope, schedule: Schedule) -> bool:
    """True iff envelope[n] <= lam * gamma_n^k for every n (relative tolerance 1e-9)."""
    env = np.asarray(envelope, dtype=float)
    bound = cert.bound(schedule, env.size - 1)
    return bool(np.all(env <= bound * (1 + VERIFY_RTOL)))
