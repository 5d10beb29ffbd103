"""Shared oracles and the acceptance summary printed at the end of the run."""
from math import comb

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    line = f"[acceptance {criterion}] {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def exact_error_moments(xs, probs, hs, alpha, nu, theta0, n_max, max_power=4):
    """Exact E[(theta_n - minimizer)^j], j <= max_power, for scalar least-squares SGD
    on a finite support, by propagating raw moments through the affine update.

    With e = theta - minimizer the step is e' = (1 - 2 g x^2) e - 2 g x (x m - h).
    """
    xs, probs, hs = (np.asarray(a, dtype=float) for a in (xs, probs, hs))
    m2 = float(probs @ xs**2)
    minimizer = float(probs @ (xs * hs)) / m2
    mom = np.array([(theta0 - minimizer) ** j for j in range(max_power + 1)], dtype=float)
    out = np.empty((n_max + 1, max_power + 1))
    out[0] = mom
    for n in range(1, n_max + 1):
        g = alpha * n ** (-nu)
        a = 1 - 2 * g * xs**2
        b = -2 * g * xs * (xs * minimizer - hs)
        new = np.zeros_like(mom)
        for q in range(max_power + 1):
            for j in range(q + 1):
                new[q] += comb(q, j) * float(probs @ (a**j * b ** (q - j))) * mom[j]
        mom = new
        out[n] = mom
    return minimizer, out


TWO_POINT = dict(xs=[-1.0, 2.0], probs=[0.5, 0.5], hs=[1.0, 4.0])


@pytest.fixture(scope="session")
def two_point_oracle():
    cache = {}

    def get(nu, alpha=0.1, theta0=0.0, n_max=2**13):
        key = (nu, alpha, theta0, n_max)
        if key not in cache:
            cache[key] = exact_error_moments(**TWO_POINT, alpha=alpha, nu=nu, theta0=theta0, n_max=n_max)
        return cache[key]

    return get
