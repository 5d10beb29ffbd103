import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdrl.gronwall import CertificateUnavailable, RecursionSpec, bound_constant, recursion_envelope, verify_bound
from sgdrl.schedules import polynomial, tabulated

HORIZON = 10**6


@pytest.fixture(scope="module")
def harmonic():
    """gamma_n = 1/(n+1) as a table."""
    return tabulated(1.0 / np.arange(1, HORIZON + 3), "harmonic")


def test_first_envelope_step(harmonic):
    env = recursion_envelope(RecursionSpec(0, 1, 1.0, 2.0, harmonic, (0.5,)), 3)
    assert env[1] == (1 - 2 * 0.5) * 0.5 + 1 * 0.5**2 == 0.25


def test_zero_forcing_stays_zero(harmonic):
    env = recursion_envelope(RecursionSpec(0, 1, 0.0, 2.0, harmonic, (0.0,)), 1000)
    assert not env.any()


def test_weak_contraction_envelope_is_bounded(harmonic):
    env = recursion_envelope(RecursionSpec(0, 1, 1.0, 1e-4, harmonic, (0.0,)), 10**5)
    # the forcing alone sums to at most pi^2/6 - 1
    assert np.all(env[1:] > 0) and env.max() < np.pi**2 / 6 - 1 < 1


def test_harmonic_bound_constant(harmonic):
    spec = RecursionSpec(0, 1, 1.0, 2.0, harmonic, (0.5,))
    cert = bound_constant(spec, HORIZON)
    # D(l) = -(l+1)/l + 2(l+1)/l = (l+1)/l, decreasing towards 1
    l = np.arange(1, HORIZON + 1)
    d = (l + 1) / l
    assert np.all(np.diff(d) < 0)
    # the table form cancels two O(1) terms, costing about 1e-10 relative
    assert cert.C_inf == pytest.approx(d[-1], rel=1e-9)
    assert cert.argmin > 0.99 * HORIZON  # the flat end of the tail, up to rounding
    assert cert.lam == pytest.approx(max(0.5 / 1.0, 1.0 / d[-1]), rel=1e-9)
    assert cert.lam == pytest.approx(1.0, rel=1e-5)
    env = recursion_envelope(spec, 10**5)
    assert verify_bound(cert, env, harmonic)


def test_prefix_dominates_lambda(harmonic):
    cert = bound_constant(RecursionSpec(0, 1, 1.0, 2.0, harmonic, (3.0,)), HORIZON)
    assert cert.lam == 3.0


def test_exact_cancellation_is_unavailable(harmonic):
    # c = 1 gives D(l) = -(l+1)/l + (l+1)/l = 0
    with pytest.raises(CertificateUnavailable):
        bound_constant(RecursionSpec(0, 1, 1.0, 1.0, harmonic, (0.5,)), HORIZON)


def test_step_beyond_inverse_c_is_unavailable():
    with pytest.raises(CertificateUnavailable):
        bound_constant(RecursionSpec(0, 1, 1.0, 1.0, polynomial(5.0, 0.5), (0.1,)), 1000)


def test_trivial_verification(harmonic):
    spec = RecursionSpec(2, 1, 0.0, 2.0, harmonic, (0.0, 0.0, 0.0))
    assert verify_bound(bound_constant(spec, 1000), recursion_envelope(spec, 1000), harmonic)


def test_halved_lambda_is_caught(harmonic):
    spec = RecursionSpec(0, 1, 1.0, 2.0, harmonic, (0.5,))
    cert = bound_constant(spec, HORIZON)
    env = recursion_envelope(spec, 10**5)
    assert not verify_bound(dataclasses.replace(cert, lam=cert.lam / 2), env, harmonic)


def test_spec_validation(harmonic):
    with pytest.raises(ValueError):
        RecursionSpec(1, 1, 1.0, 1.0, harmonic, (0.5,))
    with pytest.raises(ValueError):
        RecursionSpec(0, 1, 1.0, 1.0, harmonic, (-0.5,))


def random_spec(rng):
    c = 10 ** rng.uniform(-1, 1)
    nu = rng.uniform(0.05, 0.95)
    alpha = 10 ** rng.uniform(-2, 0.5)
    N = int(rng.integers(0, 40))
    prefix = tuple(rng.uniform(0, 2, N + 1))
    return RecursionSpec(N, float(rng.integers(1, 4)), 10 ** rng.uniform(-2, 2), c, polynomial(alpha, nu), prefix)


def test_randomized_soundness():
    rng = np.random.default_rng(2024)
    checked = attempts = 0
    while checked < 50:
        attempts += 1
        assert attempts < 2000
        spec = random_spec(rng)
        try:
            cert = bound_constant(spec, HORIZON)
        except CertificateUnavailable:
            continue
        assert verify_bound(cert, recursion_envelope(spec, 10**5), spec.schedule)
        checked += 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bound_dominates_envelope(seed):
    spec = random_spec(np.random.default_rng(seed))
    try:
        cert = bound_constant(spec, 10**5)
    except CertificateUnavailable:
        return
    env = recursion_envelope(spec, 2 * 10**4)
    assert verify_bound(cert, env, spec.schedule)
    assert cert.lam >= max(np.asarray(spec.e_prefix) / spec.schedule.gammas(spec.N) ** spec.k)
