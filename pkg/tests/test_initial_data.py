import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from chaoslab.errors import ConfigurationError, SamplerError
from chaoslab.initial_data import (InitialDensitySpec, PhaseState, density_eval,
                                   grad_log_density, sample_initial)

KIND1 = InitialDensitySpec(kind="gauss_x_truncgauss_v", d=3, s_x=1, s_v=1, q_v=4)
KIND2 = InitialDensitySpec(kind="polynomial_decay", d=3, alpha=4, beta=4)


def _radial_integral(spec, part):
    # integral over R^d of one separable factor via radial quadrature
    d = spec.d
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    def f(r):
        e = np.zeros(d)
        e[0] = r
        if part == "x":
            return density_eval(spec, e, np.zeros(d)) / density_eval(spec, np.zeros(d), np.zeros(d))
        return density_eval(spec, np.zeros(d), e) / density_eval(spec, np.zeros(d), np.zeros(d))

    val, _ = integrate.quad(lambda r: area * r ** (d - 1) * f(r), 0, np.inf, limit=200,
                            epsabs=1e-13, epsrel=1e-11)
    return val


@pytest.mark.parametrize("spec", [KIND1, KIND2,
                                  InitialDensitySpec(kind="gauss_x_truncgauss_v", d=1, q_v=2.5),
                                  InitialDensitySpec(kind="polynomial_decay", d=1, alpha=3, beta=3)])
def test_density_normalized(spec):
    peak = float(density_eval(spec, np.zeros(spec.d), np.zeros(spec.d)))
    total = peak * _radial_integral(spec, "x") * _radial_integral(spec, "v")
    assert total == pytest.approx(1.0, abs=1e-6)


def test_kind1_truncation_exact():
    v = np.array([4.0, 0, 0])
    assert density_eval(KIND1, np.zeros(3), v) == 0.0
    assert density_eval(KIND1, np.zeros(3), 1.01 * v) == 0.0
    assert density_eval(KIND1, np.zeros(3), 0.99 * v) > 0.0


def test_kind2_peak_and_separability():
    p0 = float(density_eval(KIND2, np.zeros(3), np.zeros(3)))
    assert p0 == pytest.approx(KIND2.position_norm * KIND2.velocity_norm)
    x = np.array([0.7, -1.2, 0.4])
    ratio = float(density_eval(KIND2, x, np.zeros(3))) / p0
    assert ratio == pytest.approx((1 + x @ x) ** -4, rel=1e-13)


def test_kind1_sample_mean_and_support():
    s = sample_initial(KIND1, 1_000_000, seed=11)
    se = s.X.std(axis=0) / math.sqrt(s.n)
    assert np.all(np.abs(s.X.mean(axis=0)) < 4 * se)
    assert np.linalg.norm(s.V, axis=1).max() < 4.0


def test_kind2_second_moment_matches_quadrature():
    s = sample_initial(KIND2, 1_000_000, seed=5)
    # E|x|^2 under (1+r^2)^-4 in d=3: radial quadrature
    num, _ = integrate.quad(lambda r: r**4 * (1 + r * r) ** -4, 0, np.inf, epsrel=1e-12)
    den, _ = integrate.quad(lambda r: r**2 * (1 + r * r) ** -4, 0, np.inf, epsrel=1e-12)
    assert np.mean(np.sum(s.X**2, axis=1)) == pytest.approx(num / den, rel=0.01)


def test_sampling_is_prefix_stable():
    a = sample_initial(KIND1, 1000, seed=3)
    b = sample_initial(KIND1, 300, seed=3)
    np.testing.assert_array_equal(a.X[:300], b.X)
    np.testing.assert_array_equal(a.V[:300], b.V)


def test_sampler_failure_reports():
    bad = InitialDensitySpec(kind="gauss_x_truncgauss_v", d=3, s_v=50.0, q_v=0.05)
    with pytest.raises(SamplerError):
        sample_initial(bad, 2000, seed=0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        InitialDensitySpec(kind="other")
    with pytest.raises(ConfigurationError):
        InitialDensitySpec(kind="polynomial_decay", d=3, alpha=4, beta=2)
    with pytest.raises(ValueError):
        sample_initial(KIND1, 0, seed=0)


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_log_gradient_bounded(z):
    x, v = np.array(z[:3]), np.array(z[3:])
    gx, gv = grad_log_density(KIND2, x, v)
    assert np.linalg.norm(gx) <= 2 * 4 * np.linalg.norm(x) / (1 + x @ x) + 1e-12
    assert np.linalg.norm(gx) + np.linalg.norm(gv) <= KIND2.alpha + KIND2.beta + 1e-12


def test_log_gradient_matches_finite_difference():
    x, v = np.array([0.3, -0.4, 1.1]), np.array([-0.2, 0.5, 0.9])
    gx, gv = grad_log_density(KIND2, x, v)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (np.log(density_eval(KIND2, x + e, v)) - np.log(density_eval(KIND2, x - e, v))) / (2 * h)
        assert gx[i] == pytest.approx(fd, rel=1e-6)


def test_phase_state_shapes():
    s = PhaseState(0.0, np.zeros((4, 2)), np.ones((4, 2)))
    assert s.n == 4 and s.d == 2 and s.phase().shape == (4, 4)
    with pytest.raises(ValueError):
        PhaseState(0.0, np.zeros((4, 2)), np.ones((3, 2)))
