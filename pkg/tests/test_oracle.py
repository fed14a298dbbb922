import math

import numpy as np
import pytest
from scipy import integrate, optimize

from spectral_rates import oracle as O
from spectral_rates import spectrum as S
from spectral_rates import engine as E
from spectral_rates.errors import HypothesisError, ParameterError


def test_hb_asymptotic_loss():
    n = np.array([10.0, 1000.0])
    np.testing.assert_allclose(O.hb_asymptotic_loss(n, 1.0, 0.0, 1.0), 1 / (4 * n))
    ratio = O.hb_asymptotic_loss(50, 1.0, 0.9, 1.0) / O.hb_asymptotic_loss(50, 1.0, 0.0, 1.0)
    assert ratio == pytest.approx(0.1)


def test_cg_exact_powerlaw_loss_examples():
    assert O.cg_exact_powerlaw_loss(0, 0.7) == pytest.approx(0.5)
    assert O.cg_exact_powerlaw_loss(1, 1.0) == pytest.approx(1 / 8)
    # one-parameter brute force: min_a 1/2 int_0^1 (1 - lam/a)^2 dlam
    res = optimize.minimize_scalar(lambda a: 0.5 * integrate.quad(lambda x: (1 - x / a) ** 2, 0, 1)[0],
                                   bounds=(0.1, 5), method="bounded", options={"xatol": 1e-10})
    assert O.cg_exact_powerlaw_loss(1, 1.0) == pytest.approx(res.fun, rel=1e-8)
    z = 0.25
    asym = math.gamma(z + 1) ** 2 / 2 * 100.0 ** (-2 * z)
    assert O.cg_exact_powerlaw_loss(100, z) == pytest.approx(asym, rel=0.01)


def test_cg_exact_powerlaw_loss_large_n_finite():
    v = O.cg_exact_powerlaw_loss(10**6, 2.0)
    assert np.isfinite(v) and v > 0


def test_cg_chain_loss():
    assert O.cg_chain_loss(0, 0.5, 1.0) == pytest.approx(0.5)
    assert O.cg_chain_loss(1, 0.5, 2.0) == pytest.approx(1 / 6)
    n = np.arange(0, 20)
    direct = [1 / (2 * sum(m ** ((2 + 1.0) * 0.5 - 1) for m in range(1, k + 2))) for k in n]
    np.testing.assert_allclose(O.cg_chain_loss(n, 0.5, 1.0), direct, rtol=1e-13)
    ratio = O.cg_chain_loss(1000, 0.5, 1.0) / O.cg_chain_asymptotic(1000, 0.5, 1.0)
    assert abs(ratio - 1) < 0.02


def test_jacobi_bound_constant():
    assert O.jacobi_bound_constant(1.0, 1.0) == pytest.approx(40.5 * (1 + 32 / (729 * math.pi)), rel=1e-12)
    assert O.jacobi_bound_constant(1.0, 0.5 + 1e-6) > 1e4
    with pytest.raises(HypothesisError):
        O.jacobi_bound_constant(1.0, 0.5)
    with pytest.raises(HypothesisError):
        O.jacobi_bound_constant(1.0, 0.25)


def test_sd_upper_bound():
    assert O.sd_upper_bound(0, -0.5, 1.0, 0.5) == pytest.approx(0.5)
    a, b = O.sd_upper_bound(1e3, -0.5, 1.0, 0.5), O.sd_upper_bound(1e5, -0.5, 1.0, 0.5)
    assert np.isfinite(a) and math.log(a / b) / math.log(100) == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ParameterError):
        O.sd_upper_bound(10, -1.5, 1.0, 0.5)
    with pytest.raises(ParameterError):
        O.sd_upper_bound(10, 0.1, 1.0, 0.5)


def test_chebyshev_trial_bounds_cg():
    m = S.DiscreteMeasure([1.0], [1.0])
    v = O.chebyshev_trial_loss(2, m, 2.0, zeta=1.0)
    assert np.isfinite(v) and v >= 0
    m = S.synthetic_diagonal(2000, 1.5, 1.0)
    cg = E.run(m, E.StableConjugateGradients(), 60)
    for n in (5, 20, 60):
        assert cg.loss[n] <= O.chebyshev_trial_loss(n, m, 2.0)
    with pytest.raises(ParameterError):
        O.chebyshev_trial_loss(10, m, 0.5)
    with pytest.raises(ParameterError):
        O.chebyshev_trial_loss(2, m, 5.0)


@pytest.mark.parametrize("kind,zeta,nu,expected", [
    ("stable-cg", 1.0, 1.5, 3.5),
    ("sd", 0.25, None, 0.25),
    ("hb-jacobi", 0.25, None, 0.5),
    ("gd-constant", 1.0, 1.5, 1.0),
    ("hb-constant", 0.7, None, 0.7),
    ("gd-scheduled", 1.0, 1.5, 2.0),
])
def test_theoretical_exponent(kind, zeta, nu, expected):
    assert O.theoretical_exponent(kind, zeta, nu).exponent == pytest.approx(expected)


def test_theoretical_exponent_cg_assumptions():
    assert O.theoretical_exponent("cg", 1.0, 1.5, "cdf-only").exponent == pytest.approx(2.0)
    assert O.theoretical_exponent("cg", 1.0, 1.5, "cdf+eigendecay").exponent == pytest.approx(3.5)
    with pytest.raises(ParameterError):
        O.theoretical_exponent("adam", 1.0)


def test_algorithm_for_schedule():
    assert O.algorithm_for_schedule({"schedule": "constant", "beta": 0.0}) == "gd-constant"
    assert O.algorithm_for_schedule({"schedule": "constant", "beta": 0.9}) == "hb-constant"
    assert O.algorithm_for_schedule({"schedule": "jacobi-hb"}) == "hb-jacobi"
