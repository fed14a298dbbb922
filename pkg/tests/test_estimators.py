import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spectral_rates import engine as E
from spectral_rates import spectrum as S
from spectral_rates.estimators import NTKSpectralMeasure, PowerLawRegressor, SpectralOptimizer


def test_power_law_regressor():
    n = np.arange(1, 2001, dtype=float)
    y = 0.5 * 3.0 * n**-1.7
    est = PowerLawRegressor(window=(10, 1000)).fit(n.reshape(-1, 1), y)
    assert est.exponent_ == pytest.approx(1.7, abs=1e-10)
    assert est.prefactor_ == pytest.approx(3.0, rel=1e-9)
    np.testing.assert_allclose(est.predict([[5.0], [50.0]]), 1.5 * np.array([5.0, 50.0]) ** -1.7)
    assert est.score(n.reshape(-1, 1), y) == pytest.approx(1.0)


def test_params_and_clone():
    est = SpectralOptimizer(schedule="hb", alpha=0.5, beta=0.8)
    assert est.get_params()["beta"] == 0.8
    c = clone(est).set_params(n_steps=7)
    assert c.n_steps == 7 and c.alpha == 0.5
    with pytest.raises(NotFittedError):
        c.predict([0.1])


def test_spectral_optimizer_matches_engine():
    m = S.synthetic_diagonal(50, 1.5, 1.0)
    est = SpectralOptimizer(schedule="jacobi-hb", n_steps=30, a=1.0).fit(m.atoms, m.masses)
    ref = E.run(m, E.JacobiHB(1.0), 30)
    assert est.loss_ == ref.loss[-1]
    # replaying the recorded rates reproduces the residual polynomial
    lam = np.array([0.0, 0.2, 0.7])
    probe = E.run(m, E.JacobiHB(1.0), 30, probes=lam).probes[-1]
    np.testing.assert_allclose(est.predict(lam), probe, rtol=1e-10, atol=1e-14)
    assert est.score() == -est.loss_


def test_spectral_optimizer_sorts_atoms():
    est = SpectralOptimizer(schedule="cg", n_steps=3).fit([0.2, 1.0, 0.5], [1.0, 1.0, 1.0])
    assert est.loss_ <= 1e-20


def test_ntk_measure_transform():
    X, y = S.gaussian_mix_dataset(5, 2, 20, 2.0, seed=3)
    est = NTKSpectralMeasure().fit(X, y)
    assert est.measure_.lambda_max == pytest.approx(1.0)
    K = est.transform(X)
    assert K.shape == (40, 40)
    assert np.linalg.eigvalsh(0.5 * (K + K.T)).max() == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(ValueError):
        est.transform(X[:, :3])


def test_input_validation():
    with pytest.raises(ValueError):
        PowerLawRegressor().fit([[1.0, 2.0]], [1.0])
    with pytest.raises(ValueError):
        SpectralOptimizer().fit([1.0, 0.5], [1.0])
    with pytest.raises(ValueError):
        NTKSpectralMeasure().fit([[np.nan, 1.0]], [1.0])
