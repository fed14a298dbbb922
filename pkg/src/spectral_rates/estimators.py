"""scikit-learn style wrappers around the fitting, kernel and optimization pieces."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import analysis, engine, spectrum
from .errors import ParameterError

__all__ = ["PowerLawRegressor", "NTKSpectralMeasure", "SpectralOptimizer"]


def _as_steps(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature column of steps, got {X.shape[1]}")
        X = X[:, 0]
    return X


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``y = 1/2 C x^-xi`` in log-log coordinates.

    ``window`` restricts the fit to ``n_lo <= x <= n_hi``; ``max_points``
    caps the geometric subsample.
    """

    def __init__(self, window=None, max_points=200):
        self.window = window
        self.max_points = max_points

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, dtype=float, y_numeric=True)
        x = _as_steps(X)
        order = np.argsort(x)
        x, y = x[order], y[order]
        sel = x > 0
        if self.window is not None:
            lo, hi = self.window
            sel &= (x >= lo) & (x <= hi)
        x, y = x[sel], y[sel]
        if x.size > self.max_points:
            idx = np.unique(np.clip(np.searchsorted(x, np.geomspace(x[0], x[-1], self.max_points)),
                                    0, x.size - 1))
            x, y = x[idx], y[idx]
        if x.size < 2:
            raise ValueError("need at least two positive points inside the window")
        slope, intercept, r2 = analysis.fit_loglog(x, y)
        self.exponent_ = -slope
        self.prefactor_ = 2 * np.exp(intercept)
        self.r2_ = r2
        self.n_points_ = int(x.size)
        return self

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        x = _as_steps(X)
        return 0.5 * self.prefactor_ * x ** (-self.exponent_)


class NTKSpectralMeasure(TransformerMixin, BaseEstimator):
    """Shallow-ReLU NTK on a training set and the spectral measure of its targets.

    ``fit(X, y)`` stores the normalization statistics, the Gram matrix
    spectrum as ``measure_`` (rescaled to ``lambda_max = 1``) and the fitted
    exponents as ``exponents_``. ``transform(X)`` returns the kernel between
    new samples and the training samples, normalized with the training
    statistics and the same spectral rescaling.
    """

    def __init__(self, normalize=True, exponent_window=None):
        self.normalize = normalize
        self.exponent_window = exponent_window

    def _prep(self, X):
        X = np.asarray(X, dtype=float)
        if self.normalize:
            X = (X - self.mean_) / self.scale_
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if self.normalize:
            self.mean_ = X.mean(axis=0)
            centered = X - self.mean_
            self.scale_ = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
            if self.scale_ == 0:
                raise ValueError("training data has zero variance")
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = 1.0
        self.X_train_ = self._prep(X)
        gram = spectrum.ntk_gram(self.X_train_)
        self.measure_ = spectrum.spectral_measure_from_gram(gram, y)
        self.lambda_scale_ = float(self.measure_.info.get("lambda_scale", 1.0))
        try:
            self.exponents_ = analysis.fit_spectrum_exponents(self.measure_, self.exponent_window)
        except (ValueError, ArithmeticError):
            self.exponents_ = None
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "measure_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return spectrum.ntk_gram(self._prep(X), self.X_train_) / self.lambda_scale_


class SpectralOptimizer(BaseEstimator):
    """Run a first-order method on the spectral problem given by ``(atoms, masses)``.

    ``fit(atoms, masses)`` runs ``n_steps`` of ``schedule`` and stores the
    trajectory; ``predict(lam)`` evaluates the final residual polynomial
    ``p_n(lam)`` by replaying the recorded rates; ``score`` returns the
    negative final loss.
    """

    def __init__(self, schedule="cg", n_steps=100, alpha=1.0, beta=0.0, a=1.0, b=0.0,
                 depth=None, orthogonalize="target", history_cap=5000):
        self.schedule = schedule
        self.n_steps = n_steps
        self.alpha = alpha
        self.beta = beta
        self.a = a
        self.b = b
        self.depth = depth
        self.orthogonalize = orthogonalize
        self.history_cap = history_cap

    def _schedule(self):
        return engine.make_schedule(self.schedule, alpha=self.alpha, beta=self.beta, a=self.a,
                                    b=self.b, depth=self.depth, orthogonalize=self.orthogonalize,
                                    history_cap=self.history_cap)

    def fit(self, X, y):
        atoms = check_array(X, ensure_2d=False, dtype=float).reshape(-1)
        masses = check_array(y, ensure_2d=False, dtype=float).reshape(-1)
        if atoms.size != masses.size:
            raise ValueError("atoms and masses differ in length")
        order = np.argsort(-atoms, kind="stable")
        measure = spectrum.DiscreteMeasure(atoms[order], masses[order])
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ParameterError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        self.trajectory_ = engine.run(measure, self._schedule(), int(self.n_steps))
        self.loss_ = float(self.trajectory_.loss[-1])
        return self

    def predict(self, X):
        check_is_fitted(self, "trajectory_")
        lam = check_array(X, ensure_2d=False, dtype=float).reshape(-1)
        tr = self.trajectory_
        p = np.ones_like(lam)
        p_prev = None
        for i in range(len(tr) - 1):
            a = tr.alpha[i] if np.isfinite(tr.alpha[i]) else 0.0
            b = tr.beta[i] if (i > 0 and np.isfinite(tr.beta[i])) else 0.0
            new = p - a * lam * p
            if p_prev is not None and b != 0.0:
                new = new + b * (p - p_prev)
            p_prev, p = p, new
        return p

    def score(self, X=None, y=None):
        check_is_fitted(self, "trajectory_")
        return -self.loss_
