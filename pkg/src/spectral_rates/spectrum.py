"""Spectral measures, quadratic problems and their generators.

A quadratic problem ``L(w) = 1/2 ||J w - f*||^2`` is summarized by the spectral
measure ``rho = sum_k c_k^2 delta_{lam_k}`` of ``JJ^T`` and ``f*``: atoms are the
eigenvalues, masses the squared coefficients of ``f*`` in the eigenbasis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
import scipy.linalg

from .errors import DataError, ParameterError

__all__ = [
    "DiscreteMeasure",
    "PowerLawSpec",
    "OperatorProblem",
    "synthetic_diagonal",
    "discrete_powerlaw",
    "sd_lowerbound_measure",
    "sd_lowerbound_k0",
    "cg_lowerbound_operator",
    "equal_mass_discretization",
    "ntk_gram",
    "normalize_dataset",
    "spectral_measure_from_gram",
    "measure_cdf",
    "rescale",
    "gaussian_mix_dataset",
    "cdf_ratio_sup",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``lam_k`` (positive, non-increasing) with nonnegative masses ``c_k^2``.

    ``info`` records how the measure was built: exponents ``zeta``, ``nu``,
    constants ``Q``, ``Lambda`` and any rescaling factors. Missing keys mean
    "not applicable".
    """

    atoms: np.ndarray
    masses: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        atoms = _frozen(self.atoms).reshape(-1)
        masses = _frozen(self.masses).reshape(-1)
        if atoms.shape != masses.shape:
            raise DataError(f"atoms and masses differ in length: {atoms.size} vs {masses.size}")
        if atoms.size == 0:
            raise DataError("a measure needs at least one atom")
        if not np.all(np.isfinite(atoms)) or np.any(atoms <= 0):
            raise DataError("atoms must be finite and strictly positive")
        if np.any(np.diff(atoms) > 0):
            raise DataError("atoms must be sorted in non-increasing order")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise DataError("masses must be finite and nonnegative")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))

    def __len__(self):
        return self.atoms.size

    @property
    def total_mass(self):
        return float(np.sum(self.masses))

    @property
    def lambda_max(self):
        return float(self.atoms[0])

    @property
    def lambda_min(self):
        return float(self.atoms[-1])

    @property
    def coefficients(self):
        """Target coefficients ``c_k`` (nonnegative square roots of the masses)."""
        return np.sqrt(self.masses)

    def with_info(self, **updates):
        info = dict(self.info)
        info.update(updates)
        return DiscreteMeasure(self.atoms, self.masses, info)

    def describe(self):
        """Flat descriptor used in trajectory and report headers."""
        out = {"atoms": int(self.atoms.size), "lambda_min": self.lambda_min,
               "lambda_max": self.lambda_max, "total_mass": self.total_mass}
        for key in ("kind", "zeta", "nu", "Q", "Lambda"):
            if key in self.info:
                out[key] = self.info[key]
        return out


@dataclass(frozen=True)
class PowerLawSpec:
    """Exact power law ``rho((0, lam]) = lam**zeta`` on ``[0, 1]``."""

    zeta: float

    def __post_init__(self):
        if not self.zeta > 0:
            raise ParameterError(f"zeta must be positive, got {self.zeta}")

    def cdf(self, lam):
        lam = np.clip(np.asarray(lam, dtype=float), 0.0, 1.0)
        return lam**self.zeta


@dataclass(frozen=True, eq=False)
class OperatorProblem:
    """Explicit quadratic problem ``1/2 ||J w - f*||^2`` with ``w0 = 0``."""

    operator: np.ndarray
    target: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        J = _frozen(self.operator)
        f = _frozen(self.target).reshape(-1)
        if J.ndim != 2:
            raise DataError("operator must be a 2-D matrix")
        if J.shape[0] != f.size:
            raise DataError(f"target length {f.size} does not match operator rows {J.shape[0]}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(f))):
            raise DataError("operator and target must be finite")
        object.__setattr__(self, "operator", J)
        object.__setattr__(self, "target", f)
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))

    @property
    def shape(self):
        return self.operator.shape

    @property
    def initial_loss(self):
        return 0.5 * float(np.sum(self.target**2))

    @classmethod
    def from_measure(cls, measure: DiscreteMeasure):
        """Diagonal problem ``J = diag(sqrt(lam))``, ``f* = c`` with the given spectrum."""
        J = np.diag(np.sqrt(measure.atoms))
        return cls(J, measure.coefficients, dict(measure.info, kind="diagonal-from-measure"))

    def to_measure(self) -> DiscreteMeasure:
        return spectral_measure_from_gram(
            self.operator @ self.operator.T, self.target, normalize=False
        ).with_info(**{k: v for k, v in self.info.items() if k in ("zeta", "nu")})

    def describe(self):
        out = {"rows": self.shape[0], "cols": self.shape[1],
               "initial_loss": self.initial_loss}
        for key in ("kind", "zeta", "nu"):
            if key in self.info:
                out[key] = self.info[key]
        return out


def measure_cdf(m: DiscreteMeasure, lam):
    """``rho((0, lam])``: total mass of atoms ``<= lam`` (right-continuous)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ParameterError("measure_cdf requires lam >= 0")
    ascending = m.atoms[::-1]
    # suffix sums from the small end; pairwise sum per prefix is too costly, cumsum on
    # the ascending masses accumulates small values first
    cum = np.concatenate([[0.0], np.cumsum(m.masses[::-1])])
    idx = np.searchsorted(ascending, lam, side="right")
    out = cum[idx]
    return out if out.ndim else float(out)


def cdf_ratio_sup(m: DiscreteMeasure, zeta):
    """Smallest ``Q`` with ``rho((0, lam]) <= Q lam**zeta`` for all ``lam > 0``."""
    cdf_at_atoms = np.cumsum(m.masses[::-1])[::-1]
    return float(np.max(cdf_at_atoms / m.atoms**zeta))


def _power_law_info(kind, zeta, nu, m_atoms, m_masses, **extra):
    m = DiscreteMeasure(m_atoms, m_masses)
    info = {"kind": kind, "zeta": float(zeta), "nu": float(nu), "Lambda": 1.0,
            "Q": cdf_ratio_sup(m, zeta)}
    info.update(extra)
    return DiscreteMeasure(m.atoms, m.masses, info)


def synthetic_diagonal(M, nu, zeta):
    """Diagonal problem with ``lam_k = k^-nu`` and ``c_k^2 = zeta nu k^-(zeta nu + 1)``.

    The mass law makes ``rho((0, lam])`` follow ``lam**zeta`` at small ``lam``.
    """
    M = int(M)
    if M < 1 or not nu > 0 or not zeta > 0:
        raise ParameterError(f"need M >= 1, nu > 0, zeta > 0; got M={M}, nu={nu}, zeta={zeta}")
    k = np.arange(1, M + 1, dtype=float)
    atoms = k**-nu
    masses = zeta * nu * k ** (-(zeta * nu + 1))
    return _power_law_info("synthetic-diagonal", zeta, nu, atoms, masses, M=M)


def discrete_powerlaw(zeta, nu, K):
    """``sum_k (k^-zeta nu - (k+1)^-zeta nu) delta_{k^-nu}`` truncated at ``k = K``."""
    K = int(K)
    if K < 1 or not nu > 0 or not zeta > 0:
        raise ParameterError(f"need K >= 1, nu > 0, zeta > 0; got K={K}, nu={nu}, zeta={zeta}")
    k = np.arange(1, K + 1, dtype=float)
    atoms = k**-nu
    # -expm1 keeps the difference accurate when (k / (k+1))^(zeta nu) is close to 1
    masses = k ** (-zeta * nu) * -np.expm1(-zeta * nu * np.log1p(1.0 / k))
    return _power_law_info("discrete-powerlaw", zeta, nu, atoms, masses, K=K)


def sd_lowerbound_k0(nu):
    return int(math.ceil(10 ** (2.0 / nu)))


def _tail_moment(zeta, nu, start, rtol=1e-10):
    """``sum_{k >= start} (k^-zn - (k+1)^-zn) k^-nu`` to relative accuracy ``rtol``.

    Terms decay like ``zn k^-(zn + nu + 1)``; sum explicitly until the
    integral tail bound is below ``rtol`` of the partial sum.
    """
    zn = zeta * nu
    p = zn + nu + 1
    total = 0.0
    lo = start
    chunk = 1 << 16
    while True:
        k = np.arange(lo, lo + chunk, dtype=float)
        terms = k ** (-zn) * -np.expm1(-zn * np.log1p(1.0 / k)) * k ** (-nu)
        total += float(np.sum(terms[::-1]))
        hi = lo + chunk
        # sum_{k >= hi} zn k^-p <= zn * (hi - 1)^(1 - p) / (p - 1)
        tail = zn * (hi - 1) ** (1 - p) / (p - 1)
        if tail <= rtol * total:
            return total + 0.5 * tail
        lo = hi
        chunk *= 2


def sd_lowerbound_measure(zeta, nu, K):
    """Steepest-descent lower-bound measure: power-law tail below ``0.01`` plus an atom at 1.

    Tail atoms ``k^-nu`` for ``k0 < k <= K`` with ``k0 = ceil(10^(2/nu))``; the
    atom at 1 carries ``c = sum_{k > k0} (k^-zn - (k+1)^-zn) k^-nu`` so that
    ``lam rho`` puts equal weight on ``(0, 0.01]`` and on ``{1}``.
    """
    K = int(K)
    if not nu > 0 or not zeta > 0:
        raise ParameterError(f"need nu > 0, zeta > 0; got nu={nu}, zeta={zeta}")
    k0 = sd_lowerbound_k0(nu)
    if K <= k0:
        raise ParameterError(f"K must exceed k0 = {k0} for nu = {nu}, got K={K}")
    k = np.arange(k0 + 1, K + 1, dtype=float)
    tail_atoms = k**-nu
    tail_masses = k ** (-zeta * nu) * -np.expm1(-zeta * nu * np.log1p(1.0 / k))
    c = _tail_moment(zeta, nu, k0 + 1)
    atoms = np.concatenate([[1.0], tail_atoms])
    masses = np.concatenate([[c], tail_masses])
    m = DiscreteMeasure(atoms, masses)
    info = {"kind": "sd-lowerbound", "zeta": float(zeta), "nu": float(nu), "Lambda": 1.0,
            "Q": cdf_ratio_sup(m, zeta), "k0": k0, "K": K, "epsilon": 1e-2, "c": c}
    return DiscreteMeasure(atoms, masses, info)


def cg_lowerbound_operator(zeta, nu, N):
    """Truncated bidiagonal operator on which CG loses exactly as ``(2 sum m^((2+nu)zeta-1))^-1``.

    ``(Jw)_1 = w_1`` and ``(Jw)_n = n^(-nu/2) w_n - (n/(n-1))^g (n-1)^(-nu/2) w_{n-1}``
    with ``g = (1 - (2 + nu) zeta) / 2``; the target is ``e_1``.
    """
    N = int(N)
    if N < 2:
        raise ParameterError(f"operator dimension must be at least 2, got N={N}")
    if not nu > 0 or not zeta > 0:
        raise ParameterError(f"need nu > 0, zeta > 0; got nu={nu}, zeta={zeta}")
    if zeta >= 1:
        warnings.warn(
            f"zeta={zeta} >= 1: the spectral-measure bound is only guaranteed for 0 < zeta < 1",
            stacklevel=2,
        )
    g = (1 - (2 + nu) * zeta) / 2
    n = np.arange(1, N + 1, dtype=float)
    diag = n ** (-nu / 2)
    m = n[1:]
    sub = -((m / (m - 1)) ** g) * (m - 1) ** (-nu / 2)
    J = np.diag(diag) + np.diag(sub, -1)
    target = np.zeros(N)
    target[0] = 1.0
    return OperatorProblem(J, target, {"kind": "cg-lowerbound-chain", "zeta": float(zeta),
                                       "nu": float(nu), "N": N, "g": g})


def equal_mass_discretization(spec, M):
    """``M`` atoms of mass ``1/M`` at the midpoint quantiles of ``lam**zeta``.

    Atom ``k`` (decreasing) sits at ``((M - k + 1/2) / M)**(1/zeta)``, so the
    CDF stays within ``1/(2M)`` of the exact law.
    """
    if not isinstance(spec, PowerLawSpec):
        spec = PowerLawSpec(float(spec))
    M = int(M)
    if M < 1:
        raise ParameterError(f"M must be >= 1, got {M}")
    k = np.arange(1, M + 1, dtype=float)
    atoms = ((M - k + 0.5) / M) ** (1.0 / spec.zeta)
    masses = np.full(M, 1.0 / M)
    m = DiscreteMeasure(atoms, masses)
    return DiscreteMeasure(atoms, masses, {"kind": "equal-mass", "zeta": spec.zeta,
                                           "Q": cdf_ratio_sup(m, spec.zeta), "M": M})


def normalize_dataset(X):
    """Center by the dataset mean and divide by the root-mean-square distance to it."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("dataset must be a non-empty 2-D array")
    centered = X - X.mean(axis=0)
    r = math.sqrt(float(np.mean(np.sum(centered**2, axis=1))))
    if r == 0:
        raise DataError("dataset has zero variance")
    return centered / r


def ntk_gram(data, other=None):
    """NTK Gram matrix of an infinitely wide shallow ReLU network.

    ``K(x, y) = |x||y| (sin phi + 2 cos phi (pi - phi)) / (2 pi)`` with
    ``cos phi = <x, y> / (|x||y|)``. With ``other`` given, returns the
    cross-kernel between ``data`` rows and ``other`` rows.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    Y = X if other is None else np.atleast_2d(np.asarray(other, dtype=float))
    nx = np.linalg.norm(X, axis=1)
    ny = nx if other is None else np.linalg.norm(Y, axis=1)
    for norms in (nx, ny):
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise DataError(f"zero-norm vector at index {int(bad[0])}")
    outer = np.outer(nx, ny)
    cos = np.clip((X @ Y.T) / outer, -1.0, 1.0)
    phi = np.arccos(cos)
    K = outer * (np.sin(phi) + 2 * cos * (np.pi - phi)) / (2 * np.pi)
    if other is None:
        K = 0.5 * (K + K.T)
    return K


def spectral_measure_from_gram(gram, targets, normalize=True, rtol_positive=None):
    """Spectral measure of a symmetric PSD Gram matrix and a target vector.

    Atoms are the positive eigenvalues in decreasing order, masses the squared
    projections of ``targets`` on the eigenvectors. With ``normalize`` the
    operator is rescaled so the largest atom is 1; the factor is kept in
    ``info['lambda_scale']``. Mass on numerically zero eigenvalues is not part
    of the measure and is reported as ``info['null_mass']``.
    """
    G = np.asarray(gram, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DataError("gram must be a square matrix")
    if y.size != G.shape[0]:
        raise DataError(f"targets length {y.size} does not match gram size {G.shape[0]}")
    scale = np.max(np.abs(G))
    if scale == 0:
        raise DataError("gram matrix is identically zero")
    asym = np.max(np.abs(G - G.T))
    if asym > 1e-8 * scale:
        raise DataError(f"gram matrix is not symmetric (relative asymmetry {asym / scale:.3e})")
    evals, evecs = scipy.linalg.eigh(0.5 * (G + G.T))
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    proj = evecs[:, order].T @ y
    masses = proj**2
    if rtol_positive is None:
        rtol_positive = G.shape[0] * np.finfo(float).eps
    keep = evals > rtol_positive * evals[0]
    if not np.any(keep):
        raise DataError("gram matrix has no positive eigenvalues")
    atoms = evals[keep]
    info = {"kind": "gram", "null_mass": float(np.sum(masses[~keep])),
            "dropped_eigenvalues": int(np.sum(~keep))}
    m = DiscreteMeasure(atoms, masses[keep], info)
    if normalize:
        m = rescale(m, operator_scale=1.0 / math.sqrt(m.lambda_max))
    return m


def rescale(m: DiscreteMeasure, operator_scale=1.0, target_scale=1.0):
    """Apply ``J -> c J`` and ``f* -> c' f*`` to a measure.

    Atoms scale by ``c^2`` and masses by ``c'^2``; recorded constants follow:
    ``Q -> c^(-2 zeta) c'^2 Q``, ``Lambda -> c^2 Lambda``. Accumulated factors
    are tracked in ``info['lambda_scale']`` (multiplier that restores the
    original atoms) and ``info['mass_scale']``.
    """
    c2 = float(operator_scale) ** 2
    t2 = float(target_scale) ** 2
    if not (c2 > 0 and t2 > 0):
        raise ParameterError("scale factors must be nonzero")
    info = dict(m.info)
    info["lambda_scale"] = info.get("lambda_scale", 1.0) / c2
    info["mass_scale"] = info.get("mass_scale", 1.0) / t2
    if "Q" in info and "zeta" in info:
        info["Q"] = info["Q"] * c2 ** (-info["zeta"]) * t2
    if "Lambda" in info:
        info["Lambda"] = info["Lambda"] * c2
    if "null_mass" in info:
        info["null_mass"] = info["null_mass"] * t2
    return DiscreteMeasure(m.atoms * c2, m.masses * t2, info)


def gaussian_mix_dataset(d, n_clusters, per_cluster, separation, seed):
    """Mixture of unit-variance Gaussian clusters with binary targets.

    Centers are ``separation * N(0, I_d)``; clusters with index below
    ``n_clusters // 2`` are labelled 0, the rest 1 (cluster 0 is labelled 0
    even for a single cluster). Rows are grouped cluster by cluster.
    """
    d, n_clusters, per_cluster = int(d), int(n_clusters), int(per_cluster)
    if min(d, n_clusters, per_cluster) < 1:
        raise ParameterError("dimension and counts must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((n_clusters, d))
    X = np.repeat(centers, per_cluster, axis=0) + rng.standard_normal((n_clusters * per_cluster, d))
    n_zero = max(1, n_clusters // 2) if n_clusters > 1 else 1
    labels = (np.arange(n_clusters) >= n_zero).astype(float)
    y = np.repeat(labels, per_cluster)
    return X, y
