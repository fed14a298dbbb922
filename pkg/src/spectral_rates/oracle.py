"""Closed-form reference losses, bound constants and predicted rate exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import HypothesisError, ParameterError
from .specfun import chebyshev_log_abs_first, log_gamma
from .spectrum import DiscreteMeasure

__all__ = [
    "TheoryPrediction",
    "hb_asymptotic_loss",
    "cg_exact_powerlaw_loss",
    "cg_chain_loss",
    "cg_chain_asymptotic",
    "jacobi_bound_constant",
    "sd_upper_bound",
    "sd_lower_bound_prefactor",
    "chebyshev_trial_loss",
    "theoretical_exponent",
    "ALGORITHMS",
]

ALGORITHMS = ("gd-constant", "gd-scheduled", "sd", "hb-constant", "hb-jacobi", "cg", "stable-cg")


@dataclass(frozen=True)
class TheoryPrediction:
    """Predicted decay ``L_n ~ 1/2 * prefactor * n^-exponent``."""

    exponent: float
    prefactor: float | None = None
    validity: str = "asymptotic"

    def __post_init__(self):
        if not self.exponent > 0:
            raise ParameterError(f"exponent must be positive, got {self.exponent}")
        if self.validity not in ("exact", "asymptotic", "upper-bound"):
            raise ParameterError(f"unknown validity {self.validity!r}")
        if self.prefactor is not None and not self.prefactor > 0:
            raise ParameterError(f"prefactor must be positive, got {self.prefactor}")


def _steps(n, minimum=0):
    arr = np.asarray(n)
    if np.any(arr < minimum) or np.any(np.asarray(arr, dtype=float) != np.floor(arr)):
        raise ParameterError(f"step index must be an integer >= {minimum}, got {n}")
    return arr.astype(float)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def hb_asymptotic_loss(n, alpha, beta, zeta):
    """Leading term ``Gamma(zeta+1)/2 * (2 alpha n / (1 - beta))^-zeta`` of constant-rate HB/GD."""
    n = _steps(n, 1)
    if not 0 <= beta < 1:
        raise ParameterError(f"momentum must satisfy 0 <= beta < 1, got {beta}")
    if not 0 < alpha < 2 * (1 + beta):
        raise ParameterError(f"alpha must lie in (0, 2(1+beta)), got {alpha}")
    if not zeta > 0:
        raise ParameterError(f"zeta must be positive, got {zeta}")
    log_l = log_gamma(zeta + 1) - math.log(2) - zeta * np.log(2 * alpha * n / (1 - beta))
    return _out(np.exp(log_l))


def cg_exact_powerlaw_loss(n, zeta):
    """CG loss on the exact law ``rho((0, lam]) = lam^zeta``: ``Gamma(zeta+1)^2 n!^2 / (2 Gamma(zeta+n+1)^2)``."""
    n = _steps(n, 0)
    if not zeta > 0:
        raise ParameterError(f"zeta must be positive, got {zeta}")
    log_l = 2 * (log_gamma(zeta + 1) + log_gamma(n + 1) - log_gamma(zeta + n + 1)) - math.log(2)
    return _out(np.exp(log_l))


def cg_chain_loss(n, zeta, nu):
    """Exact CG losses ``(2 sum_{m=1}^{n+1} m^((2+nu) zeta - 1))^-1`` on the chain operator."""
    n_arr = _steps(n, 0).astype(np.int64)
    if not (zeta > 0 and nu > 0):
        raise ParameterError(f"need zeta > 0 and nu > 0, got zeta={zeta}, nu={nu}")
    kappa = (2 + nu) * zeta
    top = int(np.max(n_arr)) + 1
    terms = np.arange(1, top + 1, dtype=float) ** (kappa - 1)
    if n_arr.ndim == 0:
        return 1.0 / (2 * float(np.sum(terms)))
    partial = np.cumsum(terms)
    return 1.0 / (2 * partial[n_arr])


def cg_chain_asymptotic(n, zeta, nu):
    """Companion asymptotic ``((2+nu) zeta / 2) n^-((2+nu) zeta)``."""
    n = _steps(n, 1)
    kappa = (2 + nu) * zeta
    return _out(kappa / 2 * n ** (-kappa))


def jacobi_bound_constant(zeta, a):
    """``S(zeta, a)`` in the bound ``L_n <= 1/2 S n^-2zeta (1 + O(1/n))`` for Jacobi-scheduled HB (b = 0)."""
    if not zeta > 0:
        raise ParameterError(f"zeta must be positive, got {zeta}")
    if not a > max(0.0, zeta - 0.5):
        raise HypothesisError(
            f"the Jacobi bound needs a > max(0, zeta - 1/2) = {max(0.0, zeta - 0.5)}, got a={a}"
        )
    log_frac = ((2 * a + 2) * math.log(2) + 2 * math.lgamma(a + 1)
                - math.log(math.pi) - (2 * a + 1) * math.log(4 * a + 5))
    bracket = 1 + zeta / (a + 0.5 - zeta) * math.exp(log_frac)
    return ((4 * a + 5) ** 2 / 2) ** zeta * bracket


def sd_upper_bound(n, s, zeta, loss0):
    """SD bound ``(L0^(1/s) + |s|^-1 (zeta / (2 (s + zeta)))^(1/s) n)^s`` for ``-zeta < s < 0``."""
    if not -zeta < s < 0:
        raise ParameterError(f"need -zeta < s < 0, got s={s}, zeta={zeta}")
    if not loss0 > 0:
        raise ParameterError(f"initial loss must be positive, got {loss0}")
    n = _steps(n, 0)
    base = loss0 ** (1 / s) + (1 / abs(s)) * (zeta / (2 * (s + zeta))) ** (1 / s) * n
    return _out(base**s)


def sd_lower_bound_prefactor(zeta, eps=1e-2):
    """Prefactor ``eps^zeta Gamma(zeta+1) / (2 (2 ln 2)^zeta)`` of the SD lower bound.

    Documentation value only: ``eps`` is internal to the construction of the
    lower-bound measure and the prefactor is not asserted anywhere.
    """
    return eps**zeta * math.gamma(zeta + 1) / (2 * (2 * math.log(2)) ** zeta)


def chebyshev_trial_loss(n, measure: DiscreteMeasure, c, zeta=None):
    """Loss of the shifted Chebyshev trial polynomial ``T_n(l(lam)) / T_n(l(0))``.

    ``l`` maps ``[c^2 ln^2 n / n^2, 1]`` affinely onto ``[-1, 1]``; since CG is
    optimal over residual polynomials, the value bounds the CG loss from
    above. ``zeta`` defaults to the measure metadata and only serves the
    ``c > zeta`` check.
    """
    n = int(n)
    if n < 2:
        raise ParameterError(f"n must be >= 2 so that ln n > 0, got {n}")
    if zeta is None:
        zeta = measure.info.get("zeta")
    if zeta is not None and not c > zeta:
        raise ParameterError(f"need c > zeta, got c={c}, zeta={zeta}")
    eps = (c * math.log(n) / n) ** 2
    if not eps < 1:
        raise ParameterError(f"c^2 ln^2 n / n^2 = {eps:.4g} must be below 1; increase n or lower c")
    def l(lam):
        return (2 * lam - (1 + eps)) / (1 - eps)
    log_den = chebyshev_log_abs_first(n, l(0.0))
    log_num = chebyshev_log_abs_first(n, l(measure.atoms))
    with np.errstate(under="ignore"):
        q2 = np.exp(2 * (log_num - log_den))
    return 0.5 * float(np.sum(measure.masses * q2))


_SCHEDULE_TO_ALGORITHM = {
    "jacobi-hb": "hb-jacobi",
    "scheduled-gd": "gd-scheduled",
    "sd": "sd",
    "cg": "cg",
    "stable-cg": "stable-cg",
}


def algorithm_for_schedule(desc):
    """Map a schedule descriptor (``Trajectory.schedule``) to a Table-1 algorithm kind."""
    kind = desc.get("schedule")
    if kind == "constant":
        return "hb-constant" if desc.get("beta", 0.0) else "gd-constant"
    if kind in _SCHEDULE_TO_ALGORITHM:
        return _SCHEDULE_TO_ALGORITHM[kind]
    raise ParameterError(f"no rate prediction for schedule kind {kind!r}")


def theoretical_exponent(kind, zeta, nu=None, assumptions=None, alpha=None, beta=0.0, a=None):
    """Predicted rate exponent (and prefactor when known) for an algorithm kind.

    ``assumptions`` is ``"cdf-only"`` or ``"cdf+eigendecay"``; by default the
    eigenvalue-decay variant is used whenever ``nu`` is given. CG (and stable
    CG) gains the factor ``(2 + nu)`` only under eigenvalue decay.
    """
    if kind not in ALGORITHMS:
        raise ParameterError(f"unknown algorithm kind {kind!r}; expected one of {ALGORITHMS}")
    if not zeta > 0:
        raise ParameterError(f"zeta must be positive, got {zeta}")
    if assumptions is None:
        assumptions = "cdf+eigendecay" if nu is not None else "cdf-only"
    if assumptions not in ("cdf-only", "cdf+eigendecay"):
        raise ParameterError(f"unknown assumptions {assumptions!r}")
    if kind in ("gd-constant", "hb-constant"):
        prefactor = None
        if alpha is not None:
            b = beta if kind == "hb-constant" else 0.0
            prefactor = math.gamma(zeta + 1) * (2 * alpha / (1 - b)) ** (-zeta)
        return TheoryPrediction(zeta, prefactor, "asymptotic")
    if kind == "sd":
        return TheoryPrediction(zeta, None, "upper-bound")
    if kind in ("gd-scheduled", "hb-jacobi"):
        prefactor = None
        if kind == "hb-jacobi" and a is not None and a > max(0.0, zeta - 0.5):
            prefactor = jacobi_bound_constant(zeta, a)
        return TheoryPrediction(2 * zeta, prefactor, "upper-bound")
    # cg / stable-cg
    if assumptions == "cdf+eigendecay":
        if nu is None:
            raise ParameterError("eigenvalue-decay prediction needs nu")
        return TheoryPrediction((2 + nu) * zeta, None, "upper-bound")
    return TheoryPrediction(2 * zeta, None, "upper-bound")
