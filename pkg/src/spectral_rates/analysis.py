"""Power-law fits of loss curves, threshold steps and theory comparisons.

Auto fit window
---------------
A finite spectrum ends the power-law regime once the residual polynomial
starts resolving the lowest atoms. The scale below which ``p_n`` is still
close to 1 is ``lam*(n) = 1 / (2 |p_n'(0)|)``, and under ``rho((0, lam]) ~ lam^zeta``
the share of that unresolved mass missing from the finite problem is about
``(lam_low / lam*(n))^zeta``. The auto window ends at the last step where this
share is at most ``delta`` (default 0.02), clamped to ``n_th``, and starts at
``max(10, n_hi / 100)``. The threshold-only rule ``[max(10, n_th/100), n_th/3]``
is available as ``window="threshold"`` and is used when a trajectory carries
no ``p_n'(0)`` record.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import Trajectory
from .errors import DataError, FitError, ParameterError, WindowError
from .oracle import TheoryPrediction, algorithm_for_schedule, theoretical_exponent
from .spectrum import DiscreteMeasure

__all__ = [
    "FitReport",
    "fit_power_law",
    "fit_loglog",
    "threshold_step",
    "threshold_kind",
    "lambda_low",
    "auto_window",
    "OscillationSummary",
    "oscillation_diagnostics",
    "Comparison",
    "compare",
    "default_tolerance",
    "SpectrumExponents",
    "fit_spectrum_exponents",
    "block_end_steps",
]

ADAPTIVE_KINDS = ("sd", "cg", "stable-cg")
DEFAULT_R0 = 0.5
DEFAULT_DELTA = 0.02


@dataclass(frozen=True)
class FitReport:
    """Fit ``L_n ~ 1/2 C n^-xi`` over the window ``[n_lo, n_hi]``."""

    exponent: float
    prefactor: float
    n_lo: int
    n_hi: int
    r2: float
    points: int
    theory_exponent: float | None = None
    n_th: float | None = None
    window_rule: str = "explicit"
    kind: str | None = None

    @property
    def window(self):
        return self.n_lo, self.n_hi

    def legend(self):
        """Legend string ``xi_exp (xi_theor)``."""
        theor = "?" if self.theory_exponent is None else f"{self.theory_exponent:.2f}"
        return f"{self.exponent:.2f} ({theor})"

    def as_dict(self):
        return asdict(self)


def fit_loglog(x, y):
    """OLS line through ``(ln x, ln y)``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise WindowError("log-log fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise FitError("fit window spans a single abscissa")
    X = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot == 0:
        raise FitError("losses are constant over the window")
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), min(1.0, max(0.0, r2))


def block_end_steps(n_max):
    """Steps ``2^l - 1`` (ends of complete scheduled-GD blocks) up to ``n_max``."""
    out = []
    l = 1
    while (1 << l) - 1 <= n_max:
        out.append((1 << l) - 1)
        l += 1
    return np.array(out, dtype=np.int64)


def _geometric_subsample(steps, max_points):
    if steps.size <= max_points:
        return steps
    targets = np.geomspace(steps[0], steps[-1], max_points)
    idx = np.unique(np.clip(np.searchsorted(steps, targets), 0, steps.size - 1))
    return steps[idx]


def threshold_kind(schedule_kind):
    """Threshold formula family for a schedule kind."""
    if schedule_kind in ("constant", "sd"):
        return "constant-rate"
    if schedule_kind in ("jacobi-hb", "scheduled-gd"):
        return "jacobi-scheduled"
    if schedule_kind in ("cg", "stable-cg"):
        return "stable-cg"
    raise ParameterError(f"no threshold formula for schedule kind {schedule_kind!r}")


def threshold_step(kind, zeta, lambda_low, nu=None, alpha=None, beta=0.0, r0=DEFAULT_R0):
    """Step ``n_th`` past which the lowest eigenvalue ends the power-law regime.

    constant-rate: ``(1-r0)^(1/zeta) (1-beta) / (alpha lam_low)``;
    jacobi-scheduled: ``(1-r0)^(1/zeta) / sqrt(lam_low)``;
    stable-cg: ``(1-r0)^(1/zeta) lam_low^(-1/(nu+2))``.
    """
    if not 0 < r0 < 1:
        raise ParameterError(f"r0 must lie in (0, 1), got {r0}")
    if not lambda_low > 0:
        raise ParameterError(f"lambda_low must be positive, got {lambda_low}")
    if not zeta > 0:
        raise ParameterError(f"zeta must be positive, got {zeta}")
    head = (1 - r0) ** (1 / zeta)
    if kind == "constant-rate":
        if alpha is None or not alpha > 0:
            raise ParameterError("constant-rate threshold needs a positive alpha")
        return head * (1 - beta) / (alpha * lambda_low)
    if kind == "jacobi-scheduled":
        return head / math.sqrt(lambda_low)
    if kind == "stable-cg":
        if nu is None:
            raise ParameterError("stable-cg threshold needs nu")
        return head * lambda_low ** (-1 / (nu + 2))
    raise ParameterError(f"unknown threshold kind {kind!r}")


def lambda_low(measure, override=None):
    """End of the power-law region: ``override`` if given, else the smallest atom."""
    if override is not None:
        if not override > 0:
            raise ParameterError(f"lambda_low override must be positive, got {override}")
        return float(override)
    if isinstance(measure, DiscreteMeasure):
        return measure.lambda_min
    if isinstance(measure, dict) and "lambda_min" in measure:
        return float(measure["lambda_min"])
    atoms = np.asarray(measure, dtype=float).reshape(-1)
    if atoms.size == 0:
        raise DataError("cannot take lambda_low of an empty measure")
    return float(np.min(atoms))


def _trajectory_nth(traj: Trajectory, zeta, nu, lam_low, r0):
    kind = traj.kind
    tk = threshold_kind(kind)
    alpha = beta = None
    if tk == "constant-rate":
        if kind == "sd":
            a = traj.alpha[np.isfinite(traj.alpha) & (traj.alpha > 0)]
            if a.size == 0:
                raise WindowError("SD trajectory has no usable step sizes")
            alpha, beta = float(np.mean(a)), 0.0
        else:
            alpha = traj.schedule["alpha"]
            beta = traj.schedule.get("beta", 0.0)
    return threshold_step(tk, zeta, lam_low, nu=nu, alpha=alpha, beta=beta or 0.0, r0=r0)


def auto_window(traj: Trajectory, zeta, lam_low, n_th, delta=DEFAULT_DELTA, rule="slope"):
    """``(n_lo, n_hi)`` for a trajectory; see the module docstring for the rules."""
    last = int(traj.steps[-1])
    if rule == "threshold" or traj.slope0 is None:
        n_hi = min(n_th / 3, last)
        n_lo = max(10.0, n_th / 100)
        return int(math.ceil(n_lo)), int(math.floor(n_hi))
    if rule != "slope":
        raise ParameterError(f"unknown window rule {rule!r}")
    s = np.abs(traj.slope0)
    ok = (traj.steps > 0) & ((2 * s * lam_low) ** zeta <= delta)
    if not np.any(ok):
        raise WindowError("no step satisfies the finite-size criterion")
    # last step of the leading run of steps that satisfy it
    bad = np.flatnonzero(~ok & (traj.steps > 0))
    first_ok = np.flatnonzero(ok)[0]
    later_bad = bad[bad > first_ok]
    end = later_bad[0] - 1 if later_bad.size else traj.steps.size - 1
    n_hi = min(float(traj.steps[end]), n_th, float(last))
    n_lo = max(10.0, n_hi / 100)
    return int(math.ceil(n_lo)), int(math.floor(n_hi))


def fit_power_law(traj, window="auto", zeta=None, nu=None, lambda_low_value=None,
                  r0=DEFAULT_R0, delta=DEFAULT_DELTA, block_ends=None, max_points=200,
                  min_points=None, theory=True):
    """Fit ``L_n = 1/2 C n^-xi`` by least squares in log-log coordinates.

    ``traj`` is a :class:`Trajectory` or a ``(steps, losses)`` pair.
    ``window`` is ``"auto"`` (slope rule), ``"threshold"`` or an explicit
    ``(n_lo, n_hi)``. Scheduled-GD trajectories are sampled only at block
    ends ``2^l - 1`` unless ``block_ends=False``; at most ``max_points``
    geometrically spaced steps enter the fit.
    """
    if isinstance(traj, Trajectory):
        steps, loss = traj.steps, traj.loss
        kind = traj.kind
    else:
        steps, loss = (np.asarray(v) for v in traj)
        steps = steps.astype(np.int64)
        loss = loss.astype(float)
        kind = None
        if isinstance(window, str):
            raise ParameterError("auto windows need a Trajectory with problem metadata")
    if steps.size != loss.size:
        raise DataError("steps and losses differ in length")
    if block_ends is None:
        block_ends = kind == "scheduled-gd"
    if min_points is None:
        min_points = 4 if block_ends else 10

    n_th = None
    theory_xi = None
    if isinstance(traj, Trajectory):
        zeta = zeta if zeta is not None else traj.problem.get("zeta")
        nu = nu if nu is not None else traj.problem.get("nu")
        if theory and zeta is not None:
            try:
                alg = algorithm_for_schedule(traj.schedule)
                theory_xi = theoretical_exponent(alg, zeta, nu).exponent
            except ParameterError:
                theory_xi = None
        if zeta is not None:
            lam_low = lambda_low(traj.problem, lambda_low_value) if (
                lambda_low_value is not None or "lambda_min" in traj.problem) else None
            if lam_low is not None:
                try:
                    n_th = _trajectory_nth(traj, zeta, nu, lam_low, r0)
                except (ParameterError, KeyError):
                    n_th = None

    if isinstance(window, str):
        if zeta is None or n_th is None:
            raise WindowError("auto window needs zeta, lambda_low and a threshold formula for the run")
        rule = "slope" if window == "auto" else window
        n_lo, n_hi = auto_window(traj, zeta, lam_low, n_th, delta, rule)
        window_rule = "threshold" if (rule == "threshold" or traj.slope0 is None) else f"slope(delta={delta})"
    else:
        n_lo, n_hi = (int(v) for v in window)
        window_rule = "explicit"
    if not n_lo < n_hi:
        raise WindowError(f"empty fit window [{n_lo}, {n_hi}]")

    sel = (steps >= n_lo) & (steps <= n_hi) & (steps > 0)
    if block_ends:
        sel &= np.isin(steps, block_end_steps(n_hi))
    chosen = _geometric_subsample(steps[sel], max_points)
    if chosen.size < min_points:
        raise WindowError(f"fit window [{n_lo}, {n_hi}] holds {chosen.size} points, need {min_points}")
    idx = np.searchsorted(steps, chosen)
    y = loss[idx]
    if np.any(~(y > 0)):
        raise WindowError(f"nonpositive or non-finite losses inside the window [{n_lo}, {n_hi}]")
    slope, intercept, r2 = fit_loglog(chosen, y)
    return FitReport(-slope, 2 * math.exp(intercept), int(n_lo), int(n_hi), r2, int(chosen.size),
                     theory_xi, n_th, window_rule, kind)


@dataclass(frozen=True)
class OscillationSummary:
    amplitude: float
    settling_step: int | None
    period2: bool
    applicable: bool
    tolerance: float


def oscillation_diagnostics(traj, tol=1e-3, trailing=0.5):
    """Period-2 behaviour of the adaptive rates ``alpha_n``.

    ``amplitude`` is ``sup |alpha_{n+2} - alpha_n|`` over the trailing
    ``trailing`` fraction of the run; ``settling_step`` is the first ``n``
    from which ``|alpha_{m+2} - alpha_m| < tol`` for every later ``m``.
    ``applicable`` is false for non-adaptive schedules (whose rates follow a
    fixed rule); the numbers are still reported.
    """
    if isinstance(traj, Trajectory):
        if not traj.is_dense_record():
            raise DataError("oscillation diagnostics need every step recorded")
        alpha = traj.alpha
        kind = traj.kind
        start = int(traj.steps[0])
    else:
        alpha = np.asarray(traj, dtype=float)
        kind = None
        start = 0
    alpha = alpha[np.isfinite(alpha)]
    if alpha.size < 3:
        raise DataError("need at least three rate records")
    diff = np.abs(alpha[2:] - alpha[:-2])
    n0 = int(diff.size * (1 - trailing))
    amplitude = float(np.max(diff[n0:])) if diff.size > n0 else 0.0
    above = np.flatnonzero(diff >= tol)
    if above.size == 0:
        settling = start
    elif above[-1] == diff.size - 1:
        settling = None
    else:
        settling = start + int(above[-1]) + 1
    applicable = kind is None or kind in ADAPTIVE_KINDS
    return OscillationSummary(amplitude, settling, amplitude < tol, applicable, tol)


def default_tolerance(theory_exponent):
    return 0.05 * theory_exponent + 0.05


@dataclass(frozen=True)
class Comparison:
    passed: bool
    experiment: float
    theory: float
    delta: float
    tolerance: float
    n_lo: int
    n_hi: int
    n_th: float | None

    def line(self, name=""):
        status = "PASS" if self.passed else "FAIL"
        return (f"{name:<16s} {self.experiment:7.3f} ({self.theory:.3f})  "
                f"delta={self.delta:.3f} tol={self.tolerance:.3f} "
                f"window=[{self.n_lo},{self.n_hi}] n_th={_fmt_opt(self.n_th)}  {status}")


def _fmt_opt(v):
    return "na" if v is None else f"{v:.4g}"


def compare(fit: FitReport, prediction, tolerance=None):
    """Pass when ``|xi_exp - xi_theor| <= tolerance`` (default ``0.05 xi_theor + 0.05``)."""
    theor = prediction.exponent if isinstance(prediction, TheoryPrediction) else float(prediction)
    if tolerance is None:
        tolerance = default_tolerance(theor)
    delta = abs(fit.exponent - theor)
    return Comparison(bool(delta <= tolerance), fit.exponent, theor, delta, float(tolerance),
                      fit.n_lo, fit.n_hi, fit.n_th)


@dataclass(frozen=True)
class SpectrumExponents:
    """Fitted ``lam_k ~ Lambda k^-nu`` and tail sums ``sum_{s>=k} c_s^2 ~ k^-kappa``; ``zeta = kappa/nu``."""

    nu: float
    Lambda: float
    kappa: float
    zeta: float
    r2_eigen: float
    r2_tail: float
    k_lo: int
    k_hi: int


def fit_spectrum_exponents(measure: DiscreteMeasure, window=None):
    """Fit eigenvalue decay and coefficient tail sums over the index window ``[k_lo, k_hi]``."""
    K = len(measure)
    if window is None:
        window = (max(2, int(K ** 0.1)), max(3, K // 4))
    k_lo, k_hi = (int(v) for v in window)
    k_hi = min(k_hi, K)
    if not 1 <= k_lo < k_hi:
        raise WindowError(f"empty index window [{k_lo}, {k_hi}]")
    k = np.arange(k_lo, k_hi + 1)
    ks = _geometric_subsample(k, 200)
    lam = measure.atoms[ks - 1]
    slope, intercept, r2e = fit_loglog(ks, lam)
    nu = -slope
    tails = np.cumsum(measure.masses[::-1])[::-1]
    t = tails[ks - 1]
    if np.any(t <= 0):
        raise WindowError("coefficient tail sums vanish inside the window")
    slope_t, _, r2t = fit_loglog(ks, t)
    kappa = -slope_t
    if not nu > 0:
        raise FitError(f"fitted eigenvalue decay exponent is not positive ({nu:.4g})")
    return SpectrumExponents(nu, math.exp(intercept), kappa, kappa / nu, r2e, r2t, k_lo, k_hi)
