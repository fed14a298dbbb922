"""Optimization runs in the spectral and the dense representation.

Spectral representation
-----------------------
With ``w0 = 0`` the residual ``f* - f_n`` equals ``p_n(JJ^T) f*`` for a residual
polynomial ``p_n`` with ``p_n(0) = 1``. In the eigenbasis this is the amplitude
vector ``u_k = p_n(lam_k) c_k`` and the loss is ``1/2 sum_k u_k^2``. Heavy Ball
acts atom-wise::

    u_{n+1} = u_n - alpha_n lam u_n + beta_n (u_n - u_{n-1})

Adaptive rates need inner products of ``r_n = grad L(w_n) = -J^T (f* - f_n)``
and ``p_n = w_n - w_{n-1}``. Using ``J p_n = f_n - f_{n-1}`` and ``J J^T = diag(lam)``::

    <r, r>   = sum lam u^2          <A r, r> = sum lam^2 u^2
    <A p, p> = sum (u - u')^2       <r, p>   = sum u (u - u')
    <A r, p> = sum lam u (u - u')

where ``u'`` are the amplitudes of the previous step.

Stable CG keeps the history of steps. In target space the step made along
the gradient is ``lam * u``; orthogonality of target-space steps is the same
as A-conjugacy of the parameter-space steps, which is what makes the
procedure coincide with CG in exact arithmetic. The literal parameter-space
orthogonalization (weights ``1/lam`` in the spectral representation) is
available with ``orthogonalize="parameter"``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DataError, NumericalError, ParameterError
from .specfun import (
    JacobiParams,
    hb_constant_residual,
    hb_constant_slope,
    jacobi_recurrence_coefficients,
    jacobi_roots,
)
from .spectrum import DiscreteMeasure, OperatorProblem

__all__ = [
    "Constant",
    "JacobiHB",
    "ScheduledGD",
    "SteepestDescent",
    "ConjugateGradients",
    "StableConjugateGradients",
    "SpectralState",
    "Trajectory",
    "jacobi_schedule",
    "scheduled_gd_rates",
    "sd_rate",
    "cg_rates",
    "stable_cg_step",
    "StableCGHistory",
    "run",
    "dense_run",
    "polynomial_probe",
    "make_schedule",
    "DIVERGENCE_FACTOR",
]

DIVERGENCE_FACTOR = 1e12
DENSE_MAX_DIM = 5000
# relative size of det(2x2) below which the CG system is treated as singular
_CG_SINGULAR_RTOL = 1e-14


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Constant:
    """Constant learning rate ``alpha`` and momentum ``beta`` (``beta = 0`` is plain GD)."""

    alpha: float
    beta: float = 0.0
    allow_unstable: bool = False
    kind = "constant"

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ParameterError("alpha and beta must be finite")
        if not self.allow_unstable:
            if not 0 <= self.beta < 1:
                raise ParameterError(f"momentum must satisfy 0 <= beta < 1, got {self.beta}")
            if not self.alpha > 0:
                raise ParameterError(f"learning rate must be positive, got {self.alpha}")

    def check_stable(self, lambda_max):
        if self.allow_unstable:
            return
        if not self.alpha * lambda_max < 2 * (1 + self.beta):
            raise ParameterError(
                f"alpha*lambda_max = {self.alpha * lambda_max:.6g} is outside the stability "
                f"region (< 2(1+beta) = {2 * (1 + self.beta):.6g}); set allow_unstable to override"
            )

    def rates(self, n):
        return self.alpha, (self.beta if n > 0 else 0.0)

    def describe(self):
        return {"schedule": "constant", "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class JacobiHB:
    """Heavy Ball whose residual polynomials are the normalized Jacobi polynomials ``q_n^{(a,b)}``."""

    a: float
    b: float = 0.0
    kind = "jacobi-hb"

    def __post_init__(self):
        JacobiParams(self.a, self.b)

    def rates(self, n):
        return jacobi_schedule(n, self.a, self.b)

    def describe(self):
        return {"schedule": "jacobi-hb", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class ScheduledGD:
    """GD with steps ``1/root`` of ``q_{2^l}``, block by block.

    ``depth`` caps the level: once levels ``0..depth`` are used up the block of
    degree ``2^depth`` is repeated. ``None`` means no cap.
    """

    a: float
    b: float = 0.0
    depth: int | None = None
    kind = "scheduled-gd"

    def __post_init__(self):
        JacobiParams(self.a, self.b)
        if self.depth is not None and (int(self.depth) != self.depth or self.depth < 0):
            raise ParameterError(f"depth must be a nonnegative integer, got {self.depth}")

    def rates(self, n):
        return _scheduled_gd_rate(n + 1, self.a, self.b, self.depth), 0.0

    def describe(self):
        return {"schedule": "scheduled-gd", "a": self.a, "b": self.b, "depth": self.depth}


@dataclass(frozen=True)
class SteepestDescent:
    kind = "sd"

    def describe(self):
        return {"schedule": "sd"}


@dataclass(frozen=True)
class ConjugateGradients:
    kind = "cg"

    def describe(self):
        return {"schedule": "cg"}


@dataclass(frozen=True)
class StableConjugateGradients:
    """CG with explicit re-orthogonalization against the stored step history.

    ``orthogonalize="target"`` (default) makes target-space steps orthogonal,
    i.e. parameter-space steps A-conjugate. ``"parameter"`` uses the plain
    parameter-space inner product. Gram-Schmidt is applied twice per step.
    """

    orthogonalize: str = "target"
    history_cap: int = 5000
    kind = "stable-cg"

    def __post_init__(self):
        if self.orthogonalize not in ("target", "parameter"):
            raise ParameterError(f"orthogonalize must be 'target' or 'parameter', got {self.orthogonalize!r}")
        if int(self.history_cap) != self.history_cap or self.history_cap < 1:
            raise ParameterError(f"history_cap must be a positive integer, got {self.history_cap}")

    def describe(self):
        return {"schedule": "stable-cg", "orthogonalize": self.orthogonalize,
                "history_cap": self.history_cap}


SCHEDULE_KINDS = ("constant", "gd", "hb", "jacobi-hb", "scheduled-gd", "sd", "cg", "stable-cg")


def make_schedule(kind, **params):
    """Build a schedule from a kind name and keyword parameters (CLI and config helper)."""
    kind = kind.lower()
    p = {k: v for k, v in params.items() if v is not None}
    if kind in ("constant", "gd", "hb"):
        return Constant(float(p.get("alpha", 1.0)), float(p.get("beta", 0.0)),
                        bool(p.get("allow_unstable", False)))
    if kind == "jacobi-hb":
        return JacobiHB(float(p.get("a", 1.0)), float(p.get("b", 0.0)))
    if kind == "scheduled-gd":
        depth = p.get("depth")
        return ScheduledGD(float(p.get("a", 1.0)), float(p.get("b", 0.0)),
                           None if depth is None else int(depth))
    if kind == "sd":
        return SteepestDescent()
    if kind == "cg":
        return ConjugateGradients()
    if kind == "stable-cg":
        return StableConjugateGradients(p.get("orthogonalize", "target"),
                                        int(p.get("history_cap", 5000)))
    raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")


def jacobi_schedule(n, a, b=0.0):
    """``(alpha_n, beta_n)`` making HB residuals equal ``q_n^{(a,b)}``; ``beta_0 = 0``."""
    if int(n) != n or n < 0:
        raise ParameterError(f"step index must be a nonnegative integer, got {n}")
    return jacobi_recurrence_coefficients(int(n), a, b)


@lru_cache(maxsize=64)
def _roots_cached(n, a, b):
    return jacobi_roots(n, JacobiParams(a, b))


def _scheduled_gd_rate(i, a, b, depth=None):
    """Rate for the 1-based step index ``i``."""
    level = i.bit_length() - 1
    if depth is not None and level > depth:
        # repeat the top block of degree 2^depth after the levels are used up
        top = 1 << depth
        i = top + (i - top) % top
        level = depth
    degree = 1 << level
    m = i - degree + 1
    return 1.0 / _roots_cached(degree, float(a), float(b))[m - 1]


def scheduled_gd_rates(total, a, b=0.0, depth=None):
    """Learning rates ``alpha_1..alpha_total`` of root-scheduled GD."""
    total = int(total)
    if total < 1:
        raise ParameterError(f"total must be >= 1, got {total}")
    JacobiParams(a, b)
    return np.array([_scheduled_gd_rate(i, a, b, depth) for i in range(1, total + 1)])


# ---------------------------------------------------------------------------
# spectral state and adaptive rates


@dataclass
class SpectralState:
    """Residual amplitudes ``u_k = p_n(lam_k) c_k`` at step ``n`` and the previous step."""

    u: np.ndarray
    u_prev: np.ndarray | None = None
    n: int = 0

    @classmethod
    def initial(cls, measure: DiscreteMeasure):
        return cls(measure.coefficients.copy(), None, 0)

    @property
    def loss(self):
        return 0.5 * float(np.sum(self.u * self.u))


def sd_rate(state: SpectralState, measure: DiscreteMeasure):
    """Loss-minimizing GD step ``sum lam u^2 / sum lam^2 u^2``; ``None`` once converged."""
    lu2 = measure.atoms * state.u * state.u
    den = float(np.sum(measure.atoms * lu2))
    if den <= 0:
        return None
    return float(np.sum(lu2)) / den


def _cg_solve(rr, arr, app, rp, arp):
    det = arr * app - arp * arp
    if not det > _CG_SINGULAR_RTOL * arr * app:
        return None
    alpha = (rr * app - rp * arp) / det
    beta = (rr * arp - rp * arr) / det
    return alpha, beta


def cg_rates(state: SpectralState, measure: DiscreteMeasure):
    """Optimal ``(alpha_n, beta_n, singular)`` for CG from spectral inner products.

    At ``n = 0`` there is no previous step and an SD step is returned. A
    singular 2x2 system also falls back to SD with ``beta = 0``; the third
    element flags that fallback. Returns ``None`` once converged.
    """
    lam = measure.atoms
    u = state.u
    if state.n == 0 or state.u_prev is None:
        a = sd_rate(state, measure)
        return None if a is None else (a, 0.0, False)
    du = u - state.u_prev
    lu = lam * u
    rr = float(np.sum(lu * u))
    arr = float(np.sum(lu * lu))
    if arr <= 0:
        return None
    app = float(np.sum(du * du))
    rp = float(np.sum(u * du))
    arp = float(np.sum(lu * du))
    sol = _cg_solve(rr, arr, app, rp, arp)
    if sol is None:
        return rr / arr, 0.0, True
    return sol[0], sol[1], False


class StableCGHistory:
    """Stored step directions for stable CG.

    Each entry keeps the vector used for orthogonalization (``orth``), the
    vector that moves the iterate (``apply``, absent when identical), the
    derivative at 0 of the direction's residual polynomial and its values at
    the probe points.
    """

    def __init__(self, orth_dim, apply_dim, n_probes, cap):
        self.cap = int(cap)
        self.orth = np.empty((min(self.cap, 64), orth_dim))
        self.apply = None if apply_dim is None else np.empty((min(self.cap, 64), apply_dim))
        self.slope = np.empty(min(self.cap, 64))
        self.probes = np.empty((min(self.cap, 64), n_probes))
        self.count = 0
        self.dropped = 0

    def _grow(self):
        size = min(self.cap, 2 * self.orth.shape[0])
        def grow(a):
            out = np.empty((size,) + a.shape[1:])
            out[: self.count] = a[: self.count]
            return out
        self.orth = grow(self.orth)
        if self.apply is not None:
            self.apply = grow(self.apply)
        self.slope = grow(self.slope)
        self.probes = grow(self.probes)

    def append(self, orth, apply, slope, probes):
        if self.count == self.cap:
            for a in (self.orth, self.apply, self.slope, self.probes):
                if a is not None:
                    a[:-1] = a[1:].copy()
            self.count -= 1
            self.dropped += 1
        elif self.count == self.orth.shape[0]:
            self._grow()
        i = self.count
        self.orth[i] = orth
        if self.apply is not None:
            self.apply[i] = apply
        self.slope[i] = slope
        self.probes[i] = probes
        self.count += 1

    def view(self):
        k = self.count
        apply = None if self.apply is None else self.apply[:k]
        return self.orth[:k], apply, self.slope[:k], self.probes[:k]

    def max_cosine(self):
        """Largest ``|cos|`` between distinct stored orthogonalization vectors."""
        H = self.orth[: self.count]
        if H.shape[0] < 2:
            return 0.0
        norms = np.linalg.norm(H, axis=1)
        G = (H @ H.T) / np.outer(norms, norms)
        np.fill_diagonal(G, 0.0)
        return float(np.max(np.abs(G)))


def _orthogonalize(cand, H, passes=2):
    """Classical Gram-Schmidt against the orthonormal rows of ``H``, repeated ``passes`` times."""
    coef = np.zeros(H.shape[0])
    if H.shape[0] == 0:
        return cand, coef
    v = cand
    for _ in range(passes):
        c = H @ v
        v = v - H.T @ c
        coef += c
    return v, coef


def stable_cg_step(u, lam, history: StableCGHistory, mode="target", probe_state=None):
    """One stable-CG step in the spectral representation.

    Returns ``(u_new, info)`` where ``info`` holds the line-search coefficient,
    the CG-equivalent rates and the residual-polynomial data of the new
    direction; ``None`` when the corrected direction vanishes (converged).
    ``probe_state`` is ``(lam_probe, p_probe)`` or ``None``.
    """
    cand_f = lam * u
    sqrt_lam = None
    if mode == "target":
        cand = cand_f
    else:
        sqrt_lam = np.sqrt(lam)
        cand = cand_f / sqrt_lam
    H, _, slopes, probe_dirs = history.view()
    d, coef = _orthogonalize(cand, H)
    nd = float(np.sqrt(np.sum(d * d)))
    scale = float(np.sqrt(np.sum(cand * cand)))
    if nd == 0 or nd <= 1e-15 * scale:
        return None
    d = d / nd
    D = d if mode == "target" else d * sqrt_lam
    DD = float(np.sum(D * D))
    if DD == 0:
        return None
    t = float(np.sum(u * D)) / DD
    u_new = u - t * D
    slope_dir = (1.0 - float(coef @ slopes)) / nd
    if probe_state is not None and probe_state[0].size:
        lam_p, p_p = probe_state
        probe_dir = (lam_p * p_p - coef @ probe_dirs) / nd
    else:
        probe_dir = np.zeros(0)
    history.append(d, None, slope_dir, probe_dir)
    info = {"t": t, "nd": nd, "coef": coef, "slope_dir": slope_dir, "probe_dir": probe_dir}
    return u_new, info


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Recorded run. ``alpha[i], beta[i]`` are the rates used to leave step ``steps[i]``.

    ``slope0`` holds ``p_n'(0)``, the derivative of the residual polynomial at
    zero; ``probes`` has one column per probe point. A truncated run has
    ``diverged`` set and ends at the last finite step.
    """

    steps: np.ndarray
    loss: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    slope0: np.ndarray | None = None
    probe_points: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probes: np.ndarray | None = None
    diverged: bool = False
    events: list = field(default_factory=list)
    problem: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.loss = np.asarray(self.loss, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        n = self.steps.size
        if not (self.loss.size == self.alpha.size == self.beta.size == n):
            raise DataError("trajectory columns differ in length")
        if n and np.any(np.diff(self.steps) <= 0):
            raise DataError("trajectory steps must be strictly increasing")
        self.probe_points = np.asarray(self.probe_points, dtype=float).reshape(-1)
        if self.probes is not None:
            self.probes = np.asarray(self.probes, dtype=float).reshape(n, self.probe_points.size)
        if self.slope0 is not None:
            self.slope0 = np.asarray(self.slope0, dtype=float)

    def __len__(self):
        return self.steps.size

    @property
    def kind(self):
        return self.schedule.get("schedule", "unknown")

    @property
    def initial_loss(self):
        return float(self.loss[0])

    def is_dense_record(self):
        return self.steps.size == 0 or bool(self.steps[-1] - self.steps[0] + 1 == self.steps.size)

    def at(self, n):
        i = np.searchsorted(self.steps, n)
        if i >= self.steps.size or self.steps[i] != n:
            raise KeyError(f"step {n} was not recorded")
        return float(self.loss[i])

    def probe(self, lam):
        """Probe column for the probe point ``lam``."""
        j = np.flatnonzero(self.probe_points == lam)
        if self.probes is None or j.size == 0:
            raise KeyError(f"no probe at lambda={lam}")
        return self.probes[:, j[0]]

    def equals(self, other):
        """Exact equality of recorded columns (NaN equal to NaN)."""
        def same(x, y):
            if x is None or y is None:
                return x is None and y is None
            return x.shape == y.shape and bool(np.array_equal(x, y, equal_nan=True))
        return (same(self.steps, other.steps) and same(self.loss, other.loss)
                and same(self.alpha, other.alpha) and same(self.beta, other.beta)
                and same(self.probe_points, other.probe_points) and same(self.probes, other.probes)
                and self.diverged == other.diverged)


class _Recorder:
    def __init__(self, n_steps, record, n_probes):
        if record is None:
            keep = np.arange(n_steps + 1)
        else:
            keep = np.unique(np.asarray(record, dtype=np.int64))
            if keep.size and (keep[0] < 0 or keep[-1] > n_steps):
                raise ParameterError(f"record steps must lie in [0, {n_steps}]")
        self.mask = np.zeros(n_steps + 1, dtype=bool)
        self.mask[keep] = True
        self.rows = []
        self.probe_rows = []
        self.n_probes = n_probes

    def wants(self, n):
        return self.mask[n]

    def add(self, n, loss, alpha, beta, slope, probes):
        self.rows.append((n, loss, alpha, beta, slope))
        if self.n_probes:
            self.probe_rows.append(np.array(probes, dtype=float))

    def build(self, probe_points, **kw):
        if self.rows:
            steps, loss, alpha, beta, slope = (np.array(c) for c in zip(*self.rows))
        else:
            steps = loss = alpha = beta = slope = np.zeros(0)
        probes = np.array(self.probe_rows).reshape(len(self.rows), -1) if self.n_probes else None
        return Trajectory(steps, loss, alpha, beta, slope, probe_points, probes, **kw)


def _check_probes(probes):
    if probes is None:
        return np.zeros(0)
    p = np.asarray(probes, dtype=float).reshape(-1)
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ParameterError("probe points must be finite and nonnegative")
    return p


def _check_steps(n_steps):
    if int(n_steps) != n_steps or n_steps < 0:
        raise ParameterError(f"n_steps must be a nonnegative integer, got {n_steps}")
    return int(n_steps)


# ---------------------------------------------------------------------------
# backends: both expose amplitudes in "residual" form so the same loop drives them


class _SpectralBackend:
    representation = "spectral"

    def __init__(self, measure: DiscreteMeasure):
        self.lam = measure.atoms
        self.u = measure.coefficients.copy()
        self.u_prev = None
        self.lambda_max = measure.lambda_max

    def loss(self):
        return 0.5 * float(np.sum(self.u * self.u))

    def hb_step(self, alpha, beta):
        u = self.u
        new = u - alpha * (self.lam * u)
        if beta != 0.0 and self.u_prev is not None:
            new += beta * (u - self.u_prev)
        self.u_prev, self.u = u, new

    def sd_products(self):
        lu = self.lam * self.u
        return float(np.sum(lu * self.u)), float(np.sum(lu * lu))

    def cg_products(self):
        u = self.u
        du = u - self.u_prev
        lu = self.lam * u
        return (float(np.sum(lu * u)), float(np.sum(lu * lu)), float(np.sum(du * du)),
                float(np.sum(u * du)), float(np.sum(lu * du)))

    def new_history(self, mode, n_probes, cap):
        return StableCGHistory(self.lam.size, None, n_probes, cap)

    def stable_step(self, history, mode, probe_state):
        res = stable_cg_step(self.u, self.lam, history, mode, probe_state)
        if res is None:
            return None
        self.u_prev, self.u = self.u, res[0]
        return res[1]


class _DenseBackend:
    """Explicit iterate ``w``; amplitudes replaced by the residual vector ``e = f* - J w``."""

    representation = "dense"

    def __init__(self, problem: OperatorProblem):
        self.J = np.asarray(problem.operator)
        self.f = np.asarray(problem.target)
        self.w = np.zeros(self.J.shape[1])
        self.w_prev = None
        self.e = self.f.copy()
        self.lambda_max = float(np.linalg.norm(self.J, 2) ** 2) if self.J.size else 0.0

    def loss(self):
        return 0.5 * float(np.sum(self.e * self.e))

    def grad(self):
        return -(self.J.T @ self.e)

    def hb_step(self, alpha, beta):
        w = self.w
        new = w - alpha * self.grad()
        if beta != 0.0 and self.w_prev is not None:
            new += beta * (w - self.w_prev)
        self.w_prev, self.w = w, new
        self.e = self.f - self.J @ new

    def sd_products(self):
        r = self.grad()
        Jr = self.J @ r
        return float(np.sum(r * r)), float(np.sum(Jr * Jr))

    def cg_products(self):
        r = self.grad()
        p = self.w - self.w_prev
        Jr = self.J @ r
        Jp = self.J @ p
        return (float(np.sum(r * r)), float(np.sum(Jr * Jr)), float(np.sum(Jp * Jp)),
                float(np.sum(r * p)), float(np.sum(Jr * Jp)))

    def new_history(self, mode, n_probes, cap):
        rows, cols = self.J.shape
        if mode == "target":
            return StableCGHistory(rows, cols, n_probes, cap)
        return StableCGHistory(cols, rows, n_probes, cap)

    def stable_step(self, history, mode, probe_state):
        d_w = -self.grad()              # parameter-space descent direction
        d_f = self.J @ d_w              # its image in target space
        cand, other = (d_f, d_w) if mode == "target" else (d_w, d_f)
        H, A, slopes, probe_dirs = history.view()
        d, coef = _orthogonalize(cand, H)
        nd = float(np.sqrt(np.sum(d * d)))
        if nd == 0 or nd <= 1e-15 * float(np.sqrt(np.sum(cand * cand))):
            return None
        o = (other - A.T @ coef) / nd if A.shape[0] else other / nd
        d = d / nd
        step_w, step_f = (o, d) if mode == "target" else (d, o)
        ff = float(np.sum(step_f * step_f))
        if ff == 0:
            return None
        t = float(np.sum(self.e * step_f)) / ff
        self.w_prev, self.w = self.w, self.w + t * step_w
        self.e = self.f - self.J @ self.w
        slope_dir = (1.0 - float(coef @ slopes)) / nd
        if probe_state is not None and probe_state[0].size:
            lam_p, p_p = probe_state
            probe_dir = (lam_p * p_p - coef @ probe_dirs) / nd
        else:
            probe_dir = np.zeros(0)
        history.append(d, o, slope_dir, probe_dir)
        return {"t": t, "nd": nd, "coef": coef, "slope_dir": slope_dir, "probe_dir": probe_dir}


# ---------------------------------------------------------------------------
# main loop


def _loop(backend, schedule, n_steps, probe_points, record, problem_desc):
    n_probes = probe_points.size
    rec = _Recorder(n_steps, record, n_probes)
    events = []
    diagnostics = {"representation": backend.representation}
    loss0 = backend.loss()
    limit = DIVERGENCE_FACTOR * loss0

    if isinstance(schedule, Constant):
        schedule.check_stable(backend.lambda_max)

    # residual polynomial at the probes and its derivative at zero
    p_cur = np.ones(n_probes)
    p_prev = None
    s_cur, s_prev = 0.0, 0.0

    stable = isinstance(schedule, StableConjugateGradients)
    history = backend.new_history(schedule.orthogonalize, n_probes, schedule.history_cap) if stable else None
    t_prev = None
    converged_at = None
    diverged = False
    loss = loss0

    for n in range(n_steps + 1):
        last = n == n_steps
        # --- choose the rates that leave step n
        if converged_at is not None:
            alpha, beta = 0.0, 0.0
        elif isinstance(schedule, (Constant, JacobiHB, ScheduledGD)):
            alpha, beta = schedule.rates(n)
        elif isinstance(schedule, SteepestDescent):
            rr, arr = backend.sd_products()
            if arr > 0:
                alpha, beta = rr / arr, 0.0
            else:
                alpha, beta = 0.0, 0.0
                converged_at = n
                events.append(f"converged at step {n}")
        elif isinstance(schedule, ConjugateGradients):
            if n == 0:
                rr, arr = backend.sd_products()
                sol = (rr / arr, 0.0) if arr > 0 else None
            else:
                rr, arr, app, rp, arp = backend.cg_products()
                if arr <= 0:
                    sol = None
                else:
                    sol = _cg_solve(rr, arr, app, rp, arp)
                    if sol is None:
                        sol = (rr / arr, 0.0)
                        if not last:
                            events.append(f"cg singular system at step {n}; steepest-descent fallback")
            if sol is None:
                alpha, beta = 0.0, 0.0
                converged_at = n
                events.append(f"converged at step {n}")
            else:
                alpha, beta = sol
        else:
            alpha = beta = math.nan  # stable CG fills these after its step

        # --- stable CG: take the step now to learn its equivalent rates
        info = None
        if stable and converged_at is None and not last:
            dropped = history.dropped
            info = backend.stable_step(history, schedule.orthogonalize,
                                       (probe_points, p_cur) if n_probes else None)
            if history.dropped > dropped and dropped == 0:
                msg = f"stable-cg history cap {schedule.history_cap} reached at step {n}; dropping oldest directions"
                warnings.warn(msg, RuntimeWarning, stacklevel=3)
                events.append(msg)
            if info is None:
                converged_at = n
                events.append(f"converged at step {n}")
                alpha = beta = 0.0
            else:
                alpha = info["t"] / info["nd"]
                beta = 0.0
                if t_prev is not None and info["coef"].size and t_prev != 0:
                    beta = -info["t"] * info["coef"][-1] / (info["nd"] * t_prev)
                t_prev = info["t"]
        elif stable and converged_at is not None:
            alpha = beta = 0.0

        if rec.wants(n):
            rec.add(n, loss, alpha, beta, s_cur, p_cur)
        if last:
            break

        # --- advance
        if info is not None:
            new_s = s_cur - info["t"] * info["slope_dir"]
            new_p = p_cur - info["t"] * info["probe_dir"] if n_probes else p_cur
        elif converged_at is not None:
            new_s, new_p = s_cur, p_cur
        else:
            b_eff = beta if n > 0 else 0.0
            backend.hb_step(alpha, b_eff)
            new_s = s_cur - alpha + b_eff * (s_cur - s_prev)
            if n_probes:
                new_p = p_cur - alpha * probe_points * p_cur
                if b_eff != 0.0 and p_prev is not None:
                    new_p = new_p + b_eff * (p_cur - p_prev)
            else:
                new_p = p_cur
        s_prev, s_cur = s_cur, new_s
        p_prev, p_cur = p_cur, new_p

        loss = backend.loss()
        if not math.isfinite(loss) or loss > limit:
            diverged = True
            events.append(f"diverged at step {n + 1} (loss {loss:.3e})")
            break

    if stable:
        diagnostics["max_step_cosine"] = history.max_cosine()
        diagnostics["history_dropped"] = history.dropped
    if converged_at is not None:
        diagnostics["converged_at"] = converged_at
    return rec.build(probe_points, diverged=diverged, events=events, problem=problem_desc,
                     schedule=schedule.describe(), diagnostics=diagnostics)


def _closed_form(measure: DiscreteMeasure, schedule: Constant, n_steps, probe_points, record):
    if record is None:
        record = geometric_grid(n_steps)
    steps = np.unique(np.asarray(record, dtype=np.int64))
    if steps.size and (steps[0] < 0 or steps[-1] > n_steps):
        raise ParameterError(f"record steps must lie in [0, {n_steps}]")
    schedule.check_stable(measure.lambda_max)
    a, b = schedule.alpha, schedule.beta
    loss = np.empty(steps.size)
    probes = np.empty((steps.size, probe_points.size))
    for i, n in enumerate(steps):
        q = hb_constant_residual(int(n), a, b, measure.atoms)
        loss[i] = 0.5 * float(np.sum(measure.masses * q * q))
        if probe_points.size:
            probes[i] = hb_constant_residual(int(n), a, b, probe_points)
    slope = np.array([hb_constant_slope(int(n), a, b) for n in steps])
    alpha = np.full(steps.size, a)
    beta = np.where(steps > 0, b, 0.0)
    return Trajectory(steps, loss, alpha, beta, slope, probe_points,
                      probes if probe_points.size else None, problem=measure.describe(),
                      schedule=schedule.describe(),
                      diagnostics={"representation": "spectral", "closed_form": True})


def geometric_grid(n_steps, points=400):
    """Step 0 plus about ``points`` integers spread geometrically over ``[1, n_steps]``."""
    n_steps = _check_steps(n_steps)
    if n_steps == 0:
        return np.array([0])
    g = np.unique(np.round(np.geomspace(1, n_steps, points)).astype(np.int64))
    return np.concatenate([[0], g])


def run(problem, schedule, n_steps, probes=None, record=None, closed_form=False):
    """Run ``schedule`` for ``n_steps`` steps from ``w0 = 0``.

    ``problem`` is a :class:`DiscreteMeasure` (spectral representation) or an
    :class:`OperatorProblem` (dense representation, see :func:`dense_run`).
    ``record`` optionally restricts which steps are stored. With
    ``closed_form=True`` a constant schedule on a measure is evaluated through
    the Chebyshev closed form at the recorded steps only (default: a
    geometric grid), which makes very long constant-rate runs cheap.
    """
    n_steps = _check_steps(n_steps)
    probe_points = _check_probes(probes)
    if isinstance(problem, OperatorProblem):
        if closed_form:
            raise ParameterError("the closed-form path needs the spectral representation")
        return dense_run(problem, schedule, n_steps, probes=probes, record=record)
    if not isinstance(problem, DiscreteMeasure):
        raise DataError(f"unsupported problem type {type(problem).__name__}")
    if closed_form:
        if not isinstance(schedule, Constant):
            raise ParameterError("the closed-form path only covers constant schedules")
        return _closed_form(problem, schedule, n_steps, probe_points, record)
    return _loop(_SpectralBackend(problem), schedule, n_steps, probe_points, record,
                 problem.describe())


def dense_run(problem: OperatorProblem, schedule, n_steps, probes=None, record=None,
              max_dim=DENSE_MAX_DIM):
    """Run with explicit iterates ``w_n``; rates use the literal parameter-space formulas."""
    n_steps = _check_steps(n_steps)
    if not isinstance(problem, OperatorProblem):
        raise DataError("dense_run needs an OperatorProblem")
    if max(problem.shape) > max_dim:
        raise ParameterError(f"operator dimensions {problem.shape} exceed the dense cap {max_dim}")
    return _loop(_DenseBackend(problem), schedule, n_steps, _check_probes(probes), record,
                 problem.describe())


def polynomial_probe(problem, schedule, n_steps, probe_grid):
    """Residual polynomial values ``p_n(lam)`` on ``probe_grid`` for ``n = 0..n_steps``.

    Probe points ride along as unit-mass pseudo-atoms that take no part in
    losses or adaptive inner products.
    """
    traj = run(problem, schedule, n_steps, probes=probe_grid)
    return traj.probes
