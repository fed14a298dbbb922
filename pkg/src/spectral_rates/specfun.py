"""Orthogonal polynomials and special functions.

Jacobi polynomials use the normalization ``P_n^{(a,b)}(1) = binom(n + a, n)``.
The residual (shifted, normalized) form is

    q_n^{(a,b)}(lam) = P_n^{(a,b)}(1 - lam) / P_n^{(a,b)}(1),

so ``q_n(0) == 1`` and the interval ``lam in [0, 2]`` maps onto ``x in [-1, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from .errors import NumericalError, ParameterError

__all__ = [
    "JacobiParams",
    "jacobi_eval",
    "jacobi_residual_eval",
    "jacobi_recurrence_coefficients",
    "jacobi_roots",
    "chebyshev_eval",
    "chebyshev_log_abs_first",
    "hb_constant_residual",
    "hb_constant_slope",
    "log_gamma",
]


@dataclass(frozen=True)
class JacobiParams:
    """Jacobi indices ``(a, b)``, both strictly greater than -1."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ParameterError(f"Jacobi indices must be finite, got a={a}, b={b}")
        if a <= -1 or b <= -1:
            raise ParameterError(f"Jacobi indices must exceed -1, got a={a}, b={b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def _params(params) -> JacobiParams:
    if isinstance(params, JacobiParams):
        return params
    a, b = params
    return JacobiParams(a, b)


def _check_degree(n, minimum=0):
    if int(n) != n or n < minimum:
        raise ParameterError(f"degree must be an integer >= {minimum}, got {n}")
    return int(n)


def jacobi_eval(n, params, x):
    """Evaluate ``P_n^{(a,b)}(x)`` by the forward three-term recurrence.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    n = _check_degree(n)
    p = _params(params)
    a, b = p.a, p.b
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = (a + 1) + (a + b + 2) * (x - 1) / 2
    for k in range(1, n):
        s = 2 * k + a + b
        lead = 2 * (k + 1) * (k + a + b + 1) * s
        lin = (s + 1) * (s * (s + 2) * x + a * a - b * b)
        back = 2 * (k + a) * (k + b) * (s + 2)
        prev, cur = cur, (lin * cur - back * prev) / lead
    return cur if cur.ndim else float(cur)


def jacobi_recurrence_coefficients(n, a, b=0.0):
    """HB-form coefficients ``(alpha_n, beta_n)`` of the residual Jacobi polynomials.

    With these, ``q_{n+1} = (1 - alpha_n lam) q_n + beta_n (q_n - q_{n-1})``.
    """
    n = _check_degree(n)
    p = JacobiParams(a, b)
    a, b = p.a, p.b
    if n == 0:
        # (a+b+1) cancels; the general form is 0/0 when a + b = -1
        return (a + b + 2) / (2 * (a + 1)), 0.0
    s = 2 * n + a + b
    den_a = 2 * (n + a + 1) * (n + a + b + 1)
    if den_a == 0:
        raise ParameterError(f"degenerate Jacobi schedule at n={n}, a={a}, b={b}")
    alpha = (s + 1) * (s + 2) / den_a
    den_b = (n + a + 1) * (n + a + b + 1) * s
    if den_b == 0:
        raise ParameterError(f"degenerate Jacobi schedule at n={n}, a={a}, b={b}")
    beta = n * (n + b) * (s + 2) / den_b
    return alpha, beta


def jacobi_residual_eval(n, params, lam):
    """Evaluate ``q_n^{(a,b)}(lam) = P_n(1 - lam) / P_n(1)``.

    Runs the normalized recurrence so that ``q_n(0) == 1`` holds exactly.
    """
    n = _check_degree(n)
    p = _params(params)
    lam = np.asarray(lam, dtype=float)
    prev = np.ones_like(lam)
    cur = np.ones_like(lam)
    for k in range(n):
        alpha, beta = jacobi_recurrence_coefficients(k, p.a, p.b)
        nxt = cur - alpha * lam * cur
        if k:
            nxt += beta * (cur - prev)
        prev, cur = cur, nxt
    return cur if cur.ndim else float(cur)


def _jacobi_jacobi_matrix(n, a, b):
    """Symmetric tridiagonal matrix whose eigenvalues are the roots of P_n^{(a,b)}."""
    k = np.arange(n, dtype=float)
    s = 2 * k + a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = (b * b - a * a) / (s * (s + 2))
    # k = 0 entry is 0/0 when a + b == 0
    diag[0] = (b - a) / (a + b + 2)
    k1 = np.arange(1, n, dtype=float)
    s1 = 2 * k1 + a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        off2 = 4 * k1 * (k1 + a) * (k1 + b) * (k1 + a + b) / (s1 * s1 * (s1 + 1) * (s1 - 1))
    if n > 1:
        # (k + a + b) / (s - 1) cancels at k = 1; 0/0 when a + b == -1
        off2[0] = 4 * (1 + a) * (1 + b) / ((2 + a + b) ** 2 * (3 + a + b))
    return diag, np.sqrt(off2)


def jacobi_roots(n, params):
    """Roots of ``q_n^{(a,b)}`` in the ``lam`` variable, strictly decreasing.

    Golub-Welsch eigenvalues of the recurrence matrix, each polished by one
    Newton step on the three-term recurrence. All roots lie in ``(0, 2)``.
    """
    n = _check_degree(n, minimum=1)
    p = _params(params)
    diag, off = _jacobi_jacobi_matrix(n, p.a, p.b)
    try:
        x = eigh_tridiagonal(diag, off, eigvals_only=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"root finding failed at degree {n}") from exc
    x = np.clip(np.sort(x), -1.0, 1.0)
    x = _newton_polish(n, p, x)
    lam = np.sort(1.0 - x)[::-1]
    if np.any(~np.isfinite(lam)) or np.any(np.diff(lam) >= 0):
        raise NumericalError(f"root finding produced non-distinct roots at degree {n}")
    return lam


def _newton_polish(n, p, x):
    # derivative: d/dx P_n^{(a,b)} = (n + a + b + 1)/2 * P_{n-1}^{(a+1,b+1)}
    val = jacobi_eval(n, p, x)
    der = 0.5 * (n + p.a + p.b + 1) * jacobi_eval(n - 1, JacobiParams(p.a + 1, p.b + 1), x)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(der != 0, val / der, 0.0)
    polished = x - step
    # keep the eigenvalue if Newton jumps outside its bracket
    ok = np.isfinite(polished) & (np.abs(step) < 1e-3) & (np.abs(polished) < 1)
    return np.where(ok, polished, x)


def _as_out(v):
    return v if np.ndim(v) else float(v)


def chebyshev_eval(kind, n, z):
    """Chebyshev ``T_n(z)`` (``kind='first'``) or ``U_n(z)`` (``kind='second'``).

    Trigonometric branch for ``|z| <= 1``, hyperbolic branch otherwise.
    ``n = -1`` is allowed with ``T_{-1}(z) = z`` and ``U_{-1}(z) = 0``.
    """
    if kind not in ("first", "second"):
        raise ParameterError(f"kind must be 'first' or 'second', got {kind!r}")
    if int(n) != n or n < -1:
        raise ParameterError(f"degree must be an integer >= -1, got {n}")
    n = int(n)
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    inside = np.abs(z) <= 1
    zi = z[inside]
    phi = np.arccos(zi)
    if kind == "first":
        out[inside] = np.cos(n * phi)
    else:
        sin_phi = np.sin(phi)
        edge = sin_phi == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.sin((n + 1) * phi) / sin_phi
        # U_n(+-1) = (+-1)^n (n + 1)
        val[edge] = np.where(zi[edge] > 0, 1.0, (-1.0) ** n) * (n + 1)
        out[inside] = val
    zo = z[~inside]
    sign = np.where(zo < 0, (-1.0) ** n, 1.0)
    t = np.arccosh(np.abs(zo))
    if kind == "first":
        out[~inside] = sign * np.cosh(n * t)
    else:
        out[~inside] = sign * np.sinh((n + 1) * t) / np.sinh(t)
    return _as_out(out)


def chebyshev_log_abs_first(n, z):
    """``log|T_n(z)|`` without overflow for large ``n`` and ``|z| > 1``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    inside = np.abs(z) <= 1
    with np.errstate(divide="ignore"):
        out[inside] = np.log(np.abs(np.cos(n * np.arccos(z[inside]))))
    t = np.arccosh(np.abs(z[~inside]))
    out[~inside] = n * t + np.log1p(np.exp(-2 * n * t)) - math.log(2.0)
    return _as_out(out)


def hb_constant_residual(n, alpha, beta, lam):
    """Residual polynomial of Heavy Ball with constant ``(alpha, beta)``.

    Closed form in Chebyshev polynomials of ``z = (1 + beta - alpha lam) / (2 sqrt(beta))``::

        q_n = b^n U_n(z) - b^{n+1} U_{n+1}(z) + 2 b^{n+1} T_{n+1}(z),  b = sqrt(beta)

    Outside the oscillatory region the powers of ``b`` are folded into the
    hyperbolic exponentials so large ``n`` does not overflow. ``beta == 0``
    reduces to gradient descent, ``(1 - alpha lam)^n``.
    """
    n = _check_degree(n)
    if not 0 <= beta < 1:
        raise ParameterError(f"momentum must satisfy 0 <= beta < 1, got {beta}")
    lam = np.asarray(lam, dtype=float)
    if beta == 0:
        return _as_out((1.0 - alpha * lam) ** n)
    if n == 0:
        return _as_out(np.ones_like(lam))
    sb = math.sqrt(beta)
    z = (1 + beta - alpha * lam) / (2 * sb)
    out = np.empty_like(z)

    inside = np.abs(z) <= 1
    if np.any(inside):
        zi = z[inside]
        scale = sb**n
        u_n = chebyshev_eval("second", n, zi)
        u_n1 = chebyshev_eval("second", n + 1, zi)
        t_n1 = chebyshev_eval("first", n + 1, zi)
        out[inside] = scale * (u_n - sb * u_n1 + 2 * sb * t_n1)

    outside = ~inside
    if np.any(outside):
        zo = z[outside]
        sign = np.where(zo < 0, -1.0, 1.0)
        t = np.arccosh(np.abs(zo))
        log_b = math.log(sb)
        sinh_t = np.sinh(t)

        def scaled_u(m, power):
            # b^power * |U_m(|z|)|, with U_m = sinh((m+1)t)/sinh t
            hi = np.exp((m + 1) * t + power * log_b)
            lo = np.exp(-(m + 1) * t + power * log_b)
            return (hi - lo) / (2 * sinh_t)

        def scaled_t(m, power):
            hi = np.exp(m * t + power * log_b)
            lo = np.exp(-m * t + power * log_b)
            return (hi + lo) / 2

        # parity: U_m(-x) = (-1)^m U_m(x), T_m(-x) = (-1)^m T_m(x)
        s_n = sign**n
        s_n1 = sign ** (n + 1)
        out[outside] = (
            s_n * scaled_u(n, n)
            - s_n1 * scaled_u(n + 1, n + 1)
            + 2 * s_n1 * scaled_t(n + 1, n + 1)
        )
    return _as_out(out)


def hb_constant_slope(n, alpha, beta):
    """Derivative at ``lam = 0`` of the constant-rate HB residual polynomial."""
    n = _check_degree(n)
    if beta == 0:
        return -alpha * n
    return -alpha / (1 - beta) * (n - beta * (1 - beta**n) / (1 - beta))


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0`` (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ParameterError(f"log_gamma requires x > 0, got {x}")
    if arr.ndim == 0:
        return math.lgamma(float(arr))
    return gammaln(arr)
