"""Text reports, JSON-lines sidecars and log-log SVG plots.

Report text is fixed width: one line per trajectory with the legend
``xi_exp (xi_theor)``, the fit window, ``n_th`` and the fit quality. The
sidecar holds one JSON object per line (``{"name", "value", "bound",
"pass", ...}``); it is written with sorted keys so identical inputs give
identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .analysis import FitReport

__all__ = ["CheckRecord", "format_fit_table", "write_jsonl", "read_jsonl", "render_svg",
           "format_checks"]


@dataclass(frozen=True)
class CheckRecord:
    """One machine-readable check: a measured value against a bound."""

    name: str
    value: float | None
    bound: str
    passed: bool
    detail: str = ""

    def as_dict(self):
        v = self.value
        if v is not None and not math.isfinite(v):
            v = str(v)
        return {"name": self.name, "value": v, "bound": self.bound, "pass": bool(self.passed),
                "detail": self.detail}


def _opt(v, fmt):
    return "na" if v is None else format(v, fmt)


def format_fit_table(rows, title="spectral-rates fit report"):
    """``rows`` is a list of ``(name, FitReport | Exception)``."""
    head = f"{'trajectory':<28s} {'kind':<13s} {'xi_exp (xi_theor)':<19s} {'window':<19s} {'n_th':>10s} {'R2':>8s} {'C':>11s}"
    out = [title, "=" * len(head), head, "-" * len(head)]
    for name, fit in rows:
        if isinstance(fit, FitReport):
            window = f"[{fit.n_lo}, {fit.n_hi}]"
            out.append(f"{name[:28]:<28s} {str(fit.kind)[:13]:<13s} {fit.legend():<19s} {window:<19s} "
                       f"{_opt(fit.n_th, '10.4g'):>10s} {fit.r2:8.5f} {fit.prefactor:11.4e}")
        else:
            out.append(f"{name[:28]:<28s} {'':<13s} fit failed: {fit}")
    return "\n".join(out) + "\n"


def format_checks(records, title="validation"):
    width = max([len(r.name) for r in records] + [10])
    lines = [title]
    for r in records:
        val = "na" if r.value is None else f"{r.value:.6g}"
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"  {r.name:<{width}s}  value={val:<14s} bound={r.bound:<24s} {status}"
                     + (f"  {r.detail}" if r.detail else ""))
    n_fail = sum(not r.passed for r in records)
    lines.append(f"{len(records) - n_fail}/{len(records)} checks passed")
    return "\n".join(lines) + "\n"


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for r in records:
            d = r.as_dict() if hasattr(r, "as_dict") else dict(r)
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def render_svg(curves, width=640, height=440, title="loss vs step"):
    """Log-log SVG of loss curves.

    ``curves`` is a list of dicts with ``label``, ``steps``, ``loss`` and
    optionally ``fit`` (a :class:`FitReport`, drawn dashed over its window)
    and ``n_th`` (drawn as a dotted vertical line).
    """
    pts = []
    for c in curves:
        s = np.asarray(c["steps"], dtype=float)
        l = np.asarray(c["loss"], dtype=float)
        ok = (s > 0) & (l > 0) & np.isfinite(l)
        pts.append((s[ok], l[ok]))
    all_s = np.concatenate([p[0] for p in pts]) if pts else np.array([1.0])
    all_l = np.concatenate([p[1] for p in pts]) if pts else np.array([1.0])
    if all_s.size == 0:
        all_s, all_l = np.array([1.0, 10.0]), np.array([1.0, 0.1])
    x0, x1 = math.floor(math.log10(all_s.min())), math.ceil(math.log10(all_s.max()))
    y0, y1 = math.floor(math.log10(all_l.min())), math.ceil(math.log10(all_l.max()))
    x1 = max(x1, x0 + 1)
    y1 = max(y1, y0 + 1)
    ml, mr, mt, mb = 70, 170, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + (y1 - math.log10(v)) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for e in range(x0, x1 + 1):
        x = X(10.0**e)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 16}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        y = Y(10.0**e)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">step n</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">loss</text>')
    for i, (c, (s, l)) in enumerate(zip(curves, pts)):
        color = _PALETTE[i % len(_PALETTE)]
        if s.size:
            if s.size > 2000:
                idx = np.unique(np.round(np.geomspace(1, s.size, 2000)).astype(int) - 1)
                s, l = s[idx], l[idx]
            path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(s, l))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        fit = c.get("fit")
        if isinstance(fit, FitReport):
            xs = np.geomspace(max(fit.n_lo, 1), fit.n_hi, 20)
            ys = 0.5 * fit.prefactor * xs ** (-fit.exponent)
            ok = (ys > 10.0**y0) & (ys < 10.0**y1)
            if np.count_nonzero(ok) >= 2:
                path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(xs[ok], ys[ok]))
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" '
                           f'stroke-dasharray="6,4" points="{path}"/>')
        n_th = c.get("n_th")
        if n_th is not None and 10.0**x0 <= n_th <= 10.0**x1:
            x = X(n_th)
            out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{mt + ph}" stroke="{color}" '
                       f'stroke-dasharray="2,3"/>')
        ly = mt + 14 + 16 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        label = c.get("label", f"curve {i}")
        if isinstance(fit, FitReport):
            label = f"{label} {fit.legend()}"
        out.append(f'<text x="{ml + pw + 34}" y="{ly}">{escape(label[:22])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
