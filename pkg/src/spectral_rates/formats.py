"""Measure, operator and trajectory file formats.

Measure file::

    atoms=<K> zeta=<zeta|na> nu=<nu|na> [key=value ...]
    <lam_1> <c_1^2>
    ...

with ``lam`` non-increasing and values in ``%.17e``. Extra header keys carry
other metadata (``Q``, ``Lambda``, ``lambda_scale``, ``kind``, ...).

Operator file::

    operator rows=<m> cols=<n> storage=<band|dense> zeta=<..|na> nu=<..|na> [key=value ...]

followed by ``m`` rows. ``band`` stores a lower-bidiagonal square matrix as
``<diag_i> <sub_i> <target_i>`` (``sub_0 = 0``); ``dense`` stores
``<J_i1> ... <J_in> <target_i>``.

Trajectory CSV: header ``step,loss,alpha,beta`` plus one ``p_at_<lam>``
column per probe, one row per recorded step, floats in ``%.17e``. A run that
diverged ends with the marker row ``#diverged,<step>``. Problem and schedule
descriptors go to a JSON sidecar ``<file>.meta.json``.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .engine import Trajectory
from .errors import DataError
from .specfun import hb_constant_slope
from .spectrum import DiscreteMeasure, OperatorProblem

__all__ = [
    "write_measure",
    "read_measure",
    "write_operator",
    "read_operator",
    "read_problem",
    "write_trajectory",
    "read_trajectory",
    "format_float",
    "sidecar_path",
]

_HEADER_KEYS = ("zeta", "nu")


def format_float(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17e}"


def _fmt_meta(v):
    if v is None:
        return "na"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    s = str(v)
    if any(c.isspace() for c in s) or "=" in s:
        raise DataError(f"metadata value {s!r} cannot contain spaces or '='")
    return s


def _parse_meta(tok):
    if tok == "na":
        return None
    if tok in ("true", "false"):
        return tok == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def _parse_header(line, lead=None):
    toks = line.split()
    if lead is not None:
        if not toks or toks[0] != lead:
            raise DataError(f"expected a header starting with {lead!r}, got {line.strip()!r}")
        toks = toks[1:]
    out = {}
    for t in toks:
        if "=" not in t:
            raise DataError(f"malformed header token {t!r}")
        k, v = t.split("=", 1)
        out[k] = _parse_meta(v)
    return out


def _open(path, mode):
    try:
        return open(path, mode, newline="" if "b" not in mode else None)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc


def write_measure(path, m: DiscreteMeasure):
    info = dict(m.info)
    head = [f"atoms={len(m)}"] + [f"{k}={_fmt_meta(info.get(k))}" for k in _HEADER_KEYS]
    head += [f"{k}={_fmt_meta(v)}" for k, v in sorted(info.items()) if k not in _HEADER_KEYS
             and isinstance(v, (int, float, str, bool, np.integer, np.floating))]
    lines = [" ".join(head)]
    lines += [f"{format_float(a)} {format_float(c)}" for a, c in zip(m.atoms, m.masses)]
    with _open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_measure(path):
    with _open(path, "r") as fh:
        first = fh.readline()
        meta = _parse_header(first)
        if "atoms" not in meta:
            raise DataError(f"{path}: header lacks atoms=<K>")
        try:
            data = np.loadtxt(fh, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed atom line ({exc})") from exc
    K = meta.pop("atoms")
    if data.shape != (K, 2):
        raise DataError(f"{path}: expected {K} lines of 'lambda mass', found shape {data.shape}")
    info = {k: v for k, v in meta.items() if v is not None}
    return DiscreteMeasure(data[:, 0], data[:, 1], info)


def _is_lower_bidiagonal(J):
    return J.shape[0] == J.shape[1] and not np.any(np.tril(J, -2)) and not np.any(np.triu(J, 1))


def write_operator(path, prob: OperatorProblem, storage=None):
    J, f = prob.operator, prob.target
    if storage is None:
        storage = "band" if _is_lower_bidiagonal(J) else "dense"
    if storage == "band" and not _is_lower_bidiagonal(J):
        raise DataError("band storage needs a square lower-bidiagonal operator")
    info = dict(prob.info)
    head = ["operator", f"rows={J.shape[0]}", f"cols={J.shape[1]}", f"storage={storage}"]
    head += [f"{k}={_fmt_meta(info.get(k))}" for k in _HEADER_KEYS]
    head += [f"{k}={_fmt_meta(v)}" for k, v in sorted(info.items()) if k not in _HEADER_KEYS
             and isinstance(v, (int, float, str, bool, np.integer, np.floating))]
    lines = [" ".join(head)]
    if storage == "band":
        sub = np.concatenate([[0.0], np.diag(J, -1)])
        for d, s, t in zip(np.diag(J), sub, f):
            lines.append(f"{format_float(d)} {format_float(s)} {format_float(t)}")
    else:
        for row, t in zip(J, f):
            lines.append(" ".join(format_float(v) for v in row) + " " + format_float(t))
    with _open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_operator(path):
    with _open(path, "r") as fh:
        meta = _parse_header(fh.readline(), lead="operator")
        try:
            data = np.loadtxt(fh, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed operator line ({exc})") from exc
    rows, cols, storage = meta.pop("rows"), meta.pop("cols"), meta.pop("storage")
    if storage == "band":
        if data.shape != (rows, 3) or rows != cols:
            raise DataError(f"{path}: band storage needs {rows} lines of 3 values")
        J = np.diag(data[:, 0]) + np.diag(data[1:, 1], -1)
        f = data[:, 2]
    elif storage == "dense":
        if data.shape != (rows, cols + 1):
            raise DataError(f"{path}: dense storage needs {rows} lines of {cols + 1} values")
        J, f = data[:, :cols], data[:, cols]
    else:
        raise DataError(f"{path}: unknown storage {storage!r}")
    info = {k: v for k, v in meta.items() if v is not None}
    return OperatorProblem(J, f, info)


def read_problem(path):
    """Measure or operator file, told apart by the header."""
    with _open(path, "r") as fh:
        first = fh.readline()
    if first.startswith("operator"):
        return read_operator(path)
    return read_measure(path)


def sidecar_path(path):
    return str(path) + ".meta.json"


def _probe_name(lam):
    return f"p_at_{float(lam)!r}"


def write_trajectory(path, traj: Trajectory, sidecar=True):
    cols = ["step", "loss", "alpha", "beta"] + [_probe_name(p) for p in traj.probe_points]
    lines = [",".join(cols)]
    for i, n in enumerate(traj.steps):
        vals = [str(int(n)), format_float(traj.loss[i]), format_float(traj.alpha[i]),
                format_float(traj.beta[i])]
        if traj.probes is not None:
            vals += [format_float(v) for v in traj.probes[i]]
        lines.append(",".join(vals))
    if traj.diverged:
        lines.append(f"#diverged,{int(traj.steps[-1]) + 1 if len(traj) else 0}")
    with _open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if sidecar:
        meta = {"problem": _jsonable(traj.problem), "schedule": _jsonable(traj.schedule),
                "events": list(traj.events), "diagnostics": _jsonable(traj.diagnostics),
                "diverged": bool(traj.diverged)}
        with _open(sidecar_path(path), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _jsonable(d):
    out = {}
    for k, v in dict(d).items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


def _reconstruct_slope(steps, alpha, beta, schedule):
    """``p_n'(0)`` from the recorded rates (or the closed form for constant schedules)."""
    if schedule.get("schedule") == "constant":
        a, b = schedule["alpha"], schedule.get("beta", 0.0)
        if 0 <= b < 1:
            return np.array([hb_constant_slope(int(n), a, b) for n in steps])
    if steps.size == 0 or steps[0] != 0 or not np.all(np.diff(steps) == 1):
        return None
    s = np.zeros(steps.size)
    for i in range(steps.size - 1):
        prev = s[i - 1] if i > 0 else 0.0
        b = beta[i] if i > 0 and np.isfinite(beta[i]) else 0.0
        a = alpha[i] if np.isfinite(alpha[i]) else 0.0
        s[i + 1] = s[i] - a + b * (s[i] - prev)
    return s


def read_trajectory(path):
    """Parse a trajectory CSV (and its sidecar when present)."""
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty trajectory file")
    cols = lines[0].split(",")
    if cols[:4] != ["step", "loss", "alpha", "beta"]:
        raise DataError(f"{path}: header must start with step,loss,alpha,beta")
    probe_points = []
    for c in cols[4:]:
        if not c.startswith("p_at_"):
            raise DataError(f"{path}: unexpected column {c!r}")
        probe_points.append(float(c[5:]))
    diverged = False
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        if ln.startswith("#diverged"):
            diverged = True
            continue
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise DataError(f"{path}: row {ln!r} has {len(parts)} fields, expected {len(cols)}")
        rows.append(parts)
    try:
        steps = np.array([int(r[0]) for r in rows], dtype=np.int64)
        vals = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), len(cols) - 1)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc
    meta = {}
    side = sidecar_path(path)
    if os.path.exists(side):
        with _open(side, "r") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{side}: malformed sidecar ({exc})") from exc
    schedule = meta.get("schedule", {})
    alpha, beta = vals[:, 1], vals[:, 2]
    probes = vals[:, 3:] if probe_points else None
    slope = _reconstruct_slope(steps, alpha, beta, schedule)
    return Trajectory(steps, vals[:, 0], alpha, beta, slope, np.array(probe_points), probes,
                      diverged=diverged or bool(meta.get("diverged", False)),
                      events=meta.get("events", []), problem=meta.get("problem", {}),
                      schedule=schedule, diagnostics=meta.get("diagnostics", {}))
