"""Experiment configuration: an INI-style file plus command-line overrides.

File grammar (``configparser``; ``#`` and ``;`` start comments)::

    [problem]
    kind = diagonal          # or: file = path/to/measure.txt
    M = 100000
    nu = 1.5
    zeta = 1
    seed = 0                 # only for generators that draw random numbers

    [schedule]
    kind = jacobi-hb
    a = 1
    b = 0

    [run]
    steps = 1200
    probes = 0.1, 0.001
    closed_form = false
    output = traj.csv

    [analysis]
    window = auto            # auto | threshold | <lo>,<hi>
    r0 = 0.5
    delta = 0.02
    lambda_low = 1e-8
    tolerance = 0.15

    [sweep]
    a = 0.25, 0.75, 2        # one comma-separated value list per swept key
    jobs = 1

Flags given on the command line override file values. The environment
variable ``SPECTRAL_RATES_OUTPUT`` sets only the default output directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .errors import ParameterError

__all__ = [
    "OUTPUT_ENV",
    "GENERATOR_KINDS",
    "RANDOM_GENERATORS",
    "ExperimentConfig",
    "load_config_file",
    "parse_value",
    "parse_list",
    "parse_window",
    "default_output_dir",
]

OUTPUT_ENV = "SPECTRAL_RATES_OUTPUT"

# generator kind -> accepted parameters
GENERATOR_KINDS = {
    "diagonal": ("M", "nu", "zeta"),
    "powerlaw": ("K", "nu", "zeta"),
    "sd-lowerbound": ("K", "nu", "zeta"),
    "chain": ("N", "nu", "zeta"),
    "equal-mass": ("M", "zeta"),
    "gaussian-mix": ("d", "clusters", "per_cluster", "separation", "seed"),
    "ntk": ("data", "format", "target_column"),
}
RANDOM_GENERATORS = ("gaussian-mix",)

SCHEDULE_KEYS = ("alpha", "beta", "a", "b", "depth", "orthogonalize", "history_cap",
                 "allow_unstable")
_INT_KEYS = {"M", "K", "N", "d", "clusters", "per_cluster", "seed", "depth", "history_cap",
             "steps", "jobs", "record_points"}


def parse_value(key, text):
    """Typed value for a config or grid entry."""
    if isinstance(text, (int, float, bool)) or text is None:
        return text
    s = str(text).strip()
    if s.lower() in ("true", "yes", "on"):
        return True
    if s.lower() in ("false", "no", "off"):
        return False
    if key in _INT_KEYS:
        try:
            v = float(s)
        except ValueError as exc:
            raise ParameterError(f"{key} must be a number, got {s!r}") from exc
        if v != int(v):
            raise ParameterError(f"{key} must be an integer, got {s!r}")
        return int(v)
    try:
        return float(s)
    except ValueError:
        return s


def parse_list(key, text):
    items = [t for t in (p.strip() for p in str(text).split(",")) if t]
    return [parse_value(key, t) for t in items]


def parse_window(text):
    """``auto``, ``threshold`` or ``lo,hi``."""
    if text is None:
        return "auto"
    if isinstance(text, tuple):
        return text
    s = str(text).strip().lower()
    if s in ("auto", "threshold"):
        return s
    parts = s.split(",")
    if len(parts) != 2:
        raise ParameterError(f"window must be auto, threshold or lo,hi; got {text!r}")
    try:
        lo, hi = (int(float(p)) for p in parts)
    except ValueError as exc:
        raise ParameterError(f"bad window {text!r}") from exc
    if not 0 < lo < hi:
        raise ParameterError(f"window needs 0 < lo < hi, got {lo},{hi}")
    return lo, hi


def default_output_dir():
    return os.environ.get(OUTPUT_ENV) or "."


def load_config_file(path):
    """Read a config file into ``{section: {key: value}}`` with typed values."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep M, K, N case-sensitive
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ParameterError(f"malformed config file {path}: {exc}") from exc
    known = {"problem", "schedule", "run", "analysis", "sweep"}
    out = {}
    for sec in cp.sections():
        if sec not in known:
            raise ParameterError(f"unknown config section [{sec}]; expected one of {sorted(known)}")
        if sec == "sweep":
            out[sec] = {k: (parse_value(k, v) if k == "jobs" else parse_list(k, v))
                        for k, v in cp.items(sec)}
        elif sec == "run" and "probes" in cp[sec]:
            d = {k: parse_value(k, v) for k, v in cp.items(sec) if k != "probes"}
            d["probes"] = parse_list("probes", cp[sec]["probes"])
            out[sec] = d
        else:
            out[sec] = {k: parse_value(k, v) for k, v in cp.items(sec)}
    return out


@dataclass
class ExperimentConfig:
    """One problem, one schedule and the run/analysis options."""

    problem: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=lambda: {"kind": "cg"})
    steps: int = 100
    probes: list = field(default_factory=list)
    closed_form: bool = False
    record_points: int | None = None
    output: str | None = None
    window: object = "auto"
    r0: float = 0.5
    delta: float = 0.02
    lambda_low: float | None = None
    tolerance: float | None = None

    @classmethod
    def from_sources(cls, file_sections=None, overrides=None):
        """Merge file sections and flag overrides (``None`` flags are ignored)."""
        sec = file_sections or {}
        ov = {k: {kk: vv for kk, vv in v.items() if vv is not None}
              for k, v in (overrides or {}).items() if v is not None}
        problem = dict(sec.get("problem", {}))
        problem.update(ov.get("problem", {}))
        schedule = dict(sec.get("schedule", {"kind": "cg"}))
        schedule.update(ov.get("schedule", {}))
        schedule.setdefault("kind", "cg")
        run = dict(sec.get("run", {}))
        run.update(ov.get("run", {}))
        ana = dict(sec.get("analysis", {}))
        ana.update(ov.get("analysis", {}))
        cfg = cls(problem=problem, schedule=schedule,
                  steps=int(run.get("steps", 100)),
                  probes=[float(p) for p in run.get("probes", [])],
                  closed_form=bool(run.get("closed_form", False)),
                  record_points=run.get("record_points"),
                  output=run.get("output"),
                  window=parse_window(ana.get("window", "auto")),
                  r0=float(ana.get("r0", 0.5)),
                  delta=float(ana.get("delta", 0.02)),
                  lambda_low=ana.get("lambda_low"),
                  tolerance=ana.get("tolerance"))
        cfg.validate()
        return cfg

    def validate(self):
        has_file = "file" in self.problem
        kind = self.problem.get("kind")
        if has_file == (kind is not None):
            raise ParameterError("give exactly one of a problem file or a generator kind")
        if kind is not None:
            if kind not in GENERATOR_KINDS:
                raise ParameterError(f"unknown generator {kind!r}; expected one of {sorted(GENERATOR_KINDS)}")
            if kind in RANDOM_GENERATORS and self.problem.get("seed") is None:
                raise ParameterError(f"generator {kind!r} draws random numbers and needs a seed")
        if self.steps < 0:
            raise ParameterError(f"steps must be nonnegative, got {self.steps}")
        return self

    def schedule_params(self):
        return {k: v for k, v in self.schedule.items() if k in SCHEDULE_KEYS}
