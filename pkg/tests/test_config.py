import pytest

from spectral_rates.config import ExperimentConfig, load_config_file, parse_window
from spectral_rates.errors import ParameterError


def test_load_and_override(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[problem]\nkind = diagonal\nM = 1e4  # atoms\nnu = 1.5\nzeta = 1\n\n"
                 "[schedule]\nkind = jacobi-hb\na = 1\n\n[run]\nsteps = 300\nprobes = 0.1, 0.01\n\n"
                 "[analysis]\nwindow = 10,100\n\n[sweep]\na = 0.25, 0.75\njobs = 2\n")
    sec = load_config_file(p)
    assert sec["problem"]["M"] == 10000 and sec["sweep"]["a"] == [0.25, 0.75]
    cfg = ExperimentConfig.from_sources(sec, {"schedule": {"a": 2.0}, "run": {"steps": None}})
    assert cfg.schedule == {"kind": "jacobi-hb", "a": 2.0}
    assert cfg.steps == 300 and cfg.probes == [0.1, 0.01] and cfg.window == (10, 100)


def test_config_errors(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[solver]\nx = 1\n")
    with pytest.raises(ParameterError):
        load_config_file(p)
    with pytest.raises(ParameterError):
        ExperimentConfig.from_sources({}, {})
    with pytest.raises(ParameterError):
        ExperimentConfig.from_sources({}, {"problem": {"kind": "gaussian-mix"}})
    with pytest.raises(ParameterError):
        ExperimentConfig.from_sources({}, {"problem": {"kind": "diagonal", "file": "x"}})
    with pytest.raises(ParameterError):
        parse_window("5,2")
    assert parse_window("threshold") == "threshold"
