import pytest

_RESULTS = pytest.StashKey[dict]()

CRITERIA = {
    1: "CG on equal-mass discretizations vs the exact power-law losses",
    2: "stable CG on the chain operator; eigenvalue sandwich",
    3: "fitted exponents on the synthetic diagonal problem",
    4: "GD/HB loss prefactor at n = 1e4",
    5: "Jacobi-HB loss bound on [1e2, 1e4]",
    6: "SD step sizes, SD exponent and period-2 regime",
    7: "oracle-free property suites",
    8: "Jacobi-HB exponent tightness in a and insensitivity to b",
}


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(criterion, part, passed, detail)`` records one acceptance sub-check."""
    store = request.config.stash[_RESULTS]

    def record(criterion, part, passed, detail=""):
        store.setdefault(criterion, []).append((part, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, {})
    if not store:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(CRITERIA):
        parts = store.get(c)
        if not parts:
            tr.write_line(f"criterion {c}: NOT RUN  {CRITERIA[c]}")
            continue
        failed = [p for p in parts if not p[1]]
        status = "PASS" if not failed else "FAIL"
        tr.write_line(f"criterion {c}: {status}  {CRITERIA[c]} ({len(parts) - len(failed)}/{len(parts)} checks)")
        for part, ok, detail in parts:
            if not ok or tr.verbosity > 0:
                tr.write_line(f"    {'ok  ' if ok else 'FAIL'} {part}: {detail}")
