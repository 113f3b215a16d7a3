import pytest

CRITERIA = {
    1: "factorization oracle equivalence",
    2: "game-value certificates",
    3: "zero-testing separation, real alphabet",
    4: "zero-testing rate, complex alphabet",
    5: "trace hard instance",
    6: "concentration probe",
    7: "divergence identities",
    8: "Khatri-Rao conditioning",
    9: "game harness sanity",
    10: "determinism",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")


def pytest_runtest_logreport(report):
    k = getattr(report, "criterion", None)
    if k is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(k, []).append((report.nodeid.split("::")[-1], report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(CRITERIA):
        results = _outcomes.get(k)
        if not results:
            continue
        ok = all(o == "passed" for _, o in results)
        tr.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {CRITERIA[k]}")
        if not ok:
            for name, o in results:
                if o != "passed":
                    tr.write_line(f"    {o}: {name}")
