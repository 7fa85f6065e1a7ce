import pytest

CRITERIA = {
    1: "conservation of mass and momentum",
    2: "constant-kernel PDE flocking rate",
    3: "general-kernel PDE flocking bound",
    4: "particle flocking bound",
    5: "two-particle oracle",
    6: "closing-residual eps scaling",
    7: "weight benefit",
    8: "flocked-data model equivalence",
    9: "hydro discrepancy shape",
    10: "PDE/particles error shape",
    11: "SPDE statistics",
    12: "benchmark shape",
    13: "spectral oracles",
    14: "regularization safety",
}

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed and not rep.skipped):
        return
    entry = _results.setdefault(marker.args[0], {"outcomes": [], "details": []})
    entry["outcomes"].append(rep.outcome)
    if rep.when == "call":
        entry["details"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        entry = _results.get(n)
        if entry is None:
            status = "NOT RUN"
        elif "failed" in entry["outcomes"]:
            status = "FAIL"
        elif all(o == "skipped" for o in entry["outcomes"]):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(entry["details"]) if entry else ""
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {title}" + (f"  [{detail}]" if detail else ""))
