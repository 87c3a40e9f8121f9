"""Suite-wide pytest hooks.

Tests tagged ``@pytest.mark.criterion(key, title)`` are aggregated into
a per-criterion PASS/FAIL/SKIP line printed after the normal summary,
so the acceptance gate reads as one line per criterion.
"""

_TAGGED = {}    # nodeid -> (key, title)
_RESULTS = {}   # nodeid -> "PASS" | "FAIL" | "SKIP"


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(key, title): tag a test as part of an acceptance criterion",
    )


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _TAGGED[item.nodeid] = (str(marker.args[0]), marker.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _TAGGED:
        return
    if report.failed:
        _RESULTS[report.nodeid] = "FAIL"
    elif report.skipped:
        _RESULTS.setdefault(report.nodeid, "SKIP")
    elif report.when == "call":
        _RESULTS.setdefault(report.nodeid, "PASS")


def _criterion_order(key: str):
    try:
        return (0, int(key))
    except ValueError:
        return (1, key)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    grouped = {}
    for nodeid, outcome in _RESULTS.items():
        key, title = _TAGGED[nodeid]
        grouped.setdefault(key, {"title": title, "outcomes": []})
        grouped[key]["outcomes"].append(outcome)
    terminalreporter.section("acceptance criteria")
    for key in sorted(grouped, key=_criterion_order):
        outcomes = grouped[key]["outcomes"]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(
            f"criterion {key:>2}: {verdict}  {grouped[key]['title']}"
        )
