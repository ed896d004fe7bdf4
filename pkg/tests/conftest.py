"""Suite-wide pytest wiring.

Tests marked ``acceptance("<n>: <label>")`` get a one-line verdict per
criterion in the terminal summary, so the gate's outcome is readable
without scrolling the full test log.
"""

import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(label): marks a test as one acceptance criterion; "
        "the label is echoed as a PASS/FAIL/SKIP line after the run")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and marker.args:
        report.acceptance_label = marker.args[0]


_PRECEDENCE = {"failed": 2, "skipped": 1, "passed": 0}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts: dict[str, str] = {}
    reasons: dict[str, str] = {}
    for reports in terminalreporter.stats.values():
        for report in reports:
            label = getattr(report, "acceptance_label", None)
            if label is None:
                continue
            outcome = report.outcome
            if outcome not in _PRECEDENCE:
                continue
            best = verdicts.get(label)
            if best is None or _PRECEDENCE[outcome] > _PRECEDENCE[best]:
                verdicts[label] = outcome
            if outcome == "skipped" and isinstance(report.longrepr, tuple):
                reasons[label] = report.longrepr[2]
    if not verdicts:
        return
    word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    terminalreporter.write_sep("=", "acceptance criteria")
    for label in sorted(verdicts, key=lambda s: int(s.split(":", 1)[0])):
        line = f"{word[verdicts[label]]:<5} criterion {label}"
        if label in reasons:
            line += f" [{reasons[label]}]"
        terminalreporter.write_line(line)
