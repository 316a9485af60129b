import re

CRITERION_PATTERN = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = CRITERION_PATTERN.search(getattr(report, "nodeid", ""))
            if match:
                number = int(match.group(1))
                ok = status == "passed" and outcomes.get(number, (True,))[0]
                outcomes[number] = (ok, match.group(2))
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(outcomes):
        ok, name = outcomes[number]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:02d} [{verdict}] {name.replace('_', ' ')}"
        )
