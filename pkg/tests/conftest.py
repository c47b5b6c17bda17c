"""Shared test plumbing: collects acceptance-criterion verdicts and prints
one pass/fail line per criterion in the terminal summary."""

CRITERION_RESULTS = {}  # number -> (passed: bool, detail: str)


def record_criterion(number, passed, detail=""):
    CRITERION_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERION_RESULTS):
        passed, detail = CRITERION_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        line = "criterion %d: %s" % (number, verdict)
        if detail:
            line += " — " + detail
        terminalreporter.write_line(line)
