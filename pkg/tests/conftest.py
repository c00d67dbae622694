from helpers import ACCEPTANCE

CRITERIA = range(1, 11)


def pytest_terminal_summary(terminalreporter):
    ran_acceptance = any(
        "test_acceptance" in rep.nodeid
        for reports in terminalreporter.stats.values() for rep in reports if hasattr(rep, "nodeid"))
    if not ran_acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in CRITERIA:
        status, title, detail = ACCEPTANCE.get(n, ("FAIL", "not run", "no result recorded"))
        terminalreporter.write_line(f"criterion {n:>2} {status}: {title} [{detail}]")
