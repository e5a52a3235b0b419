import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(helpers.CRITERIA):
        terminalreporter.write_line(helpers.format_line(n))
