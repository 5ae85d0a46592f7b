import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(helpers.CRITERIA_LINES, key=lambda l: int(l.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
