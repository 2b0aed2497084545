import acceptance_log


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.ordered_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
