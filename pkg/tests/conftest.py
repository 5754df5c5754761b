# filled by test_acceptance.verdict(); echoed once more at the end of the run
VERDICTS: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--full-scale", action="store_true", default=False,
                     help="run the full 5e6-step guided protocol (days on one core)")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
