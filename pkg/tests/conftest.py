def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULT_LINES):
        for line in mod.RESULT_LINES[n]:
            terminalreporter.write_line(line)
