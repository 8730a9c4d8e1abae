from . import acceptance_registry


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = acceptance_registry.RESULTS
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in results:
        terminalreporter.write_line(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}")
