ACCEPTANCE_RESULTS: dict[str, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k)):
        name, ok, detail = ACCEPTANCE_RESULTS[key]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {key:>2}. {name}: {detail}")
