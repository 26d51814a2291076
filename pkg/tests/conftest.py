def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k[1:])):
        ok, name, detail = RESULTS[key]
        terminalreporter.write_line(f"{key:>3} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
