import sys

VERDICTS = []


def record(number, name, ok, detail, elapsed):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail} [{elapsed:.1f} s]"
    VERDICTS.append((number, line))
    print(line, file=sys.stderr)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
