import pytest

# acceptance results collected by tests/test_acceptance.py, one line per criterion
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(num, name, ok, detail, seconds):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: {detail} ({seconds:.1f} s)"
        print(line)
        ACCEPTANCE.append((num, line))
        return ok
    return _report
