import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, shown in the terminal summary."""
    state = {}

    def record(number, title, detail=""):
        state.update(number=number, title=title, detail=detail)
        return state

    yield record
    if state:
        status = "PASS" if state.get("passed") else "FAIL"
        line = f"criterion {state['number']:>2} {status}: {state['title']}"
        if state.get("detail"):
            line += f" ({state['detail']})"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
