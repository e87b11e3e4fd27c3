import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, value in rep.user_properties:
                if key == "criterion":
                    lines.append((rep.nodeid, f"{'PASS' if rep.passed else 'FAIL'}  criterion {value}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines, key=lambda x: int(x[0].split("test_c")[1][:2])):
            terminalreporter.write_line(text)
