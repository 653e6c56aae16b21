"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

from collections import defaultdict

_OUTCOMES = defaultdict(list)


def record(criterion: int, label: str, status: str, detail: str = "") -> None:
    _OUTCOMES[criterion].append((label, status, detail))
    print(f"[criterion {criterion}] {label}: {status} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(_OUTCOMES):
        checks = _OUTCOMES[criterion]
        statuses = {status for _, status, _ in checks}
        if "FAIL" in statuses:
            overall = "FAIL"
        elif statuses == {"SKIP"}:
            overall = "SKIP"
        else:
            overall = "PASS"
        tr.write_line(f"criterion {criterion:2d}: {overall}")
        for label, status, detail in checks:
            tr.write_line(f"    {status:4s}  {label}  {detail}".rstrip())
