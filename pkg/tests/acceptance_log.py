"""Collects one PASS/FAIL line per acceptance criterion for the end-of-run summary."""

LINES = {}


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number:>2} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
    LINES[number] = line
    print(line)
    return line
