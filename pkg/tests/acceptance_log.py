"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = []


def verdict(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} | {detail}"
    LINES.append(line)
    print(line)
    assert ok, line
