"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = []


def record(number: int, ok: bool, title: str, detail: str = "") -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}"
    if detail:
        line += f" | {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok


def sort_key(line: str) -> int:
    return int(line.split("criterion")[1].split(":")[0])
