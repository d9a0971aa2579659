"""Collects one verdict line per acceptance criterion for the terminal summary."""
_LINES = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _LINES[number] = line
    print(line)
    return ok


def lines():
    return [_LINES[k] for k in sorted(_LINES)]
