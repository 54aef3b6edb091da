"""Deterministic CSV emission (bit-identical output for identical inputs)."""

from __future__ import annotations

import os


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    try:
        import numpy as np

        if isinstance(x, np.integer):
            return str(int(x))
        if isinstance(x, np.floating):
            return format(float(x), ".17g")
    except ImportError:  # pragma: no cover
        pass
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def read_csv(path):
    """Read back a CSV written by write_csv: (header, list of float rows)."""
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [[float(tok) for tok in line.strip().split(",")] for line in f if line.strip()]
    return header, rows
