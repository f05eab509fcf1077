"""File formats: sequence CSV, tree JSON and metrics CSV.

Sequence CSV holds one observation per row (D real columns, or one integer
column for discrete terminals) with a blank line between sequences.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from rbn.errors import ValidationError
from rbn.model.tree import Tree


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def format_sequences(sequences) -> str:
    blocks = []
    for y in sequences:
        y = np.asarray(y)
        if y.ndim == 1:
            y = y[:, None]
        blocks.append("".join(",".join(_fmt(v) for v in row) + "\n" for row in y))
    return "\n".join(blocks)


def parse_sequences(text: str) -> list[np.ndarray]:
    """Blocks of rows separated by blank lines; integer-only files give int arrays."""
    seqs, block = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            if block:
                seqs.append(block)
                block = []
            continue
        block.append((lineno, [c.strip() for c in line.split(",")]))
    if block:
        seqs.append(block)
    out = []
    for rows in seqs:
        width = len(rows[0][1])
        for lineno, cells in rows:
            if len(cells) != width:
                raise ValidationError(f"line {lineno}: expected {width} columns, got {len(cells)}")
        cells = [c for _, row in rows for c in row]
        try:
            arr = np.array([int(c) for c in cells], dtype=int)
        except ValueError:
            try:
                arr = np.array([float(c) for c in cells])
            except ValueError as exc:
                raise ValidationError(f"non-numeric value in sequence file: {exc}") from None
        out.append(arr.reshape(len(rows), width))
    return out


def read_sequences(path) -> list[np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return parse_sequences(fh.read())


def write_sequences(sequences, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_sequences(sequences))


def trees_to_json(trees) -> str:
    """A single tree is written as an object, several as an array."""
    data = [t.to_dict() for t in trees]
    payload = data[0] if len(data) == 1 else data
    return json.dumps(payload, indent=2) + "\n"


def trees_from_json(text: str) -> list[Tree]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [Tree.from_dict(d) for d in data]


def read_trees(path) -> list[Tree]:
    with open(path, encoding="utf-8") as fh:
        return trees_from_json(fh.read())


def write_trees(trees, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trees_to_json(trees))


METRIC_COLUMNS = ("noise", "method", "precision", "recall", "f1", "ci_low", "ci_high")


def format_metrics(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else f"{r[c]:.12g}" for c in METRIC_COLUMNS])
    return buf.getvalue()
