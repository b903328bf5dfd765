"""Dataset file formats: delimited text and sparse index:value lines."""

from __future__ import annotations

import csv

import numpy as np

from .core import Dataset
from .errors import InvalidInput

CSV = "csv"
LIBSVM = "libsvm"


def _parse_label(token: str, line_no: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise InvalidInput(f"line {line_no}: label {token!r} is not numeric") from None
    if value != int(value):
        raise InvalidInput(f"line {line_no}: label {token!r} is not an integer")
    return int(value)


def _load_csv(path: str, label_col, header: bool) -> Dataset:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    rows = [r for r in rows if r]
    if not rows:
        raise InvalidInput(f"{path}: file is empty")

    names = None
    start = 0
    if header:
        names = [c.strip() for c in rows[0]]
        start = 1
    if isinstance(label_col, str) and not label_col.lstrip("-").isdigit():
        if names is None:
            raise InvalidInput("a named label column requires a header row")
        try:
            label_idx = names.index(label_col)
        except ValueError:
            raise InvalidInput(f"label column {label_col!r} not found in header") from None
    else:
        label_idx = int(label_col)

    labels, features = [], []
    for offset, row in enumerate(rows[start:], start=start + 1):
        if label_idx >= len(row) or label_idx < -len(row):
            raise InvalidInput(f"line {offset}: missing label column")
        labels.append(_parse_label(row[label_idx].strip(), offset))
        feats = []
        for col, token in enumerate(row):
            if col == label_idx % len(row):
                continue
            try:
                feats.append(float(token))
            except ValueError:
                raise InvalidInput(
                    f"line {offset}: non-numeric feature {token!r}"
                ) from None
        features.append(feats)

    widths = {len(f) for f in features}
    if len(widths) != 1:
        raise InvalidInput("rows have inconsistent feature counts")
    return Dataset(np.asarray(features, dtype=float), np.asarray(labels, dtype=int))


def _load_libsvm(path: str, dims: int | None) -> Dataset:
    labels, entries, max_idx = [], [], 0
    with open(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            labels.append(_parse_label(tokens[0], line_no))
            row = {}
            for token in tokens[1:]:
                if ":" not in token:
                    raise InvalidInput(f"line {line_no}: malformed entry {token!r}")
                idx_str, val_str = token.split(":", 1)
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise InvalidInput(
                        f"line {line_no}: malformed entry {token!r}"
                    ) from None
                if idx < 1:
                    raise InvalidInput(f"line {line_no}: indices are 1-based")
                row[idx] = val
                max_idx = max(max_idx, idx)
            entries.append(row)
    if not entries:
        raise InvalidInput(f"{path}: file is empty")
    p = dims if dims is not None else max_idx
    if max_idx > p:
        raise InvalidInput(f"feature index {max_idx} exceeds declared dimension {p}")
    x = np.zeros((len(entries), p))
    for i, row in enumerate(entries):
        for idx, val in row.items():
            x[i, idx - 1] = val
    return Dataset(x, np.asarray(labels, dtype=int))


def load_dataset(
    path: str,
    fmt: str = CSV,
    label_col="0",
    header: bool = False,
    dims: int | None = None,
) -> Dataset:
    """Load a dataset from delimited text or sparse index:value lines."""
    if fmt == CSV:
        return _load_csv(path, label_col, header)
    if fmt == LIBSVM:
        return _load_libsvm(path, dims)
    raise InvalidInput(f"unknown dataset format {fmt!r}")


def save_dataset(path: str, data: Dataset, header: bool = True) -> None:
    """Write a dataset as delimited text; floats keep full precision."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if header:
            writer.writerow(["label"] + [f"f{k}" for k in range(1, data.n_features + 1)])
        for row, label in zip(data.instances, data.labels):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
