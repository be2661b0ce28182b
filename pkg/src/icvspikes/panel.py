"""Synchronous log-price panels and their on-disk formats.

A panel holds ``n + 1`` log prices per asset on the grid ``i / n``,
``i = 0..n``. Rows are observation times, columns are assets.

Two file formats are supported:

* CSV with a header row of symbols, one row per time.
* A little-endian binary block: 8-byte magic ``b"ICVPANEL"``, ``p`` and ``n``
  as int64, then ``(n + 1) * p`` float64 values in row-major order.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

MAGIC = b"ICVPANEL"
_HEADER = struct.Struct("<8sqq")


@dataclass(frozen=True)
class PricePanel:
    values: np.ndarray
    symbols: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise InputError(f"panel must be (n+1) x p with n >= 1, p >= 1; got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("panel contains non-finite prices")
        object.__setattr__(self, "values", v)
        if self.symbols is not None:
            syms = tuple(self.symbols)
            if len(syms) != v.shape[1]:
                raise InputError("number of symbols does not match panel width")
            object.__setattr__(self, "symbols", syms)

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    def column_names(self) -> Sequence[str]:
        if self.symbols is not None:
            return self.symbols
        return tuple(f"a{j}" for j in range(self.p))


def write_panel_csv(panel: PricePanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(panel.column_names())
        for row in panel.values:
            w.writerow([repr(float(x)) for x in row])


def read_panel_csv(path) -> PricePanel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise InputError(f"{path}: panel CSV needs a header and at least two rows")
    try:
        values = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric panel entry ({exc})") from exc
    return PricePanel(values, tuple(rows[0]))


def write_panel_bin(panel: PricePanel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, panel.p, panel.n))
        fh.write(np.ascontiguousarray(panel.values, dtype="<f8").tobytes())


def read_panel_bin(path) -> PricePanel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated panel header")
    magic, p, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * p * (n + 1)
    if len(raw) != expected:
        raise InputError(f"{path}: expected {expected} bytes for p={p}, n={n}, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n + 1, p)
    return PricePanel(values.astype(float))


def read_panel(path) -> PricePanel:
    """Load a panel, choosing the format from the file's magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_panel_bin(path)
    return read_panel_csv(path)
