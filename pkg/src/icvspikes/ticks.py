"""Cleaning raw trades into a synchronous one-second log-price panel.

Input is CSV with columns ``symbol,time,price``. ``time`` is either a clock
time ``HH:MM:SS[.fff]`` or a number of seconds after the session open;
fractional seconds are floored. Within each second the median trade price is
kept (mean of the middle two for an even count); seconds without trades carry
the previous price forward. Trades before the open seed the opening price;
trades after the close are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError
from .panel import PricePanel


def _clock_seconds(text: str) -> float:
    parts = text.split(":")
    if len(parts) != 3:
        raise InputError(f"bad clock time {text!r}; expected HH:MM:SS")
    try:
        h, m, s = int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError as exc:
        raise InputError(f"bad clock time {text!r}") from exc
    return 3600 * h + 60 * m + s


@dataclass(frozen=True)
class SessionSpec:
    open: str = "09:30:00"
    close: str = "16:00:00"
    symbols: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.span <= 0:
            raise InputError("session close must be after open")
        if self.symbols is not None:
            object.__setattr__(self, "symbols", tuple(self.symbols))

    @property
    def open_seconds(self) -> int:
        return int(_clock_seconds(self.open))

    @property
    def span(self) -> int:
        return int(_clock_seconds(self.close)) - int(_clock_seconds(self.open))

    @property
    def grid_length(self) -> int:
        return self.span + 1


def _offsets(times: pd.Series, session: SessionSpec) -> np.ndarray:
    t = times.astype(str).str.strip()
    clock = t.str.contains(":")
    out = np.empty(len(t))
    if clock.any():
        out[clock.to_numpy()] = [_clock_seconds(x) - session.open_seconds for x in t[clock]]
    if (~clock).any():
        num = pd.to_numeric(t[~clock], errors="coerce")
        if num.isna().any():
            bad = t[~clock][num.isna()].iloc[0]
            raise InputError(f"unparseable time {bad!r}")
        out[(~clock).to_numpy()] = num.to_numpy(dtype=float)
    return np.floor(out).astype(np.int64)


def read_ticks(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"symbol": str, "time": str})
    missing = {"symbol", "time", "price"} - set(df.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    return df


def clean_ticks(records, session: SessionSpec = SessionSpec()) -> PricePanel:
    """Log-price panel with one row per session second, open and close included."""
    df = read_ticks(records) if not isinstance(records, pd.DataFrame) else records.copy()
    if df.empty:
        raise InputError("no tick records")
    df["symbol"] = df["symbol"].astype(str)
    df["price"] = pd.to_numeric(df["price"], errors="coerce")
    if df["price"].isna().any() or (df["price"] <= 0).any():
        raise InputError("prices must be positive numbers")
    df["sec"] = _offsets(df["time"], session)
    df = df[df["sec"] <= session.span]
    symbols = session.symbols or tuple(sorted(df["symbol"].unique()))
    # median of all trades in the same second; pandas median averages the middle two
    per_sec = df.groupby(["symbol", "sec"])["price"].median()
    grid = np.arange(session.grid_length)
    cols, gaps = [], []
    for sym in symbols:
        if sym not in per_sec.index.get_level_values(0):
            gaps.append(sym)
            continue
        s = per_sec.loc[sym]
        start = min(int(s.index.min()), 0)
        full = s.reindex(np.arange(start, session.span + 1)).ffill()
        col = full.loc[grid].to_numpy()
        if np.isnan(col[0]):
            gaps.append(sym)
            continue
        cols.append(np.log(col))
    if gaps:
        raise InputError(f"no trade at or before the open for: {', '.join(gaps)}")
    return PricePanel(np.column_stack(cols), symbols)


@dataclass
class PanelStats:
    symbols: tuple[str, ...]
    zero_return_fraction: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    flat_runs: np.ndarray
    flagged: list[str] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        return [
            {"symbol": s, "zero_return_fraction": float(z), "min": float(lo), "max": float(hi),
             "flat_runs": int(g), "flagged": s in self.flagged}
            for s, z, lo, hi, g in zip(self.symbols, self.zero_return_fraction, self.minimum,
                                       self.maximum, self.flat_runs)
        ]


def panel_stats(panel: PricePanel, max_zero_fraction: float = 0.5) -> PanelStats:
    """Per-symbol share of zero returns, price range and number of flat runs.

    Symbols whose zero-return share exceeds ``max_zero_fraction`` are flagged.
    """
    v = panel.values
    r = np.diff(v, axis=0)
    zero = r == 0
    frac = zero.mean(axis=0)
    # a flat run starts wherever a zero return follows a non-zero one
    starts = zero & np.vstack([np.ones((1, v.shape[1]), bool), ~zero[:-1]])
    syms = tuple(panel.column_names())
    flagged = [s for s, f in zip(syms, frac) if f > max_zero_fraction]
    return PanelStats(syms, frac, v.min(axis=0), v.max(axis=0), starts.sum(axis=0), flagged)


def frequency_table(counts: Sequence[int]) -> list[tuple[int, int, float]]:
    """(value, frequency, share) rows, e.g. for a per-day spike-count series."""
    vals, freq = np.unique(np.asarray(counts, dtype=int), return_counts=True)
    total = freq.sum()
    return [(int(v), int(f), float(f / total)) for v, f in zip(vals, freq)]
