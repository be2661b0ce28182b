"""Pre-averaged realized covariance (PA-RCov) from a noisy price panel.

The non-overlapping estimator groups the first ``2km`` grid prices into
``2m`` windows of ``k`` prices, averages each window, and differences
consecutive pairs::

    dY_i = mean(Y[(2i-1)k : 2ik]) - mean(Y[(2i-2)k : (2i-1)k]),  i = 1..m

    B_m = 3 * (sum_i |dY_i|^2 / m) * sum_i dY_i dY_i^T / |dY_i|^2

Windows are anchored at grid index 0; prices past index ``2km - 1`` are
discarded. Each normalised rank-one term has unit trace, so
``trace(B_m) = 3 * sum_i |dY_i|^2``.

``parcov_overlapping`` is the classical overlapping variant with weight
function ``g(x) = min(x, 1 - x)``. It is kept for comparison only; the
spike inference consumes the non-overlapping matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, NumericalError
from .linalg import Spectrum, eigen_sym
from .panel import PricePanel
from .sim import floor_window

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreAvgConfig:
    """Window rule ``k = floor(theta * n**exponent)`` or an explicit ``k``."""

    theta: float = 0.19
    exponent: float = 2.0 / 3.0
    k: Optional[int] = None

    def __post_init__(self):
        if self.k is None:
            if not self.theta > 0:
                raise InputError("theta must be positive")
            if not 0 < self.exponent < 1:
                raise InputError("exponent must lie in (0, 1)")
            if self.exponent < 2.0 / 3.0 - 1e-12:
                logger.warning("window exponent %.3f is below 2/3", self.exponent)
        elif self.k < 1:
            raise InputError("k must be >= 1")

    def window(self, n: int) -> int:
        k = self.k if self.k is not None else floor_window(self.theta, n, self.exponent)
        if k < 1 or 2 * k > n:
            raise InputError(f"window k={k} invalid for n={n} (need 1 <= k and 2k <= n)")
        return int(k)


@dataclass
class PARCovResult:
    matrix: np.ndarray
    spectrum: Spectrum
    p: int
    m: int
    k: int
    n: int
    mean_sq_norm: float
    skipped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def y(self) -> float:
        return self.p / self.m

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    def metadata(self) -> dict:
        return {
            "p": self.p,
            "m": self.m,
            "k": self.k,
            "n": self.n,
            "y": self.y,
            "mean_sq_norm": self.mean_sq_norm,
            "trace": float(np.trace(self.matrix)),
            "skipped_blocks": self.skipped,
            **self.extra,
        }


def _values(panel) -> np.ndarray:
    if isinstance(panel, PricePanel):
        return panel.values
    v = np.asarray(panel, dtype=float)
    if v.ndim != 2:
        raise InputError("panel must be a 2-d (n+1) x p array")
    return v


def block_diffs(panel, k: int) -> np.ndarray:
    """The ``m = floor(n / 2k)`` pre-averaged differences, one per row."""
    v = _values(panel)
    n = v.shape[0] - 1
    if k < 1 or 2 * k > n:
        raise InputError(f"window k={k} invalid for n={n} (need 1 <= k and 2k <= n)")
    m = n // (2 * k)
    means = v[: 2 * k * m].reshape(2 * m, k, v.shape[1]).mean(axis=1)
    return means[1::2] - means[0::2]


def parcov_from_diffs(diffs: np.ndarray, *, k: int = 0, n: int = 0) -> PARCovResult:
    """Assemble ``B_m`` from precomputed block differences (rows)."""
    diffs = np.asarray(diffs, dtype=float)
    if diffs.ndim != 2 or diffs.shape[0] < 1:
        raise InputError("need at least one block difference")
    sq = np.einsum("ij,ij->i", diffs, diffs)
    keep = sq > 0
    skipped = int((~keep).sum())
    if skipped:
        logger.warning("skipping %d zero-norm block(s) out of %d", skipped, diffs.shape[0])
    diffs, sq = diffs[keep], sq[keep]
    m = diffs.shape[0]
    if m == 0:
        raise NumericalError("every pre-averaged block difference is zero")
    p = diffs.shape[1]
    mean_sq = float(sq.mean())
    unit = diffs / np.sqrt(sq)[:, None]
    mat = (3.0 * mean_sq) * (unit.T @ unit)
    mat = 0.5 * (mat + mat.T)
    spec = eigen_sym(mat, psd=True)
    return PARCovResult(mat, spec, p, m, k, n, mean_sq, skipped)


def parcov(panel, cfg: PreAvgConfig = PreAvgConfig()) -> PARCovResult:
    """Non-overlapping PA-RCov ``B_m`` of an observed panel."""
    v = _values(panel)
    n = v.shape[0] - 1
    k = cfg.window(n)
    return parcov_from_diffs(block_diffs(v, k), k=k, n=n)


def triangular_weights(k: int) -> np.ndarray:
    """Weights ``1 - |j|/k`` for ``j = -(k-1)..(k-1)``."""
    j = np.arange(-(k - 1), k)
    return 1.0 - np.abs(j) / k


def g_weights(kn: int) -> np.ndarray:
    """``g(j/kn)`` for ``j = 1..kn-1`` with ``g(x) = min(x, 1-x)``."""
    x = np.arange(1, kn) / kn
    return np.minimum(x, 1.0 - x)


def psi2(kn: int) -> float:
    """Discrete ``(1/kn) sum_j g(j/kn)^2``; tends to 1/12 as kn grows."""
    return float(np.sum(g_weights(kn) ** 2) / kn)


def parcov_overlapping(panel, theta: float) -> PARCovResult:
    """Overlapping pre-averaged covariance with ``kn = floor(theta sqrt(n))``.

    Experimental: provided for comparison with the non-overlapping estimator.
    """
    v = _values(panel)
    n = v.shape[0] - 1
    kn = floor_window(theta, n, 0.5)
    if kn < 2:
        raise InputError(f"overlapping window kn={kn} must be >= 2")
    if kn > n:
        raise InputError(f"overlapping window kn={kn} exceeds n={n}")
    ret = np.diff(v, axis=0)  # ret[i-1] is the i-th increment
    g = g_weights(kn)
    # bar_i = sum_{j=1}^{kn-1} g_j * ret[i+j-1]; valid while i + kn - 1 <= n
    count = n - kn + 2
    bars = np.zeros((count, v.shape[1]))
    for j, gj in enumerate(g, start=1):
        seg = ret[j - 1 : j - 1 + count]
        bars[: seg.shape[0]] += gj * seg
    mat = (n / (n - kn + 2)) / (psi2(kn) * kn) * (bars.T @ bars)
    mat = 0.5 * (mat + mat.T)
    spec = eigen_sym(mat, psd=True)
    sq = np.einsum("ij,ij->i", bars, bars)
    return PARCovResult(mat, spec, v.shape[1], count, kn, n, float(sq.mean()), 0,
                        {"variant": "overlapping", "psi2": psi2(kn)})
