"""Spike inference from the spectrum of the pre-averaged covariance.

Notation follows the usual spiked-model setup: ``y = p/m``; ``H`` is the
population bulk spectral measure (already scaled by the integrated
volatility); ``s_(z)`` is the companion Stieltjes transform of the limiting
sample spectral law.

* ``psi(alpha) = alpha + y * int t alpha / (alpha - t) dH(t)`` carries a
  population spike to the limit of its sample counterpart. A spike is
  detectable when ``psi'(alpha) > 0``.
* ``alpha * s_(psi(alpha)) = -1``, so evaluating the empirical companion
  transform at a sample spike and inverting gives a consistent spike
  estimate without inverting ``psi`` numerically.
* The number of spikes is read off the first small gap between consecutive
  eigenvalues, with a threshold calibrated on spike-free Wishart matrices.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh

from .errors import InputError, NumericalError, SingularityError
from .linalg import ESD, as_descending
from .seeding import task_rng

logger = logging.getLogger(__name__)

# Height above the real axis used whenever a real-line limit is needed.
REAL_AXIS_EPS = 1e-6

# Eigenvalue ranks (0-based, [lo, hi]) whose spacings set the scale of the data
# relative to the unit Wishart reference. The top ``lo`` eigenvalues are left
# out as potential spikes.
EDGE_WINDOW = (5, 35)


class DiscreteMeasure(ESD):
    """Probability measure with finitely many atoms at non-negative locations."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.locations < 0):
            raise InputError("spectral measure atoms must be >= 0")

    @classmethod
    def point(cls, c: float) -> "DiscreteMeasure":
        return cls(np.array([float(c)]), np.array([1.0]))

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "DiscreteMeasure":
        v = np.asarray(values, dtype=float)
        return cls(v, np.full(v.size, 1.0 / v.size))

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.locations * c, self.weights)


def _check_off_support(alpha: float, H: DiscreteMeasure, tol: float) -> None:
    live = H.weights > 0
    if np.any(np.abs(alpha - H.locations[live]) <= tol * max(1.0, abs(alpha))):
        raise SingularityError(f"alpha={alpha!r} sits on an atom of H")


def psi_forward(alpha: float, y: float, H: DiscreteMeasure, tol: float = 1e-12) -> float:
    """``alpha + y * sum_k h_k t_k alpha / (alpha - t_k)``."""
    _check_off_support(alpha, H, tol)
    t, h = H.locations, H.weights
    return float(alpha + y * np.sum(h * t * alpha / (alpha - t)))


def psi_derivative(alpha: float, y: float, H: DiscreteMeasure, tol: float = 1e-12) -> float:
    """``1 - y * sum_k h_k t_k^2 / (alpha - t_k)^2``."""
    _check_off_support(alpha, H, tol)
    t, h = H.locations, H.weights
    return float(1.0 - y * np.sum(h * t**2 / (alpha - t) ** 2))


def companion_stieltjes_empirical(
    eigenvalues, p: int, m: int, z, exclude: Iterable[int] = (), tol: float = 1e-12
):
    """Empirical companion Stieltjes transform with the indices in ``exclude`` removed.

    ``-(1 - p/m)/z + (1/m) sum_{k not in exclude} 1/(lambda_k - z)``.
    ``exclude`` holds 0-based positions in the descending eigenvalue vector.
    Works for real ``z`` off the spectrum and for complex ``z``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size != p:
        raise InputError(f"expected {p} eigenvalues, got {lam.size}")
    mask = np.ones(p, dtype=bool)
    mask[list(exclude)] = False
    kept = lam[mask]
    scale = max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
    if abs(z) <= tol * scale:
        raise SingularityError("z = 0 is a pole of the companion transform")
    if kept.size and np.min(np.abs(kept - z)) <= tol * scale:
        raise SingularityError(f"z={z!r} coincides with a retained eigenvalue")
    return -(1.0 - p / m) / z + np.sum(1.0 / (kept - z)) / m


@dataclass
class SpikeEstimates:
    lambdas: np.ndarray
    b: np.ndarray
    alpha_hat: np.ndarray
    valid: np.ndarray
    psi_check: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return int(self.lambdas.size)

    def to_dict(self) -> dict:
        d = {
            "K": self.K,
            "lambda": self.lambdas.tolist(),
            "b": self.b.tolist(),
            "alpha_hat": [None if not v else a for a, v in zip(self.alpha_hat.tolist(), self.valid)],
            "valid": [bool(v) for v in self.valid],
        }
        if self.psi_check is not None:
            d["psi_check"] = self.psi_check.tolist()
        return d


def estimate_spikes(
    eigenvalues, p: int, m: int, K: int, H: Optional[DiscreteMeasure] = None, gap_tol: float = 1e-12
) -> SpikeEstimates:
    """Estimate the top ``K`` population spikes as ``-1 / b_j``.

    ``b_j = -(1 - p/m)/lambda_j + (1/m) sum_{k > K} 1/(lambda_k - lambda_j)``.
    A non-negative ``b_j`` means the sample spike is too close to the bulk for
    the inversion to apply; that spike is flagged invalid and its estimate is
    NaN rather than clamped. If ``H`` is given, ``psi(alpha_hat)`` is returned
    as a diagnostic.
    """
    lam = as_descending(eigenvalues)
    if lam.size != p:
        raise InputError(f"expected {p} eigenvalues, got {lam.size}")
    if not 1 <= K < p:
        raise InputError(f"spike count K={K} must satisfy 1 <= K < p={p}")
    if lam[K - 1] - lam[K] <= gap_tol * abs(lam[0]):
        raise InputError(f"eigenvalue {K} is not separated from eigenvalue {K + 1}")
    top, rest = lam[:K], lam[K:]
    b = -(1.0 - p / m) / top + np.array([np.sum(1.0 / (rest - lj)) for lj in top]) / m
    valid = b < 0
    alpha = np.full(K, np.nan)
    alpha[valid] = -1.0 / b[valid]
    for j in np.flatnonzero(~valid):
        logger.warning("spike %d: b=%.3e >= 0, inversion not applicable", j + 1, b[j])
    check = None
    if H is not None:
        check = np.array([psi_forward(a, p / m, H) if v else np.nan for a, v in zip(alpha, valid)])
    return SpikeEstimates(top.copy(), b, alpha, valid, check)


def loglog_factor(m: int) -> float:
    """``sqrt(2 log log m)``, replaced by 1 for ``m < 16``."""
    if m < 3:
        raise InputError(f"spike detection needs m >= 3, got m={m}")
    if m < 16:
        logger.warning("m=%d < 16: using 1 in place of sqrt(2 log log m)", m)
        return 1.0
    return math.sqrt(2.0 * math.log(math.log(m)))


def threshold(C: float, m: int) -> float:
    """``d_m = C m^{-2/3} sqrt(2 log log m)``."""
    return C * m ** (-2.0 / 3.0) * loglog_factor(m)


@dataclass
class SpikeDetection:
    K_hat: int
    spacings: np.ndarray
    threshold: float
    C: float
    m: int
    scale: float = 1.0
    overflow: bool = False
    calibration: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "K_hat": self.K_hat,
            "threshold": self.threshold,
            "C": self.C,
            "m": self.m,
            "scale": self.scale,
            "overflow": self.overflow,
            "spacings": self.spacings.tolist(),
            "calibration": self.calibration,
        }


def detect_spikes(eigenvalues, m: int, C: float, scale: float = 1.0, cap: Optional[int] = None) -> SpikeDetection:
    """Number of spikes: ``(smallest j with lambda_j - lambda_{j+1} < d_m) - 1``.

    The threshold ``d_m`` is multiplied by ``scale``, which converts a
    threshold calibrated on unit-variance Wishart matrices to the scale of
    the data. If every spacing up to ``cap`` (default ``p - 1``) clears the
    threshold, ``K_hat = cap`` and ``overflow`` is set.
    """
    lam = as_descending(eigenvalues)
    if lam.size < 2:
        raise InputError("need at least two eigenvalues")
    if not scale > 0:
        raise InputError("scale must be positive")
    cap = lam.size - 1 if cap is None else min(int(cap), lam.size - 1)
    spacings = lam[:-1] - lam[1:]
    d = threshold(C, m) * scale
    small = np.flatnonzero(spacings[:cap] < d)
    if small.size:
        return SpikeDetection(int(small[0]), spacings, d, C, m, scale)
    return SpikeDetection(cap, spacings, d, C, m, scale, overflow=True)


@dataclass
class ThresholdCalibration:
    """Wishart calibration of the tuning constant ``C``.

    ``s`` averages the ``r``-th and ``(r+1)``-th largest top-eigenvalue gaps
    over the replications, with ``r = ceil(0.02 R)`` (10th and 11th at
    ``R = 500``). ``edge_spacings`` holds the mean Wishart spacing
    ``lambda_j - lambda_{j+1}`` for each rank ``j`` of the window; the data's
    spacings divided by these give the scale that carries the threshold over
    to the data.
    """

    C: float
    s: float
    p: int
    m: int
    replications: int
    order: int
    edge_spacings: tuple[float, ...]
    window: tuple[int, int]
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "C": self.C, "s": self.s, "p": self.p, "m": self.m,
            "replications": self.replications, "order": self.order,
            "edge_spacings": list(self.edge_spacings), "window": list(self.window), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdCalibration":
        d = dict(d)
        d["window"] = tuple(d["window"])
        d["edge_spacings"] = tuple(d["edge_spacings"])
        return cls(**d)

    def scale_for(self, eigenvalues) -> float:
        """Median over the window of data spacing / reference spacing, rank by rank."""
        lam = np.asarray(eigenvalues, dtype=float)
        lo, hi = self.window
        if lam.size <= hi:
            raise InputError(f"spectrum of length {lam.size} is shorter than the calibration window")
        scale = float(np.median((lam[lo:hi] - lam[lo + 1 : hi + 1]) / np.asarray(self.edge_spacings)))
        if not scale > 0:
            raise NumericalError("eigenvalue spacings in the calibration window are degenerate")
        return scale

    def detect(self, eigenvalues, cap: Optional[int] = None) -> SpikeDetection:
        """Detect spikes with the threshold rescaled to the data."""
        scale = self.scale_for(eigenvalues)
        det = detect_spikes(eigenvalues, self.m, self.C, scale=scale, cap=cap)
        det.calibration = self.to_dict()
        return det


def _window_for(rank: int, window: tuple[int, int]) -> tuple[int, int]:
    """Clip the window to the ``rank = min(p, m)`` nonzero eigenvalues."""
    lo, hi = window
    hi = min(hi, rank - 1)
    lo = min(lo, max(hi - 1, 0))
    if hi <= lo:
        raise InputError(f"need at least two nonzero eigenvalues for the edge window, got {rank}")
    return lo, hi


def _wishart_top(p: int, m: int, top: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((p, m))
    w = (g @ g.T) / m
    vals = eigh(w, eigvals_only=True, subset_by_index=[p - top, p - 1])
    return vals[::-1]


def calibrate_threshold(
    p: int, m: int, replications: int = 500, seed: int = 0, window: tuple[int, int] = EDGE_WINDOW
) -> ThresholdCalibration:
    """Calibrate ``C`` from ``replications`` spike-free ``(1/m) G G^T`` matrices.

    Replication ``i`` uses the stream derived from ``(seed, i)``, so the result
    is reproducible and independent of evaluation order.
    """
    if p < 2 or m < 2:
        raise InputError("calibration needs p, m >= 2")
    if replications < 20:
        raise InputError("calibration needs at least 20 replications")
    lo, hi = _window_for(min(p, m), window)
    gaps = np.empty(replications)
    spacings = np.zeros(hi - lo)
    for i in range(replications):
        top = _wishart_top(p, m, hi + 1, task_rng(seed, i))
        gaps[i] = top[0] - top[1]
        spacings += top[lo:hi] - top[lo + 1 : hi + 1]
    r = math.ceil(0.02 * replications)
    desc = np.sort(gaps)[::-1]
    s = 0.5 * (desc[r - 1] + desc[r])
    C = s * m ** (2.0 / 3.0) / loglog_factor(m)
    ref = tuple(float(x) for x in spacings / replications)
    return ThresholdCalibration(float(C), float(s), p, m, replications, r, ref, (lo, hi), seed)


def mp_forward(
    H: DiscreteMeasure, y: float, z: complex, tol: float = 1e-10, max_iter: int = 10_000
) -> complex:
    """Companion Stieltjes transform ``s_(z)`` of the limiting sample law for ``(y, H)``.

    Solves ``z = -1/s + y * sum_k h_k t_k / (1 + t_k s)`` with ``Im s > 0``.
    The solution is continued from high above the axis down to ``Im z`` with
    damped Newton steps, since plain fixed-point iteration crawls near the
    real line.
    """
    z = complex(z)
    if not z.imag > 0:
        raise InputError("mp_forward needs Im z > 0")
    t, h = H.locations, H.weights

    def f(s):
        return z_cur + 1.0 / s - y * np.sum(h * t / (1.0 + t * s))

    def fprime(s):
        return -1.0 / s**2 + y * np.sum(h * t**2 / (1.0 + t * s) ** 2)

    # start well above the support, whose right edge is at most max(t) (1 + sqrt(y))^2
    edge = (float(t.max()) if t.size else 1.0) * (1.0 + math.sqrt(y)) ** 2
    top = 10.0 * max(1.0, abs(z.real), edge)
    heights = np.geomspace(top, z.imag, num=max(2, int(8 * math.log10(top / z.imag)) + 2)) if top > z.imag else [z.imag]
    z_cur = complex(z.real, heights[0])
    s = -1.0 / z_cur
    iters = 0
    residual = float("inf")
    for eta in heights:
        z_cur = complex(z.real, eta)
        for _ in range(200):
            iters += 1
            if iters > max_iter:
                raise NumericalError(f"mp_forward did not converge (residual {residual:.3e})")
            fs = f(s)
            step = fs / fprime(s)
            lam = 1.0
            new = s - step
            while new.imag <= 0 and lam > 1e-8:
                lam *= 0.5
                new = s - lam * step
            residual = abs(new - s)
            s = new
            if residual < tol * max(1.0, abs(s)):
                break
    if abs(f(s)) > 1e-6 * max(1.0, abs(z)):
        raise NumericalError(f"mp_forward did not converge (residual {abs(f(s)):.3e})")
    return complex(s)


def mp_density(H: DiscreteMeasure, y: float, x: float, eps: float = REAL_AXIS_EPS) -> float:
    """Density of the companion limiting law at ``x``: ``Im s_(x + i eps) / pi``."""
    return mp_forward(H, y, complex(x, eps)).imag / math.pi


class CalibrationCache:
    """JSON file of calibrations keyed by ``(p, m, replications, seed)``."""

    def __init__(self, path):
        self.path = Path(path)
        self._data = json.loads(self.path.read_text()) if self.path.exists() else {}

    @staticmethod
    def key(p: int, m: int, replications: int, seed: int) -> str:
        return f"{p},{m},{replications},{seed}"

    def get(self, p: int, m: int, replications: int = 500, seed: int = 0) -> ThresholdCalibration:
        k = self.key(p, m, replications, seed)
        if k in self._data:
            cal = ThresholdCalibration.from_dict(self._data[k])
            if cal.window == _window_for(min(p, m), EDGE_WINDOW):
                return cal
        cal = calibrate_threshold(p, m, replications, seed)
        self._data[k] = cal.to_dict()
        self.path.write_text(json.dumps(self._data, indent=2, sort_keys=True))
        return cal
