"""Bulk spectrum of the ICV as weights on a fixed grid, and the spiked assembly.

The bulk model writes the population spectral law as ``sum_k w_k delta_{x_k}``
on a grid ``x_1 < ... < x_N`` and picks the weights so that the
Marcenko-Pastur equation

    z = -1/s_(z) + y * sum_k w_k x_k / (1 + x_k s_(z))

holds as closely as possible at a set of complex evaluation points, with
``s_`` replaced by the empirical companion transform of ``B_m``. At fixed
``s_`` values this is linear in ``w``, so the fit is a non-negative least
squares problem with a sum-to-one constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import InputError, NumericalError
from .linalg import as_descending
from .rmt import companion_stieltjes_empirical

logger = logging.getLogger(__name__)

GRID_POINTS = 200
# Number of evaluation points; None means one per bulk eigenvalue. With fewer
# points than eigenvalues an isolated top eigenvalue gets no point of its own
# and the fit tends to misplace the mass that represents it.
EVAL_POINTS: Optional[int] = None
# Imaginary lift of evaluation points, relative to the largest bulk eigenvalue.
# Much closer to the axis the empirical transform is dominated by the nearest
# eigenvalue and the fit degrades badly.
EVAL_LIFT = 0.05
# Weight of the sum-to-one row relative to the largest design entry.
_SIMPLEX_PENALTY = 1e4


@dataclass
class WeightGrid:
    grid: np.ndarray
    weights: np.ndarray
    objective: float = float("nan")
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.weights.shape or self.grid.size == 0:
            raise InputError("grid and weights must be 1-d arrays of equal nonzero length")
        if np.any(np.diff(self.grid) <= 0):
            raise InputError("grid must be strictly increasing")
        if np.any(self.weights < 0):
            raise InputError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise InputError(f"weights sum to {self.weights.sum():.12f}, not 1")

    @property
    def N(self) -> int:
        return self.grid.size

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.grid.tolist(), self.weights.tolist()))

    def to_dict(self) -> dict:
        return {"x": self.grid.tolist(), "w": self.weights.tolist(),
                "objective": self.objective, **self.info}


def default_grid(bulk_eigenvalues, n_points: int = GRID_POINTS) -> np.ndarray:
    """Geometric grid from (smallest positive eigenvalue)/3 to 1.2 x the largest."""
    lam = np.asarray(bulk_eigenvalues, dtype=float)
    pos = lam[lam > 0]
    if pos.size == 0:
        raise InputError("bulk spectrum has no positive eigenvalue")
    return np.geomspace(pos.min() / 3.0, pos.max() * 1.2, n_points)


def evaluation_points(bulk_eigenvalues, count: Optional[int] = EVAL_POINTS, lift: float = EVAL_LIFT) -> np.ndarray:
    """Bulk quantiles at levels ``(j - 1/2)/count`` lifted into the upper half-plane."""
    lam = np.asarray(bulk_eigenvalues, dtype=float)
    count = lam.size if count is None else count
    if count < 1:
        raise InputError("need at least one evaluation point")
    levels = (np.arange(count) + 0.5) / count
    q = np.quantile(lam, levels)
    return q + 1j * lift * lam.max()


def mp_design(s, grid, y: float, z):
    """Real design matrix and target of the linearised MP equation, real and imaginary rows stacked."""
    s = np.asarray(s, dtype=complex)
    x = np.asarray(grid, dtype=float)
    A = y * x[None, :] / (1.0 + np.outer(s, x))
    b = np.asarray(z, dtype=complex) + 1.0 / s
    return np.vstack([A.real, A.imag]), np.concatenate([b.real, b.imag])


def fit_bulk_weights(
    eigenvalues,
    p: int,
    m: int,
    K: int = 0,
    grid: Optional[Sequence[float]] = None,
    eval_count: Optional[int] = EVAL_POINTS,
) -> WeightGrid:
    """Fit bulk weights on ``grid`` to the spectrum of ``B_m``.

    The top ``K`` eigenvalues (spikes) are left out of both the evaluation
    points and the empirical transform.
    """
    lam = as_descending(eigenvalues)
    if lam.size != p:
        raise InputError(f"expected {p} eigenvalues, got {lam.size}")
    if not 0 <= K < p:
        raise InputError(f"K={K} must satisfy 0 <= K < p")
    bulk = lam[K:]
    x = default_grid(bulk) if grid is None else np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size < 1 or np.any(np.diff(x) <= 0):
        raise InputError("grid must be strictly increasing")
    pos = bulk[bulk > 0]
    if x[-1] < bulk.max() or (pos.size and x[0] > pos.min()):
        raise InputError(
            f"grid [{x[0]:.4g}, {x[-1]:.4g}] does not cover the bulk [{pos.min() if pos.size else 0:.4g}, {bulk.max():.4g}]"
        )
    y = p / m
    z = evaluation_points(bulk, eval_count)
    exclude = range(K)
    s = np.array([companion_stieltjes_empirical(lam, p, m, zj, exclude) for zj in z])
    A, b = mp_design(s, x, y, z)
    scale = np.abs(A).max()
    if not np.isfinite(scale) or scale == 0:
        raise NumericalError("degenerate design for the bulk fit")
    pen = _SIMPLEX_PENALTY * scale
    A_aug = np.vstack([A, pen * np.ones(x.size)])
    b_aug = np.concatenate([b, [pen]])
    try:
        w, _ = nnls(A_aug, b_aug, maxiter=50 * x.size)
    except RuntimeError as exc:
        raise NumericalError(f"bulk weight fit failed: {exc}") from exc
    total = w.sum()
    if not total > 0:
        raise NumericalError("bulk weight fit returned zero mass")
    w = w / total
    obj = float(np.sum((A @ w - b) ** 2))
    return WeightGrid(x, w, obj, {"p": p, "m": m, "K": K, "eval_points": int(z.size)})


def fit_objective(wg: WeightGrid, eigenvalues, p: int, m: int, K: int = 0, eval_count: Optional[int] = EVAL_POINTS) -> float:
    """Squared residual of the MP equation for arbitrary weights on ``wg.grid``."""
    lam = as_descending(eigenvalues)
    bulk = lam[K:]
    z = evaluation_points(bulk, eval_count)
    s = np.array([companion_stieltjes_empirical(lam, p, m, zj, range(K)) for zj in z])
    A, b = mp_design(s, wg.grid, p / m, z)
    return float(np.sum((A @ wg.weights - b) ** 2))


def accumulation_counts(weights, p: int) -> tuple[list[tuple[int, int]], list[tuple[int, float]]]:
    """Weight-accumulation rule.

    Weight is accumulated from the point after the last emitted one until
    ``floor(accumulated * p)`` is positive; that many copies of the current
    grid point are emitted and the accumulator restarts. Returns the
    ``(grid index, count)`` emissions and the ``(grid index, lost fraction)``
    remainders, the last of which is any mass left after the final grid point.
    """
    w = np.asarray(weights, dtype=float)
    counts, lost = [], []
    acc = 0.0
    for j, wj in enumerate(w):
        acc += wj
        c = int(np.floor(acc * p + 1e-9))
        if c > 0:
            counts.append((j, c))
            lost.append((j, max(acc * p - c, 0.0)))
            acc = 0.0
    if acc * p > 1e-9:
        lost.append((int(np.flatnonzero(w > 0)[-1]), acc * p))
    return counts, lost


def weights_to_eigenvalues(wg: WeightGrid, p: int, *, pad: str = "remainder", return_pad: bool = False):
    """Length-``p`` descending eigenvalue vector from grid weights.

    Flooring can leave fewer than ``p`` values (never more, since the floors
    of the pieces sum to at most ``p``). With ``pad="remainder"`` the missing
    values go to the grid points that lost the largest fractional mass, one
    each; ``pad="last"`` repeats the last (largest) emitted value instead.
    """
    if p < 1:
        raise InputError("p must be >= 1")
    if pad not in ("remainder", "last"):
        raise InputError(f"unknown padding rule {pad!r}")
    counts, lost = accumulation_counts(wg.weights, p)
    total = sum(c for _, c in counts)
    short = p - total
    extra: dict[int, int] = {}
    if short > 0:
        if pad == "last" or not lost:
            j = counts[-1][0] if counts else int(np.flatnonzero(wg.weights > 0)[-1])
            extra[j] = short
        else:
            order = sorted(lost, key=lambda t: (-t[1], t[0]))
            for r in range(short):
                j = order[r % len(order)][0]
                extra[j] = extra.get(j, 0) + 1
    n_at = dict(counts)
    for j, c in extra.items():
        n_at[j] = n_at.get(j, 0) + c
    vals = np.concatenate([np.full(n_at[j], wg.grid[j]) for j in sorted(n_at, reverse=True)])
    return (vals, short) if return_pad else vals


@dataclass
class AssembledESD:
    """Bulk grid weights (total ``1 - M/p``) plus ``M`` spike atoms of mass ``1/p``."""

    grid: np.ndarray
    bulk_weights: np.ndarray
    spikes: list[tuple[float, float]]
    p: int
    raw_spikes: list[float] = field(default_factory=list)

    def total_mass(self) -> float:
        return float(self.bulk_weights.sum() + sum(w for _, w in self.spikes))

    def combined_weights(self) -> np.ndarray:
        """Weights on the grid with each spike's mass added at its grid point."""
        w = self.bulk_weights.copy()
        for loc, mass in self.spikes:
            w[np.searchsorted(self.grid, loc)] += mass
        return w

    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.grid.tolist(), self.combined_weights().tolist()))

    def to_dict(self) -> dict:
        return {"p": self.p, "x": self.grid.tolist(), "bulk_w": self.bulk_weights.tolist(),
                "spikes": [{"x": x, "w": w} for x, w in self.spikes], "raw_spikes": self.raw_spikes}


def _remove_top_mass(weights: np.ndarray, mass: float) -> np.ndarray:
    w = weights.copy()
    tails = np.cumsum(w[::-1])[::-1]
    ks = np.flatnonzero(tails > mass)
    if ks.size == 0:
        raise InputError(f"spike mass {mass:.6g} exceeds the total grid weight")
    k = ks[-1]
    w[k] = tails[k] - mass
    w[k + 1 :] = 0.0
    return w


def snap_to_grid(grid: np.ndarray, x: float) -> int:
    """Index of the nearest grid point; ties go to the upper point."""
    j = int(np.searchsorted(grid, x))
    if j == 0:
        return 0
    if j >= grid.size:
        return grid.size - 1
    return j if grid[j] - x <= x - grid[j - 1] else j - 1


def assemble_modelsp(wg: WeightGrid, spikes: Sequence[float], p: int) -> AssembledESD:
    """Bulk weights with mass ``M/p`` taken off the top, plus ``M`` spikes of mass ``1/p``.

    The largest index ``k`` with ``sum_{i>=k} w_i > M/p`` keeps the excess
    ``sum_{i>=k} w_i - M/p``; weights above it are zeroed. Each spike is
    placed on its nearest grid point.
    """
    spikes = [float(a) for a in spikes]
    M = len(spikes)
    if M >= p:
        raise InputError(f"{M} spikes leave no bulk for p={p}")
    if M == 0:
        return AssembledESD(wg.grid.copy(), wg.weights.copy(), [], p)
    w = _remove_top_mass(wg.weights, M / p)
    atoms = [(float(wg.grid[snap_to_grid(wg.grid, a)]), 1.0 / p) for a in spikes]
    return AssembledESD(wg.grid.copy(), w, atoms, p, spikes)


def modelws_eigenvalues(wg: WeightGrid, p: int) -> np.ndarray:
    return weights_to_eigenvalues(wg, p)


def modelsp_eigenvalues(wg: WeightGrid, spikes: Sequence[float], p: int) -> np.ndarray:
    """The bulk-only eigenvalue vector with its top entries replaced by the spike estimates."""
    base = weights_to_eigenvalues(wg, p)
    a = np.sort(np.asarray(spikes, dtype=float))[::-1]
    M = a.size
    if M == 0:
        return base
    if M >= p:
        raise InputError(f"{M} spikes leave no bulk for p={p}")
    if a[-1] < base[M]:
        logger.warning("spike estimate %.4g is below the largest bulk eigenvalue %.4g", a[-1], base[M])
    out = base.copy()
    out[:M] = a
    return np.sort(out)[::-1]
