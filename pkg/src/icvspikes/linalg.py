"""Dense symmetric eigendecomposition and empirical spectral distributions.

Everything downstream assumes eigenvalues in *descending* order
(``lambda_1 >= lambda_2 >= ...``), which is what the spacing-based spike
detector indexes over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, NumericalError

# Relative tolerance (to the spectral norm) below which negative eigenvalues of
# a nominally PSD matrix are treated as rounding noise and clamped to zero.
PSD_CLAMP_RTOL = 1e-10


def sym_matrix(a, *, atol: float = 0.0) -> np.ndarray:
    """Validate ``a`` as a finite real symmetric matrix and return it as float64.

    Symmetry is checked exactly by default. With ``atol > 0`` small asymmetries
    are tolerated and the matrix is symmetrised as ``(a + a.T) / 2``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InputError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix has non-finite entries")
    if atol > 0.0:
        if np.max(np.abs(a - a.T)) > atol:
            raise InputError("matrix is not symmetric within tolerance")
        return 0.5 * (a + a.T)
    if not np.array_equal(a, a.T):
        raise InputError("matrix is not exactly symmetric")
    return a


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted descending, with optional aligned eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = None
    clamped: int = 0

    @property
    def p(self) -> int:
        return int(self.eigenvalues.shape[0])

    def __len__(self) -> int:
        return self.p


@dataclass(frozen=True)
class ESD:
    """Discrete probability measure on the real line, as (location, weight) atoms."""

    locations: np.ndarray
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if loc.shape != w.shape or loc.ndim != 1 or loc.size == 0:
            raise InputError("ESD needs matching non-empty 1-d locations and weights")
        if not np.all(np.isfinite(loc)):
            raise InputError("ESD locations must be finite")
        if np.any(w < 0) or np.any(w > 1):
            raise InputError("ESD weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InputError(f"ESD weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.weights.tolist()))


def eigen_sym(a, want_vectors: bool = False, *, psd: bool = False) -> Spectrum:
    """Full spectrum of a real symmetric matrix, eigenvalues descending.

    Args:
        a: square symmetric matrix with finite entries.
        want_vectors: also return the orthonormal eigenvectors as columns.
        psd: the matrix is positive semidefinite by construction. Negative
            eigenvalues down to ``-PSD_CLAMP_RTOL * ||a||`` are clamped to zero;
            anything more negative raises :class:`NumericalError`.
    """
    a = sym_matrix(a)
    p = a.shape[0]
    try:
        if want_vectors:
            vals, vecs = np.linalg.eigh(a)
            vecs = vecs[:, ::-1]
        else:
            vals = np.linalg.eigvalsh(a)
            vecs = None
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of {p}x{p} matrix did not converge") from exc
    vals = vals[::-1].copy()

    clamped = 0
    if psd:
        norm = max(abs(vals[0]), abs(vals[-1]))
        neg = vals < 0
        if np.any(vals < -PSD_CLAMP_RTOL * norm):
            raise NumericalError(
                f"{p}x{p} matrix declared PSD has eigenvalue {vals[-1]:.3e} "
                f"(norm {norm:.3e})"
            )
        clamped = int(neg.sum())
        vals[neg] = 0.0
    return Spectrum(vals, vecs, clamped)


def as_descending(eigenvalues: Sequence[float]) -> np.ndarray:
    """Return eigenvalues as a float array, checking descending order."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise InputError("expected a non-empty 1-d eigenvalue vector")
    if not np.all(np.isfinite(lam)):
        raise InputError("eigenvalues must be finite")
    if np.any(np.diff(lam) > 0):
        raise InputError("eigenvalues must be sorted in descending order")
    return lam


def esd_of(spec) -> ESD:
    """Empirical spectral distribution: weight 1/p on each eigenvalue.

    Repeated eigenvalues are merged into one atom carrying their summed weight.
    Accepts a :class:`Spectrum` or a plain eigenvalue vector.
    """
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec, dtype=float)
    lam = np.ravel(lam)
    if lam.size == 0:
        raise InputError("cannot build an ESD from an empty spectrum")
    locs, counts = np.unique(lam, return_counts=True)
    order = np.argsort(-locs)
    return ESD(locs[order], counts[order] / lam.size)


def esd_histogram(esd: ESD, bins: int, range: Optional[tuple[float, float]] = None):
    """Bin an ESD into ``bins`` equal-width bins.

    Returns a list of ``(bin_center, mass)`` rows. Atoms outside ``range`` are
    dropped, so the masses sum to the ESD weight inside the range. The last bin
    is closed on the right.
    """
    if bins < 1:
        raise InputError("bins must be >= 1")
    if range is None:
        lo, hi = float(esd.locations.min()), float(esd.locations.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = map(float, range)
        if not lo < hi:
            raise InputError(f"histogram range needs lo < hi, got [{lo}, {hi}]")
    mass, edges = np.histogram(esd.locations, bins=bins, range=(lo, hi), weights=esd.weights)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return list(zip(centers.tolist(), mass.tolist()))
