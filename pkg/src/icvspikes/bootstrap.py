"""Parametric bootstrap comparison of two ICV spectrum models.

Each model supplies a length-``p`` ICV eigenvalue vector. A price panel is
regenerated from each vector under the simulation template, its pre-averaged
covariance is recomputed, and the distance to the observed ``B_m`` is
recorded in spectral and Frobenius norm. The two models share the random
streams of a replication (same gamma path, rotation, shocks and noise), so
the distance gap reflects the eigenvalues alone.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .preavg import PARCovResult, parcov_from_diffs
from .seeding import task_rng
from .sim import SimConfig, simulate_block_diffs

NORMS = ("spectral", "frobenius")
MODELS = ("ModelWs", "ModelSp")


def matrix_distance(a, b, norm: str = "frobenius") -> float:
    """``||A - B||`` in spectral (largest singular value) or Frobenius norm."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    if norm == "frobenius":
        return float(np.sqrt(np.sum(d * d)))
    if norm == "spectral":
        if np.array_equal(d, d.T):
            return float(np.max(np.abs(np.linalg.eigvalsh(d)))) if d.size else 0.0
        return float(np.linalg.norm(d, 2))
    raise InputError(f"unknown norm {norm!r}")


def bootstrap_parcov(eigenvalues, template: SimConfig, rng) -> PARCovResult:
    """Pre-averaged covariance of a panel simulated from the given ICV eigenvalues."""
    eigs = np.asarray(eigenvalues, dtype=float)
    if np.any(eigs < 0):
        raise InputError("ICV eigenvalues must be non-negative")
    out = simulate_block_diffs(template, rng, icv_eigenvalues=eigs)
    return parcov_from_diffs(out.block_diffs, k=out.k, n=out.n)


@dataclass
class CompareReport:
    # rows of (day, model, norm, distance)
    rows: list[tuple[int, str, str, float]] = field(default_factory=list)

    def means(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for model in sorted({r[1] for r in self.rows}):
            out[model] = {}
            for norm in NORMS:
                vals = [r[3] for r in self.rows if r[1] == model and r[2] == norm]
                if vals:
                    out[model][norm] = float(np.mean(vals))
        return out

    @property
    def days(self) -> int:
        return len({r[0] for r in self.rows})

    @classmethod
    def concat(cls, reports: Sequence["CompareReport"]) -> "CompareReport":
        return cls([r for rep in reports for r in rep.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "model", "norm", "distance"])
            for day, model, norm, dist in self.rows:
                w.writerow([day, model, norm, repr(dist)])

    def summary(self) -> dict:
        return {"days": self.days, "rows": len(self.rows), "mean_distance": self.means()}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _one(args):
    observed, models, template, seed, day, rep = args
    rows = []
    for name, eigs in models:
        b = bootstrap_parcov(eigs, template, task_rng(seed, day, rep))
        for norm in NORMS:
            rows.append((day, name, norm, matrix_distance(b.matrix, observed, norm)))
    return rows


def compare_models(
    observed: PARCovResult,
    modelws_eigs,
    modelsp_eigs,
    template: SimConfig,
    replications: int = 1,
    seed: int = 0,
    day: int = 0,
    threads: int = 1,
) -> CompareReport:
    """Distances from bootstrapped ``B_m`` to the observed one for both models.

    Replication ``r`` of ``day`` uses the stream ``(seed, day, r)``. With
    several replications the rows of one day are averaged into a single row
    per model and norm.
    """
    p = observed.p
    ws = np.asarray(modelws_eigs, dtype=float)
    sp = np.asarray(modelsp_eigs, dtype=float)
    if ws.shape != (p,) or sp.shape != (p,):
        raise InputError(f"model eigenvalue vectors must have length p={p}")
    if template.p != p:
        raise InputError(f"template has p={template.p}, observed has p={p}")
    if replications < 1:
        raise InputError("replications must be >= 1")
    models = ((MODELS[0], ws), (MODELS[1], sp))
    tasks = [(observed.matrix, models, template, seed, day, r) for r in range(replications)]
    if threads > 1 and replications > 1:
        with ProcessPoolExecutor(threads) as ex:
            chunks = list(ex.map(_one, tasks))
    else:
        chunks = [_one(t) for t in tasks]
    rows = []
    for name, _ in models:
        for norm in NORMS:
            vals = [r[3] for c in chunks for r in c if r[1] == name and r[2] == norm]
            rows.append((day, name, norm, float(np.mean(vals))))
    return CompareReport(rows)
