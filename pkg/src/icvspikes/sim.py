"""Synthetic noisy log-price panels with a spiked base covariance.

The latent process is ``dX_t = gamma_t * Lambda dW_t`` with a scalar
Ornstein-Uhlenbeck-type volatility factor

    d gamma_t = -rho (gamma_t - mu_t) dt + sigma dW~_t,
    mu_t = 2 sqrt(mu_base + mu_amp cos(2 pi t)),

and ``Lambda = (U D U^T)^{1/2}`` where ``D`` holds the spikes followed by
i.i.d. bulk draws. Observations add i.i.d. Gaussian noise at each grid time.

Both gamma and X are discretised by Euler-Maruyama on the observation grid
``1/n``. Each random ingredient (base covariance, gamma, Brownian increments,
noise) has its own child stream, so the streaming path that only keeps
pre-averaged block differences draws exactly the same numbers as the full
in-memory simulation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import InputError, ResourceError, SearchError
from .panel import PricePanel
from .seeding import as_rng

logger = logging.getLogger(__name__)

# Default cap on p * (n + 1) cells held in memory by simulate_panel (~400 MB per panel).
DEFAULT_CELL_BUDGET = 50_000_000

# Rows of increments generated per chunk before being folded into block means.
_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class GammaConfig:
    rho: float = 10.0
    sigma: float = 0.05
    mu_base: float = 0.0009
    mu_amp: float = 0.0008
    gamma0: Optional[float] = None  # None: start at mu_0

    def __post_init__(self):
        if self.rho < 0:
            raise InputError("rho must be >= 0")
        if self.sigma < 0:
            raise InputError("sigma must be >= 0")
        if not self.mu_base > self.mu_amp >= 0:
            raise InputError("need mu_base > mu_amp >= 0 so that mu_t stays real")

    def mu(self, t):
        return 2.0 * np.sqrt(self.mu_base + self.mu_amp * np.cos(2.0 * np.pi * np.asarray(t)))

    def initial(self) -> float:
        return float(self.mu(0.0)) if self.gamma0 is None else float(self.gamma0)


_BULK_KINDS = {"beta": 2, "uniform": 2, "constant": 1}


@dataclass(frozen=True)
class SpikedSigmaSpec:
    """Eigenstructure of the base covariance: spikes plus i.i.d. bulk draws.

    ``bulk`` is a tag with parameters, e.g. ``("beta", 1, 3)``,
    ``("uniform", 0.2, 0.8)`` or ``("constant", 1.0)``. Spikes must exceed the
    upper end of the bulk support unless ``allow_overlap`` is set.
    """

    spikes: tuple[float, ...]
    bulk_dim: int
    bulk: tuple = ("beta", 1.0, 3.0)
    allow_overlap: bool = False

    def __post_init__(self):
        spikes = tuple(float(s) for s in self.spikes)
        object.__setattr__(self, "spikes", spikes)
        object.__setattr__(self, "bulk", tuple(self.bulk))
        if self.bulk_dim < 1:
            raise InputError("bulk_dim must be >= 1")
        kind = self.bulk[0]
        if kind not in _BULK_KINDS or len(self.bulk) != 1 + _BULK_KINDS[kind]:
            raise InputError(f"unknown bulk sampler {self.bulk!r}")
        if any(s <= 0 for s in spikes):
            raise InputError("spikes must be positive")
        if any(a <= b for a, b in zip(spikes, spikes[1:])):
            raise InputError("spikes must be strictly descending")
        if spikes and not self.allow_overlap and spikes[-1] <= self.bulk_sup():
            raise InputError(
                f"spike {spikes[-1]} does not exceed the bulk support bound {self.bulk_sup()}"
            )

    @property
    def K(self) -> int:
        return len(self.spikes)

    @property
    def p(self) -> int:
        return self.K + self.bulk_dim

    def bulk_sup(self) -> float:
        kind, *args = self.bulk
        if kind == "beta":
            return 1.0
        if kind == "uniform":
            return float(args[1])
        return float(args[0])

    def draw_bulk(self, rng: np.random.Generator) -> np.ndarray:
        kind, *args = self.bulk
        if kind == "beta":
            return rng.beta(args[0], args[1], self.bulk_dim)
        if kind == "uniform":
            return rng.uniform(args[0], args[1], self.bulk_dim)
        return np.full(self.bulk_dim, float(args[0]))


def floor_window(theta: float, n, exponent: float):
    """``floor(theta * n**exponent)``, robust to round-off at exact integers.

    ``0.1 * 8000 ** (2/3)`` evaluates to 39.999999999999993 in floating point;
    values within 1e-9 (relative) of an integer are snapped to it first.
    """
    x = theta * np.power(np.asarray(n, dtype=float), exponent)
    r = np.round(x)
    x = np.where(np.abs(x - r) <= 1e-9 * np.maximum(1.0, np.abs(x)), r, x)
    out = np.floor(x).astype(np.int64)
    return int(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SimConfig:
    p: int
    n: int
    k: int
    sigma_spec: SpikedSigmaSpec
    gamma: GammaConfig = field(default_factory=GammaConfig)
    # Per-coordinate noise variance. The default is 0.0002**2: see the README
    # section on the noise level for why this is not 0.0002.
    noise_var: float = 0.0002**2
    drift: Optional[tuple[float, ...]] = None
    seed: Optional[int] = None
    cell_budget: int = DEFAULT_CELL_BUDGET

    def __post_init__(self):
        if self.sigma_spec.p != self.p:
            raise InputError(f"sigma spec has dimension {self.sigma_spec.p}, config says p={self.p}")
        if self.k < 1:
            raise InputError("window k must be >= 1")
        if self.n < 2 * self.k:
            raise InputError(f"need n >= 2k (n={self.n}, k={self.k})")
        if self.noise_var < 0:
            raise InputError("noise_var must be >= 0")
        if self.drift is not None:
            d = tuple(float(x) for x in self.drift)
            if len(d) != self.p:
                raise InputError("drift vector must have length p")
            object.__setattr__(self, "drift", d)

    @property
    def m(self) -> int:
        return self.n // (2 * self.k)

    @property
    def y(self) -> float:
        return self.p / self.m

    @classmethod
    def from_ratio(
        cls,
        spikes: Sequence[float],
        p: int,
        y: float,
        theta: float = 0.1,
        exponent: float = 2.0 / 3.0,
        **kwargs,
    ) -> "SimConfig":
        """Config for dimension ``p`` and target ratio ``y = p/m``, solving for ``n``."""
        bulk = kwargs.pop("bulk", ("beta", 1.0, 3.0))
        allow_overlap = kwargs.pop("allow_overlap", False)
        n, k, _ = solve_n(p, y, theta, exponent)
        spec = SpikedSigmaSpec(tuple(spikes), p - len(spikes), bulk, allow_overlap)
        return cls(p=p, n=n, k=k, sigma_spec=spec, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["m"] = self.m
        d["y"] = self.y
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d.pop("m", None)
        d.pop("y", None)
        ss = d.pop("sigma_spec")
        ss = SpikedSigmaSpec(
            tuple(ss["spikes"]), int(ss["bulk_dim"]), tuple(ss.get("bulk", ("beta", 1.0, 3.0))),
            bool(ss.get("allow_overlap", False)),
        )
        gamma = GammaConfig(**d.pop("gamma", {}))
        return cls(sigma_spec=ss, gamma=gamma, **d)


@dataclass
class SimOutput:
    latent: PricePanel
    observed: PricePanel
    gamma_path: np.ndarray
    zeta_hat: float
    true_eigs: np.ndarray
    icv_spikes: np.ndarray


@dataclass
class BlockSimOutput:
    """Streaming result: only the pre-averaged block differences are kept."""

    block_diffs: np.ndarray  # (m, p)
    gamma_path: np.ndarray
    zeta_hat: float
    true_eigs: np.ndarray
    icv_spikes: np.ndarray
    k: int
    n: int


def simulate_gamma(cfg: GammaConfig, n: int, rng) -> np.ndarray:
    """Euler-Maruyama path of gamma on ``t = i/n``, ``i = 0..n``."""
    if n < 1:
        raise InputError("n must be >= 1")
    rng = as_rng(rng)
    dt = 1.0 / n
    t = np.arange(n) * dt
    dw = rng.standard_normal(n) * math.sqrt(dt)
    a = 1.0 - cfg.rho * dt
    g0 = cfg.initial()
    drive = cfg.rho * dt * cfg.mu(t) + cfg.sigma * dw
    path = np.empty(n + 1)
    path[0] = g0
    path[1:], _ = lfilter([1.0], [1.0, -a], drive, zi=[a * g0])
    return path


def haar_orthogonal(p: int, rng) -> np.ndarray:
    """Orthogonal matrix from the QR factor of an i.i.d. Gaussian matrix (Haar measure)."""
    q, r = np.linalg.qr(as_rng(rng).standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def build_sigma_breve(spec: SpikedSigmaSpec, rng):
    """Return ``(Lambda, true_eigs)`` with ``Lambda @ Lambda.T`` the base covariance.

    ``Lambda = U D^{1/2} U^T`` is the symmetric square root; ``true_eigs`` is
    the diagonal of ``D`` sorted descending.
    """
    rng = as_rng(rng)
    d = np.concatenate([np.asarray(spec.spikes, dtype=float), spec.draw_bulk(rng)])
    u = haar_orthogonal(spec.p, rng)
    lam = (u * np.sqrt(d)) @ u.T
    lam = 0.5 * (lam + lam.T)
    return lam, np.sort(d)[::-1]


def _streams(rng) -> dict:
    children = as_rng(rng).spawn(4)
    return dict(zip(("sigma", "gamma", "brownian", "noise"), children))


def _setup(cfg: SimConfig, rng, icv_eigenvalues=None):
    s = _streams(rng)
    gamma = simulate_gamma(cfg.gamma, cfg.n, s["gamma"])
    zeta = float(np.mean(gamma[:-1] ** 2))
    if icv_eigenvalues is None:
        lam, eigs = build_sigma_breve(cfg.sigma_spec, s["sigma"])
        icv = np.asarray(cfg.sigma_spec.spikes, dtype=float) * zeta
    else:
        # target ICV spectrum given: divide by this path's zeta to get D
        d = np.sort(np.asarray(icv_eigenvalues, dtype=float))[::-1] / zeta
        u = haar_orthogonal(cfg.p, s["sigma"])
        lam = (u * np.sqrt(d)) @ u.T
        lam = 0.5 * (lam + lam.T)
        eigs = d
        icv = np.empty(0)
    return s, lam, eigs, gamma, zeta, icv


def _check_icv(cfg: SimConfig, icv_eigenvalues):
    if icv_eigenvalues is None:
        return
    v = np.asarray(icv_eigenvalues, dtype=float)
    if v.shape != (cfg.p,):
        raise InputError(f"need {cfg.p} ICV eigenvalues, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InputError("ICV eigenvalues must be finite and non-negative")


def _price_chunks(
    cfg: SimConfig, lam, gamma, s, rows: int, chunk: int = _CHUNK_ROWS
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (latent, observed) price rows for grid indices 0..rows-1 in chunks."""
    p, n = cfg.p, cfg.n
    scale = 1.0 / math.sqrt(n)
    drift = None if cfg.drift is None else np.asarray(cfg.drift) / n
    noise_sd = math.sqrt(cfg.noise_var)
    level = np.zeros(p)
    start = 0
    while start < rows:
        stop = min(rows, start + chunk)
        # price row i (i >= 1) = price row i-1 + gamma_{i-1} * Lambda z_i / sqrt(n)
        inc_lo, inc_hi = max(start, 1), stop
        x = np.empty((stop - start, p))
        if inc_hi > inc_lo:
            z = s["brownian"].standard_normal((inc_hi - inc_lo, p))
            inc = (z @ lam) * (gamma[inc_lo - 1 : inc_hi - 1, None] * scale)
            if drift is not None:
                inc += drift
            cum = np.cumsum(inc, axis=0) + level
            x[inc_lo - start :] = cum
            level = cum[-1]
        if start == 0:
            x[0] = 0.0
        if noise_sd > 0:
            y = x + noise_sd * s["noise"].standard_normal(x.shape)
        else:
            y = x.copy()
        yield x, y
        start = stop


def _check_budget(cfg: SimConfig) -> None:
    cells = cfg.p * (cfg.n + 1)
    if cells > cfg.cell_budget:
        raise ResourceError(
            f"panel of {cfg.p} x {cfg.n + 1} = {cells} cells exceeds the budget of "
            f"{cfg.cell_budget}; use the streaming simulation (simulate_block_diffs)"
        )


def simulate_panel(cfg: SimConfig, rng=None, *, icv_eigenvalues=None) -> SimOutput:
    """Full in-memory simulation of latent and observed panels.

    With ``icv_eigenvalues`` the base covariance is ``U diag(icv / zeta) U^T``
    for this path's ``zeta`` instead of being drawn from ``cfg.sigma_spec``.
    """
    _check_budget(cfg)
    _check_icv(cfg, icv_eigenvalues)
    rng = as_rng(cfg.seed if rng is None else rng)
    s, lam, eigs, gamma, zeta, icv = _setup(cfg, rng, icv_eigenvalues)
    xs, ys = [], []
    for x, y in _price_chunks(cfg, lam, gamma, s, cfg.n + 1):
        xs.append(x)
        ys.append(y)
    latent = np.vstack(xs)
    observed = np.vstack(ys)
    return SimOutput(PricePanel(latent), PricePanel(observed), gamma, zeta, eigs, icv)


def simulate_block_diffs(cfg: SimConfig, rng=None, *, icv_eigenvalues=None) -> BlockSimOutput:
    """Streaming simulation that keeps only the m pre-averaged block differences.

    Draws the same random numbers as :func:`simulate_panel`, so the block
    differences equal those computed from the full observed panel.
    """
    _check_icv(cfg, icv_eigenvalues)
    rng = as_rng(cfg.seed if rng is None else rng)
    s, lam, eigs, gamma, zeta, icv = _setup(cfg, rng, icv_eigenvalues)
    k, m, p = cfg.k, cfg.m, cfg.p
    rows = 2 * k * m
    chunk = k * max(1, _CHUNK_ROWS // k)
    means = np.empty((2 * m, p))
    pos = 0
    for _, y in _price_chunks(cfg, lam, gamma, s, rows, chunk):
        nb = y.shape[0] // k
        means[pos : pos + nb] = y.reshape(nb, k, p).mean(axis=1)
        pos += nb
    diffs = means[1::2] - means[0::2]
    return BlockSimOutput(diffs, gamma, zeta, eigs, icv, k, cfg.n)


def solve_n(p: int, y: float, theta: float = 0.1, exponent: float = 2.0 / 3.0, cap: int = 10**8):
    """Sample size ``n`` whose window ``k = floor(theta n^a)`` gives ``m = floor(n/2k) = ceil(p/y)``.

    ``ceil(p/y)`` is the smallest block count with ``p/m <= y``. Among the
    ``n`` achieving it, the one closest to the continuous solution
    ``n* = (2 theta m)^(1/(1-a))`` of ``n / (2 theta n^a) = m`` is returned
    (the smaller on ties); for ``y = 1`` this gives ``n = (p/50)^3 * 1000``
    at the default window rule. Returns ``(n, k, m)``.
    """
    if p < 1 or not y > 0:
        raise InputError("need p >= 1 and y > 0")
    if not 0 < exponent < 1 or not theta > 0:
        raise InputError("need theta > 0 and 0 < exponent < 1")
    target = math.ceil(p / y - 1e-12)
    star = (2.0 * theta * target) ** (1.0 / (1.0 - exponent))
    local = (1, min(cap, int(4 * star) + 1000))
    for lo, hi in (local, (1, cap)):
        best = None
        chunk = 1 << 18
        start = lo
        while start <= hi:
            ns = np.arange(start, min(hi, start + chunk - 1) + 1, dtype=np.int64)
            ks = floor_window(theta, ns, exponent)
            ms = np.where(ks >= 1, ns // (2 * np.maximum(ks, 1)), 0)
            hit = ns[ms == target]
            if hit.size:
                cand = hit[np.argmin(np.abs(hit - star))]
                if best is None or abs(cand - star) < abs(best - star):
                    best = int(cand)
            start = int(ns[-1]) + 1
        if best is not None:
            k = int(floor_window(theta, best, exponent))
            return best, k, best // (2 * k)
    raise SearchError(f"no n <= {cap} gives m = {target} for p={p}, y={y}")


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
