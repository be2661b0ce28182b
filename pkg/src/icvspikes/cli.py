"""Command-line front end.

Every command writes its outputs plus a ``manifest.json`` into ``--out-dir``.
The manifest records the command line, the resolved configuration, the seed,
the package version and SHA-256 digests of inputs and outputs. Rerunning the
recorded command reproduces the outputs bit for bit.

Exit codes: 0 success, 2 input error, 3 numerical error, 4 resource error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bootstrap import compare_models
from .bulk import WeightGrid, assemble_modelsp, fit_bulk_weights, modelsp_eigenvalues, modelws_eigenvalues
from .errors import IcvSpikesError, InputError, NumericalError, ResourceError
from .linalg import Spectrum, esd_histogram, esd_of
from .montecarlo import run_monte_carlo, summarize, write_replications_csv, write_table_csv
from .panel import PricePanel, read_panel, write_panel_bin, write_panel_csv
from .preavg import PARCovResult, PreAvgConfig, parcov, parcov_overlapping
from .rmt import CalibrationCache, calibrate_threshold, detect_spikes, estimate_spikes
from .sim import GammaConfig, SimConfig, simulate_panel
from .ticks import SessionSpec, clean_ticks, frequency_table, panel_stats

logger = logging.getLogger("icvspikes")


# ---------------------------------------------------------------- file helpers

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_spectrum_csv(path, eigenvalues) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(np.asarray(eigenvalues, dtype=float), start=1):
            w.writerow([i, repr(float(v))])


def read_spectrum_csv(path) -> np.ndarray:
    return _read_column(path, "eigenvalue")


def read_series(path) -> np.ndarray:
    """A numeric series: the last column of a CSV, with or without a header."""
    return _read_column(path, None)


def _read_column(path, name: Optional[str]) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    col = -1
    try:
        float(rows[0][-1])
    except ValueError:
        header = rows.pop(0)
        if name is not None and name in header:
            col = header.index(name)
    try:
        return np.array([float(r[col]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc


def write_xw_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "w"])
        for x, wt in rows:
            w.writerow([repr(float(x)), repr(float(wt))])


def read_xw_csv(path) -> WeightGrid:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        x = np.array([float(r["x"]) for r in rows])
        w = np.array([float(r["w"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: expected columns x,w ({exc})") from exc
    return WeightGrid(x, w)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON from {path}: {exc}") from exc


# ------------------------------------------------------------------- manifest

class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str]):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.config: dict = {}
        self.write_manifest = True

    def input(self, path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
        self.inputs.append(str(p))
        return p

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def require_seed(self) -> int:
        if self.args.seed is None:
            raise InputError(f"'{self.args.command}' is randomized and needs an explicit --seed")
        return int(self.args.seed)

    def finish(self) -> None:
        if not self.write_manifest:
            return
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "config": self.config,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "version": __version__,
            "inputs": {p: sha256(p) for p in self.inputs},
            "outputs": {name: sha256(self.out / name) for name in sorted(set(self.outputs))},
        }
        write_json(self.out / "manifest.json", manifest)


# ------------------------------------------------------------------- commands

def _sim_config(d: dict) -> SimConfig:
    """SimConfig from either a full dump or a ``{"spikes", "p", "y"}`` ratio spec."""
    if "sigma_spec" in d:
        return SimConfig.from_dict(d)
    d = dict(d)
    try:
        spikes, p, y = d.pop("spikes"), int(d.pop("p")), float(d.pop("y"))
    except KeyError as exc:
        raise InputError(f"simulation config is missing {exc}") from exc
    if "gamma" in d:
        d["gamma"] = GammaConfig(**d["gamma"])
    if "bulk" in d:
        d["bulk"] = tuple(d["bulk"])
    if "drift" in d and d["drift"] is not None:
        d["drift"] = tuple(d["drift"])
    try:
        return SimConfig.from_ratio(spikes, p, y, **d)
    except TypeError as exc:
        raise InputError(f"bad simulation config: {exc}") from exc


def _write_panel(run: Run, name: str, panel: PricePanel, fmt: str) -> None:
    if fmt == "bin":
        write_panel_bin(panel, run.path(name + ".bin"))
    else:
        write_panel_csv(panel, run.path(name + ".csv"))


def cmd_simulate(run: Run) -> None:
    a = run.args
    seed = run.require_seed()
    cfg = _sim_config(load_json(run.input(a.config)))
    run.config = cfg.to_dict()
    if a.replications:
        cal = calibrate_threshold(cfg.p, cfg.m, a.calibration_replications, seed) if a.detect else None
        reps = run_monte_carlo(cfg, a.replications, seed, a.threads, cal)
        summary = summarize(cfg, reps)
        write_replications_csv(run.path("replications.csv"), reps)
        write_table_csv(run.path("table.csv"), [summary])
        write_json(run.path("summary.json"), {
            "p": summary.p, "y": summary.y, "n": summary.n, "k": summary.k, "m": summary.m,
            "replications": summary.replications, "detection": summary.detection,
            "spikes": [vars(s) for s in summary.spikes],
        })
        return
    out = simulate_panel(cfg, np.random.default_rng(seed))
    _write_panel(run, "latent", out.latent, a.format)
    _write_panel(run, "observed", out.observed, a.format)
    np.savetxt(run.path("gamma.csv"), out.gamma_path, header="gamma", comments="", fmt="%.17g")
    write_json(run.path("truth.json"), {
        "zeta_hat": out.zeta_hat, "true_eigs": out.true_eigs.tolist(), "icv_spikes": out.icv_spikes.tolist(),
        # Euler steps are not reflected at zero, so report how often gamma went negative
        "gamma_min": float(out.gamma_path.min()),
        "gamma_negative_steps": int((out.gamma_path < 0).sum()),
    })


def cmd_estimate(run: Run) -> None:
    a = run.args
    panel = read_panel(run.input(a.panel))
    if a.overlapping:
        res = parcov_overlapping(panel, a.theta)
        run.config = {"variant": "overlapping", "theta": a.theta}
    else:
        cfg = PreAvgConfig(theta=a.theta, exponent=a.alpha_exp, k=a.k)
        res = parcov(panel, cfg)
        run.config = {"theta": a.theta, "exponent": a.alpha_exp, "k": res.k}
    write_spectrum_csv(run.path("eigenvalues.csv"), res.eigenvalues)
    write_json(run.path("parcov.json"), res.metadata())
    if a.save_matrix:
        np.save(run.path("matrix.npy"), res.matrix)


def _spectrum_inputs(run: Run) -> list[np.ndarray]:
    return [read_spectrum_csv(run.input(s)) for s in run.args.spectrum]


def cmd_spikes(run: Run) -> None:
    a = run.args
    spectra = _spectrum_inputs(run)
    p = spectra[0].size
    if any(s.size != p for s in spectra):
        raise InputError("all spectra must have the same length")
    m = a.m
    cal = None
    if a.C is None:
        seed = run.require_seed()
        if a.cache:
            cal = CalibrationCache(a.cache).get(p, m, a.calibration_replications, seed)
        else:
            cal = calibrate_threshold(p, m, a.calibration_replications, seed)
    run.config = {"m": m, "p": p, "C": a.C, "K": a.K,
                  "calibration": cal.to_dict() if cal is not None else None}
    days, counts = [], []
    for i, lam in enumerate(spectra):
        det = cal.detect(lam) if cal is not None else detect_spikes(lam, m, a.C)
        K = det.K_hat if a.K is None else a.K
        est = estimate_spikes(lam, p, m, K).to_dict() if K >= 1 else None
        days.append({"day": i, "source": a.spectrum[i], "detection": det.to_dict(), "estimates": est})
        counts.append(det.K_hat)
    write_json(run.path("spikes.json"), days[0] if len(days) == 1 else {"days": days})
    if len(days) > 1:
        with open(run.path("spike_counts.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["spikes", "days", "share"])
            for row in frequency_table(counts):
                w.writerow(row)


def cmd_fit_bulk(run: Run) -> None:
    a = run.args
    lam = read_spectrum_csv(run.input(a.spectrum))
    grid = read_series(run.input(a.grid)) if a.grid else None
    wg = fit_bulk_weights(lam, lam.size, a.m, K=a.K, grid=grid)
    run.config = {"m": a.m, "K": a.K, "grid": a.grid}
    write_xw_csv(run.path("weights.csv"), wg.to_rows())
    write_json(run.path("weights.json"), wg.to_dict())


def _spike_values(run: Run) -> list[float]:
    a = run.args
    if a.alpha is not None:
        return list(a.alpha)
    if a.spikes:
        d = load_json(run.input(a.spikes))
        est = d.get("estimates") or {}
        return [v for v, ok in zip(est.get("alpha_hat", []), est.get("valid", [])) if ok]
    return []


def cmd_assemble(run: Run) -> None:
    a = run.args
    wg = read_xw_csv(run.input(a.weights))
    spikes = _spike_values(run)
    asm = assemble_modelsp(wg, spikes, a.p)
    run.config = {"p": a.p, "spikes": spikes}
    write_json(run.path("assembled.json"), asm.to_dict())
    write_xw_csv(run.path("assembled.csv"), asm.atoms())
    write_spectrum_csv(run.path("modelws.csv"), modelws_eigenvalues(wg, a.p))
    write_spectrum_csv(run.path("modelsp.csv"), modelsp_eigenvalues(wg, spikes, a.p))


def cmd_compare(run: Run) -> None:
    a = run.args
    seed = run.require_seed()
    observed = np.load(run.input(a.observed))
    if observed.ndim != 2 or observed.shape[0] != observed.shape[1]:
        raise InputError("observed matrix must be square")
    ws = read_spectrum_csv(run.input(a.modelws))
    sp = read_spectrum_csv(run.input(a.modelsp))
    cfg = _sim_config(load_json(run.input(a.config)))
    run.config = {"template": cfg.to_dict(), "replications": a.replications}
    obs = PARCovResult(observed, Spectrum(np.zeros(0)), observed.shape[0], 0, 0, 0, 0.0)
    rep = compare_models(obs, ws, sp, cfg, a.replications, seed, 0, a.threads)
    rep.write_csv(run.path("compare.csv"))
    rep.write_json(run.path("compare.json"))


def cmd_clean_ticks(run: Run) -> None:
    a = run.args
    session = SessionSpec(a.open, a.close, tuple(a.symbols.split(",")) if a.symbols else None)
    panel = clean_ticks(run.input(a.ticks), session)
    run.config = {"open": a.open, "close": a.close, "symbols": list(panel.column_names())}
    _write_panel(run, "panel", panel, a.format)
    stats = panel_stats(panel, a.max_zero_fraction)
    rows = stats.to_rows()
    with open(run.path("stats.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cross_correlation(a, b, max_lag: int) -> list[tuple[int, float]]:
    """Sample cross-correlation ``corr(a_{t+lag}, b_t)`` for ``lag = -L..L``.

    Uses the full-sample means and standard deviations with divisor ``n``,
    the usual biased estimator. A peak at a negative lag means ``a`` leads ``b``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    if b.size != n:
        raise InputError(f"series lengths differ: {n} vs {b.size}")
    if max_lag < 0 or n <= max_lag:
        raise InputError(f"series length {n} must exceed the maximum lag {max_lag}")
    da, db = a - a.mean(), b - b.mean()
    denom = n * a.std() * b.std()
    if denom == 0:
        raise NumericalError("a series is constant; correlation undefined")
    out = []
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            c = np.dot(da[lag:], db[: n - lag])
        else:
            c = np.dot(da[: n + lag], db[-lag:])
        out.append((lag, float(c / denom)))
    return out


def cmd_ccf(run: Run) -> None:
    a = run.args
    sa = read_series(run.input(a.series_a))
    sb = read_series(run.input(a.series_b))
    rows = cross_correlation(sa, sb, a.max_lag)
    run.config = {"max_lag": a.max_lag}
    with open(run.path("ccf.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "correlation"])
        for lag, c in rows:
            w.writerow([lag, repr(c)])
    lag, c = max(rows, key=lambda r: abs(r[1]))
    write_json(run.path("ccf.json"), {"peak_lag": lag, "peak_correlation": c})


def cmd_esd_hist(run: Run) -> None:
    a = run.args
    lam = read_spectrum_csv(run.input(a.spectrum))
    rng = tuple(a.range) if a.range else None
    rows = esd_histogram(esd_of(lam), a.bins, rng)
    run.config = {"bins": a.bins, "range": a.range}
    with open(run.path("hist.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "mass"])
        for c, mass in rows:
            w.writerow([repr(c), repr(mass)])


def replay(manifest_path, out_dir) -> dict[str, tuple[str, str]]:
    """Rerun the command recorded in a manifest into ``out_dir``.

    Returns the outputs whose digest differs from the recorded one, as
    ``name -> (recorded, new)``; an empty dict means a bitwise reproduction.
    """
    manifest = load_json(manifest_path)
    try:
        argv = list(manifest["argv"]) + ["--out-dir", str(out_dir)]
        recorded = manifest["outputs"]
    except KeyError as exc:
        raise InputError(f"{manifest_path}: not a run manifest (missing {exc})") from exc
    code = main(argv)
    if code != 0:
        raise NumericalError(f"replayed command exited with code {code}")
    out = Path(out_dir)
    diff = {}
    for name, digest in recorded.items():
        new = sha256(out / name) if (out / name).is_file() else "missing"
        if new != digest:
            diff[name] = (digest, new)
    return diff


def cmd_replay(run: Run) -> None:
    # the replayed command writes its own manifest into the same directory
    run.write_manifest = False
    diff = replay(run.input(run.args.manifest), run.out)
    if diff:
        names = ", ".join(sorted(diff))
        raise NumericalError(f"replay differs from the manifest in: {names}")
    print(f"replay reproduced {len(load_json(run.args.manifest)['outputs'])} output(s) bit for bit")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "spikes": cmd_spikes,
    "fit-bulk": cmd_fit_bulk,
    "assemble": cmd_assemble,
    "compare": cmd_compare,
    "clean-ticks": cmd_clean_ticks,
    "ccf": cmd_ccf,
    "esd-hist": cmd_esd_hist,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed; required by randomized commands")
    common.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--out-dir", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="icvspikes", description=__doc__.splitlines()[0], parents=[common])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate panels or a replicated study")
    s.add_argument("--config", required=True, help="JSON: a full SimConfig or {spikes, p, y, ...}")
    s.add_argument("--replications", type=int, default=0,
                   help="run R replications and write the bias/MSE table instead of panels")
    s.add_argument("--detect", action="store_true", help="also run spike detection in each replication")
    s.add_argument("--calibration-replications", type=int, default=500)
    s.add_argument("--format", choices=("csv", "bin"), default="csv")

    s = sub.add_parser("estimate", parents=[common], help="pre-averaged covariance of a panel")
    s.add_argument("panel")
    s.add_argument("--theta", type=float, default=0.19)
    s.add_argument("--alpha-exp", type=float, default=2.0 / 3.0, help="window exponent")
    s.add_argument("--k", type=int, help="explicit window length")
    s.add_argument("--overlapping", action="store_true", help="overlapping variant (experimental)")
    s.add_argument("--save-matrix", action="store_true", help="also write matrix.npy")

    s = sub.add_parser("spikes", parents=[common], help="detect and estimate spikes")
    s.add_argument("spectrum", nargs="+", help="eigenvalue CSV(s); several files give a per-day batch")
    s.add_argument("--m", type=int, required=True, help="number of pre-averaged blocks")
    s.add_argument("--C", type=float, help="tuning constant; omit to calibrate on Wishart matrices")
    s.add_argument("--K", type=int, help="override the detected spike count")
    s.add_argument("--calibration-replications", type=int, default=500)
    s.add_argument("--cache", help="calibration cache JSON file")

    s = sub.add_parser("fit-bulk", parents=[common], help="fit bulk grid weights")
    s.add_argument("spectrum")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--K", type=int, default=0, help="number of top eigenvalues to leave out")
    s.add_argument("--grid", help="file with grid locations, one per line")

    s = sub.add_parser("assemble", parents=[common], help="spiked ESD and model eigenvalue vectors")
    s.add_argument("--weights", required=True, help="x,w CSV from fit-bulk")
    s.add_argument("--p", type=int, required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--spikes", help="spikes.json from the spikes command")
    g.add_argument("--alpha", type=float, nargs="+", help="spike estimates given directly")

    s = sub.add_parser("compare", parents=[common], help="bootstrap comparison of two models")
    s.add_argument("--observed", required=True, help="observed matrix (.npy from estimate --save-matrix)")
    s.add_argument("--modelws", required=True)
    s.add_argument("--modelsp", required=True)
    s.add_argument("--config", required=True, help="simulation template JSON")
    s.add_argument("--replications", type=int, default=1)

    s = sub.add_parser("clean-ticks", parents=[common], help="tick CSV to one-second log-price panel")
    s.add_argument("ticks")
    s.add_argument("--open", default="09:30:00")
    s.add_argument("--close", default="16:00:00")
    s.add_argument("--symbols", help="comma-separated column order")
    s.add_argument("--max-zero-fraction", type=float, default=0.5)
    s.add_argument("--format", choices=("csv", "bin"), default="csv")

    s = sub.add_parser(
        "ccf", parents=[common], help="cross-correlation of two series",
        description="Writes corr(a[t+lag], b[t]) for lag = -L..L. A peak at a negative lag "
                    "means series A leads series B.",
    )
    s.add_argument("series_a")
    s.add_argument("series_b")
    s.add_argument("--max-lag", type=int, default=20)

    s = sub.add_parser("esd-hist", parents=[common], help="histogram of a spectrum's ESD")
    s.add_argument("spectrum")
    s.add_argument("--bins", type=int, default=50)
    s.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    s = sub.add_parser("replay", parents=[common], help="rerun a manifest and verify its outputs")
    s.add_argument("manifest", help="manifest.json written by an earlier run")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        run = Run(args, argv)
        COMMANDS[args.command](run)
        run.finish()
    except IcvSpikesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code
    except MemoryError as exc:
        print(f"error: out of memory ({exc})", file=sys.stderr)
        return ResourceError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
