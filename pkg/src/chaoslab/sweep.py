"""Sweep orchestration: coupled runs over (N, sigma, seed), metric rows, report."""
from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import CsvFormatError

SCHEMA_VERSION = 1
CKP_TOLERANCE = 0.05

BASE_COLUMNS = ["schema", "mode", "family", "d", "n", "delta", "sigma", "seed", "t", "dt",
                "n_copies", "force_cells", "force_smoothing", "norm", "threshold",
                "clipped_max", "status", "diagnostic"]
METRIC_COLUMNS = {
    "deviation": ["deviation", "sup_deviation"],
    "exceedance": ["exceed"],
    "w2": ["w2", "w2_method", "w2_stderr"],
    "entropy": ["h1", "entropy_cells"],
    "l1": ["l1"],
    "ckp": ["ckp_slack"],
}
# numeric columns aggregated and fitted by the report
FIT_COLUMNS = ["sup_deviation", "deviation", "w2", "h1", "l1", "value"]
_INT_COLUMNS = {"schema", "d", "n", "seed", "n_copies", "force_cells", "entropy_cells", "exceed"}
_TEXT_COLUMNS = {"mode", "family", "norm", "status", "diagnostic", "w2_method"}


def columns_for(metrics) -> list[str]:
    cols = list(BASE_COLUMNS)
    for m in ("deviation", "exceedance", "w2", "entropy", "l1", "ckp"):
        if m in metrics:
            cols += METRIC_COLUMNS[m]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v).replace("\n", " ")


# --- per-cell metrics -----------------------------------------------------------

def phase_grids(phi, psi, cells: int, smoothing: float):
    """Smoothed phase-space histograms of two ensembles on a shared box."""
    from .density import histogram, kde_smooth, padded_box

    a, b = phi.phase(), psi.phase()
    lo, hi = padded_box(np.vstack([a, b]), cells, 0.5)
    p = kde_smooth(histogram(a, lo, hi, cells), smoothing)
    q = kde_smooth(histogram(b, lo, hi, cells), smoothing)
    return p, q


def checkpoint_metrics(config: ExperimentConfig, phi, psi, sup: float, n: int,
                       seed: int, ensemble=None) -> dict:
    """Metrics at one checkpoint. ``psi`` holds the N coupled copies; the
    entropy and L1 estimators compare Phi with ``ensemble`` (all Psi copies,
    the best available estimate of the mean-field law) when given."""
    from . import metrics as M

    out: dict = {}
    sel = set(config.metrics)
    if "deviation" in sel:
        out["deviation"] = M.coupling_deviation(phi, psi, n)
        out["sup_deviation"] = sup
    if "exceedance" in sel:
        out["exceed"] = int(sup > config.threshold(n))
    if "w2" in sel:
        if n <= M.EXACT_W2_MAX_ATOMS:
            out["w2"], out["w2_method"], out["w2_stderr"] = (
                M.wasserstein2_exact(phi.X, psi.X), "exact", 0.0)
        else:
            r = M.wasserstein2_sliced(phi.X, psi.X, config.w2["projections"], seed=seed)
            out["w2"], out["w2_method"], out["w2_stderr"] = r.value, "sliced", r.stderr
    if sel & {"entropy", "l1", "ckp"}:
        p, q = phase_grids(phi, psi if ensemble is None else ensemble,
                           config.entropy_cells, config.entropy["smoothing"])
        h1 = M.kl_divergence(p, q)
        l1 = M.l1_distance(p, q)
        if "entropy" in sel:
            out["h1"], out["entropy_cells"] = h1, config.entropy_cells
        if "l1" in sel:
            out["l1"] = l1
        if "ckp" in sel:
            out["ckp_slack"] = M.ckp_audit(l1, h1, 1)
    return out


def _tag(n: int, sigma: float, seed: int) -> str:
    return f"n{n}_s{sigma:g}_seed{seed}"


def run_cell(config: ExperimentConfig, n: int, sigma: float, seed: int,
             out_dir: Path | None = None) -> list[dict]:
    """One coupled run; returns one row per checkpoint (or one failure row)."""
    from .dynamics import run_coupled
    from .snapshot import write_snapshot

    base = {"schema": SCHEMA_VERSION, "mode": config.mode, "family": config.kernel["family"],
            "d": config.d, "n": n, "delta": config.delta, "sigma": sigma, "seed": seed,
            "force_cells": config.force["cells"], "force_smoothing": config.force["smoothing"],
            "norm": "euclidean-per-particle", "threshold": config.threshold(n)}
    try:
        cc = config.coupled_config(n, sigma, seed)
        base["dt"] = cc.step
        base["n_copies"] = cc.n_copies or n
        run = run_coupled(cc)
    except Exception as exc:  # recorded and skipped; the sweep continues
        return [{**base, "status": "failed", "diagnostic": f"{type(exc).__name__}: {exc}"}]
    clip = max((c for _, c in run.meta["clip_flags"]), default=0.0)
    rows = []
    for k, (t, phi, psi) in enumerate(run.snapshots):
        row = {**base, "t": t, "clipped_max": clip, "status": "ok",
               "diagnostic": "clipped mass > 1e-6" if clip > 1e-6 else ""}
        try:
            row.update(checkpoint_metrics(config, phi, psi, run.sup_until(t), n, seed,
                                          run.ensembles[k]))
        except Exception as exc:
            row.update(status="failed", diagnostic=f"{type(exc).__name__}: {exc}")
        rows.append(row)
        last = k == len(run.snapshots) - 1
        if out_dir is not None and (config.snapshots == "all" or
                                    (config.snapshots == "final" and last)):
            snap = out_dir / "snapshots"
            snap.mkdir(parents=True, exist_ok=True)
            write_snapshot(phi, snap / f"{_tag(n, sigma, seed)}_phi_{k}.vpfp")
            write_snapshot(psi, snap / f"{_tag(n, sigma, seed)}_psi_{k}.vpfp")
    return rows


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def _cell_job(args):
    config, n, sigma, seed, out_dir = args
    return run_cell(config, n, sigma, seed, out_dir)


def run_sweep(config: ExperimentConfig, out_dir=None, workers: int = 1,
              progress=None) -> dict:
    """Run every (N, sigma, seed) cell, writing results.csv after each cell.

    The table is rewritten through a temporary file and renamed, so an
    interrupted sweep leaves only complete rows. Rows are ordered by cell,
    independent of ``workers``. Returns the report summary (also written to
    summary.json).
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    columns = columns_for(config.metrics)
    csv_path = out / "results.csv"
    cells = [(config, n, s, seed, out) for n in config.n_particles for s in config.sigma
             for seed in config.seeds]
    rows: list[dict] = []
    if workers > 1:
        # spawn: forking after numba has started OpenMP threads is unsafe
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            for i, cell_rows in enumerate(pool.map(_cell_job, cells)):
                rows.extend(cell_rows)
                _write_csv(csv_path, columns, rows)
                if progress:
                    progress(i + 1, len(cells), cell_rows)
    else:
        for i, job in enumerate(cells):
            cell_rows = _cell_job(job)
            rows.extend(cell_rows)
            _write_csv(csv_path, columns, rows)
            if progress:
                progress(i + 1, len(cells), cell_rows)
    summary = report([csv_path], ckp_tolerance=CKP_TOLERANCE)
    summary["config"] = config.to_dict()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# --- report -----------------------------------------------------------------------

def read_rows(path) -> list[dict]:
    """Parse a results table, converting numeric columns; errors carry line numbers."""
    path = str(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        if "n" not in header:
            raise CsvFormatError(path, 1, "header lacks the 'n' column")
        rows = []
        for rec in reader:
            line = reader.line_num
            if not rec:
                continue
            if len(rec) != len(header):
                raise CsvFormatError(path, line, f"expected {len(header)} fields, found {len(rec)}")
            row = {}
            for col, text in zip(header, rec):
                if col in _TEXT_COLUMNS or text == "":
                    row[col] = text if text != "" or col in _TEXT_COLUMNS else None
                    continue
                try:
                    row[col] = int(text) if col in _INT_COLUMNS else float(text)
                except ValueError:
                    raise CsvFormatError(path, line, f"column {col!r}: cannot parse {text!r}") from None
            rows.append(row)
    return rows


def _group_key(row: dict) -> tuple:
    return (row.get("family") or "", row.get("delta"), row.get("sigma"))


def _final_rows(rows: list[dict]) -> list[dict]:
    """Rows at the last recorded time of each (group, n, seed)."""
    best: dict = {}
    for r in rows:
        key = (_group_key(r), r["n"], r.get("seed"))
        t = r.get("t")
        t = -math.inf if t is None else t
        if key not in best or t >= best[key][0]:
            best[key] = (t, r)
    return [r for _, r in best.values()]


def _monotone(values, strict: bool) -> bool:
    pairs = zip(values, values[1:])
    return all((b < a) if strict else (b <= a) for a, b in pairs)


def report(paths, ckp_tolerance: float = CKP_TOLERANCE) -> dict:
    """Aggregate result tables: medians/IQR per N, log-log fits, verdicts."""
    from .metrics import fit_rate

    rows: list[dict] = []
    for p in paths:
        rows.extend(read_rows(p))
    if not rows:
        raise ValueError("no rows to report")
    ok = [r for r in rows if r.get("status", "ok") in ("ok", "", None)]
    failed = len(rows) - len(ok)
    final = _final_rows(ok)
    groups: dict = {}
    for r in final:
        groups.setdefault(_group_key(r), []).append(r)
    out_groups = []
    verdicts: dict = {}
    notes = []
    for key in sorted(groups, key=lambda k: tuple("" if v is None else str(v) for v in k)):
        grp = groups[key]
        ns = sorted({r["n"] for r in grp})
        per_n = []
        for n in ns:
            sel = [r for r in grp if r["n"] == n]
            entry = {"n": n, "rows": len(sel)}
            for col in FIT_COLUMNS + ["exceed", "ckp_slack"]:
                vals = np.array([r[col] for r in sel if r.get(col) is not None], dtype=float)
                if vals.size == 0:
                    continue
                if col == "exceed":
                    entry["exceedance_frequency"] = float(vals.mean())
                else:
                    q1, med, q3 = np.percentile(vals, [25, 50, 75])
                    entry[col] = {"median": float(med), "iqr": float(q3 - q1)}
            per_n.append(entry)
        label = f"family={key[0]},delta={key[1]},sigma={key[2]}"
        fits = {}
        series = {}
        for col in FIT_COLUMNS:
            pts = [(e["n"], e[col]["median"]) for e in per_n if col in e]
            if not pts:
                continue
            series[col] = [[n, v] for n, v in pts]
            if len(pts) < 3:
                fits[col] = {"note": "insufficient points (need >= 3 distinct N)"}
                continue
            if any(v <= 0 for _, v in pts):
                fits[col] = {"note": "nonpositive medians; no log-log fit"}
                continue
            f = fit_rate(pts)
            fits[col] = {"slope": f.slope, "intercept": f.intercept, "r2": f.r2,
                         "slope_ci": list(f.slope_ci), "points": len(pts)}
        exc = [e["exceedance_frequency"] for e in per_n if "exceedance_frequency" in e]
        if exc:
            series["exceedance_frequency"] = [[e["n"], e["exceedance_frequency"]]
                                              for e in per_n if "exceedance_frequency" in e]
        v = {}
        if "sup_deviation" in series and len(series["sup_deviation"]) >= 2:
            meds = [m for _, m in series["sup_deviation"]]
            v["median_sup_deviation_decreasing"] = _monotone(meds, strict=True)
        if "slope" in fits.get("sup_deviation", {}):
            v["sup_deviation_slope"] = fits["sup_deviation"]["slope"]
            v["sup_deviation_slope_le_-0.10"] = fits["sup_deviation"]["slope"] <= -0.10
        if len(exc) >= 2:
            v["exceedance_nonincreasing"] = _monotone(exc, strict=False)
        slack = [r["ckp_slack"] for r in ok if r.get("ckp_slack") is not None
                 and _group_key(r) == key]
        if slack:
            v["ckp_min_slack"] = float(min(slack))
            v["ckp_audit"] = bool(min(slack) >= -ckp_tolerance)
        verdicts[label] = v
        out_groups.append({"group": label, "per_n": per_n, "fits": fits, "series": series})
    if len(rows) == 1:
        notes.append("single row: insufficient points for fits (need >= 3 distinct N)")
    return {"schema": SCHEMA_VERSION, "rows": len(rows), "failed_rows": failed,
            "groups": out_groups, "verdicts": verdicts, "notes": notes,
            "ckp_tolerance": ckp_tolerance}
