import csv
import json

import numpy as np
import pytest

from chaoslab import dynamics
from chaoslab.config import parse_config
from chaoslab.errors import CsvFormatError
from chaoslab.sweep import columns_for, read_rows, report, run_sweep

SMALL = {"mode": "thm1", "d": 3, "n_particles": [32], "delta": 0.25, "sigma": 0.5,
         "t_end": 0.04, "seeds": [0], "force": {"cells": 16},
         "entropy": {"cells": 6}}


def _cfg(**kw):
    return parse_config({**SMALL, **kw})


def test_one_cell_gives_five_rows(tmp_path):
    run_sweep(_cfg(), tmp_path)
    rows = read_rows(tmp_path / "results.csv")
    assert len(rows) == 5
    assert [r["t"] for r in rows] == pytest.approx([0, 0.01, 0.02, 0.03, 0.04])
    assert all(r["status"] == "ok" for r in rows)
    header = (tmp_path / "results.csv").read_text().splitlines()[0].split(",")
    assert header == columns_for(_cfg().metrics)
    assert (tmp_path / "summary.json").exists() and (tmp_path / "config.json").exists()
    snaps = sorted(p.name for p in (tmp_path / "snapshots").iterdir())
    assert snaps == ["n32_s0.5_seed0_phi_4.vpfp", "n32_s0.5_seed0_psi_4.vpfp"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = _cfg(n_particles=[32, 40], seeds=[0, 1])
    run_sweep(cfg, tmp_path / "a")
    run_sweep(cfg, tmp_path / "b", workers=2)
    for name in ("results.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for p in (tmp_path / "a" / "snapshots").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / "snapshots" / p.name).read_bytes()


def test_column_set_follows_metrics(tmp_path):
    run_sweep(_cfg(metrics=["deviation"]), tmp_path)
    header = (tmp_path / "results.csv").read_text().splitlines()[0].split(",")
    assert header[-2:] == ["deviation", "sup_deviation"] and "h1" not in header


def test_failed_cell_recorded_and_skipped(tmp_path, monkeypatch):
    real = dynamics.run_coupled

    def flaky(cfg, *a, **k):
        if cfg.n == 40:
            raise FloatingPointError("planted failure")
        return real(cfg, *a, **k)

    monkeypatch.setattr(dynamics, "run_coupled", flaky)
    summary = run_sweep(_cfg(n_particles=[32, 40, 48]), tmp_path)
    rows = read_rows(tmp_path / "results.csv")
    failed = [r for r in rows if r["status"] == "failed"]
    assert len(failed) == 1 and "planted failure" in failed[0]["diagnostic"]
    assert len(rows) == 11
    assert summary["failed_rows"] == 1


def test_ckp_audit_on_rows(tmp_path):
    summary = run_sweep(_cfg(n_particles=[32, 40, 48]), tmp_path)
    v = next(iter(summary["verdicts"].values()))
    assert v["ckp_audit"] and v["ckp_min_slack"] >= -0.05
    assert "sup_deviation_slope" in v


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_report_single_row_notes(tmp_path):
    p = tmp_path / "one.csv"
    _write(p, ["n", "t", "sup_deviation", "status"], [[64, 1.0, 0.1, "ok"]])
    s = report([p])
    assert s["rows"] == 1 and "insufficient points" in s["notes"][0]
    assert "insufficient points" in s["groups"][0]["fits"]["sup_deviation"]["note"]
    assert s["groups"][0]["per_n"][0]["sup_deviation"]["median"] == 0.1


def test_report_planted_power_law(tmp_path):
    p = tmp_path / "planted.csv"
    ns = [256, 512, 1024, 2048, 4096]
    _write(p, ["n", "seed", "t", "value", "status"],
           [[n, s, 1.0, n ** -0.25, "ok"] for n in ns for s in range(3)])
    fit = report([p])["groups"][0]["fits"]["value"]
    assert fit["slope"] == pytest.approx(-0.25, abs=1e-12) and fit["r2"] == pytest.approx(1.0)


def test_report_exceedance_and_monotone_verdicts(tmp_path):
    p = tmp_path / "exc.csv"
    rows = []
    for n, sups in [(64, [0.9, 0.1, 0.2]), (128, [0.5, 0.05, 0.1]), (256, [0.2, 0.02, 0.05])]:
        rows += [[n, s, 1.0, v, int(v > 0.3), "ok"] for s, v in enumerate(sups)]
    _write(p, ["n", "seed", "t", "sup_deviation", "exceed", "status"], rows)
    v = report([p])["verdicts"]
    v = next(iter(v.values()))
    assert v["median_sup_deviation_decreasing"] and v["exceedance_nonincreasing"]
    assert v["sup_deviation_slope"] < 0


def test_malformed_row_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("n,t,sup_deviation\n64,1.0,0.1\n64,abc,0.2\n")
    with pytest.raises(CsvFormatError) as info:
        read_rows(p)
    assert info.value.line == 3 and "line 3" in str(info.value)
    p.write_text("n,t\n64,1.0,3\n")
    with pytest.raises(CsvFormatError) as info:
        read_rows(p)
    assert info.value.line == 2
