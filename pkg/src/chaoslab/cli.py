"""Command line entry point.

    chaoslab simulate|sweep|metrics|pde1d|report [--config PATH] [--out DIR]
             [--threads K] [--set key=value ...]

The thread budget is applied before numba is imported; K = 0 keeps the
hardware default. Results do not depend on K.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not overwrite values given before the subcommand
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration", **kw)
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)", **kw)
    common.add_argument("--threads", type=int,
                        help="worker threads for force kernels (0 = hardware default)", **kw)
    common.add_argument("--set", dest="overrides_sub" if suppress else "overrides",
                        action="append", metavar="KEY=VALUE",
                        help="override a config field (dotted path)", **kw)
    return common


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaoslab", description=__doc__.split("\n\n")[0],
                                parents=[_common(False)])
    common = _common(True)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="one coupled run with per-step deviations")
    sw = sub.add_parser("sweep", parents=[common], help="full (N, sigma, seed) sweep")
    sw.add_argument("--workers", type=int, default=1, help="parallel sweep cells (processes)")
    m = sub.add_parser("metrics", parents=[common], help="metrics between two snapshots")
    m.add_argument("first", type=Path)
    m.add_argument("second", type=Path)
    sub.add_parser("pde1d", parents=[common], help="1-D kinetic solver run")
    r = sub.add_parser("report", parents=[common], help="summarize result tables")
    r.add_argument("tables", type=Path, nargs="+")
    return p


def _apply_threads(k: int | None) -> None:
    if not k:
        return
    if "numba" in sys.modules:
        import numba

        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))
    else:
        os.environ["NUMBA_NUM_THREADS"] = str(k)


def _load_config(args):
    from .config import parse_config

    text = args.config.read_text() if args.config else "{}"
    overrides = list(args.overrides or []) + list(getattr(args, "overrides_sub", None) or [])
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    return parse_config(text, overrides)


def _raw_threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    if args.config and args.config.exists():
        try:
            return int(json.loads(args.config.read_text()).get("threads", 0))
        except (ValueError, TypeError, AttributeError):
            return None
    return None


def cmd_simulate(cfg) -> dict:
    from .dynamics import run_coupled
    from .snapshot import write_snapshot

    n, sigma, seed = cfg.n_particles[0], cfg.sigma[0], cfg.seeds[0]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = run_coupled(cfg.coupled_config(n, sigma, seed))
    sup = run.sup_deviation
    lines = ["step,t,deviation,sup_deviation"]
    lines += [f"{k},{run.times[k]!r},{run.deviation[k]!r},{sup[k]!r}"
              for k in range(run.times.size)]
    tmp = out / "deviation.csv.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out / "deviation.csv")
    for k, (t, phi, psi) in enumerate(run.snapshots):
        write_snapshot(phi, out / f"phi_{k}.vpfp")
        write_snapshot(psi, out / f"psi_{k}.vpfp")
    meta = {"n": n, "sigma": sigma, "seed": seed, "sup_deviation": float(sup[-1]),
            "threshold": cfg.threshold(n), "exceeded": bool(sup[-1] > cfg.threshold(n)),
            **{k: v for k, v in run.meta.items() if k in ("dt", "n_steps", "n_copies",
                                                          "grid_cells", "smoothing_cells",
                                                          "norm", "increment_crc")}}
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def cmd_metrics(cfg, first: Path, second: Path) -> dict:
    from . import metrics as M
    from .snapshot import read_snapshot
    from .sweep import phase_grids

    a, b = read_snapshot(first), read_snapshot(second)
    if a.kind != b.kind:
        raise SystemExit(f"snapshot kinds differ: {a.kind} vs {b.kind}")
    res: dict = {"kind": a.kind, "time": [a.time, b.time]}
    if a.kind == "phase-state":
        phi, psi = a.data, b.data
        n = phi.n
        res["deviation"] = M.coupling_deviation(phi, psi, n)
        if n <= M.EXACT_W2_MAX_ATOMS:
            res["w2"] = M.wasserstein2_exact(phi.X, psi.X)
        else:
            s = M.wasserstein2_sliced(phi.X, psi.X, cfg.w2["projections"])
            res["w2"], res["w2_stderr"] = s.value, s.stderr
        p, q = phase_grids(phi, psi, cfg.entropy_cells if phi.d == cfg.d else
                           (32 if phi.d == 1 else 16), cfg.entropy["smoothing"])
    elif a.kind == "density-grid":
        p, q = a.data, b.data
    else:
        from .vp1d import l1_phase_distance

        res["l1"] = l1_phase_distance(a.data, b.data)
        return res
    res["h1"] = M.kl_divergence(p, q)
    res["l1"] = M.l1_distance(p, q)
    res["ckp_slack"] = M.ckp_audit(res["l1"], res["h1"], 1)
    return res


def cmd_pde1d(cfg) -> dict:
    from . import vp1d
    from .initial_data import InitialDensitySpec
    from .snapshot import write_snapshot

    p = cfg.pde1d
    spec = InitialDensitySpec(d=1, **cfg.initial)
    g = vp1d.grid_from_initial(spec, x_range=tuple(p["x_range"]), v_range=tuple(p["v_range"]),
                               n_x=p["n_x"], n_v=p["n_v"], sigma=p["sigma"], sign=p["sign"],
                               c1=p["c1"])
    dt = p["dt"] or 0.9 * vp1d.max_stable_dt(g)
    grids = vp1d.run(g, dt, cfg.t_end, cfg.checkpoints)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["t,mass,outflow,momentum,kinetic,v_variance,energy"]
    for k, gk in enumerate(grids):
        mo = vp1d.moments(gk)
        lines.append(",".join(repr(float(x)) for x in (gk.t, mo.mass, gk.outflow, mo.momentum,
                                                       mo.kinetic, mo.v_variance,
                                                       vp1d.energy(gk))))
        write_snapshot(gk, out / f"kinetic_{k}.vpfp")
    (out / "moments.csv").write_text("\n".join(lines) + "\n")
    return {"dt": dt, "checkpoints": list(cfg.checkpoints), "final_mass": grids[-1].mass,
            "outflow": grids[-1].outflow}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _apply_threads(_raw_threads(args))
    from .errors import ConfigError

    try:
        if args.command == "report":
            from .sweep import report

            summary = report(args.tables)
            out = args.out or Path(".")
            out.mkdir(parents=True, exist_ok=True)
            (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
            print(json.dumps(summary["verdicts"], indent=2, sort_keys=True))
            return 0
        cfg = _load_config(args)
        if args.command == "simulate":
            res = cmd_simulate(cfg)
        elif args.command == "sweep":
            from .sweep import run_sweep

            def progress(i, total, rows):
                status = rows[-1].get("status") if rows else "?"
                print(f"[{i}/{total}] n={rows[0]['n']} sigma={rows[0]['sigma']} "
                      f"seed={rows[0]['seed']} {status}", file=sys.stderr)

            res = run_sweep(cfg, workers=args.workers, progress=progress)["verdicts"]
        elif args.command == "metrics":
            res = cmd_metrics(cfg, args.first, args.second)
        else:
            res = cmd_pde1d(cfg)
    except ConfigError as exc:
        for path, msg in exc.violations:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return 2
    print(json.dumps(res, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
