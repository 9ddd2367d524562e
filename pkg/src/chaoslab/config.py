"""Declarative experiment configuration (JSON) and its validation.

Every violation is reported with the dotted path of the offending field, and
all of them are collected before raising :class:`ConfigError`.

Modes
-----
``thm1``  lp-type sweeps; requires 0 < delta < 1/d.
``thm2``  d = 3 sweeps with a lambda2 exceedance threshold; requires
          3/10 < lambda2 < 1/3, 0 < lambda1 < lambda2/3 and
          1/3 <= delta < min((lambda1 + 3 lambda2 + 1)/6, (1 - lambda2)/2).
``thm3``  vanishing-noise sweeps; the sigma list may contain 0.
``free``  no theorem constraints.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError, ConfigurationError

MODES = ("thm1", "thm2", "thm3", "free")
METRICS = ("deviation", "exceedance", "w2", "entropy", "l1", "ckp")

DEFAULTS: dict = {
    "mode": "free",
    "d": 3,
    "n_particles": [256],
    "delta": 0.25,
    "sigma": [0.5],
    "lambda1": None,
    "lambda2": None,
    "threshold_exponent": None,
    "kernel": {"family": "lp", "sign": 1, "c_d": None},
    "initial": {"kind": "gauss_x_truncgauss_v", "s_x": 1.0, "s_v": 1.0, "q_v": 4.0,
                "alpha": 4.0, "beta": 4.0, "m0": 4.0},
    "dt": None,
    "t_end": 1.0,
    "seeds": [0],
    "output_times": None,
    "metrics": ["deviation", "exceedance", "w2", "entropy", "l1", "ckp"],
    "force": {"path": "direct", "cells": 64, "smoothing": 1.0, "refresh_every": 1,
              "n_copies": None},
    "entropy": {"cells": None, "smoothing": 2.0},
    "w2": {"projections": 256},
    "snapshots": "final",
    "output_dir": "out",
    "threads": 0,
    "pde1d": {"n_x": 256, "n_v": 256, "x_range": [-6.0, 6.0], "v_range": [-6.0, 6.0],
              "dt": None, "c1": 0.5, "sign": 1, "sigma": 0.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    d: int
    n_particles: tuple[int, ...]
    delta: float
    sigma: tuple[float, ...]
    lambda1: float | None
    lambda2: float | None
    threshold_exponent: float | None
    kernel: dict
    initial: dict
    dt: float | None
    t_end: float
    seeds: tuple[int, ...]
    output_times: tuple[float, ...] | None
    metrics: tuple[str, ...]
    force: dict
    entropy: dict
    w2: dict
    snapshots: str
    output_dir: str
    threads: int
    pde1d: dict
    notes: tuple[str, ...] = field(default=())

    # --- derived objects -----------------------------------------------------
    @property
    def checkpoints(self) -> tuple[float, ...]:
        if self.output_times is not None:
            return self.output_times
        return tuple(self.t_end * q for q in (0.0, 0.25, 0.5, 0.75, 1.0))

    @property
    def exponent(self) -> float:
        """Exponent a of the exceedance threshold N^-a."""
        if self.threshold_exponent is not None:
            return self.threshold_exponent
        if self.mode == "thm2" and self.lambda2 is not None:
            return self.lambda2
        return self.delta

    def threshold(self, n: int) -> float:
        return float(n) ** (-self.exponent)

    def kernel_spec(self, n: int):
        from .kernels import KernelSpec

        return KernelSpec(sign=self.kernel["sign"], d=self.d, c_d=self.kernel["c_d"],
                          family=self.kernel["family"], delta=self.delta, n_particles=n)

    def initial_spec(self):
        from .initial_data import InitialDensitySpec

        return InitialDensitySpec(d=self.d, **self.initial)

    def coupled_config(self, n: int, sigma: float, seed: int, workers: int = 1):
        from .dynamics import CoupledConfig

        f = self.force
        return CoupledConfig(n=n, kernel=self.kernel_spec(n), initial=self.initial_spec(),
                             sigma=sigma, t_end=self.t_end, dt=self.dt, seed=seed,
                             refresh_every=f["refresh_every"], grid_cells=f["cells"],
                             smoothing_cells=f["smoothing"],
                             n_copies=None if f["n_copies"] is None else max(n, f["n_copies"]),
                             force_path=f["path"], output_times=self.checkpoints,
                             workers=workers)

    @property
    def entropy_cells(self) -> int:
        c = self.entropy["cells"]
        if c is not None:
            return c
        return 32 if self.d == 1 else 16

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values parse as JSON, else as strings."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([(item, "override must look like key=value")])
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError([(key, f"{p} is not an object")])
        node[parts[-1]] = value
    return raw


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_config(text: str | dict, overrides=None) -> ExperimentConfig:
    """Validate JSON text (or an already-decoded dict) into an ExperimentConfig."""
    if isinstance(text, str):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("$", f"invalid JSON: {exc}")]) from None
    else:
        raw = text
    if not isinstance(raw, dict):
        raise ConfigError([("$", "top level must be an object")])
    raw = apply_overrides(raw, overrides)
    errs: list[tuple[str, str]] = []
    unknown = sorted(set(raw) - set(DEFAULTS))
    for k in unknown:
        errs.append((k, "unknown field"))
    for sect in ("kernel", "initial", "force", "entropy", "w2", "pde1d"):
        if sect in raw:
            if not isinstance(raw[sect], dict):
                errs.append((sect, "must be an object"))
                raw = {**raw, sect: {}}
            else:
                for k in sorted(set(raw[sect]) - set(DEFAULTS[sect])):
                    errs.append((f"{sect}.{k}", "unknown field"))
    c = _merge(DEFAULTS, raw)
    if isinstance(c["sigma"], (int, float)) and not isinstance(c["sigma"], bool):
        c["sigma"] = [c["sigma"]]
    if isinstance(c["n_particles"], int) and not isinstance(c["n_particles"], bool):
        c["n_particles"] = [c["n_particles"]]

    # --- schema --------------------------------------------------------------
    if c["mode"] not in MODES:
        errs.append(("mode", f"must be one of {', '.join(MODES)}"))
    if not _is_int(c["d"]) or c["d"] < 1:
        errs.append(("d", "must be an integer >= 1"))
    if not isinstance(c["n_particles"], list) or not c["n_particles"]:
        errs.append(("n_particles", "must be a nonempty list"))
    else:
        for i, n in enumerate(c["n_particles"]):
            if not _is_int(n) or n < 2:
                errs.append((f"n_particles[{i}]", "must be an integer >= 2"))
    if not _is_num(c["delta"]) or not 0 < c["delta"] < 1:
        errs.append(("delta", "must lie in (0, 1)"))
    if not isinstance(c["sigma"], list) or not c["sigma"]:
        errs.append(("sigma", "must be a number or a nonempty list"))
    else:
        for i, s in enumerate(c["sigma"]):
            if not _is_num(s) or s < 0:
                errs.append((f"sigma[{i}]", "must be a number >= 0"))
    if not isinstance(c["seeds"], list) or not c["seeds"]:
        errs.append(("seeds", "must be a nonempty list of integers"))
    else:
        for i, s in enumerate(c["seeds"]):
            if not _is_int(s) or s < 0:
                errs.append((f"seeds[{i}]", "must be a nonnegative integer"))
    if not _is_num(c["t_end"]) or c["t_end"] <= 0:
        errs.append(("t_end", "must be positive"))
    if c["dt"] is not None and (not _is_num(c["dt"]) or c["dt"] <= 0):
        errs.append(("dt", "must be null (automatic) or positive"))
    if c["output_times"] is not None:
        ot = c["output_times"]
        if not isinstance(ot, list) or not ot or not all(_is_num(t) for t in ot):
            errs.append(("output_times", "must be null or a nonempty list of numbers"))
        elif _is_num(c["t_end"]) and any(t < 0 or t > c["t_end"] for t in ot):
            errs.append(("output_times", "times must lie in [0, t_end]"))
    if not isinstance(c["metrics"], list) or any(m not in METRICS for m in c["metrics"]):
        errs.append(("metrics", f"must be a list drawn from {', '.join(METRICS)}"))
    k = c["kernel"]
    if k.get("family") not in ("lp", "hlp"):
        errs.append(("kernel.family", "coupled sweeps need lp or hlp"))
    if k.get("sign") not in (1, -1):
        errs.append(("kernel.sign", "must be +1 or -1"))
    if k.get("c_d") is not None and (not _is_num(k["c_d"]) or k["c_d"] <= 0):
        errs.append(("kernel.c_d", "must be null or positive"))
    if k.get("family") == "hlp" and c["d"] != 3:
        errs.append(("kernel.family", "hlp requires d = 3"))
    f = c["force"]
    if f["path"] not in ("direct", "cell_list"):
        errs.append(("force.path", "must be direct or cell_list"))
    if not _is_num(f["smoothing"]) or f["smoothing"] < 0:
        errs.append(("force.smoothing", "must be >= 0"))
    elif not _is_int(f["cells"]) or f["cells"] <= 6 * f["smoothing"] + 3:
        # the force box keeps 3h + 1 empty cells on each side
        errs.append(("force.cells", f"must be an integer > {6 * f['smoothing'] + 3:g} "
                                    "(twice the 3h+1 cell padding plus one)"))
    if not _is_int(f["refresh_every"]) or f["refresh_every"] < 1:
        errs.append(("force.refresh_every", "must be an integer >= 1"))
    if f["n_copies"] is not None and (not _is_int(f["n_copies"]) or f["n_copies"] < 2):
        errs.append(("force.n_copies", "must be null or an integer >= 2"))
    e = c["entropy"]
    if e["cells"] is not None and (not _is_int(e["cells"]) or e["cells"] < 2):
        errs.append(("entropy.cells", "must be null or an integer >= 2"))
    if not _is_num(e["smoothing"]) or e["smoothing"] < 0:
        errs.append(("entropy.smoothing", "must be >= 0"))
    if not _is_int(c["w2"]["projections"]) or c["w2"]["projections"] < 1:
        errs.append(("w2.projections", "must be an integer >= 1"))
    if c["snapshots"] not in ("none", "final", "all"):
        errs.append(("snapshots", "must be none, final or all"))
    if not _is_int(c["threads"]) or c["threads"] < 0:
        errs.append(("threads", "must be an integer >= 0 (0 = hardware default)"))
    if c["threshold_exponent"] is not None and (
            not _is_num(c["threshold_exponent"]) or c["threshold_exponent"] <= 0):
        errs.append(("threshold_exponent", "must be null or positive"))
    try:
        from .initial_data import InitialDensitySpec

        if _is_int(c["d"]) and c["d"] >= 1:
            InitialDensitySpec(d=c["d"], **c["initial"])
    except (ConfigurationError, TypeError) as exc:
        errs.append(("initial", str(exc)))
    if errs:
        raise ConfigError(errs)

    # --- theorem-mode constraints -------------------------------------------
    notes = []
    d, delta, mode = c["d"], c["delta"], c["mode"]
    if mode == "thm1" and not delta < 1.0 / d:
        errs.append(("delta", f"delta must be < 1/{d} (thm1 requires delta in (0, 1/d))"))
    if mode == "thm2":
        l1, l2 = c["lambda1"], c["lambda2"]
        if d != 3:
            errs.append(("d", "thm2 requires d = 3"))
        if not _is_num(l2) or not 0.3 < l2 < 1.0 / 3.0:
            errs.append(("lambda2", "thm2 requires lambda2 in (3/10, 1/3)"))
        elif not _is_num(l1) or not 0 < l1 < l2 / 3.0:
            errs.append(("lambda1", f"thm2 requires lambda1 in (0, lambda2/3) = (0, {l2 / 3:.6g})"))
        else:
            hi = min((l1 + 3 * l2 + 1) / 6.0, (1 - l2) / 2.0)
            if not (1.0 / 3.0 <= delta < hi):
                errs.append(("delta", f"thm2 requires delta in [1/3, {hi:.6g}) for "
                                      f"lambda1 = {l1:g}, lambda2 = {l2:g}"))
    if mode == "thm3":
        notes.append("vanishing-noise mode: sigma list may approach 0; the limit comparison "
                     "assumes moments of order m > 3 and bounded log-gradient of f0")
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(
        mode=mode, d=d, n_particles=tuple(c["n_particles"]), delta=float(delta),
        sigma=tuple(float(s) for s in c["sigma"]), lambda1=c["lambda1"], lambda2=c["lambda2"],
        threshold_exponent=c["threshold_exponent"], kernel=dict(c["kernel"]),
        initial=dict(c["initial"]), dt=c["dt"], t_end=float(c["t_end"]),
        seeds=tuple(c["seeds"]),
        output_times=None if c["output_times"] is None else tuple(float(t) for t in c["output_times"]),
        metrics=tuple(c["metrics"]), force=dict(c["force"]), entropy=dict(c["entropy"]),
        w2=dict(c["w2"]), snapshots=c["snapshots"], output_dir=str(c["output_dir"]),
        threads=c["threads"], pde1d=dict(c["pde1d"]), notes=tuple(notes))
