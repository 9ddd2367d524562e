"""Euler-Maruyama integration of the interacting system and its mean-field copy.

The interacting flow (Phi) uses the pairwise regularized force; the
McKean-Vlasov flow (Psi) feels ``k^N * rho`` where ``rho`` is a smoothed
histogram of the Psi ensemble itself. Both start from the same samples and
consume the same Brownian increments, addressed by ``(seed, particle, step)``.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import streams
from .density import DensityGrid, histogram, kde_smooth, padded_box
from .errors import BlowUpError, ConfigurationError, DensitySupportError
from .forces import GridField, edge_ladder, kernel_sum, pairwise_sum
from .initial_data import InitialDensitySpec, PhaseState, sample_initial
from .kernels import DEFAULT_MOLLIFIER, KernelSpec, MollifierProfile, kernel_sup
from .metrics import coupling_deviation

NOISE_LABEL = "bm:shared"

__all__ = [
    "PhaseState", "SdeParams", "CoupledConfig", "CoupledRun", "brownian_increment",
    "brownian_increments", "pairwise_force", "meanfield_force", "em_step", "run_coupled",
    "simulate", "integrate_characteristics", "characteristics_vp", "default_dt",
]


@dataclass(frozen=True)
class SdeParams:
    sigma: float
    dt: float
    t_end: float
    seed: int = 0
    force_path: str = "direct"

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigurationError("dt and t_end must be positive")
        if self.dt > self.t_end:
            raise ConfigurationError("dt must not exceed t_end")
        if self.force_path not in ("direct", "cell_list"):
            raise ConfigurationError(f"unknown force path {self.force_path!r}")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))

    def times(self) -> np.ndarray:
        k = np.arange(self.n_steps + 1)
        return np.minimum(k * self.dt, self.t_end)


def default_dt(spec: KernelSpec, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> float:
    return min(1e-2, 0.1 / kernel_sup(spec, prof))


def brownian_increment(seed: int, label: str, i: int, step: int, d: int, dt: float) -> np.ndarray:
    """N(0, dt I_d) increment of particle i over step ``step``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return math.sqrt(dt) * streams.row_normals(seed, label, i, d, step)


def brownian_increments(seed: int, label: str, n: int, step: int, d: int, dt: float) -> np.ndarray:
    """Rows 0..n-1 of the step's increments; row i equals brownian_increment(i)."""
    z = streams.normals(seed, label, n, d, step)
    z *= math.sqrt(dt)
    return z


def pairwise_force(state: PhaseState, spec: KernelSpec, path: str = "direct",
                   prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """a_i = 1/(N-1) sum_{j != i} k^N(x_i - x_j)."""
    if spec.family == "exact":
        raise ConfigurationError("pairwise forces need a regularized kernel (lp or hlp)")
    n = state.n
    if n < 2:
        raise ValueError("need at least two particles")
    return pairwise_sum(state.X, spec, path, prof) / (n - 1)


def _support_box(rho: DensityGrid):
    center = 0.5 * (rho.lower + rho.upper)
    half = rho.upper - rho.lower
    return center - half, center + half


def meanfield_force(points, rho: DensityGrid, spec: KernelSpec,
                    prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """Midpoint-rule quadrature of the integral of k^N(p - y) rho(y) dy."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if abs(rho.total - 1.0) > 1e-6:
        raise ValueError(f"density must have unit mass, has {rho.total}")
    lo, hi = _support_box(rho)
    outside = np.any((points < lo) | (points > hi), axis=1)
    if np.any(outside):
        raise DensitySupportError(
            f"{int(outside.sum())} query points lie outside the doubled grid box")
    flat = rho.mass.reshape(-1)
    occ = np.nonzero(flat)[0]
    centers = np.stack([rho.centers(a)[idx] for a, idx in
                        enumerate(np.unravel_index(occ, rho.cells))], axis=1)
    return kernel_sum(points, centers, flat[occ], spec, prof)


def em_step(state: PhaseState, forces: np.ndarray, sigma: float, dt: float,
            increments: np.ndarray | None, step: int = -1) -> PhaseState:
    """x' = x + v dt, v' = v + a dt + sqrt(2 sigma) dB."""
    X = state.X + state.V * dt
    V = state.V + forces * dt
    if sigma > 0:
        V = V + math.sqrt(2.0 * sigma) * increments
    if not (np.isfinite(X).all() and np.isfinite(V).all()):
        bad = ~(np.all(np.isfinite(X), axis=1) & np.all(np.isfinite(V), axis=1))
        i = int(np.argmax(bad))
        raise BlowUpError(step, i, float(np.linalg.norm(forces[i])))
    return PhaseState(state.t + dt, X, V)


def _checkpoint_steps(times: np.ndarray, output_times) -> list[int]:
    out = []
    for c in output_times:
        k = int(np.searchsorted(times, c - 1e-12, side="left"))
        out.append(min(k, times.size - 1))
    return out


@dataclass(frozen=True)
class CoupledConfig:
    n: int
    kernel: KernelSpec
    initial: InitialDensitySpec
    sigma: float
    t_end: float = 1.0
    dt: float | None = None
    seed: int = 0
    refresh_every: int = 1
    grid_cells: int = 64
    smoothing_cells: float = 1.0
    n_copies: int | None = None
    force_path: str = "direct"
    output_times: tuple[float, ...] | None = None
    # test hook: drive Phi with Psi's mean-field force instead of the pairwise sum
    phi_uses_meanfield: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("n must be >= 2")
        if self.kernel.d != self.initial.d:
            raise ConfigurationError("kernel and initial density dimensions differ")
        if self.kernel.family == "exact":
            raise ConfigurationError("coupled runs need a regularized kernel")
        if self.kernel.n_particles != self.n:
            object.__setattr__(self, "kernel", self.kernel.with_n(self.n))
        if self.n_copies is not None and self.n_copies < self.n:
            raise ConfigurationError("n_copies must be >= n")
        if self.refresh_every < 1:
            raise ConfigurationError("refresh_every must be >= 1")
        pad = 3.0 * self.smoothing_cells + 1.0
        if self.grid_cells <= 2 * pad + 1:
            raise ConfigurationError(
                f"grid_cells must exceed {2 * pad + 1:g} (twice the {pad:g}-cell box padding)")

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else default_dt(self.kernel)

    @property
    def params(self) -> SdeParams:
        return SdeParams(self.sigma, self.step, self.t_end, self.seed, self.force_path)

    @property
    def checkpoints(self) -> tuple[float, ...]:
        if self.output_times is not None:
            return tuple(self.output_times)
        return tuple(self.t_end * q for q in (0.0, 0.25, 0.5, 0.75, 1.0))


@dataclass
class CoupledRun:
    config: CoupledConfig
    times: np.ndarray
    deviation: np.ndarray
    snapshots: list[tuple[float, PhaseState, PhaseState]]
    meta: dict = field(default_factory=dict)
    # full Psi ensembles (all M copies) at the checkpoints
    ensembles: list[PhaseState] = field(default_factory=list)

    @property
    def sup_deviation(self) -> np.ndarray:
        """Running supremum of the deviation, one entry per recorded step."""
        return np.maximum.accumulate(self.deviation)

    def sup_until(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t + 1e-12, side="right"))
        return float(self.deviation[:max(k, 1)].max())


class EnsembleField:
    """Mean-field force from a smoothed histogram of an ensemble."""

    def __init__(self, spec: KernelSpec, cells: int, smoothing: float,
                 prof: MollifierProfile = DEFAULT_MOLLIFIER, workers: int = 1):
        self.solver = GridField(spec, cells, prof, workers=workers)
        self.cells = cells
        self.smoothing = smoothing
        self.pad = 3.0 * smoothing + 1.0
        self.edge: float | None = None
        self.rho: DensityGrid | None = None
        self.values: np.ndarray | None = None

    def refresh(self, ensemble: np.ndarray, box_points: np.ndarray) -> DensityGrid:
        """Histogram + smoothing on a cubic-cell box around ``box_points``.

        The cell edge sits on a geometric ladder and is kept while it still
        fits (hysteresis of two rungs), so cached kernel transforms are reused.
        """
        lo = box_points.min(axis=0)
        hi = box_points.max(axis=0)
        need = float(np.max(hi - lo)) / (self.cells - 2.0 * self.pad)
        need = max(need, 1e-12)
        if self.edge is None or not (need <= self.edge <= need * 2.0 ** 0.25):
            self.edge = float(edge_ladder(np.array([need]))[0])
        center = 0.5 * (lo + hi)
        lower = center - 0.5 * self.cells * self.edge
        upper = center + 0.5 * self.cells * self.edge
        rho = kde_smooth(histogram(ensemble, lower, upper, self.cells), self.smoothing)
        self.rho = rho
        self.values = self.solver.field(rho)
        return rho

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return GridField.interpolate(self.rho, self.values, points)


def run_coupled(config: CoupledConfig, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> CoupledRun:
    n, spec, params = config.n, config.kernel, config.params
    m = config.n_copies or n
    d = spec.d
    init = sample_initial(config.initial, m, config.seed)
    phi = PhaseState(0.0, init.X[:n], init.V[:n])
    psi = init
    times = params.times()
    marks = _checkpoint_steps(times, config.checkpoints)
    field_ = EnsembleField(spec, config.grid_cells, config.smoothing_cells, prof, config.workers)

    deviation = np.zeros(times.size)
    snapshots = []
    meta = {"clip_flags": [], "edges": [], "bbox": [], "grid_cells": config.grid_cells,
            "smoothing_cells": config.smoothing_cells, "n_copies": m, "dt": params.dt,
            "n_steps": params.n_steps, "norm": "euclidean-per-particle"}
    crc_phi = crc_psi = 0

    def mark(k):
        for _ in range(marks.count(k)):
            snapshots.append((float(times[k]), phi, psi))
            both = np.vstack([phi.X, psi.X])
            meta["bbox"].append((float(times[k]), both.min(axis=0).tolist(),
                                 both.max(axis=0).tolist()))

    mark(0)
    for k in range(params.n_steps):
        h = float(times[k + 1] - times[k])
        if k % config.refresh_every == 0:
            rho = field_.refresh(psi.X, np.vstack([phi.X, psi.X]))
            if rho.clipped > 1e-6:
                meta["clip_flags"].append((k, rho.clipped))
            if not meta["edges"] or meta["edges"][-1][1] != rho.edges.tolist():
                meta["edges"].append((k, rho.edges.tolist()))
        a_psi = field_(psi.X)
        a_phi = a_psi[:n] if config.phi_uses_meanfield else pairwise_force(
            phi, spec, params.force_path, prof)
        inc = brownian_increments(config.seed, NOISE_LABEL, m, k, d, h)
        crc_phi = zlib.crc32(inc[:n].tobytes(), crc_phi)
        crc_psi = zlib.crc32(inc[:n].tobytes(), crc_psi)
        phi = em_step(phi, a_phi, config.sigma, h, inc[:n], k)
        psi = em_step(psi, a_psi, config.sigma, h, inc, k)
        deviation[k + 1] = coupling_deviation(phi, PhaseState(psi.t, psi.X[:n], psi.V[:n]), n)
        mark(k + 1)
    if crc_phi != crc_psi:
        raise RuntimeError("Phi and Psi consumed different increments")
    meta["increment_crc"] = crc_phi
    ensembles = [b for _, _, b in snapshots]
    snapshots = [(t, a, PhaseState(b.t, b.X[:n], b.V[:n])) for t, a, b in snapshots]
    return CoupledRun(config, times, deviation, snapshots, meta, ensembles)


def simulate(n: int, spec: KernelSpec, initial: InitialDensitySpec, sigma: float,
             t_end: float, dt: float | None = None, seed: int = 0,
             output_times=None, force_path: str = "direct",
             prof: MollifierProfile = DEFAULT_MOLLIFIER) -> list[PhaseState]:
    """Interacting system only; returns the states at ``output_times``."""
    spec = spec.with_n(n)
    params = SdeParams(sigma, dt or default_dt(spec, prof), t_end, seed, force_path)
    times = params.times()
    marks = _checkpoint_steps(times, output_times if output_times is not None else (t_end,))
    state = sample_initial(initial, n, seed)
    out = [state] * marks.count(0)
    for k in range(params.n_steps):
        h = float(times[k + 1] - times[k])
        a = pairwise_force(state, spec, force_path, prof)
        inc = brownian_increments(seed, NOISE_LABEL, n, k, spec.d, h) if sigma > 0 else None
        state = em_step(state, a, sigma, h, inc, k)
        out.extend([state] * marks.count(k + 1))
    return out


def integrate_characteristics(x0, v0, accel: Callable[[np.ndarray, float, int], np.ndarray],
                              dt: float, t_end: float, sigma: float = 0.0, seed: int = 0,
                              label: str = NOISE_LABEL, output_times=None):
    """Euler-Maruyama for dx = v dt, dv = accel(x, t, step) dt + sqrt(2 sigma) dB.

    Returns (times, list of PhaseState at output_times).
    """
    params = SdeParams(sigma, dt, t_end, seed)
    state = PhaseState(0.0, np.atleast_2d(x0), np.atleast_2d(v0))
    times = params.times()
    marks = _checkpoint_steps(times, output_times if output_times is not None else (t_end,))
    out = [state] * marks.count(0)
    for k in range(params.n_steps):
        h = float(times[k + 1] - times[k])
        a = accel(state.X, float(times[k]), k)
        inc = (brownian_increments(seed, label, state.n, k, state.d, h) if sigma > 0 else None)
        state = em_step(state, a, sigma, h, inc, k)
        out.extend([state] * marks.count(k + 1))
    return times, out


def characteristics_vp(x0, v0, pde_grid, dt: float, t_end: float, sigma: float = 0.0,
                       seed: int = 0, output_times=None):
    """Characteristics in d = 1 driven by the field of a kinetic-grid solution.

    ``pde_grid`` (a :class:`chaoslab.vp1d.KineticGrid1D`) is advanced alongside
    the particles with the same step. With ``sigma = 0`` and a sigma = 0 grid
    this integrates the Vlasov-Poisson characteristics; with ``sigma > 0`` and
    a grid carrying the same sigma it integrates the McKean-Vlasov limit system.
    """
    from . import vp1d

    state = {"grid": pde_grid}

    def accel(X, t, k):
        g = state["grid"]
        E = vp1d.grid_field(g)
        a = np.interp(X[:, 0], g.x_centers, E, left=E[0], right=E[-1])[:, None]
        state["grid"] = vp1d.splitting_step(g, dt)
        return a

    times, out = integrate_characteristics(x0, v0, accel, dt, t_end, sigma, seed,
                                           output_times=output_times)
    return times, out, state["grid"]
