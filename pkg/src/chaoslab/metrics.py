"""Scalar diagnostics for coupled runs and their empirical laws."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special, stats

from .density import DensityGrid, check_geometry
from .kernels import DEFAULT_MOLLIFIER, KernelSpec, MollifierProfile, mollifier_psi

EXACT_W2_MAX_ATOMS = 4096
KL_PSEUDO_COUNT = 1e-12


def coupling_deviation(phi, psi, n: float) -> float:
    """sqrt(log N) max_i |x_i - xbar_i| + max_i |v_i - vbar_i| (Euclidean per particle)."""
    if phi.X.shape != psi.X.shape or phi.V.shape != psi.V.shape:
        raise ValueError("phase states must have matching shapes")
    if n < 2:
        raise ValueError("N must be >= 2")
    dx = np.sqrt(np.sum((phi.X - psi.X) ** 2, axis=1)).max(initial=0.0)
    dv = np.sqrt(np.sum((phi.V - psi.V) ** 2, axis=1)).max(initial=0.0)
    return math.sqrt(math.log(n)) * float(dx) + float(dv)


def exceedance_probability(runs: Sequence, threshold) -> float:
    """Fraction of runs whose running supremum exceeds ``threshold``.

    ``runs`` holds CoupledRun objects or plain sup-deviation values;
    ``threshold`` is a number or a callable mapping a run to its threshold.
    """
    if len(runs) == 0:
        raise ValueError("need at least one run")
    hits = 0
    for r in runs:
        sup = float(r) if np.isscalar(r) else float(np.max(r.deviation))
        thr = threshold(r) if callable(threshold) else threshold
        hits += sup > thr
    return hits / len(runs)


def _atoms(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def wasserstein2_exact(mu, nu) -> float:
    """W2 between equal-weight atom sets of equal size via an assignment solve."""
    mu, nu = _atoms(mu), _atoms(nu)
    if mu.shape != nu.shape:
        raise ValueError(f"atom sets differ in shape {mu.shape} vs {nu.shape}; "
                         "use wasserstein2_sliced for unequal sizes")
    n = mu.shape[0]
    if n > EXACT_W2_MAX_ATOMS:
        raise ValueError(f"{n} atoms exceeds the exact-solve cap {EXACT_W2_MAX_ATOMS}")
    cost = np.sum(mu**2, axis=1)[:, None] + np.sum(nu**2, axis=1)[None, :] - 2.0 * mu @ nu.T
    rows, cols = optimize.linear_sum_assignment(cost)
    sq = np.sum((mu[rows] - nu[cols]) ** 2, axis=1)
    return math.sqrt(float(sq.mean()))


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """Squared 1-D W2 between equal or unequal sized samples via quantiles."""
    a, b = np.sort(a), np.sort(b)
    if a.size == b.size:
        return float(np.mean((a - b) ** 2))
    # merge the two step quantile functions
    qs = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    w = np.diff(np.concatenate([[0.0], qs]))
    ia = np.minimum(np.ceil(qs * a.size - 1e-12).astype(int) - 1, a.size - 1)
    ib = np.minimum(np.ceil(qs * b.size - 1e-12).astype(int) - 1, b.size - 1)
    return float(np.sum(w * (a[ia] - b[ib]) ** 2))


@dataclass(frozen=True)
class SlicedW2:
    value: float
    stderr: float
    projections: int

    def __float__(self):
        return self.value


def random_frames(d: int, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """n_frames Haar-random orthonormal bases, stacked as (n_frames*d) x d."""
    z = rng.standard_normal((n_frames, d, d))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    return np.transpose(q, (0, 2, 1)).reshape(-1, d)


def wasserstein2_sliced(mu, nu, projections: int = 256, seed: int = 0,
                        isotropic_correction: bool = True,
                        noise_offset: float = 0.0) -> SlicedW2:
    """Monte-Carlo sliced W2 over random directions.

    Directions come in orthonormal frames, which makes the estimate exact for
    pure translations. The mean of the squared 1-D distances estimates
    E_theta W2^2 = W2^2/d on isotropic problems, hence the sqrt(d) factor.

    Finite samples add a matching-noise term to the exact W2^2 that the
    one-dimensional projections mostly miss. ``noise_offset`` (per unit
    variance, see :func:`calibrate_sliced_offset`) adds it back, scaled by
    the mean within-sample coordinate variance.
    """
    mu, nu = _atoms(mu), _atoms(nu)
    d = mu.shape[1]
    if nu.shape[1] != d:
        raise ValueError("atom sets live in different dimensions")
    if projections < 1:
        raise ValueError("need at least one projection")
    if d == 1:
        return SlicedW2(math.sqrt(_w2_sorted(mu[:, 0], nu[:, 0])), 0.0, 1)
    rng = np.random.default_rng(seed)
    frames = -(-projections // d)
    dirs = random_frames(d, frames, rng)
    sq = np.array([_w2_sorted(mu @ t, nu @ t) for t in dirs])
    # frame sums are i.i.d.; use them for the standard error
    per_frame = sq.reshape(frames, d).mean(axis=1)
    mean = float(per_frame.mean())
    scale2 = float(d) if isotropic_correction else 1.0
    offset = 0.0
    if noise_offset:
        offset = noise_offset * 0.5 * float(mu.var(axis=0).mean() + nu.var(axis=0).mean())
    value = math.sqrt(scale2 * mean + offset)
    if frames > 1 and value > 0:
        se_mean = float(per_frame.std(ddof=1)) / math.sqrt(frames)
        stderr = scale2 * se_mean / (2.0 * value)
    else:
        stderr = 0.0
    return SlicedW2(value, stderr, frames * d)


def calibrate_sliced_offset(n: int, d: int, reps: int = 200, projections: int = 256,
                            seed: int = 0) -> float:
    """Mean gap W2_exact^2 - W2_sliced^2 between two n-samples of N(0, I_d).

    This is the per-unit-variance ``noise_offset`` for n-atom comparisons.
    """
    if n > EXACT_W2_MAX_ATOMS:
        raise ValueError(f"calibration needs exact solves, n <= {EXACT_W2_MAX_ATOMS}")
    rng = np.random.default_rng(seed)
    gaps = []
    for r in range(reps):
        a, b = rng.standard_normal((2, n, d))
        sl = wasserstein2_sliced(a, b, projections, seed=seed + r).value
        gaps.append(wasserstein2_exact(a, b) ** 2 - sl**2)
    return float(np.mean(gaps))


def _unit(grid: DensityGrid) -> np.ndarray:
    total = grid.mass.sum()
    if not total > 0:
        raise ValueError("grid carries no mass")
    return grid.mass / total


def kl_divergence(p: DensityGrid, q: DensityGrid, eps: float = KL_PSEUDO_COUNT) -> float:
    """sum_c p_c log(p_c / q_c) with q padded by eps per cell and renormalized."""
    check_geometry(p, q)
    pm = _unit(p)
    qm = q.mass + eps
    qm = qm / qm.sum()
    nz = pm > 0
    return float(np.sum(pm[nz] * np.log(pm[nz] / qm[nz])))


def l1_distance(p: DensityGrid, q: DensityGrid) -> float:
    check_geometry(p, q)
    return float(np.abs(p.mass - q.mass).sum())


def ckp_audit(l1: float, h_k: float, k: int = 1) -> float:
    """Slack 2 k H_k - L1^2 of the Csiszar-Kullback-Pinsker bound."""
    if l1 < 0 or h_k < 0:
        raise ValueError("l1 and h_k must be nonnegative")
    return 2.0 * k * h_k - l1 * l1


# --- law of large numbers probe ----------------------------------------------

def _radial_weights(spec: KernelSpec, prof: MollifierProfile, nodes: int):
    """Nodes/weights for the radius |U| of the smoothing measure behind k^N.

    The lp kernel equals k convolved with the uniform ball of radius r_N; the
    hlp kernel equals k convolved with psi rescaled to r_N.
    """
    x, w = special.roots_legendre(nodes)
    rc, d = spec.cutoff, spec.d
    u = 0.5 * rc * (x + 1.0)
    w = 0.5 * rc * w
    if spec.family == "lp":
        dens = d * u ** (d - 1) / rc**d
    elif spec.family == "hlp":
        dens = 4.0 * math.pi * u**2 * mollifier_psi(np.stack(
            [u / rc, 0 * u, 0 * u], axis=1), prof) / rc**3
    else:
        return np.zeros(1), np.ones(1)
    w = w * dens
    return u, w / w.sum()


def gaussian_field(points, spec: KernelSpec, scale: float = 1.0, nodes: int = 64,
                   prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """Exact k^N * rho for rho = N(0, scale^2 I_d), by the shell theorem.

    k^N * rho (x) = sign c_d Q(|x|) x/|x|^d where Q(R) is the probability that
    Z + U lies within radius R, with Z ~ rho and U the radial smoothing measure.
    """
    P = _atoms(points)
    if P.shape[1] != spec.d:
        raise ValueError("points dimension does not match the kernel")
    R = np.sqrt(np.sum(P * P, axis=1))
    u, w = _radial_weights(spec, prof, nodes)
    z = (R[:, None] / scale) ** 2
    nc = (u[None, :] / scale) ** 2
    Q = np.where(nc > 0, stats.ncx2.cdf(z, spec.d, np.maximum(nc, 1e-300)),
                 stats.chi2.cdf(z, spec.d)) @ w
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(R > 0, Q / R**spec.d, 0.0)
    return spec.sign * spec.c * f[:, None] * P


def empirical_field(Y, spec: KernelSpec, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """k^N * rho_N at the samples themselves: (1/N) sum_{j != i} k^N(Y_i - Y_j)."""
    from .forces import pairwise_sum

    Y = _atoms(Y)
    return pairwise_sum(Y, spec, "direct", prof) / Y.shape[0]


def lln_statistic(Y, spec: KernelSpec, true_field: np.ndarray, m: int = 2,
                  prof: MollifierProfile = DEFAULT_MOLLIFIER) -> float:
    """sup_i |k^N * rho_N (Y_i) - k^N * rho (Y_i)|^(2m) for one ensemble."""
    diff = empirical_field(Y, spec, prof) - true_field
    return float(np.sqrt(np.sum(diff * diff, axis=1)).max()) ** (2 * m)


def lln_fluctuation(ensembles: Sequence[np.ndarray], spec: KernelSpec,
                    true_field: Callable[[np.ndarray], np.ndarray] | DensityGrid,
                    m: int = 2, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> float:
    """Average of :func:`lln_statistic` over independent ensembles.

    ``true_field`` is either a callable returning k^N * rho at given points or
    a normalized DensityGrid, in which case midpoint quadrature is used.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if isinstance(true_field, DensityGrid):
        from .dynamics import meanfield_force

        grid = true_field
        true_field = lambda pts: meanfield_force(pts, grid, spec, prof)
    vals = []
    for Y in ensembles:
        Y = _atoms(Y)
        spec_n = spec.with_n(max(Y.shape[0], 2))
        vals.append(lln_statistic(Y, spec_n, true_field(Y), m, prof))
    return float(np.mean(vals))


# --- rate fitting -------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    slope_ci: tuple[float, float]
    n_points: int


def fit_rate(pairs, confidence: float = 0.95) -> RateFit:
    """Least squares of log(value) on log(N)."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 3:
        raise ValueError("need at least 3 (N, value) pairs")
    n, v = arr[:, 0], arr[:, 1]
    if np.any(v <= 0) or np.any(n <= 0):
        raise ValueError("N and values must be positive for a log-log fit")
    if np.unique(n).size < 2:
        raise ValueError("need at least two distinct N")
    res = stats.linregress(np.log(n), np.log(v))
    dof = arr.shape[0] - 2
    half = float(stats.t.ppf(0.5 + confidence / 2, dof) * res.stderr) if dof > 0 else math.inf
    r2 = float(res.rvalue**2) if np.ptp(np.log(v)) > 0 else 1.0
    return RateFit(float(res.slope), float(res.intercept), r2,
                   (float(res.slope) - half, float(res.slope) + half), arr.shape[0])
