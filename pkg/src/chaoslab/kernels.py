"""Coulomb interaction kernels and their N-dependent regularizations.

Three families share one :class:`KernelSpec`:

* ``exact``: ``k(x) = sign * c_d * x / |x|^d``
* ``lp``: exact outside the cutoff radius ``r_N = N**-delta``, linear
  ``sign * c_d * x * N**(d*delta)`` inside
* ``hlp``: ``k * psi_delta^N`` for a radial mollifier, evaluated exactly with
  the shell theorem, ``sign * c_d * m(N**delta |x|) * x / |x|^d``

Arrays of points have shape ``(..., d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, interpolate

from .errors import ConfigurationError, DomainError

FAMILIES = ("exact", "lp", "hlp")


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}: 2, 2*pi, 4*pi, ..."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class KernelSpec:
    sign: int = 1
    d: int = 3
    c_d: float | None = None
    family: str = "lp"
    delta: float = 0.25
    n_particles: int = 1000

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ConfigurationError(f"sign must be +1 or -1, got {self.sign}")
        if self.d < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {self.d}")
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.c_d is not None and not self.c_d > 0:
            raise ConfigurationError(f"c_d must be positive, got {self.c_d}")
        if self.family != "exact":
            if not 0.0 < self.delta < 1.0:
                raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
            if self.n_particles < 2:
                raise ConfigurationError("n_particles must be >= 2")
        if self.family == "hlp" and self.d != 3:
            raise ConfigurationError("hlp kernel is only defined for d = 3")

    @property
    def c(self) -> float:
        return self.c_d if self.c_d is not None else 1.0 / sphere_area(self.d)

    @property
    def cutoff(self) -> float:
        return float(self.n_particles) ** (-self.delta)

    @property
    def inner_slope(self) -> float:
        """N**(d*delta), the slope of the linear branch per unit c_d."""
        return float(self.n_particles) ** (self.d * self.delta)

    def with_n(self, n: int) -> "KernelSpec":
        return KernelSpec(self.sign, self.d, self.c_d, self.family, self.delta, n)


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise DomainError(f"expected trailing dimension {d}, got shape {x.shape}")
    return x


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def coulomb_kernel(x, spec: KernelSpec) -> np.ndarray:
    x = _as_points(x, spec.d)
    r = _norm(x)
    if np.any(r == 0.0):
        raise DomainError("the exact Coulomb kernel is singular at x = 0")
    return spec.sign * spec.c * (x / r[..., None]) / (r ** (spec.d - 1))[..., None]


def kernel_lp(x, spec: KernelSpec) -> np.ndarray:
    x = _as_points(x, spec.d)
    r = _norm(x)
    outer = r >= spec.cutoff
    safe = np.where(outer, r, 1.0)
    # outer branch uses the same operation order as coulomb_kernel (bit-identical)
    exact = spec.sign * spec.c * (x / safe[..., None]) / (safe ** (spec.d - 1))[..., None]
    inner = spec.sign * spec.c * x * spec.inner_slope
    return np.where(outer[..., None], exact, inner)


# --- mollifier -------------------------------------------------------------

def _bump(r):
    r = np.asarray(r, dtype=np.float64)
    return np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 3, 0.0)


def _bump_moment(d: int) -> float:
    """Integral of r^(d-1) (1 - r^2)^3 over [0, 1]."""
    return sum(
        math.comb(3, j) * (-1) ** j / (d + 2 * j) for j in range(4)
    )


@dataclass(frozen=True)
class MollifierProfile:
    """Radial, unit-mass mollifier supported in the unit ball.

    With ``psi=None`` the profile is ``c_psi (1 - |x|^2)^3`` and its radial
    mass has a closed form. A user ``psi`` acts on points of shape ``(..., d)``;
    its radial mass is tabulated on ``nodes`` points and interpolated with a
    monotone cubic.
    """

    d: int = 3
    psi: Callable[[np.ndarray], np.ndarray] | None = None
    nodes: int = 2049
    radial: bool = field(init=False, default=True)

    def __post_init__(self):
        if self.psi is not None:
            object.__setattr__(self, "radial", self._check_radial())

    def _check_radial(self) -> bool:
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, size=(64, self.d))
        q, _ = np.linalg.qr(rng.normal(size=(self.d, self.d)))
        a = np.asarray(self.psi(pts), dtype=float)
        b = np.asarray(self.psi(pts @ q.T), dtype=float)
        return bool(np.allclose(a, b, rtol=1e-9, atol=1e-12))

    def _radial_profile(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.psi is None:
            return _bump(r)
        e = np.zeros(r.shape + (self.d,))
        e[..., 0] = r
        return np.asarray(self.psi(e), dtype=float)

    @cached_property
    def c_psi(self) -> float:
        if self.psi is None:
            return 1.0 / (sphere_area(self.d) * _bump_moment(self.d))
        val, _ = integrate.quad(lambda r: r ** (self.d - 1) * float(self._radial_profile(r)),
                                0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        return 1.0 / (sphere_area(self.d) * val)

    def __call__(self, x) -> np.ndarray:
        x = _as_points(x, self.d)
        if self.psi is None:
            return self.c_psi * _bump(_norm(x))
        return self.c_psi * np.asarray(self.psi(x), dtype=float)

    @cached_property
    def _mass_table(self):
        r = np.linspace(0.0, 1.0, self.nodes)
        dens = sphere_area(self.d) * self.c_psi * r ** (self.d - 1) * self._radial_profile(r)
        m = integrate.cumulative_simpson(dens, x=r, initial=0.0)
        m = np.maximum.accumulate(np.clip(m / m[-1], 0.0, 1.0))
        return interpolate.PchipInterpolator(r, m, extrapolate=False)

    def mass(self, r) -> np.ndarray:
        """Mass of the mollifier inside the ball of radius r."""
        r = np.asarray(r, dtype=np.float64)
        if self.psi is None and self.d == 3:
            s = np.minimum(r, 1.0)
            s2 = s * s
            poly = s * s2 * (1.0 / 3.0 + s2 * (-3.0 / 5.0 + s2 * (3.0 / 7.0 - s2 / 9.0)))
            return np.where(r >= 1.0, 1.0, 315.0 / 16.0 * poly)
        inner = np.asarray(self._mass_table(np.minimum(r, 1.0)))
        return np.where(r >= 1.0, 1.0, inner)

    def mass_ratio(self, r) -> np.ndarray:
        """m(r) / r**d, finite down to r = 0 (where it is the mean density near 0)."""
        r = np.asarray(r, dtype=np.float64)
        if self.psi is None and self.d == 3:
            s = np.minimum(r, 1.0)
            s2 = s * s
            poly = 1.0 / 3.0 + s2 * (-3.0 / 5.0 + s2 * (3.0 / 7.0 - s2 / 9.0))
            with np.errstate(divide="ignore", over="ignore"):
                return np.where(r >= 1.0, 1.0 / np.maximum(r, 1.0) ** 3, 315.0 / 16.0 * poly)
        origin = self.c_psi * float(self._radial_profile(0.0)) * sphere_area(self.d) / self.d
        tiny = r < 1e-60
        safe = np.where(tiny, 1.0, r)
        return np.where(tiny, origin, self.mass(safe) / safe**self.d)


DEFAULT_MOLLIFIER = MollifierProfile()


def mollifier_psi(x, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    return prof(x)


def radial_mass(r, spec: KernelSpec | None = None,
                prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """Mass of psi in the ball of radius r; with a spec, of psi_delta^N."""
    r = np.asarray(r, dtype=np.float64)
    if spec is not None:
        r = r * float(spec.n_particles) ** spec.delta
    return prof.mass(r)


def kernel_hlp(x, spec: KernelSpec, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    if spec.d != 3 or prof.d != 3:
        raise ConfigurationError("hlp kernel requires d = 3")
    if not prof.radial:
        raise ConfigurationError("hlp kernel needs a radial mollifier")
    x = _as_points(x, spec.d)
    r = _norm(x)
    rc = spec.cutoff
    outer = r >= rc
    safe = np.where(outer, r, rc)
    # inside the support m(s)/r^3 = N^(3 delta) m(s)/s^3, which stays finite at r = 0
    inner = spec.inner_slope * prof.mass_ratio(np.where(outer, 0.0, r) / rc)
    scale = np.where(outer, prof.mass(safe / rc) / safe**3, inner)
    return spec.sign * spec.c * x * scale[..., None]


def kernel(x, spec: KernelSpec, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> np.ndarray:
    """Dispatch on ``spec.family``."""
    if spec.family == "lp":
        return kernel_lp(x, spec)
    if spec.family == "hlp":
        return kernel_hlp(x, spec, prof)
    return coulomb_kernel(x, spec)


_HLP_PEAK: dict[int, float] = {}


def hlp_peak_factor(prof: MollifierProfile = DEFAULT_MOLLIFIER) -> float:
    """max_s m(s)/s^2, so that sup|k_hlp| = c_d N^(2 delta) times this."""
    key = id(prof)
    if key not in _HLP_PEAK:
        s = np.linspace(1e-4, 1.0, 200_001)
        _HLP_PEAK[key] = float(np.max(prof.mass(s) / s**2))
    return _HLP_PEAK[key]


def kernel_sup(spec: KernelSpec, prof: MollifierProfile = DEFAULT_MOLLIFIER) -> float:
    """Sup norm of the regularized kernel over R^d."""
    if spec.family == "lp":
        return spec.c * float(spec.n_particles) ** ((spec.d - 1) * spec.delta)
    if spec.family == "hlp":
        return spec.c * float(spec.n_particles) ** (2 * spec.delta) * hlp_peak_factor(prof)
    return math.inf


# --- Lipschitz majorant ------------------------------------------------------

# Calibrated with calibrate_lipschitz(d, n_samples=2_000_000, seed=2024) and
# multiplied by 1.5; values are per unit c_d.
LIPSCHITZ_CONSTANTS: dict[int, float] = {1: 1.6872, 2: 4.3928, 3: 16.947}


def lipschitz_constant(spec: KernelSpec) -> float:
    if spec.d not in LIPSCHITZ_CONSTANTS:
        raise ConfigurationError(f"no calibrated Lipschitz constant for d = {spec.d}")
    return LIPSCHITZ_CONSTANTS[spec.d] * spec.c


def lipschitz_majorant(x, spec: KernelSpec, constant: float | None = None,
                       origin: str = "zero") -> np.ndarray:
    """The majorant l^N(x) of the lp kernel's local Lipschitz constant.

    ``origin="zero"`` uses l^N(0) = 0; ``origin="max-branch"`` evaluates
    C / max(|x|, r_N)^d everywhere, including the origin.
    """
    if spec.family != "lp":
        raise ConfigurationError("lipschitz_majorant is defined for the lp family")
    x = _as_points(x, spec.d)
    C = lipschitz_constant(spec) if constant is None else constant
    r = _norm(x)
    val = C / np.maximum(r, spec.cutoff) ** spec.d
    if origin == "zero":
        val = np.where(r == 0.0, 0.0, val)
    elif origin != "max-branch":
        raise ValueError(f"unknown origin convention {origin!r}")
    return val


def sample_lipschitz_pairs(spec: KernelSpec, n: int, rng: np.random.Generator):
    """Pairs (x, xi) with |xi| < 2 r_N, concentrated around the cutoff scale."""
    d, rc = spec.d, spec.cutoff

    def directions(k):
        u = rng.normal(size=(k, d))
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    rx = rc * 10.0 ** rng.uniform(-3.0, 1.5, size=n)
    x = directions(n) * rx[:, None]
    # half the steps are log-uniform (probing derivatives), half uniform in the ball
    rxi = np.where(rng.random(n) < 0.5,
                   2.0 * rc * 10.0 ** rng.uniform(-6.0, 0.0, size=n),
                   2.0 * rc * rng.random(n) ** (1.0 / d))
    rxi = np.minimum(rxi, 2.0 * rc * (1.0 - 1e-12))
    xi = directions(n) * rxi[:, None]
    return x, xi


def lipschitz_ratios(spec: KernelSpec, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """|k^N(x) - k^N(x+xi)| / (|xi| * shape(x)), shape = 1 / max(|x|, r_N)^d."""
    diff = np.linalg.norm(kernel_lp(x, spec) - kernel_lp(x + xi, spec), axis=1)
    shape = lipschitz_majorant(x, spec, constant=1.0, origin="max-branch")
    return diff / (np.linalg.norm(xi, axis=1) * shape)


def calibrate_lipschitz(d: int, n_samples: int = 2_000_000, seed: int = 2024,
                        safety: float = 1.5) -> float:
    """Empirical C(d) per unit c_d: safety times the largest sampled ratio.

    The lp kernel is self-similar in N, so the ratio does not depend on
    (N, delta); a fixed reference spec is used.
    """
    spec = KernelSpec(sign=1, d=d, c_d=1.0, family="lp", delta=0.3, n_particles=1000)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for start in range(0, n_samples, 250_000):
        k = min(250_000, n_samples - start)
        x, xi = sample_lipschitz_pairs(spec, k, rng)
        worst = max(worst, float(np.max(lipschitz_ratios(spec, x, xi))))
    return safety * worst
