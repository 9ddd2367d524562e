"""Initial phase-space densities f0 and their samplers.

Two families:

``gauss_x_truncgauss_v``
    Isotropic Gaussian positions (scale ``s_x``) times a Gaussian velocity
    profile (scale ``s_v``) multiplied by the bump ``(1 - |v|^2/Q_v^2)^3``,
    so the velocity support is the ball of radius ``Q_v`` and f0 stays C^2.
``polynomial_decay``
    ``(1 + |x/s_x|^2)^-alpha (1 + |v/s_v|^2)^-beta``, normalized.

Samples are addressed per particle through :mod:`chaoslab.streams`, so particle
``i`` is the same draw whatever ``n`` is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, special

from . import streams
from .errors import ConfigurationError, SamplerError
from .kernels import sphere_area

KINDS = ("gauss_x_truncgauss_v", "polynomial_decay")
MAX_ATTEMPTS = 64


@dataclass(frozen=True)
class PhaseState:
    t: float
    X: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        V = np.ascontiguousarray(self.V, dtype=np.float64)
        if X.ndim != 2 or X.shape != V.shape:
            raise ValueError(f"X and V must be matching N x d arrays, got {X.shape}, {V.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "V", V)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def phase(self) -> np.ndarray:
        return np.hstack([self.X, self.V])


@dataclass(frozen=True)
class InitialDensitySpec:
    kind: str = "gauss_x_truncgauss_v"
    d: int = 3
    s_x: float = 1.0
    s_v: float = 1.0
    q_v: float = 4.0
    alpha: float = 4.0
    beta: float = 4.0
    m0: float = 4.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown initial density kind {self.kind!r}")
        if self.d < 1:
            raise ConfigurationError("d must be >= 1")
        if not (self.s_x > 0 and self.s_v > 0):
            raise ConfigurationError("scales s_x, s_v must be positive")
        if self.kind == "gauss_x_truncgauss_v" and not self.q_v > 0:
            raise ConfigurationError("q_v must be positive")
        if self.kind == "polynomial_decay":
            # finite second moments need alpha, beta > d/2 + 1
            if not self.alpha > self.d / 2 + 1:
                raise ConfigurationError(f"alpha must exceed d/2 + 1 = {self.d / 2 + 1}")
            if not self.beta > self.m0 / 2 + self.d / 2:
                raise ConfigurationError(
                    f"beta must exceed m0/2 + d/2 = {self.m0 / 2 + self.d / 2}")

    @cached_property
    def velocity_norm(self) -> float:
        """Normalizing constant of the velocity factor."""
        d = self.d
        if self.kind == "gauss_x_truncgauss_v":
            q, s = self.q_v, self.s_v
            val, _ = integrate.quad(
                lambda r: r ** (d - 1) * math.exp(-0.5 * (r / s) ** 2) * (1 - (r / q) ** 2) ** 3,
                0.0, q, epsabs=1e-15, epsrel=1e-13)
            return 1.0 / (sphere_area(d) * val)
        return _poly_norm(d, self.beta) / self.s_v**d

    @cached_property
    def position_norm(self) -> float:
        if self.kind == "gauss_x_truncgauss_v":
            return (2 * math.pi * self.s_x**2) ** (-self.d / 2)
        return _poly_norm(self.d, self.alpha) / self.s_x**self.d


def _poly_norm(d: int, a: float) -> float:
    """1 / integral of (1 + |x|^2)^-a over R^d."""
    return math.gamma(a) / (math.pi ** (d / 2) * math.gamma(a - d / 2))


def density_eval(spec: InitialDensitySpec, x, v) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r2x = np.sum((x / spec.s_x) ** 2, axis=-1)
    r2v = np.sum((v / spec.s_v) ** 2, axis=-1)
    if spec.kind == "gauss_x_truncgauss_v":
        fx = spec.position_norm * np.exp(-0.5 * r2x)
        w = np.sum(v * v, axis=-1) / spec.q_v**2
        bump = np.where(w < 1.0, (1.0 - np.minimum(w, 1.0)) ** 3, 0.0)
        fv = spec.velocity_norm * np.exp(-0.5 * r2v) * bump
    else:
        fx = spec.position_norm * (1.0 + r2x) ** (-spec.alpha)
        fv = spec.velocity_norm * (1.0 + r2v) ** (-spec.beta)
    return fx * fv


def grad_log_density(spec: InitialDensitySpec, x, v) -> tuple[np.ndarray, np.ndarray]:
    """(grad_x log f0, grad_v log f0) for the polynomial family."""
    if spec.kind != "polynomial_decay":
        raise ConfigurationError("closed-form log-gradient only for polynomial_decay")
    x = np.asarray(x, dtype=np.float64) / spec.s_x
    v = np.asarray(v, dtype=np.float64) / spec.s_v
    gx = -2 * spec.alpha * x / (1 + np.sum(x * x, axis=-1, keepdims=True)) / spec.s_x
    gv = -2 * spec.beta * v / (1 + np.sum(v * v, axis=-1, keepdims=True)) / spec.s_v
    return gx, gv


def _unit_vectors(seed: int, label: str, n: int, d: int) -> np.ndarray:
    z = streams.normals(seed, label, n, d)
    if d == 1:
        return np.where(z >= 0.0, 1.0, -1.0)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _poly_radial(seed: int, label: str, n: int, d: int, a: float, scale: float) -> np.ndarray:
    # r^2/(1+r^2) ~ Beta(d/2, a - d/2): exact inverse CDF of the radius
    u = streams.uniforms(seed, label + "-r", n, 1)[:, 0]
    t = special.betaincinv(d / 2.0, a - d / 2.0, u)
    r = scale * np.sqrt(t / (1.0 - t))
    return _unit_vectors(seed, label + "-dir", n, d) * r[:, None]


def _truncated_velocities(spec: InitialDensitySpec, n: int, seed: int) -> np.ndarray:
    v = np.empty((n, spec.d))
    pending = np.arange(n)
    for attempt in range(MAX_ATTEMPTS):
        z = spec.s_v * streams.normals(seed, "init-v", n, spec.d, attempt)[pending]
        u = streams.uniforms(seed, "init-accept", n, 1, attempt)[pending, 0]
        w = np.sum(z * z, axis=1) / spec.q_v**2
        ok = (w < 1.0) & (u < (1.0 - np.minimum(w, 1.0)) ** 3)
        v[pending[ok]] = z[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return v
    raise SamplerError(
        f"{pending.size} of {n} velocities rejected {MAX_ATTEMPTS} times; "
        f"q_v = {spec.q_v} is too small relative to s_v = {spec.s_v}")


def sample_initial(spec: InitialDensitySpec, n: int, seed: int) -> PhaseState:
    """n i.i.d. draws from f0; particle i is determined by (seed, i) alone."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.kind == "gauss_x_truncgauss_v":
        X = spec.s_x * streams.normals(seed, "init-x", n, spec.d)
        V = _truncated_velocities(spec, n, seed)
    else:
        X = _poly_radial(seed, "init-x", n, spec.d, spec.alpha, spec.s_x)
        V = _poly_radial(seed, "init-v", n, spec.d, spec.beta, spec.s_v)
    return PhaseState(0.0, X, V)
