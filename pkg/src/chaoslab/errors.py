"""Exception types raised across the package."""
from __future__ import annotations


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """Object constructed with an invalid or unsupported configuration."""


class SamplerError(RuntimeError):
    """Rejection sampler exhausted its retry budget."""


class BlowUpError(FloatingPointError):
    """Non-finite state produced by a time step."""

    def __init__(self, step: int, particle: int, accel: float):
        self.step = step
        self.particle = particle
        self.accel = accel
        super().__init__(
            f"non-finite state at step {step}, particle {particle} (|a| = {accel:.6g})"
        )


class DensitySupportError(ValueError):
    """Query point or ensemble outside the supported density box."""


class GeometryError(ValueError):
    """Two grids do not share the same geometry."""


class CFLError(ValueError):
    def __init__(self, dt: float, dt_max: float):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"time step {dt:.6g} violates CFL limit; use dt <= {dt_max:.6g}")


class SnapshotError(ValueError):
    """Malformed snapshot file. ``reason`` is one of magic, version, kind, crc, truncated."""

    def __init__(self, reason: str, message: str):
        self.reason = reason
        super().__init__(message)


class ConfigError(ValueError):
    """Experiment configuration rejected; ``violations`` lists (field path, message)."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.violations))


class CsvFormatError(ValueError):
    """Malformed results table; ``line`` is the 1-based line number."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}, line {line}: {message}")
