"""Sensory noise on the linear speed channel.

Gaussian noise adds h * N(0,1) independently per step. OU noise adds a
mean-reverting process with correlation time ou_tau and stationary standard
deviation ou_sigma; by default it uses the exact discrete update

    xi[t+1] = xi[t] * exp(-dt/tau) + sigma * sqrt(1 - exp(-2 dt/tau)) * N(0,1)

which is stationary for any dt (xi[0] is drawn from the stationary law). The
Euler-Maruyama discretization of the underlying SDE is available behind
ou_exact=False. Corrupted speeds are clamped at zero from below; a negative
speed would silently flip the heading when the velocity vector is rebuilt.

Intensities carry the same units as the speed sequence they corrupt. Noise
intensity (NoI) values are quoted in m/s; `NoiseConfig.scaled(100.0)` converts
a config for use on cm/s speed sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError

KINDS = ("none", "gaussian", "ou")


@dataclass
class NoiseConfig:
    kind: str = "none"
    h: float = 0.0
    ou_tau: float = 0.5
    ou_sigma: float = 0.0
    seed: int = 0
    ou_exact: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.h < 0:
            raise ConfigError("h must be >= 0")
        if self.ou_tau <= 0:
            raise ConfigError("ou_tau must be positive")
        if self.ou_sigma < 0:
            raise ConfigError("ou_sigma must be >= 0")

    def scaled(self, factor: float) -> "NoiseConfig":
        """Copy with intensities multiplied by factor (unit conversion)."""
        return replace(self, h=self.h * factor, ou_sigma=self.ou_sigma * factor)


def ou_path(config: NoiseConfig, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Sample n steps of the OU process xi (stationary initial condition)."""
    normals = rng.standard_normal(n)
    sigma, tau = config.ou_sigma, config.ou_tau
    if config.ou_exact:
        a = np.exp(-dt / tau)
        b = sigma * np.sqrt(1.0 - a * a)
    else:
        a = 1.0 - dt / tau
        b = sigma * np.sqrt(2.0 * dt / tau)
    drive = b * normals
    drive[0] = sigma * normals[0]
    return lfilter([1.0], [1.0, -a], drive)


def corrupt_speeds(
    speeds,
    config: NoiseConfig,
    dt: float,
    rng: np.random.Generator | None = None,
    return_clamp_count: bool = False,
):
    """Corrupt a speed sequence; output is clamped at zero from below.

    With return_clamp_count=True also returns how many entries were clamped.
    """
    speeds = np.asarray(speeds, dtype=float)
    if np.any(speeds < 0) or not np.all(np.isfinite(speeds)):
        raise ConfigError("speeds must be finite and non-negative")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.kind == "none":
        noisy = speeds.copy()
    elif config.kind == "gaussian":
        noisy = speeds + config.h * rng.standard_normal(speeds.shape)
    else:
        noisy = speeds + ou_path(config, len(speeds), dt, rng)
    clamped = int(np.count_nonzero(noisy < 0))
    noisy = np.maximum(noisy, 0.0)
    if return_clamp_count:
        return noisy, clamped
    return noisy


def rebuild_velocity(noisy_speed, heading) -> np.ndarray:
    """Velocity vector(s) (s cos(theta), s sin(theta)) from speed and heading."""
    s = np.asarray(noisy_speed, dtype=float)
    th = np.asarray(heading, dtype=float)
    return np.stack([s * np.cos(th), s * np.sin(th)], axis=-1)
