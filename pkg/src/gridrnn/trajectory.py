"""Simulated rat trajectories in a square arena.

Speeds are Rayleigh-distributed, head direction follows a Gaussian
angular-velocity random walk, and a deterministic wall-avoidance rule turns
the agent away from walls and decelerates it so that every position stays
inside the closed arena square. Positions are the exact discrete integral of
the stored velocities: X[t+1] = X[t] + V[t]*dt holds bit-exactly.

Speeds are sampled in m/s and converted to cm/s at a single site
(`_M_TO_CM`); all arena geometry is in cm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import pi

import numpy as np

from .errors import ConfigError

_M_TO_CM = 100.0  # single speed-unit conversion site (m/s -> cm/s)

# candidate headings the avoidance rule may rotate onto: wall tangents
_CANDIDATE_ANGLES = np.array([pi / 2, -pi / 2, 0.0, pi])
_TANGENT_TOL = 1e-12


@dataclass
class ArenaConfig:
    """Square arena geometry and integration step.

    side_length and bin_size are in cm; side_length/bin_size must be an
    integer (the spatial bin grid). dt is the simulation step in seconds.
    boundary_margin is the wall distance (cm) at which avoidance triggers;
    boundary_slowdown in (0, 1] scales speed during an avoidance event.
    """

    side_length: float = 220.0
    bin_size: float = 4.4
    dt: float = 0.02
    boundary_margin: float = 3.0
    boundary_slowdown: float = 0.25

    def __post_init__(self):
        if self.side_length <= 0 or self.bin_size <= 0:
            raise ConfigError("side_length and bin_size must be positive")
        ratio = self.side_length / self.bin_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                f"side_length/bin_size = {ratio} is not an integer bin count"
            )
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not (0 < self.boundary_margin < self.side_length / 2):
            raise ConfigError("boundary_margin must lie in (0, side_length/2)")
        if not (0 < self.boundary_slowdown <= 1):
            raise ConfigError("boundary_slowdown must lie in (0, 1]")

    @property
    def n_bins(self) -> int:
        return int(round(self.side_length / self.bin_size))


@dataclass
class MotionConfig:
    """Self-motion statistics: Rayleigh speed scale (m/s) and Gaussian
    angular velocity (rad/s)."""

    rayleigh_scale: float = 0.13 * 2 * pi
    angular_sigma: float = 5.76 * 2
    angular_mean: float = 0.0

    def __post_init__(self):
        if self.rayleigh_scale <= 0:
            raise ConfigError("rayleigh_scale must be positive")
        if self.angular_sigma <= 0:
            raise ConfigError("angular_sigma must be positive")


@dataclass
class Trajectory:
    """One simulated run.

    positions: (T+1, 2) cm, including the initial position.
    headings: (T,) rad; heading used for velocity at each step (includes the
        avoidance turn applied at that step).
    velocities: (T, 2) cm/s, V[t] = |V[t]| * (cos(headings[t]), sin(headings[t])).
    turn_corrections: (T,) rad; the avoidance turn delta at each step (0 when
        no wall event).
    """

    positions: np.ndarray
    headings: np.ndarray
    velocities: np.ndarray
    turn_corrections: np.ndarray

    def __len__(self) -> int:
        return len(self.velocities)


def sample_speed(motion: MotionConfig, rng: np.random.Generator) -> float:
    """Draw one Rayleigh speed (m/s) by inverse-CDF: scale * sqrt(-2 ln(1-u))."""
    return float(_speed_from_quantile(motion.rayleigh_scale, rng.random()))


def _speed_from_quantile(scale, u):
    return scale * np.sqrt(-2.0 * np.log1p(-np.asarray(u)))


def boundary_correction(position, heading, speed, arena: ArenaConfig):
    """Wall-avoidance turn and slowdown for the current step.

    position (cm), heading (rad) and speed (cm/s) may be scalars or arrays
    with matching leading shape. Returns (delta, factor): delta is the minimal
    rotation (rad, 0 when no wall event) that removes the velocity component
    toward every wall the raw step would bring within boundary_margin, factor
    is boundary_slowdown during an event and 1 otherwise. Ties between equal
    clockwise/counterclockwise turns break toward the positive (ccw) turn.
    """
    position = np.asarray(position, dtype=float)
    heading = np.asarray(heading, dtype=float)
    speed = np.asarray(speed, dtype=float)
    scalar = heading.ndim == 0
    x = np.atleast_1d(position[..., 0])
    y = np.atleast_1d(position[..., 1])
    heading = np.atleast_1d(heading)
    speed = np.atleast_1d(speed)

    side, margin, dt = arena.side_length, arena.boundary_margin, arena.dt
    ch, sh = np.cos(heading), np.sin(heading)
    step_x = speed * dt * ch
    step_y = speed * dt * sh
    # a wall is "targeted" when the raw step approaches it and would land
    # within the margin band (or beyond)
    trig_e = (ch > 0) & (x + step_x > side - margin)
    trig_w = (ch < 0) & (x + step_x < margin)
    trig_n = (sh > 0) & (y + step_y > side - margin)
    trig_s = (sh < 0) & (y + step_y < margin)
    triggered = trig_e | trig_w | trig_n | trig_s

    cand = _CANDIDATE_ANGLES[:, None]
    cc, cs = np.cos(cand), np.sin(cand)
    feasible = (
        (~trig_e | (cc <= _TANGENT_TOL))
        & (~trig_w | (cc >= -_TANGENT_TOL))
        & (~trig_n | (cs <= _TANGENT_TOL))
        & (~trig_s | (cs >= -_TANGENT_TOL))
    )
    delta_c = np.mod(cand - heading + pi, 2 * pi) - pi
    # lexicographic (|delta|, prefer ccw) with invalid candidates pushed out
    key = np.abs(delta_c) + 1e-15 * (delta_c < 0)
    key = np.where(feasible, key, np.inf)
    best = np.argmin(key, axis=0)
    delta = np.where(triggered, np.take_along_axis(delta_c, best[None], 0)[0], 0.0)
    factor = np.where(triggered, arena.boundary_slowdown, 1.0)
    if scalar:
        return float(delta[0]), float(factor[0])
    return delta, factor


def generate_trajectory(
    arena: ArenaConfig, motion: MotionConfig, T: int, rng_seed
) -> Trajectory:
    """Generate one trajectory of T steps with a dedicated rng stream.

    The initial position is uniform over the arena, the initial heading
    uniform over [0, 2pi). rng_seed may be an int or a tuple of ints (the
    batch helpers key streams by (master_seed, batch, index) tuples).
    """
    batch = generate_trajectory_batch(arena, motion, T, [rng_seed])
    return batch[0]


def generate_trajectory_batch(
    arena: ArenaConfig, motion: MotionConfig, T: int, rng_seeds
) -> list[Trajectory]:
    """Generate len(rng_seeds) trajectories, one independent stream each.

    Vectorized across the batch; results are identical to calling
    generate_trajectory once per seed.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    B = len(rng_seeds)
    pos0 = np.empty((B, 2))
    theta0 = np.empty(B)
    speed_u = np.empty((B, T))
    omegas = np.empty((B, T))
    for i, seed in enumerate(rng_seeds):
        rng = np.random.default_rng(seed)
        pos0[i] = rng.uniform(0.0, arena.side_length, 2)
        theta0[i] = rng.uniform(0.0, 2 * pi)
        speed_u[i] = rng.random(T)
        omegas[i] = motion.angular_mean + motion.angular_sigma * rng.standard_normal(T)
    speeds_cm = _speed_from_quantile(motion.rayleigh_scale, speed_u) * _M_TO_CM

    side, dt, slowdown = arena.side_length, arena.dt, arena.boundary_slowdown
    positions = np.empty((B, T + 1, 2))
    headings = np.empty((B, T))
    velocities = np.empty((B, T, 2))
    deltas = np.empty((B, T))
    positions[:, 0] = pos0
    pos = pos0.copy()
    theta = theta0.copy()
    for t in range(T):
        s = speeds_cm[:, t]
        delta, factor = boundary_correction(pos, theta, s, arena)
        head = theta + delta
        eff = s * factor
        ch, sh = np.cos(head), np.sin(head)
        vx, vy = eff * ch, eff * sh
        nx, ny = pos[:, 0] + vx * dt, pos[:, 1] + vy * dt
        # decelerate further in the (rare) case a turned step would still exit
        for _ in range(200):
            bad = (nx < 0) | (nx > side) | (ny < 0) | (ny > side)
            if not bad.any():
                break
            eff = np.where(bad, eff * slowdown, eff)
            vx, vy = eff * ch, eff * sh
            nx, ny = pos[:, 0] + vx * dt, pos[:, 1] + vy * dt
        else:
            bad = (nx < 0) | (nx > side) | (ny < 0) | (ny > side)
            eff = np.where(bad, 0.0, eff)
            vx, vy = eff * ch, eff * sh
            nx, ny = pos[:, 0] + vx * dt, pos[:, 1] + vy * dt
        headings[:, t] = head
        deltas[:, t] = delta
        velocities[:, t, 0], velocities[:, t, 1] = vx, vy
        pos = np.stack([nx, ny], axis=1)
        positions[:, t + 1] = pos
        theta = head + omegas[:, t] * dt
    return [
        Trajectory(
            positions=positions[i],
            headings=headings[i],
            velocities=velocities[i],
            turn_corrections=deltas[i],
        )
        for i in range(B)
    ]


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """Export a trajectory as CSV: t, x, y, theta, vx, vy, delta.

    Row T carries the final position only (no velocity is defined there).
    """
    T = len(trajectory)
    with open(path, "w", newline="") as fh:
        fh.write("# t: step index; x,y: cm; theta: rad; vx,vy: cm/s; delta: rad\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "theta", "vx", "vy", "delta"])
        for t in range(T):
            writer.writerow(
                [
                    t,
                    repr(float(trajectory.positions[t, 0])),
                    repr(float(trajectory.positions[t, 1])),
                    repr(float(trajectory.headings[t])),
                    repr(float(trajectory.velocities[t, 0])),
                    repr(float(trajectory.velocities[t, 1])),
                    repr(float(trajectory.turn_corrections[t])),
                ]
            )
        writer.writerow(
            [
                T,
                repr(float(trajectory.positions[T, 0])),
                repr(float(trajectory.positions[T, 1])),
                "",
                "",
                "",
                "",
            ]
        )
