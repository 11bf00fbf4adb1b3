"""Spatial statistics: rate maps, autocorrelograms, grid scores, path error.

The spatial autocorrelogram (SAC) is the Pearson correlation between a rate
map and its shifted copy computed over the bins defined in both (edge
correction: sums run over the overlap region only, and lags with too few
overlapping bins are masked invalid). The five overlap sums are evaluated
with FFT convolutions; one half-plane is computed and mirrored so the point
symmetry r(t) = r(-t) holds exactly.

The grid score contrasts annulus correlations at 60/120 degree rotations
against 30/90/150: GS = (r60 + r120)/2 - (r30 + r90 + r150)/3, in [-2, 2].
Scores are computed over a family of annuli (inner radius 2 bins up to 30%
of the SAC width, ring widths 4/6/8 bins); the default aggregation averages
the per-angle correlations over the family, which keeps the expected score
of an isotropic map at zero ("max" over the family is available but is
positively biased on structureless maps).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .trajectory import ArenaConfig, Trajectory

GS_ANGLES = (30, 60, 90, 120, 150)
RING_WIDTHS = (4, 6, 8)


@dataclass
class RateMap:
    """Time-averaged activity of one unit on the spatial bin grid; unvisited
    bins hold rate 0 and count 0."""

    grid: np.ndarray
    bin_size: float
    visit_counts: np.ndarray

    @classmethod
    def from_grid(cls, grid, bin_size=1.0):
        """Wrap a dense synthetic map (every bin counts as visited once)."""
        grid = np.asarray(grid, dtype=float)
        return cls(grid=grid, bin_size=bin_size, visit_counts=np.ones(grid.shape, dtype=np.int64))


@dataclass
class Sac:
    """Edge-corrected spatial autocorrelogram, (2B-1) x (2B-1) for B bins."""

    grid: np.ndarray
    valid_mask: np.ndarray
    min_overlap: int

    @property
    def center(self) -> int:
        return self.grid.shape[0] // 2


@dataclass
class GridScoreResult:
    """gs is None when no annulus had enough valid bins. correlations holds
    the per-angle values gs was computed from (family averages under "mean"
    aggregation, the best annulus under "max"); annulus is the best-scoring
    (inner, outer) radius pair in bins."""

    gs: float | None
    correlations: dict
    annulus: tuple | None
    aggregation: str
    n_annuli: int

    @property
    def defined(self) -> bool:
        return self.gs is not None


@dataclass
class TrajectoryError:
    """Step-wise Euclidean errors e (M, T), per-trajectory time means (M,),
    and their population mean."""

    stepwise: np.ndarray
    per_trajectory: np.ndarray
    mse: float


def rate_map(trajectory, rates, arena: ArenaConfig) -> RateMap:
    """Bin one unit's activity over the arena: each visited bin holds the
    arithmetic mean of the samples that fell in it.

    trajectory may be a Trajectory (all T+1 positions are used) or a plain
    (n, 2) position array; rates must have one sample per position.
    """
    if isinstance(trajectory, Trajectory):
        positions = trajectory.positions
    else:
        positions = np.asarray(trajectory, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if len(rates) != len(positions):
        raise ConfigError(
            f"rates length {len(rates)} != position count {len(positions)}"
        )
    nb = arena.n_bins
    if np.any(positions < 0) or np.any(positions > arena.side_length):
        raise ConfigError("positions outside the arena")
    ix = np.minimum((positions[:, 0] / arena.bin_size).astype(int), nb - 1)
    iy = np.minimum((positions[:, 1] / arena.bin_size).astype(int), nb - 1)
    flat = iy * nb + ix
    sums = np.bincount(flat, weights=rates, minlength=nb * nb)
    counts = np.bincount(flat, minlength=nb * nb)
    with np.errstate(invalid="ignore"):
        grid = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return RateMap(
        grid=grid.reshape(nb, nb),
        bin_size=arena.bin_size,
        visit_counts=counts.reshape(nb, nb).astype(np.int64),
    )


def sac(rate_map_in: RateMap, min_overlap: int = 20) -> Sac:
    """Spatial autocorrelogram of a rate map.

    Bins with no visits are treated as undefined and excluded from every
    overlap sum. Lags whose overlap has fewer than min_overlap defined bins,
    or a constant overlap region (zero variance), are masked invalid.
    """
    grid = np.asarray(rate_map_in.grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("empty rate map")
    defined = np.asarray(rate_map_in.visit_counts) > 0
    g = np.where(defined, grid, 0.0)
    m = defined.astype(float)

    def corr(a, b):
        return fftconvolve(a, b[::-1, ::-1], mode="full")

    n = np.round(corr(m, m))
    s1 = corr(g, m)
    s2 = corr(m, g)
    s11 = corr(g * g, m)
    s22 = corr(m, g * g)
    s12 = corr(g, g)

    num = n * s12 - s1 * s2
    var1 = n * s11 - s1 * s1
    var2 = n * s22 - s2 * s2
    # relative zero-variance guard: FFT residue on constant overlaps is tiny
    # compared with n^2 * mean-square
    scale1 = np.maximum(n * np.abs(s11), 1e-300)
    scale2 = np.maximum(n * np.abs(s22), 1e-300)
    valid = (n >= min_overlap) & (var1 > 1e-10 * scale1) & (var2 > 1e-10 * scale2)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / np.sqrt(np.clip(var1, 0.0, None) * np.clip(var2, 0.0, None))
    r = np.where(valid, np.clip(r, -1.0, 1.0), 0.0)

    # exact point symmetry: keep the lag half-plane (dy>0, or dy==0 and dx>=0)
    # as computed and mirror it into the other half
    size = r.shape[0]
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    keep = (yy > c) | ((yy == c) & (xx >= c))
    r = np.where(keep, r, r[::-1, ::-1])
    valid = np.where(keep, valid, valid[::-1, ::-1])
    return Sac(grid=r, valid_mask=valid, min_overlap=min_overlap)


def _rotate_bilinear(values, valid, degrees):
    """Rotate a SAC about its center, sampling bilinearly; targets that fall
    outside the array or rest on invalid bins (weight > 1e-12) become NaN."""
    size = values.shape[0]
    c = (size - 1) / 2.0
    th = np.deg2rad(degrees)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    ys, xs = yy - c, xx - c
    sy = c + np.cos(th) * ys - np.sin(th) * xs
    sx = c + np.sin(th) * ys + np.cos(th) * xs
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    wy = sy - y0
    wx = sx - x0
    inside = (y0 >= 0) & (y0 < size - 1) & (x0 >= 0) & (x0 < size - 1)
    y0c = np.clip(y0, 0, size - 2)
    x0c = np.clip(x0, 0, size - 2)
    acc = np.zeros_like(values)
    ok = inside.copy()
    for dy in (0, 1):
        for dx in (0, 1):
            w = (wy if dy else 1.0 - wy) * (wx if dx else 1.0 - wx)
            v = values[y0c + dy, x0c + dx]
            good = valid[y0c + dy, x0c + dx]
            acc += np.where(good, w * v, 0.0)
            ok &= good | (w <= 1e-12)
    out = np.full_like(values, np.nan)
    out[ok] = acc[ok]
    return out


_ANNULUS_CACHE: dict = {}


def _annuli(size, ring_widths, inner_step):
    key = (size, tuple(ring_widths), inner_step)
    if key not in _ANNULUS_CACHE:
        c = (size - 1) / 2.0
        yy, xx = np.mgrid[0:size, 0:size]
        rad = np.hypot(yy - c, xx - c)
        max_inner = int(0.3 * size)
        rings = []
        for inner in range(2, max_inner + 1, inner_step):
            for width in ring_widths:
                mask = (rad >= inner) & (rad < inner + width)
                rings.append(((inner, inner + width), np.flatnonzero(mask)))
        _ANNULUS_CACHE[key] = rings
    return _ANNULUS_CACHE[key]


def grid_score(
    sac_in: Sac,
    min_annulus_bins: int = 50,
    aggregation: str = "mean",
    ring_widths=RING_WIDTHS,
    inner_step: int = 1,
) -> GridScoreResult:
    """Rotational-symmetry score of a SAC over a family of annuli.

    Every annulus needs at least min_annulus_bins bins that are valid in both
    the SAC and each rotated copy (rotation-invalidated bins drop pairwise).
    Returns an undefined result (gs=None) when no annulus qualifies.
    """
    if aggregation not in ("mean", "max"):
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    values = sac_in.grid.ravel()
    valid = sac_in.valid_mask.ravel()
    size = sac_in.grid.shape[0]
    rotated = {
        ang: _rotate_bilinear(sac_in.grid, sac_in.valid_mask, ang).ravel()
        for ang in GS_ANGLES
    }
    per_annulus = []
    for (inner, outer), idx in _annuli(size, ring_widths, inner_step):
        base_idx = idx[valid[idx]]
        if len(base_idx) < min_annulus_bins:
            continue
        corrs = {}
        for ang in GS_ANGLES:
            rot = rotated[ang]
            sel = base_idx[np.isfinite(rot[base_idx])]
            if len(sel) < min_annulus_bins:
                corrs = None
                break
            x = values[sel]
            y = rot[sel]
            xm = x - x.mean()
            ym = y - y.mean()
            den = np.sqrt(float(xm @ xm) * float(ym @ ym))
            if den <= 0:
                corrs = None
                break
            corrs[ang] = float(xm @ ym) / den
        if corrs is None:
            continue
        per_annulus.append(((inner, outer), corrs, _eq15(corrs)))
    if not per_annulus:
        return GridScoreResult(
            gs=None, correlations={}, annulus=None, aggregation=aggregation, n_annuli=0
        )
    best = max(per_annulus, key=lambda item: item[2])
    if aggregation == "max":
        corrs = best[1]
    else:
        corrs = {
            ang: float(np.mean([item[1][ang] for item in per_annulus])) for ang in GS_ANGLES
        }
    return GridScoreResult(
        gs=_eq15(corrs),
        correlations=corrs,
        annulus=best[0],
        aggregation=aggregation,
        n_annuli=len(per_annulus),
    )


def _eq15(corrs) -> float:
    return (corrs[60] + corrs[120]) / 2.0 - (corrs[30] + corrs[90] + corrs[150]) / 3.0


@dataclass
class PopulationGridStats:
    mean_gs: float
    scores: np.ndarray  # per neuron; NaN where undefined
    defined_fraction: float
    top_cells: np.ndarray
    n_undefined: int


def population_grid_stats(
    maps,
    min_overlap: int = 20,
    min_annulus_bins: int = 50,
    aggregation: str = "mean",
    top_k: int = 10,
) -> PopulationGridStats:
    """Grid score for every rate map; undefined scores are excluded from the
    mean and counted. Raises if every score is undefined."""
    if len(maps) == 0:
        raise ConfigError("need at least one rate map")
    scores = np.full(len(maps), np.nan)
    for i, m in enumerate(maps):
        result = grid_score(sac(m, min_overlap), min_annulus_bins, aggregation)
        if result.defined:
            scores[i] = result.gs
    defined = np.isfinite(scores)
    if not defined.any():
        raise ValueError("grid score undefined for every map in the population")
    order = np.argsort(np.where(defined, -scores, np.inf), kind="stable")
    top_cells = order[: min(top_k, int(defined.sum()))]
    return PopulationGridStats(
        mean_gs=float(scores[defined].mean()),
        scores=scores,
        defined_fraction=float(defined.mean()),
        top_cells=top_cells,
        n_undefined=int((~defined).sum()),
    )


def trajectory_mse(true_positions, decoded_positions) -> TrajectoryError:
    """Step-wise Euclidean error, per-trajectory time mean, population mean.

    Inputs are (T, 2) for a single trajectory or (M, T, 2) for a population.
    """
    a = np.asarray(true_positions, dtype=float)
    b = np.asarray(decoded_positions, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"position shapes differ: {a.shape} vs {b.shape}")
    single = a.ndim == 2
    if single:
        a, b = a[None], b[None]
    stepwise = np.linalg.norm(a - b, axis=-1)
    per_trajectory = stepwise.mean(axis=-1)
    return TrajectoryError(
        stepwise=stepwise[0] if single else stepwise,
        per_trajectory=per_trajectory[0] if single else per_trajectory,
        mse=float(per_trajectory.mean()),
    )


def write_matrix_csv(matrix, path) -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.17g")


def export_population_analysis(rate_maps, arena: ArenaConfig, out_dir, aggregation="mean"):
    """Write per-neuron rate map and SAC matrices, a JSON index with each
    neuron's grid score and annulus, and the population summary CSV."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    index = []
    summary_rows = []
    for i, m in enumerate(rate_maps):
        rm = m if isinstance(m, RateMap) else RateMap.from_grid(m, arena.bin_size)
        map_file = f"rate_map_{i:04d}.csv"
        sac_file = f"sac_{i:04d}.csv"
        s = sac(rm)
        write_matrix_csv(rm.grid, os.path.join(out_dir, map_file))
        write_matrix_csv(s.grid, os.path.join(out_dir, sac_file))
        result = grid_score(s, aggregation=aggregation)
        index.append(
            {
                "neuron_id": i,
                "gs": result.gs,
                "annulus": list(result.annulus) if result.annulus else None,
                "file": map_file,
                "sac_file": sac_file,
            }
        )
        summary_rows.append((i, result.gs, result.defined))
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "population_summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neuron_id", "gs", "defined_flag"])
        for i, gs, defined in summary_rows:
            writer.writerow([i, "" if gs is None else repr(float(gs)), int(defined)])
