"""Topological and spectral analysis of population activity.

Pipeline: crop the central region of the population rate maps, build a point
cloud (spatial bins as samples, neurons as coordinates), PCA-reduce to seven
dimensions, and compute Vietoris-Rips persistence (H0/H1/H2) on cosine
distances. Column-shuffled clouds, which keep every marginal but destroy the
joint geometry, serve as background controls for bar lifetimes.

The Fourier side: the population-averaged 2D power spectral density of
grid-like rate maps shows three peak pairs in a hexagonal arrangement; their
wave vectors give three axes, each neuron gets a phase per axis, and
projecting spatial samples onto (cos(2 pi k.x), sin(2 pi k.x)) yields the
ring embeddings of the underlying torus.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._reduction import rips_pairs
from .errors import ConfigError

RIPS_POINT_CAP = 400


@dataclass
class PointCloud:
    """n samples in d dimensions plus where they came from."""

    points: np.ndarray
    provenance: str = "population-activity"
    explained_variance: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ConfigError("points must be an (n, d) array")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class PersistenceDiagram:
    """Birth-death pairs per homology dimension (death=inf for classes still
    alive at the filtration threshold), deterministically ordered by
    (dimension, birth, death)."""

    pairs: dict  # dim -> (k, 2) float array
    metric: str
    max_filtration: float
    n_points: int

    def lifetimes(self, dim: int, finite_only: bool = True) -> np.ndarray:
        arr = self.pairs.get(dim, np.empty((0, 2)))
        life = arr[:, 1] - arr[:, 0]
        if finite_only:
            life = life[np.isfinite(life)]
        return np.sort(life)[::-1]

    def essential_count(self, dim: int) -> int:
        arr = self.pairs.get(dim, np.empty((0, 2)))
        return int(np.isinf(arr[:, 1]).sum())


def build_point_cloud(
    maps,
    center_crop_fraction: float = 0.8,
    max_points: int = RIPS_POINT_CAP,
    seed: int = 0,
    std_tol: float = 1e-8,
) -> PointCloud:
    """Point cloud from population rate maps.

    Rows are the spatial bins of the centrally cropped region, columns are
    neurons. Near-constant columns (std < std_tol) are removed; if more than
    max_points rows remain they are uniformly subsampled with the given seed.
    """
    arr = np.stack([m.grid if hasattr(m, "grid") else np.asarray(m, float) for m in maps])
    if arr.ndim != 3:
        raise ConfigError("maps must stack to (n_neurons, B, B)")
    if not (0 < center_crop_fraction <= 1):
        raise ConfigError("center_crop_fraction must lie in (0, 1]")
    nb = arr.shape[1]
    crop = max(1, int(round(nb * center_crop_fraction)))
    start = (nb - crop) // 2
    cropped = arr[:, start : start + crop, start : start + crop]
    data = cropped.reshape(len(arr), -1).T  # rows: bins, columns: neurons
    keep = data.std(axis=0) >= std_tol
    if not keep.any():
        raise ValueError("every neuron column is near-constant; degenerate data")
    data = data[:, keep]
    if len(data) > max_points:
        rng = np.random.default_rng(seed)
        sel = np.sort(rng.choice(len(data), size=max_points, replace=False))
        data = data[sel]
    return PointCloud(points=data, provenance="population-activity")


def pca_reduce(cloud: PointCloud, target_dim: int = 7) -> PointCloud:
    """Mean-centered projection onto the top principal axes.

    Falls back to the available rank (with a warning) when the data carry
    fewer directions than target_dim; explained-variance fractions of the
    kept axes are recorded on the result.
    """
    if cloud.dim < target_dim:
        raise ConfigError(f"cloud has {cloud.dim} dims < target_dim {target_dim}")
    centered = cloud.points - cloud.points.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    if rank < target_dim:
        warnings.warn(
            f"data rank {rank} < target_dim {target_dim}; projecting onto rank",
            stacklevel=2,
        )
    keep = min(target_dim, max(rank, 1))
    total = float(np.sum(s**2))
    explained = (s[:keep] ** 2) / total if total > 0 else np.zeros(keep)
    return PointCloud(
        points=u[:, :keep] * s[:keep],
        provenance=cloud.provenance,
        explained_variance=explained,
    )


def distance_matrix(points: np.ndarray, metric: str) -> np.ndarray:
    """Pairwise distances; cosine is 1 - x.y/(|x||y|) and requires nonzero rows."""
    points = np.asarray(points, dtype=float)
    if metric == "euclidean":
        diff = points[:, None, :] - points[None, :, :]
        return np.sqrt((diff**2).sum(-1))
    if metric == "cosine":
        norms = np.linalg.norm(points, axis=1)
        if np.any(norms == 0):
            raise ConfigError("cosine metric undefined on zero-norm rows; remove them")
        unit = points / norms[:, None]
        sim = np.clip(unit @ unit.T, -1.0, 1.0)
        D = 1.0 - sim
        np.fill_diagonal(D, 0.0)
        return np.maximum(D, 0.0)
    raise ConfigError(f"unknown metric {metric!r}")


def rips_persistence(
    cloud: PointCloud,
    metric: str = "cosine",
    max_dim: int = 2,
    max_filtration: float | None = None,
    point_cap: int = RIPS_POINT_CAP,
) -> PersistenceDiagram:
    """Vietoris-Rips persistence diagram of a point cloud.

    max_filtration defaults to the enclosing radius (every class dies by
    then). Rejects clouds over point_cap; subsample first (build_point_cloud
    does this with a fixed seed).
    """
    if cloud.n > point_cap:
        raise ConfigError(
            f"{cloud.n} points exceeds the Rips cap {point_cap}; subsample the cloud first"
        )
    if cloud.n < 1:
        raise ConfigError("empty point cloud")
    if max_dim not in (0, 1, 2):
        raise ConfigError("max_dim must be 0, 1 or 2")
    D = distance_matrix(cloud.points, metric)
    if max_filtration is None:
        max_filtration = float(np.min(np.max(D, axis=1))) if cloud.n > 1 else 0.0
    pairs, essentials = rips_pairs(D, max_dim=max_dim, threshold=max_filtration)
    out = {}
    for dim in range(max_dim + 1):
        finite = np.asarray(pairs[dim], dtype=float).reshape(-1, 2)
        inf_rows = np.array([[b, np.inf] for b in essentials[dim]]).reshape(-1, 2)
        both = np.vstack([finite, inf_rows])
        order = np.lexsort((both[:, 1], both[:, 0]))
        out[dim] = both[order]
    return PersistenceDiagram(
        pairs=out, metric=metric, max_filtration=max_filtration, n_points=cloud.n
    )


def shuffled_control(
    cloud: PointCloud,
    n_shuffles: int,
    seed: int,
    metric: str = "cosine",
    max_dim: int = 2,
    max_filtration: float | None = None,
) -> np.ndarray:
    """Max bar lifetime per dimension across column-shuffled clouds.

    Every coordinate column is independently permuted across samples, which
    preserves all marginals while destroying the joint geometry. Returns an
    (n_shuffles, max_dim+1) array; classes still alive at the threshold
    contribute their censored lifetime (threshold - birth), a lower bound
    that can only make the control look stronger.
    """
    if n_shuffles < 1:
        raise ConfigError("n_shuffles must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.zeros((n_shuffles, max_dim + 1))
    for s in range(n_shuffles):
        pts = cloud.points.copy()
        for col in range(pts.shape[1]):
            pts[:, col] = pts[rng.permutation(len(pts)), col]
        shuffled = PointCloud(points=pts, provenance="shuffled-control")
        diagram = rips_persistence(
            shuffled, metric=metric, max_dim=max_dim, max_filtration=max_filtration
        )
        for dim in range(max_dim + 1):
            arr = diagram.pairs[dim]
            if dim == 0:
                life = arr[np.isfinite(arr[:, 1]), 1] - arr[np.isfinite(arr[:, 1]), 0]
            else:
                death = np.minimum(arr[:, 1], diagram.max_filtration)
                life = death - arr[:, 0]
            out[s, dim] = float(life.max()) if len(life) else 0.0
    return out


def barcode_stats(diagram: PersistenceDiagram, k: int = 3) -> dict:
    """Per-dimension mean lifetime of the top-k finite bars: dim -> (mean, count)."""
    stats = {}
    for dim, arr in diagram.pairs.items():
        life = diagram.lifetimes(dim, finite_only=True)[:k]
        stats[dim] = (float(life.mean()) if len(life) else 0.0, int(len(life)))
    return stats


@dataclass
class TorusProjection:
    """Three hexagonally arranged wave vectors (cycles/cm), per-neuron phases
    (rad in [0, 2pi)), and per-axis unit-circle embeddings of the spatial
    samples tagged with their decoded positions."""

    axes: np.ndarray  # (3, 2)
    phases: np.ndarray  # (n_neurons, 3)
    ring_embeddings: np.ndarray  # (3, n_samples, 2)
    positions: np.ndarray  # (n_samples, 2)
    psd: np.ndarray  # population-averaged, fftshifted
    peak_indices: np.ndarray  # (3, 2) fftshifted array indices


@dataclass
class NoHexStructure:
    """Explicit no-structure marker from the PSD peak search."""

    reason: str
    n_peak_pairs: int


def _point_symmetric_psd(m: np.ndarray) -> np.ndarray:
    f = np.fft.fft2(m - m.mean())
    psd = np.abs(f) ** 2
    sym = np.flip(np.roll(np.roll(psd, -1, 0), -1, 1), (0, 1))  # PSD at -k
    return np.fft.fftshift((psd + sym) / 2.0)


def fourier_torus(
    maps,
    sample_positions,
    bin_size: float,
    peak_sigma: float = 4.0,
    angle_tol_deg: float = 10.0,
    max_peak_pairs: int = 12,
):
    """Recover the three hexagonal Fourier axes of a grid-like population.

    maps: (n_neurons, B, B) rate maps on bins of bin_size cm.
    sample_positions: (n_samples, 2) cm positions tagged onto the ring
    embeddings (decoded positions in the trained pipeline, bin centers for
    synthetic data). Returns TorusProjection, or NoHexStructure when no
    triple of PSD peak pairs sits at mutual 60 degrees.
    """
    arr = np.stack([m.grid if hasattr(m, "grid") else np.asarray(m, float) for m in maps])
    positions = np.asarray(sample_positions, dtype=float)
    nb = arr.shape[1]
    psd = np.mean([_point_symmetric_psd(m) for m in arr], axis=0)
    c = nb // 2

    # strict local maxima above mean + peak_sigma * std, DC excluded
    pad = np.pad(psd, 1, constant_values=-np.inf)
    is_max = np.ones_like(psd, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_max &= psd >= pad[1 + dy : 1 + dy + nb, 1 + dx : 1 + dx + nb]
    stats_mask = np.ones_like(psd, dtype=bool)
    stats_mask[c, c] = False
    thresh = psd[stats_mask].mean() + peak_sigma * psd[stats_mask].std()
    is_max &= psd > thresh
    is_max[c, c] = False
    peak_rows, peak_cols = np.nonzero(is_max)

    # group +-k pairs; keep the half-plane representative
    pairs = {}
    for r, col in zip(peak_rows, peak_cols):
        fy, fx = r - c, col - c
        if (fy, fx) < (0, 0) or (fy == 0 and fx < 0):
            fy, fx = -fy, -fx
        if fy < 0:
            fy, fx = -fy, -fx
        pairs[(fy, fx)] = psd[r, col]
    reps = sorted(pairs, key=lambda k: -pairs[k])[:max_peak_pairs]
    if len(reps) < 3:
        return NoHexStructure(
            reason=f"only {len(reps)} PSD peak pair(s) found", n_peak_pairs=len(reps)
        )

    def axis_angle(rep):
        return np.arctan2(rep[0], rep[1]) % np.pi

    best = None
    target = np.pi / 3
    for combo in combinations(reps, 3):
        angles = [axis_angle(rep) for rep in combo]
        score = 0.0
        ok = True
        for a, b in combinations(angles, 2):
            diff = abs(a - b)
            diff = min(diff, np.pi - diff)
            score += abs(diff - target)
            if abs(diff - target) > np.deg2rad(angle_tol_deg):
                ok = False
        if ok and (best is None or score < best[0]):
            best = (score, combo)
    if best is None:
        return NoHexStructure(
            reason="no peak triple at mutual 60 degrees", n_peak_pairs=len(reps)
        )
    triple = sorted(best[1], key=axis_angle)
    axes = np.array([[fx, fy] for fy, fx in triple], dtype=float) / (nb * bin_size)
    peak_indices = np.array([[fy + c, fx + c] for fy, fx in triple])

    phases = np.empty((len(arr), 3))
    for i, m in enumerate(arr):
        f = np.fft.fft2(m - m.mean())
        for a, (fy, fx) in enumerate(triple):
            phases[i, a] = np.angle(f[fy % nb, fx % nb]) % (2 * np.pi)

    rings = np.empty((3, len(positions), 2))
    for a in range(3):
        ang = 2 * np.pi * (positions @ axes[a])
        rings[a, :, 0] = np.cos(ang)
        rings[a, :, 1] = np.sin(ang)
    return TorusProjection(
        axes=axes,
        phases=phases,
        ring_embeddings=rings,
        positions=positions,
        psd=psd,
        peak_indices=peak_indices,
    )


def write_diagram_csv(diagram: PersistenceDiagram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "birth", "death"])
        for dim in sorted(diagram.pairs):
            for birth, death in diagram.pairs[dim]:
                writer.writerow([dim, repr(float(birth)), "inf" if np.isinf(death) else repr(float(death))])


def write_barcode_json(diagram: PersistenceDiagram, path, top_k: int = 3) -> None:
    payload = {
        "metric": diagram.metric,
        "max_filtration": diagram.max_filtration,
        "n_points": diagram.n_points,
        "bars": {
            str(dim): [[float(b), None if np.isinf(d) else float(d)] for b, d in arr]
            for dim, arr in diagram.pairs.items()
        },
        "top_lifetime_means": {
            str(dim): stats for dim, stats in barcode_stats(diagram, top_k).items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def write_torus_csv(projection: TorusProjection, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "sample_index", "cos", "sin", "decoded_x", "decoded_y"])
        for a in range(3):
            for i, (cval, sval) in enumerate(projection.ring_embeddings[a]):
                writer.writerow(
                    [
                        a,
                        i,
                        repr(float(cval)),
                        repr(float(sval)),
                        repr(float(projection.positions[i, 0])),
                        repr(float(projection.positions[i, 1])),
                    ]
                )
