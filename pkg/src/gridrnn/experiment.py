"""Experiment orchestration: TOML configs, sweeps, deterministic artifacts.

Sweeps follow the seed-matched protocol: within a trial, one shared weight
initialization and one shared trajectory stream feed every sweep cell, so
cell differences are attributable to the swept parameter. Every artifact
embeds the sha256 hash of the resolved configuration, results are written
with repr float formatting and sorted keys, and no file carries a timestamp,
so a rerun with the same config produces byte-identical outputs. Sweep cells
are independent jobs (streams are keyed by trial and cell), executed
sequentially here; ordering of the result rows is fixed by the config, not
by completion time.

NoI (noise intensity) maps onto the gaussian h for kind="gaussian" and onto
the OU stationary sigma for kind="ou", both in m/s.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import topology as topo
from .analysis import export_population_analysis
from .errors import ConfigError
from .network import init_params, load_checkpoint
from .noise import NoiseConfig
from .placecells import PlaceCellEnsemble
from .trainer import (
    TrainConfig,
    derive_seed,
    evaluate_mse,
    evaluate_network,
    train,
    write_loss_curve_csv,
)
from .trajectory import ArenaConfig, MotionConfig

PROFILES = {
    "desk": {"n_rec": 512, "n_cells": 128, "batch_size": 64, "seq_len": 20, "n_steps": 2000},
    "paper": {"n_rec": 4096, "n_cells": 512, "batch_size": 200, "seq_len": 20, "n_steps": 50000},
}


@dataclass
class EnsembleConfig:
    n_cells: int = 128
    sigma_e: float = 20.0
    sigma_i: float = 40.0
    seed: int = 0


@dataclass
class SweepSpec:
    parameter: str = "alpha"
    values: list = field(default_factory=lambda: [1.0])
    alpha_values: list | None = None  # second axis for noise sweeps

    def __post_init__(self):
        if not self.values:
            raise ConfigError("sweep.values must be nonempty")


@dataclass
class ExperimentConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    trials: int = 5
    output_dir: str = "runs"
    eval_batches: int = 100
    profile: str = "desk"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        _resolve_sweep_field(self, self.sweep.parameter)


_SWEEP_FIELDS = {
    "alpha": ("train", "alpha"),
    "train.alpha": ("train", "alpha"),
    "noi": ("noise", None),
    "noise.intensity": ("noise", None),
    "env_length": ("arena", "side_length"),
    "arena.side_length": ("arena", "side_length"),
}


def _resolve_sweep_field(config: ExperimentConfig, name: str):
    if name not in _SWEEP_FIELDS:
        block, _, attr = name.partition(".")
        target = getattr(config, block, None)
        if target is None or not attr or not hasattr(target, attr):
            raise ConfigError(f"sweep parameter {name!r} does not name a config field")
        return (block, attr)
    return _SWEEP_FIELDS[name]


def config_to_dict(config: ExperimentConfig) -> dict:
    out = {
        "arena": asdict(config.arena),
        "motion": asdict(config.motion),
        "ensemble": asdict(config.ensemble),
        "train": asdict(config.train),
        "noise": asdict(config.noise),
        "sweep": asdict(config.sweep),
        "trials": config.trials,
        "output_dir": config.output_dir,
        "eval_batches": config.eval_batches,
        "profile": config.profile,
    }
    return out


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def load_config(
    path=None, profile: str | None = None, seed: int | None = None, output_dir=None
) -> ExperimentConfig:
    """Build an ExperimentConfig from a TOML file plus CLI overrides.

    Profile defaults (desk or paper scale) apply first, then file values,
    then explicit overrides.
    """
    raw = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    prof_name = profile or raw.get("profile", "desk")
    if prof_name not in PROFILES:
        raise ConfigError(f"unknown profile {prof_name!r}; expected desk or paper")
    prof = PROFILES[prof_name]

    def block(name, cls, **defaults):
        data = dict(defaults)
        data.update(raw.get(name, {}))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad [{name}] block: {exc}") from exc

    arena = block("arena", ArenaConfig)
    motion = block("motion", MotionConfig)
    ensemble = block("ensemble", EnsembleConfig, n_cells=prof["n_cells"])
    train_cfg = block(
        "train",
        TrainConfig,
        n_rec=prof["n_rec"],
        batch_size=prof["batch_size"],
        seq_len=prof["seq_len"],
        n_steps=prof["n_steps"],
    )
    noise_cfg = block("noise", NoiseConfig)
    sweep = block("sweep", SweepSpec)
    config = ExperimentConfig(
        arena=arena,
        motion=motion,
        ensemble=ensemble,
        train=train_cfg,
        noise=noise_cfg,
        sweep=sweep,
        trials=int(raw.get("trials", 5)),
        output_dir=str(raw.get("output_dir", "runs")),
        eval_batches=int(raw.get("eval_batches", 100)),
        profile=prof_name,
    )
    if seed is not None:
        config.train = replace(config.train, seed=int(seed))
    if output_dir is not None:
        config.output_dir = str(output_dir)
    return config


def make_ensemble(config: ExperimentConfig, arena: ArenaConfig | None = None) -> PlaceCellEnsemble:
    return PlaceCellEnsemble.sample(
        arena or config.arena,
        n_cells=config.ensemble.n_cells,
        sigma_e=config.ensemble.sigma_e,
        sigma_i=config.ensemble.sigma_i,
        seed=config.ensemble.seed,
    )


@dataclass
class CellResult:
    sweep_value: float
    alpha: float
    trial: int
    final_mse: float
    mean_gs: float | None
    defined_fraction: float
    final_loss: float
    loss_curve_path: str
    checkpoint_path: str
    noise_kind: str


@dataclass
class ExperimentResult:
    parameter: str
    rows: list
    aggregate: dict  # (sweep_value, alpha) -> {mse_mean, mse_std, gs_mean, gs_std}
    config_digest: str
    output_dir: str


def _noise_for(config: ExperimentConfig, intensity: float, trial_seed: int) -> NoiseConfig | None:
    kind = config.noise.kind
    if kind == "none" or intensity == 0.0:
        if kind == "none" and intensity != 0.0:
            raise ConfigError("nonzero NoI requires noise.kind gaussian or ou")
        return None
    if intensity < 0:
        raise ConfigError("NoI values must be non-negative")
    if kind == "gaussian":
        return replace(config.noise, h=intensity, seed=trial_seed)
    return replace(config.noise, ou_sigma=intensity, seed=trial_seed)


def _run_cells(config: ExperimentConfig, cells, out_dir: str) -> ExperimentResult:
    """Train/evaluate each (label, sweep_value, alpha, arena, ensemble, noise)
    cell with the seed-matched protocol and write all artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    digest = config_hash(config)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump({"config": config_to_dict(config), "hash": digest}, fh, indent=1, sort_keys=True)

    rows = []
    for trial in range(config.trials):
        trial_seed = derive_seed(config.train.seed, trial)
        init_seed = derive_seed(config.train.seed, trial, 1)
        inits = {}
        for label, value, alpha, arena, ensemble, noise_cfg in cells:
            key = (ensemble.n_cells,)
            if key not in inits:
                inits[key] = init_params(
                    config.train.n_rec,
                    ensemble.n_cells,
                    alpha=1.0,
                    seed=init_seed,
                    rec_init=config.train.rec_init,
                )
            params0 = inits[key]
            noise = None
            if noise_cfg is not None:
                noise = replace(noise_cfg, seed=derive_seed(trial_seed, 2))
            run_cfg = replace(config.train, alpha=alpha, seed=trial_seed)
            stem = os.path.join(out_dir, f"{label}_trial{trial}")
            trained, report = train(
                run_cfg,
                arena,
                config.motion,
                ensemble,
                params0,
                noise=noise,
                checkpoint_path=stem + ".ckpt",
            )
            write_loss_curve_csv(report, stem + ".loss.csv")
            ev = evaluate_network(
                trained,
                arena,
                config.motion,
                ensemble,
                seed=trial_seed,
                noise=noise,
                seq_len=config.train.seq_len,
                n_batches=config.eval_batches,
            )
            rows.append(
                CellResult(
                    sweep_value=value,
                    alpha=alpha,
                    trial=trial,
                    final_mse=report.final_mse,
                    mean_gs=ev.mean_gs,
                    defined_fraction=ev.defined_fraction,
                    final_loss=report.final_loss,
                    loss_curve_path=os.path.relpath(stem + ".loss.csv", out_dir),
                    checkpoint_path=os.path.relpath(stem + ".ckpt", out_dir),
                    noise_kind=noise_cfg.kind if noise_cfg is not None else "none",
                )
            )

    aggregate = {}
    for row in rows:
        aggregate.setdefault((row.sweep_value, row.alpha), []).append(row)
    agg = {}
    for key, group in aggregate.items():
        mses = np.array([r.final_mse for r in group])
        gss = np.array([r.mean_gs for r in group if r.mean_gs is not None])
        agg[key] = {
            "mse_mean": float(mses.mean()),
            "mse_std": float(mses.std()),
            "gs_mean": float(gss.mean()) if len(gss) else None,
            "gs_std": float(gss.std()) if len(gss) else None,
            "n": len(group),
        }
    result = ExperimentResult(
        parameter=config.sweep.parameter,
        rows=rows,
        aggregate=agg,
        config_digest=digest,
        output_dir=out_dir,
    )
    _write_result_csvs(result)
    return result


def _fmt(x):
    if x is None or x == "":
        return ""
    return repr(float(x))


def _write_result_csvs(result: ExperimentResult) -> None:
    with open(os.path.join(result.output_dir, "results.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sweep_value",
                "alpha",
                "trial",
                "final_mse",
                "mean_gs",
                "defined_gs_fraction",
                "final_loss",
                "noise_kind",
                "loss_curve",
                "checkpoint",
                "config_hash",
            ]
        )
        for r in result.rows:
            writer.writerow(
                [
                    _fmt(r.sweep_value),
                    _fmt(r.alpha),
                    r.trial,
                    _fmt(r.final_mse),
                    _fmt(r.mean_gs),
                    _fmt(r.defined_fraction),
                    _fmt(r.final_loss),
                    r.noise_kind,
                    r.loss_curve_path,
                    r.checkpoint_path,
                    result.config_digest,
                ]
            )
    with open(os.path.join(result.output_dir, "aggregate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sweep_value", "alpha", "mse_mean", "mse_std", "gs_mean", "gs_std", "n", "config_hash"]
        )
        for (value, alpha) in sorted(result.aggregate):
            entry = result.aggregate[(value, alpha)]
            writer.writerow(
                [
                    _fmt(value),
                    _fmt(alpha),
                    _fmt(entry["mse_mean"]),
                    _fmt(entry["mse_std"]),
                    _fmt(entry["gs_mean"]),
                    _fmt(entry["gs_std"]),
                    entry["n"],
                    result.config_digest,
                ]
            )


def run_alpha_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Seed-matched training across the leak-rate list in sweep.values."""
    alphas = [float(a) for a in config.sweep.values]
    for a in alphas:
        if not (0 < a <= 1):
            raise ConfigError(f"alpha {a} outside (0, 1]")
    ensemble = make_ensemble(config)
    # the leak-rate sweep is a noise-free protocol; a NoI=0 noise sweep
    # reduces to these numbers for matching seeds
    cells = [(f"alpha{a:g}", a, a, config.arena, ensemble, None) for a in alphas]
    return _run_cells(config, cells, os.path.join(config.output_dir, "sweep_alpha"))


def run_noise_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Grid of (alpha x NoI) cells under the configured noise kind; emits the
    per-cell heatmap data."""
    if config.noise.kind not in ("gaussian", "ou"):
        raise ConfigError("noise sweep needs noise.kind gaussian or ou")
    intensities = [float(v) for v in config.sweep.values]
    alphas = [float(a) for a in (config.sweep.alpha_values or [config.train.alpha])]
    ensemble = make_ensemble(config)
    cells = []
    for a in alphas:
        for noi in intensities:
            noise_cfg = _noise_for(config, noi, trial_seed=0)
            label = f"{config.noise.kind}_noi{noi:g}_alpha{a:g}"
            cells.append((label, noi, a, config.arena, ensemble, noise_cfg))
    return _run_cells(
        config, cells, os.path.join(config.output_dir, f"sweep_noise_{config.noise.kind}")
    )


def run_env_length_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Sweep the arena side length; bin size scales with the arena (constant
    bin count) and place-cell centers are resampled per length, keeping the
    field widths fixed in cm."""
    lengths = [float(v) for v in config.sweep.values]
    base = config.arena
    cells = []
    for L in lengths:
        if L <= 0:
            raise ConfigError("environment lengths must be positive")
        arena = replace(
            base,
            side_length=L,
            bin_size=base.bin_size * (L / base.side_length),
            boundary_margin=min(base.boundary_margin, L / 4),
        )
        ensemble = make_ensemble(config, arena)
        cells.append((f"env{L:g}", L, config.train.alpha, arena, ensemble, None))
    return _run_cells(config, cells, os.path.join(config.output_dir, "sweep_env"))


def evaluate_checkpoint(
    config: ExperimentConfig,
    checkpoint_path,
    n_test_trajectories: int = 320,
    t_list=(20, 50),
    export_dir=None,
):
    """Per-T decoded MSE plus rate-map/grid statistics for a checkpoint."""
    if not t_list:
        raise ConfigError("t_list must be nonempty")
    params, sidecar = load_checkpoint(checkpoint_path)
    ensemble = make_ensemble(config)
    if params.n_place != ensemble.n_cells:
        raise ConfigError(
            f"checkpoint n_place {params.n_place} != ensemble size {ensemble.n_cells}"
        )
    noise = None if config.noise.kind == "none" else config.noise
    batch = min(64, n_test_trajectories)
    n_batches = max(1, n_test_trajectories // batch)
    per_t = {}
    for T in t_list:
        per_t[int(T)] = evaluate_mse(
            params,
            config.arena,
            config.motion,
            ensemble,
            seed=config.train.seed,
            noise=noise,
            seq_len=int(T),
            n_batches=n_batches,
            batch_size=batch,
        )
    ev = evaluate_network(
        params,
        config.arena,
        config.motion,
        ensemble,
        seed=config.train.seed,
        noise=noise,
        seq_len=config.train.seq_len,
        n_batches=config.eval_batches,
    )
    if export_dir is not None:
        os.makedirs(export_dir, exist_ok=True)
        export_population_analysis(
            [m for m in ev.rate_maps], config.arena, os.path.join(export_dir, "analysis")
        )
        with open(os.path.join(export_dir, "evaluation.json"), "w") as fh:
            json.dump(
                {
                    "mse_by_T": {str(k): v for k, v in per_t.items()},
                    "mean_gs": ev.mean_gs,
                    "defined_gs_fraction": ev.defined_fraction,
                    "checkpoint": str(checkpoint_path),
                    "config_hash": config_hash(config),
                },
                fh,
                indent=1,
                sort_keys=True,
            )
    return per_t, ev


def run_topology(config: ExperimentConfig, checkpoint_path, out_dir, n_shuffles: int = 3):
    """Topology pipeline on a trained checkpoint: crop maps, PCA to 7 dims,
    cosine Rips persistence with shuffled controls, Fourier torus projection."""
    params, _ = load_checkpoint(checkpoint_path)
    ensemble = make_ensemble(config)
    noise = None if config.noise.kind == "none" else config.noise
    ev = evaluate_network(
        params,
        config.arena,
        config.motion,
        ensemble,
        seed=config.train.seed,
        noise=noise,
        seq_len=config.train.seq_len,
        n_batches=config.eval_batches,
        compute_grid_stats=True,
    )
    os.makedirs(out_dir, exist_ok=True)
    cloud = topo.build_point_cloud(ev.rate_maps, seed=config.train.seed)
    reduced = topo.pca_reduce(cloud, target_dim=7)
    diagram = topo.rips_persistence(reduced, metric="cosine", max_dim=2)
    topo.write_diagram_csv(diagram, os.path.join(out_dir, "diagram.csv"))
    topo.write_barcode_json(diagram, os.path.join(out_dir, "barcode.json"))
    controls = topo.shuffled_control(
        reduced,
        n_shuffles=n_shuffles,
        seed=derive_seed(config.train.seed, 3),
        metric="cosine",
        max_dim=2,
        max_filtration=diagram.max_filtration,
    )
    with open(os.path.join(out_dir, "shuffled_controls.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shuffle", "h0_max_lifetime", "h1_max_lifetime", "h2_max_lifetime"])
        for s, row in enumerate(controls):
            writer.writerow([s] + [repr(float(x)) for x in row])

    nb = config.arena.n_bins
    centers = (np.stack(np.meshgrid(np.arange(nb), np.arange(nb)), -1).reshape(-1, 2)[:, ::-1] + 0.5) * config.arena.bin_size
    projection = topo.fourier_torus(ev.rate_maps, centers, config.arena.bin_size)
    if isinstance(projection, topo.TorusProjection):
        topo.write_torus_csv(projection, os.path.join(out_dir, "torus_projection.csv"))
        status = {"hex_structure": True, "axes_cycles_per_cm": projection.axes.tolist()}
    else:
        status = {"hex_structure": False, "reason": projection.reason}
    status["mean_gs"] = ev.mean_gs
    status["config_hash"] = config_hash(config)
    with open(os.path.join(out_dir, "topology_summary.json"), "w") as fh:
        json.dump(status, fh, indent=1, sort_keys=True)
    return diagram, controls, projection
