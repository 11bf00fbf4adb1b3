"""Backpropagation-through-time training under the cross-entropy objective.

The loss is the batch/time mean of -sum_k P_k log softmax(pred)_k plus
lambda_reg * ||W_rec||_F^2. The readout is linear and can be non-positive, so
the softmax is applied to it before the log; the log-softmax is computed as
z - logsumexp(z), which never takes log(0).

Gradients are exact reverse-mode derivatives through the leaky update,
including the (1-alpha) skip path. The ReLU subgradient at 0 is 0 (strict
z > 0 masks). Per-tensor gradient accumulation happens once per time step in
reversed order, so a reference implementation with the same step granularity
reproduces the results bit-for-bit.

Training batches are freshly generated every step; trajectory and noise
streams are keyed by (seed, step, trajectory_index), so any batch can be
regenerated independently and in parallel without changing results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import analysis
from .errors import ConfigError, NumericError
from .network import (
    LeakyRnnParams,
    _forward_cached,
    init_params,
    params_fingerprint,
    save_checkpoint,
)
from .noise import NoiseConfig, corrupt_speeds, rebuild_velocity
from .placecells import PlaceCellEnsemble, decode, encode
from .trajectory import ArenaConfig, MotionConfig, generate_trajectory_batch

_EVAL_STREAM = 2**31  # reserved step index: eval batches never collide with training

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_LIMIT = 1e6

PARAM_NAMES = ("w_init", "w_rec", "w_in", "w_out")


@dataclass
class TrainConfig:
    batch_size: int = 200
    seq_len: int = 20
    lambda_reg: float = 1e-4
    learning_rate: float = 1e-4
    n_steps: int = 2000
    seed: int = 0
    alpha: float = 1.0
    grad_clip: float | None = 1.0
    n_rec: int = 512
    rec_init: str = "uniform"
    log_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be >= 0")
        if not (0 < self.alpha <= 1):
            raise ConfigError("alpha must lie in (0, 1]")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or None")


@dataclass
class TrainReport:
    loss_curve: list
    mse_curve: list
    final_mse: float
    checkpoint_path: str | None
    seed_record: int
    init_fingerprint: str
    diverged: bool = False
    clamp_events: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0][1]

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1]


def loss(predictions, targets, w_rec, lambda_reg) -> float:
    """Mean cross-entropy of softmax(predictions) against the place-cell
    targets, plus lambda_reg * ||w_rec||_F^2."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ConfigError(
            f"prediction shape {predictions.shape} != target shape {targets.shape}"
        )
    value = _cross_entropy_mean(predictions, targets) + lambda_reg * float(
        np.sum(w_rec * w_rec)
    )
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return value


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _cross_entropy_mean(predictions, targets):
    ls = _log_softmax(predictions)
    return float(-(targets * ls).sum(axis=-1).mean())


def gradients(params: LeakyRnnParams, batch, config: TrainConfig):
    """Exact BPTT gradients of `loss` over one batch.

    batch is (initial encodings (B, n_place), velocities (B, T, 2), targets
    (B, T, n_place)). Returns (grads dict keyed by PARAM_NAMES, loss value).
    """
    p0, velocities, targets = (np.asarray(a, dtype=float) for a in batch)
    if len(p0) == 0:
        raise ConfigError("batch must be nonempty")
    B, T = targets.shape[0], targets.shape[1]
    states, preds, masks = _forward_cached(params, p0, velocities)

    ls = _log_softmax(preds)
    ce_mean = float(-(targets * ls).sum(axis=-1).mean())
    total = ce_mean + config.lambda_reg * float(np.sum(params.w_rec * params.w_rec))
    if not np.isfinite(total):
        raise NumericError("non-finite loss in gradients")

    soft = np.exp(ls)
    target_sum = targets.sum(axis=-1, keepdims=True)
    dpred = (soft * target_sum - targets) / (B * T)

    alpha = params.alpha
    d_w_out = dpred.reshape(B * T, -1).T @ states[:, 1:].reshape(B * T, -1)
    d_w_rec = np.zeros_like(params.w_rec)
    d_w_in = np.zeros_like(params.w_in)
    g = np.zeros((B, params.n_rec))
    for t in range(T - 1, -1, -1):
        g = g + dpred[:, t] @ params.w_out
        dz = alpha * np.where(masks[:, t], g, 0.0)
        d_w_rec += dz.T @ states[:, t]
        d_w_in += dz.T @ velocities[:, t]
        g = (1.0 - alpha) * g + dz @ params.w_rec
    u0 = p0 @ params.w_init.T
    du = np.where(u0 > 0.0, g, 0.0)
    d_w_init = du.T @ p0
    d_w_rec = d_w_rec + 2.0 * config.lambda_reg * params.w_rec

    grads = {"w_init": d_w_init, "w_rec": d_w_rec, "w_in": d_w_in, "w_out": d_w_out}
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in {name}")
    return grads, total


def clip_global_norm(grads: dict, max_norm: float | None) -> dict:
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


class AdamOptimizer:
    """Standard Adam with bias correction; state per parameter tensor."""

    def __init__(self, learning_rate, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def update(self, params: LeakyRnnParams, grads: dict) -> None:
        self.t += 1
        for name in PARAM_NAMES:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1**self.t)
            vhat = self.v[name] / (1 - self.beta2**self.t)
            w = getattr(params, name)
            w -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_training_batch(
    arena: ArenaConfig,
    motion: MotionConfig,
    ensemble: PlaceCellEnsemble,
    seq_len: int,
    batch_size: int,
    seed: int,
    step_index: int,
    noise: NoiseConfig | None = None,
):
    """Generate one batch of fresh trajectories.

    Returns (p0 encodings (B, n_place), input velocities (B, T, 2), targets
    (B, T, n_place), true positions (B, T+1, 2), clamp_events). Input
    velocities are the noise-corrupted ones when a noise config is given;
    targets always encode the true positions.
    """
    trajs = generate_trajectory_batch(
        arena, motion, seq_len, [(seed, step_index, i) for i in range(batch_size)]
    )
    positions = np.stack([tr.positions for tr in trajs])
    velocities = np.stack([tr.velocities for tr in trajs])
    clamp_events = 0
    if noise is not None and noise.kind != "none":
        noise_cm = noise.scaled(100.0)  # NoI quoted in m/s; arena speeds are cm/s
        for i, tr in enumerate(trajs):
            speeds = np.linalg.norm(tr.velocities, axis=-1)
            rng = np.random.default_rng((noise.seed, step_index, i))
            noisy, clamped = corrupt_speeds(
                speeds, noise_cm, arena.dt, rng, return_clamp_count=True
            )
            velocities[i] = rebuild_velocity(noisy, tr.headings)
            clamp_events += clamped
    p0 = encode(ensemble, positions[:, 0])
    targets = encode(ensemble, positions[:, 1:])
    return p0, velocities, targets, positions, clamp_events


def _batch_mse(ensemble, preds, true_positions, decode_k=3):
    decoded = decode(ensemble, preds, k=decode_k)
    err = analysis.trajectory_mse(true_positions[:, 1:], decoded)
    return err.mse


def train(
    config: TrainConfig,
    arena: ArenaConfig,
    motion: MotionConfig,
    ensemble: PlaceCellEnsemble,
    params_init: LeakyRnnParams,
    noise: NoiseConfig | None = None,
    checkpoint_path=None,
) -> tuple[LeakyRnnParams, TrainReport]:
    """Run n_steps Adam updates on freshly generated batches.

    Fully deterministic given (config, arena, motion, ensemble, params_init,
    noise). Aborts early (diverged=True) if the loss exceeds 1e6. Returns the
    trained parameters and the report; params_init is not mutated.
    """
    params = params_init.copy()
    if abs(params.alpha - config.alpha) > 0:
        params = params.with_alpha(config.alpha)
    opt = AdamOptimizer(config.learning_rate)
    loss_curve: list = []
    mse_curve: list = []
    clamp_total = 0
    diverged = False

    def log_step(step_idx, value, preds, positions):
        loss_curve.append((step_idx, value))
        mse_curve.append((step_idx, _batch_mse(ensemble, preds, positions)))

    if config.n_steps == 0:
        p0, vel, targets, positions, _ = make_training_batch(
            arena, motion, ensemble, config.seq_len, config.batch_size, config.seed, 0, noise
        )
        _, preds, _ = _forward_cached(params, p0, vel)
        value = loss(preds, targets, params.w_rec, config.lambda_reg)
        log_step(0, value, preds, positions)
    for step_idx in range(config.n_steps):
        p0, vel, targets, positions, clamped = make_training_batch(
            arena,
            motion,
            ensemble,
            config.seq_len,
            config.batch_size,
            config.seed,
            step_idx,
            noise,
        )
        clamp_total += clamped
        try:
            grads, value = gradients(params, (p0, vel, targets), config)
        except NumericError as exc:
            raise NumericError(f"{exc} (training step {step_idx})") from exc
        if step_idx % config.log_every == 0 or step_idx == config.n_steps - 1:
            _, preds, _ = _forward_cached(params, p0, vel)
            log_step(step_idx, value, preds, positions)
        if value > DIVERGENCE_LIMIT:
            diverged = True
            break
        grads = clip_global_norm(grads, config.grad_clip)
        opt.update(params, grads)

    final_mse = evaluate_mse(
        params, arena, motion, ensemble, seed=config.seed, noise=noise, seq_len=config.seq_len
    )
    saved_path = None
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path, seed=config.seed)
        saved_path = str(checkpoint_path)
    report = TrainReport(
        loss_curve=loss_curve,
        mse_curve=mse_curve,
        final_mse=final_mse,
        checkpoint_path=saved_path,
        seed_record=config.seed,
        init_fingerprint=params_fingerprint(params_init),
        diverged=diverged,
        clamp_events=clamp_total,
    )
    return params, report


def evaluate_mse(
    params: LeakyRnnParams,
    arena: ArenaConfig,
    motion: MotionConfig,
    ensemble: PlaceCellEnsemble,
    seed: int,
    noise: NoiseConfig | None = None,
    seq_len: int = 20,
    n_batches: int = 5,
    batch_size: int = 64,
    decode_k: int = 3,
) -> float:
    """Decoded-trajectory MSE (cm) over fresh test batches, evaluated under
    the same noise condition the network was trained with."""
    values = []
    for b in range(n_batches):
        p0, vel, _, positions, _ = make_training_batch(
            arena, motion, ensemble, seq_len, batch_size, seed, _EVAL_STREAM + b, noise
        )
        _, preds, _ = _forward_cached(params, p0, vel)
        values.append(_batch_mse(ensemble, preds, positions, decode_k))
    return float(np.mean(values))


@dataclass
class EvalReport:
    """Rate maps plus summary statistics from a test run of a trained net."""

    mse: float
    rate_maps: np.ndarray  # (n_rec, n_bins, n_bins)
    visit_counts: np.ndarray  # (n_bins, n_bins)
    mean_gs: float | None
    gs_values: np.ndarray
    defined_fraction: float


def evaluate_network(
    params: LeakyRnnParams,
    arena: ArenaConfig,
    motion: MotionConfig,
    ensemble: PlaceCellEnsemble,
    seed: int,
    noise: NoiseConfig | None = None,
    seq_len: int = 20,
    n_batches: int = 100,
    batch_size: int = 64,
    compute_grid_stats: bool = True,
    gs_aggregation: str = "mean",
) -> EvalReport:
    """Run test batches, accumulate per-neuron rate maps, score them.

    Rate maps average each unit's activity over visits to each spatial bin
    (unvisited bins stay 0), pooled across all test trajectories.
    """
    nb = arena.n_bins
    sums = np.zeros((nb * nb, params.n_rec))
    counts = np.zeros(nb * nb, dtype=np.int64)
    mse_values = []
    for b in range(n_batches):
        p0, vel, _, positions, _ = make_training_batch(
            arena, motion, ensemble, seq_len, batch_size, seed, _EVAL_STREAM + b, noise
        )
        states, preds, _ = _forward_cached(params, p0, vel)
        mse_values.append(_batch_mse(ensemble, preds, positions))
        pos_flat = positions[:, 1:].reshape(-1, 2)
        act_flat = states[:, 1:].reshape(-1, params.n_rec)
        ix = np.minimum((pos_flat[:, 0] / arena.bin_size).astype(int), nb - 1)
        iy = np.minimum((pos_flat[:, 1] / arena.bin_size).astype(int), nb - 1)
        flat = iy * nb + ix
        np.add.at(sums, flat, act_flat)
        counts += np.bincount(flat, minlength=nb * nb)

    visit = counts.reshape(nb, nb)
    with np.errstate(invalid="ignore"):
        maps = np.where(counts[:, None] > 0, sums / np.maximum(counts[:, None], 1), 0.0)
    rate_maps = maps.T.reshape(params.n_rec, nb, nb)

    mean_gs = None
    gs_values = np.full(params.n_rec, np.nan)
    defined_fraction = 0.0
    if compute_grid_stats:
        stats = analysis.population_grid_stats(
            [analysis.RateMap(grid=m, bin_size=arena.bin_size, visit_counts=visit) for m in rate_maps],
            aggregation=gs_aggregation,
        )
        mean_gs = stats.mean_gs
        gs_values = stats.scores
        defined_fraction = stats.defined_fraction
    return EvalReport(
        mse=float(np.mean(mse_values)),
        rate_maps=rate_maps,
        visit_counts=visit,
        mean_gs=mean_gs,
        gs_values=gs_values,
        defined_fraction=defined_fraction,
    )


@dataclass
class ComparisonResult:
    """Per-(alpha, trial) reports plus per-alpha aggregate means."""

    alphas: list
    trials: int
    reports: dict  # (alpha, trial) -> TrainReport
    mean_gs: dict  # (alpha, trial) -> float | None
    mse_by_alpha: dict  # alpha -> mean final mse
    gs_by_alpha: dict  # alpha -> mean of per-trial mean grid scores


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from integer parts."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def seed_matched_comparison(
    config: TrainConfig,
    arena: ArenaConfig,
    motion: MotionConfig,
    ensemble: PlaceCellEnsemble,
    alphas,
    trials: int = 5,
    noise: NoiseConfig | None = None,
    eval_batches: int = 100,
    compute_grid_stats: bool = True,
) -> ComparisonResult:
    """Train one shared initialization per trial once per alpha.

    Within a trial every alpha sees the identical initial weights and the
    identical trajectory stream, so differences are attributable to the leak
    rate alone. Reports for the same trial share seed_record and
    init_fingerprint.
    """
    alphas = list(alphas)
    if not alphas:
        raise ConfigError("need at least one alpha")
    reports: dict = {}
    mean_gs: dict = {}
    for trial in range(trials):
        trial_seed = derive_seed(config.seed, trial)
        init_seed = derive_seed(config.seed, trial, 1)
        params0 = init_params(
            config.n_rec, ensemble.n_cells, alpha=1.0, seed=init_seed, rec_init=config.rec_init
        )
        for alpha in alphas:
            run_cfg = replace(config, alpha=alpha, seed=trial_seed)
            trained, report = train(run_cfg, arena, motion, ensemble, params0, noise=noise)
            reports[(alpha, trial)] = report
            if compute_grid_stats:
                ev = evaluate_network(
                    trained,
                    arena,
                    motion,
                    ensemble,
                    seed=trial_seed,
                    noise=noise,
                    seq_len=config.seq_len,
                    n_batches=eval_batches,
                )
                mean_gs[(alpha, trial)] = ev.mean_gs
            else:
                mean_gs[(alpha, trial)] = None
    mse_by_alpha = {
        a: float(np.mean([reports[(a, k)].final_mse for k in range(trials)])) for a in alphas
    }
    gs_by_alpha = {}
    for a in alphas:
        vals = [mean_gs[(a, k)] for k in range(trials) if mean_gs[(a, k)] is not None]
        gs_by_alpha[a] = float(np.mean(vals)) if vals else None
    return ComparisonResult(
        alphas=alphas,
        trials=trials,
        reports=reports,
        mean_gs=mean_gs,
        mse_by_alpha=mse_by_alpha,
        gs_by_alpha=gs_by_alpha,
    )


def write_loss_curve_csv(report: TrainReport, path) -> None:
    """CSV with columns step, loss, mse (mse at logged steps)."""
    mse_at = dict(report.mse_curve)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "mse"])
        for step_idx, value in report.loss_curve:
            m = mse_at.get(step_idx, "")
            writer.writerow([step_idx, repr(float(value)), repr(float(m)) if m != "" else ""])
