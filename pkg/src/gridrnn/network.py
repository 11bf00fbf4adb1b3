"""Leaky recurrent network: state update, linear readout, initialization.

The hidden state evolves as

    r[t+1] = (1 - alpha) * r[t] + alpha * relu(W_rec r[t] + W_in V[t])

with leak rate alpha in (0, 1]; alpha = 1 reduces exactly to a vanilla RNN.
The readout is linear: P = W_out r, no nonlinearity, no bias terms anywhere.
The initial state is lifted from the encoded start position through a
trainable matrix: r[0] = relu(W_init p0).

All arithmetic is float64 by default so gradient checks stay meaningful.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

_MAGIC = b"GPNW"
_VERSION = 1


@dataclass
class LeakyRnnParams:
    """Weight matrices and leak rate. Shapes are checked at construction:
    w_init (n_rec, n_place), w_rec (n_rec, n_rec), w_in (n_rec, 2),
    w_out (n_place, n_rec)."""

    w_init: np.ndarray
    w_rec: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    alpha: float

    def __post_init__(self):
        self.w_init = np.asarray(self.w_init, dtype=float)
        self.w_rec = np.asarray(self.w_rec, dtype=float)
        self.w_in = np.asarray(self.w_in, dtype=float)
        self.w_out = np.asarray(self.w_out, dtype=float)
        n = self.w_rec.shape[0]
        if self.w_rec.shape != (n, n):
            raise ConfigError(f"w_rec must be square, got {self.w_rec.shape}")
        p = self.w_out.shape[0]
        if self.w_out.shape != (p, n):
            raise ConfigError(f"w_out must be (n_place, n_rec), got {self.w_out.shape}")
        if self.w_in.shape != (n, 2):
            raise ConfigError(f"w_in must be (n_rec, 2), got {self.w_in.shape}")
        if self.w_init.shape != (n, p):
            raise ConfigError(f"w_init must be (n_rec, n_place), got {self.w_init.shape}")
        if not (0 < self.alpha <= 1):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def n_rec(self) -> int:
        return self.w_rec.shape[0]

    @property
    def n_place(self) -> int:
        return self.w_out.shape[0]

    def copy(self) -> "LeakyRnnParams":
        return LeakyRnnParams(
            w_init=self.w_init.copy(),
            w_rec=self.w_rec.copy(),
            w_in=self.w_in.copy(),
            w_out=self.w_out.copy(),
            alpha=self.alpha,
        )

    def with_alpha(self, alpha: float) -> "LeakyRnnParams":
        """Same weights, different leak rate (seed-matched comparisons)."""
        out = self.copy()
        out.alpha = float(alpha)
        return out


@dataclass
class RnnState:
    """Hidden firing-rate vector; stays componentwise non-negative under the
    update whenever the initial state is non-negative."""

    rates: np.ndarray


def init_params(
    n_rec: int, n_place: int, alpha: float, seed, rec_init: str = "uniform"
) -> LeakyRnnParams:
    """Initialize weights.

    w_in ~ U(-1/sqrt(n_rec), +1/sqrt(n_rec)); w_out and w_init use the Xavier
    uniform bound sqrt(6/(n_rec+n_place)). w_rec defaults to the same uniform
    scheme as w_in ("uniform"); "orthogonal" draws a random orthogonal matrix
    instead. Draw order is fixed: w_init, w_rec, w_in, w_out.
    """
    rng = np.random.default_rng(seed)
    xavier = np.sqrt(6.0 / (n_rec + n_place))
    w_init = rng.uniform(-xavier, xavier, size=(n_rec, n_place))
    bound = 1.0 / np.sqrt(n_rec)
    if rec_init == "uniform":
        w_rec = rng.uniform(-bound, bound, size=(n_rec, n_rec))
    elif rec_init == "orthogonal":
        q, r = np.linalg.qr(rng.standard_normal((n_rec, n_rec)))
        w_rec = q * np.sign(np.diag(r))
    else:
        raise ConfigError(f"unknown rec_init {rec_init!r}")
    w_in = rng.uniform(-bound, bound, size=(n_rec, 2))
    w_out = rng.uniform(-xavier, xavier, size=(n_place, n_rec))
    return LeakyRnnParams(w_init=w_init, w_rec=w_rec, w_in=w_in, w_out=w_out, alpha=alpha)


def step(params: LeakyRnnParams, state: RnnState, velocity) -> RnnState:
    """One update of the leaky dynamics. velocity is (2,) or (B, 2) cm/s."""
    r = np.asarray(state.rates, dtype=float)
    v = np.asarray(velocity, dtype=float)
    if not np.all(np.isfinite(v)) or not np.all(np.isfinite(r)):
        raise NumericError("non-finite state or velocity in rnn step")
    return RnnState(rates=_step_raw(params, r, v))


def _step_raw(params, r, v):
    z = r @ params.w_rec.T + v @ params.w_in.T
    return (1.0 - params.alpha) * r + params.alpha * np.maximum(z, 0.0)


def readout(params: LeakyRnnParams, state: RnnState) -> np.ndarray:
    """Linear readout P = W_out r."""
    return np.asarray(state.rates, dtype=float) @ params.w_out.T


def forward(params: LeakyRnnParams, initial_encoding, velocities):
    """Run the network over a velocity sequence.

    initial_encoding: (n_place,) or (B, n_place); velocities: (T, 2) or
    (B, T, 2). Returns (states, predictions) with states (..., T+1, n_rec)
    including r[0] = relu(W_init p0), and predictions (..., T, n_place), the
    readout of each stepped state.
    """
    states, preds, _ = _forward_cached(params, initial_encoding, velocities)
    return states, preds


def _forward_cached(params, initial_encoding, velocities):
    """Forward pass that also returns the relu masks needed for BPTT."""
    p0 = np.asarray(initial_encoding, dtype=float)
    vel = np.asarray(velocities, dtype=float)
    single = vel.ndim == 2
    if single:
        p0 = p0[None]
        vel = vel[None]
    B, T, _ = vel.shape
    if T < 1:
        raise ConfigError("velocity sequence must have length >= 1")
    if not np.all(np.isfinite(vel)):
        raise NumericError("non-finite velocity input to forward")

    states = np.empty((B, T + 1, params.n_rec))
    masks = np.empty((B, T, params.n_rec), dtype=bool)
    u0 = p0 @ params.w_init.T
    r = np.maximum(u0, 0.0)
    states[:, 0] = r
    alpha = params.alpha
    for t in range(T):
        z = r @ params.w_rec.T + vel[:, t] @ params.w_in.T
        mask = z > 0.0
        r = (1.0 - alpha) * r + alpha * np.where(mask, z, 0.0)
        if not np.all(np.isfinite(r)):
            raise NumericError(f"non-finite rnn state at step {t}")
        states[:, t + 1] = r
        masks[:, t] = mask
    preds = states[:, 1:] @ params.w_out.T
    if single:
        return states[0], preds[0], masks[0]
    return states, preds, masks


def params_fingerprint(params: LeakyRnnParams) -> str:
    """sha256 over dims, alpha and all weight bytes (row-major f64)."""
    h = hashlib.sha256()
    h.update(struct.pack("<IId", params.n_rec, params.n_place, params.alpha))
    for w in (params.w_init, params.w_rec, params.w_in, params.w_out):
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(params: LeakyRnnParams, path, config_hash: str = "", seed=None) -> None:
    """Binary checkpoint + JSON sidecar.

    Layout (little-endian): magic "GPNW", u32 version, u32 n_rec, u32 n_place,
    f64 alpha, then row-major f64 matrices w_init, w_rec, w_in, w_out.
    """
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIId", _VERSION, params.n_rec, params.n_place, params.alpha))
        for w in (params.w_init, params.w_rec, params.w_in, params.w_out):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    sidecar = {"config_hash": config_hash, "seed": seed, "fingerprint": params_fingerprint(params)}
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)


def load_checkpoint(path):
    """Load a checkpoint; returns (params, sidecar dict). Raises ConfigError
    with the byte offset on malformed files."""
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ConfigError(f"bad checkpoint magic at offset 0: {blob[:4]!r}")
    try:
        version, n_rec, n_place = struct.unpack_from("<III", blob, 4)
        (alpha,) = struct.unpack_from("<d", blob, 16)
    except struct.error as exc:
        raise ConfigError(f"truncated checkpoint header at offset 4: {exc}") from exc
    if version != _VERSION:
        raise ConfigError(f"unsupported checkpoint version {version} at offset 4")
    offset = 24
    mats = []
    for name, shape in (
        ("w_init", (n_rec, n_place)),
        ("w_rec", (n_rec, n_rec)),
        ("w_in", (n_rec, 2)),
        ("w_out", (n_place, n_rec)),
    ):
        count = shape[0] * shape[1]
        end = offset + 8 * count
        if end > len(blob):
            raise ConfigError(f"checkpoint truncated in {name} at offset {offset}")
        mats.append(np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy())
        offset = end
    if offset != len(blob):
        raise ConfigError(f"{len(blob) - offset} trailing bytes at offset {offset}")
    params = LeakyRnnParams(
        w_init=mats[0], w_rec=mats[1], w_in=mats[2], w_out=mats[3], alpha=alpha
    )
    sidecar = {}
    try:
        with open(path + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        pass
    return params, sidecar
