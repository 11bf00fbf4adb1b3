"""Place-cell population code: difference-of-softmax tuning curves.

A position X maps to the activation vector

    P_k = softmax(-|X - c_k|^2 / (2 sigma_e^2)) - softmax(-|X - c_k|^2 / (2 sigma_i^2))

over the fixed cell centers c_k. Each softmax subtracts its max exponent
before exponentiating, which leaves the value mathematically unchanged and
keeps the exponentials in range. The two softmaxes each sum to one, so every
activation vector sums to zero.

Decoding is the top-k center average (k=3): the mean of the centers of the k
most active cells, ties broken toward the lowest cell index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .trajectory import ArenaConfig


@dataclass
class PlaceCellEnsemble:
    """Fixed place-cell centers plus excitatory/inhibitory field widths (cm).

    Centers never change after construction; training only ever reads them.
    """

    centers: np.ndarray
    sigma_e: float = 20.0
    sigma_i: float = 40.0
    seed: int | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.ndim != 2 or self.centers.shape[1] != 2:
            raise ConfigError("centers must have shape (n_cells, 2)")
        if len(self.centers) == 0:
            raise ConfigError("ensemble must contain at least one cell")
        if not (0 < self.sigma_e < self.sigma_i):
            raise ConfigError("need sigma_i > sigma_e > 0")
        self.centers.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    @classmethod
    def sample(cls, arena: ArenaConfig, n_cells=128, sigma_e=20.0, sigma_i=40.0, seed=0):
        """Sample n_cells centers uniformly i.i.d. over the arena."""
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0.0, arena.side_length, size=(n_cells, 2))
        return cls(centers=centers, sigma_e=sigma_e, sigma_i=sigma_i, seed=seed)

    def save(self, path) -> None:
        payload = {
            "n_cells": self.n_cells,
            "sigma_e": self.sigma_e,
            "sigma_i": self.sigma_i,
            "centers": self.centers.tolist(),
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        ens = cls(
            centers=np.asarray(payload["centers"], dtype=float),
            sigma_e=payload["sigma_e"],
            sigma_i=payload["sigma_i"],
            seed=payload.get("seed"),
        )
        if ens.n_cells != payload["n_cells"]:
            raise ConfigError("center count does not match recorded n_cells")
        return ens


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def encode(ensemble: PlaceCellEnsemble, position) -> np.ndarray:
    """Encode position(s) (..., 2) into zero-sum activations (..., n_cells)."""
    position = np.asarray(position, dtype=float)
    d2 = ((position[..., None, :] - ensemble.centers) ** 2).sum(axis=-1)
    exc = _softmax(-d2 / (2.0 * ensemble.sigma_e**2))
    inh = _softmax(-d2 / (2.0 * ensemble.sigma_i**2))
    return exc - inh


def decode(ensemble: PlaceCellEnsemble, activation, k: int = 3) -> np.ndarray:
    """Decode activation(s) (..., n_cells) to position estimates (..., 2).

    The estimate is the unweighted mean of the centers of the k most active
    cells and therefore lies inside their convex hull. Equal activations
    resolve toward lower cell indices (stable sort).
    """
    activation = np.asarray(activation, dtype=float)
    if activation.shape[-1] != ensemble.n_cells:
        raise ConfigError(
            f"activation length {activation.shape[-1]} != n_cells {ensemble.n_cells}"
        )
    if k < 1:
        raise ConfigError("k must be >= 1")
    k = min(k, ensemble.n_cells)
    top = np.argsort(-activation, axis=-1, kind="stable")[..., :k]
    return ensemble.centers[top].mean(axis=-2)
