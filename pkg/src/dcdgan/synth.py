"""Isotropic 2D Gaussian mixtures with exact sampling, log-density and score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

RING_RADIUS = 2.0
RING_STD = 0.02
GRID_SPACING = 2.0
GRID_STD = 0.05


@dataclass(frozen=True)
class MixtureSpec:
    means: np.ndarray  # (k, 2)
    stds: np.ndarray  # (k,)
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(-1, 2)
        stds = np.array(self.stds, dtype=np.float64).reshape(-1)
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if len(means) < 1:
            raise ValueError("mixture needs at least one mode")
        if stds.shape != (len(means),) or weights.shape != (len(means),):
            raise ValueError("means, stds and weights must have one entry per mode")
        if not (np.all(np.isfinite(means)) and np.all(stds > 0) and np.all(weights >= 0)):
            raise ValueError("means must be finite, stds positive and weights non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        for name, arr in (("means", means), ("stds", stds), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_modes(self) -> int:
        return len(self.means)

    @classmethod
    def single(cls, mean=(0.0, 0.0), std: float = 1.0) -> "MixtureSpec":
        return cls([mean], [std], [1.0])

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(d["means"], d["stds"], d["weights"])


def ring8(radius: float = RING_RADIUS, std: float = RING_STD) -> MixtureSpec:
    """Eight equal-weight modes on a circle; mode ``k`` sits at angle ``k*pi/4``."""
    angles = np.arange(8) * (2.0 * np.pi / 8)
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # cos/sin leave ~1e-16 residue at the axis-aligned modes
    means = np.where(np.abs(means) < 1e-12, 0.0, means)
    return MixtureSpec(means, np.full(8, std), np.full(8, 1.0 / 8))


def grid25(spacing: float = GRID_SPACING, std: float = GRID_STD) -> MixtureSpec:
    """5x5 equal-weight grid centred on the origin."""
    ticks = spacing * np.arange(-2, 3)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    means = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return MixtureSpec(means, np.full(25, std), np.full(25, 1.0 / 25))


PRESETS = {"ring8": ring8, "grid25": grid25}


def sample(spec: MixtureSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = rng.choice(spec.n_modes, size=n, p=spec.weights)
    return spec.means[idx] + spec.stds[idx, None] * rng.standard_normal((n, 2))


def _component_logits(spec: MixtureSpec, x: np.ndarray) -> np.ndarray:
    # log w_k + log N(x; mu_k, s_k^2 I) for every (row, mode)
    d2 = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    var = spec.stds**2
    return np.log(spec.weights) - np.log(2.0 * np.pi * var) - 0.5 * d2 / var


def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def log_density(spec: MixtureSpec, x) -> np.ndarray | float:
    """Exact mixture log-density at a point ``(2,)`` or each row of ``(n, 2)``."""
    rows, single = _rows(x)
    out = logsumexp(_component_logits(spec, rows), axis=1)
    return float(out[0]) if single else out


def score(spec: MixtureSpec, x) -> np.ndarray:
    """Gradient of :func:`log_density` with respect to ``x``."""
    rows, single = _rows(x)
    logits = _component_logits(spec, rows)
    resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    var = spec.stds**2
    pull = (spec.means[None, :, :] - rows[:, None, :]) / var[None, :, None]
    out = (resp[:, :, None] * pull).sum(axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class LogDensityCritic:
    """The exact log-density used as a critic, so ``exp(D)`` is the mixture itself."""

    spec: MixtureSpec

    def value(self, x):
        return log_density(self.spec, np.asarray(x, dtype=np.float64).reshape(-1, 2))

    def input_grad(self, x):
        return score(self.spec, np.asarray(x, dtype=np.float64).reshape(-1, 2))
