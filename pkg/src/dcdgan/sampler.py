"""Langevin-type MCMC on the density ``exp(D(x))`` defined by a critic.

The drift ascends the critic: ``x' = x + (eps/2) grad D(x) + s sqrt(eps) w``.
With ``s = 1`` this is the unadjusted Langevin algorithm for ``exp(D)``;
:func:`mala_step` adds the Metropolis-Hastings correction. Latent-space chains
run the same update on ``z`` for the composite ``D(G(z))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .nn import ComposedCritic

Space = Literal["pixel", "latent"]


class ChainDiverged(FloatingPointError):
    """A chain produced non-finite positions. ``last_state`` is the last finite one."""

    def __init__(self, message: str, last_state: np.ndarray):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class LangevinConfig:
    step_size: float
    n_steps: int
    noise_scale: float = 1.0
    space: Space = "pixel"
    mh_correction: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be > 0")
        if self.space not in ("pixel", "latent"):
            raise ValueError(f"space must be 'pixel' or 'latent', got {self.space!r}")


# Step sizes, lengths and noise levels from the image experiments. The
# "latent" and "pixel" entries are the runnable ones; "pixel" takes the upper
# end of the 6-8 step range. The STL noise level 0.1 is taken as a standard deviation.
PRESETS: dict[str, LangevinConfig] = {
    "cifar-pixel": LangevinConfig(step_size=10.0, n_steps=8, noise_scale=0.01, space="pixel"),
    "cifar-latent": LangevinConfig(step_size=0.2, n_steps=50, noise_scale=0.1, space="latent"),
    "stl": LangevinConfig(step_size=0.05, n_steps=150, noise_scale=0.1, space="latent"),
    "latent": LangevinConfig(step_size=0.2, n_steps=50, noise_scale=0.1, space="latent"),
    "pixel": LangevinConfig(step_size=10.0, n_steps=8, noise_scale=0.01, space="pixel"),
}
RUNNABLE_PRESETS = ("latent", "pixel")


@dataclass
class ChainState:
    """Trajectory of a batch of independent chains.

    ``positions[k]`` are the sample-space states after ``k`` steps (decoded
    through the generator for latent chains), ``latents[k]`` the latent
    states, ``values[k]`` the critic at ``positions[k]``.
    """

    positions: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    latents: list[np.ndarray] | None = None
    accepted: np.ndarray | None = None
    proposals: int = 0

    @property
    def samples(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def acceptance_rate(self) -> float:
        # unadjusted chains keep every move; an empty chain has nothing to reject
        if self.accepted is None or self.proposals == 0:
            return 1.0
        return float(self.accepted.mean() / self.proposals)


def _checked(x_new: np.ndarray, x_old: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x_new)):
        raise ChainDiverged("non-finite chain state", x_old.copy())
    return x_new


def langevin_step(critic, x: np.ndarray, step_size: float, rng: np.random.Generator, noise_scale: float = 1.0) -> np.ndarray:
    if not step_size > 0:
        raise ValueError("step_size must be > 0")
    drift = 0.5 * step_size * critic.input_grad(x)
    noise = noise_scale * np.sqrt(step_size) * rng.standard_normal(x.shape)
    return _checked(x + drift + noise, x)


def langevin_log_q(x_to: np.ndarray, x_from: np.ndarray, grad_from: np.ndarray, step_size: float, noise_scale: float = 1.0) -> np.ndarray:
    """Log proposal density of the Langevin move ``x_from -> x_to``, up to a constant."""
    r = x_to - x_from - 0.5 * step_size * grad_from
    return -(r * r).sum(axis=1) / (2.0 * step_size * noise_scale**2)


def mh_log_ratio(critic, x: np.ndarray, x_prop: np.ndarray, step_size: float, noise_scale: float = 1.0) -> np.ndarray:
    """``log`` of the MH ratio for target ``exp(D)`` and the Langevin proposal."""
    gx, gp = critic.input_grad(x), critic.input_grad(x_prop)
    return (
        critic.value(x_prop)
        - critic.value(x)
        + langevin_log_q(x, x_prop, gp, step_size, noise_scale)
        - langevin_log_q(x_prop, x, gx, step_size, noise_scale)
    )


def mala_step(critic, x: np.ndarray, step_size: float, rng: np.random.Generator, noise_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Langevin proposal with Metropolis-Hastings correction, per row."""
    x_prop = langevin_step(critic, x, step_size, rng, noise_scale)
    log_alpha = np.minimum(0.0, mh_log_ratio(critic, x, x_prop, step_size, noise_scale))
    accepted = np.log(rng.uniform(size=len(x))) < log_alpha
    return np.where(accepted[:, None], x_prop, x), accepted


def run_chain(
    critic,
    init: np.ndarray,
    cfg: LangevinConfig,
    rng: np.random.Generator,
    generator=None,
    keep_trajectory: bool = True,
) -> ChainState:
    """Run ``cfg.n_steps`` steps from ``init``.

    Pixel chains start at sample-space points. Latent chains start at latent
    codes, move ``z`` under ``D(G(z))`` with the generator frozen, and report
    ``G(z)`` as positions. Without ``keep_trajectory`` only the first and
    last states are stored.
    """
    init = np.asarray(init, dtype=np.float64)
    if cfg.space == "latent":
        if generator is None:
            raise ValueError("latent-space chains need a generator")
        energy = ComposedCritic(critic, generator)
        decode = generator
    else:
        energy = critic
        decode = None

    state = ChainState(latents=[] if decode is not None else None)

    def record(pos):
        x = decode(pos) if decode is not None else pos
        if state.latents is not None:
            state.latents.append(pos)
        state.positions.append(x)
        state.values.append(critic.value(x))

    if cfg.mh_correction:
        state.accepted = np.zeros(len(init), dtype=np.int64)
    pos = init.copy()
    record(pos)
    for k in range(cfg.n_steps):
        if cfg.mh_correction:
            pos, acc = mala_step(energy, pos, cfg.step_size, rng, cfg.noise_scale)
            state.accepted += acc
        else:
            pos = langevin_step(energy, pos, cfg.step_size, rng, cfg.noise_scale)
        state.proposals += 1
        if keep_trajectory or k == cfg.n_steps - 1:
            record(pos)
    return state


def dot_refine(critic, x: np.ndarray, y_target: np.ndarray | None = None, step_size: float = 0.01, steps: int = 100) -> np.ndarray:
    """Gradient descent on ``|p - y| - D(p)`` starting from ``p = x``.

    ``y`` defaults to the starting points themselves. The distance gradient
    is taken as 0 where ``p == y``.
    """
    p = np.array(x, dtype=np.float64)
    y = p.copy() if y_target is None else np.asarray(y_target, dtype=np.float64)
    if step_size == 0 or steps == 0:
        return p
    if step_size < 0:
        raise ValueError("step_size must be >= 0")
    for _ in range(steps):
        d = p - y
        dist = np.linalg.norm(d, axis=1, keepdims=True)
        unit = np.divide(d, dist, out=np.zeros_like(d), where=dist > 0)
        p = p - step_size * (unit - critic.input_grad(p))
    return p


# -- exact recursion for Gaussian targets ------------------------------


def ula_gaussian_moments(mean0, cov0, step_size: float, steps: int, target_mean=0.0, target_var: float = 1.0, noise_scale: float = 1.0):
    """Exact law of the unadjusted chain for ``D(x) = -|x - m|^2 / (2 v)``.

    The update is affine, ``x' = a x + (1 - a) m + s sqrt(eps) w`` with
    ``a = 1 - eps / (2 v)``, so a Gaussian initial law stays Gaussian.
    Returns the lists of means and covariances for ``t = 0..steps``.
    """
    mean = np.asarray(mean0, dtype=np.float64)
    cov = np.asarray(cov0, dtype=np.float64)
    dim = len(mean)
    a = 1.0 - step_size / (2.0 * target_var)
    m = np.broadcast_to(np.asarray(target_mean, dtype=np.float64), (dim,))
    means, covs = [mean], [cov]
    for _ in range(steps):
        mean = a * mean + (1.0 - a) * m
        cov = a * a * cov + noise_scale**2 * step_size * np.eye(dim)
        means.append(mean)
        covs.append(cov)
    return means, covs


def ula_stationary(step_size: float, dim: int, target_mean=0.0, target_var: float = 1.0, noise_scale: float = 1.0):
    """Fixed point of :func:`ula_gaussian_moments`; biased away from ``v`` by the discretization."""
    a = 1.0 - step_size / (2.0 * target_var)
    var = noise_scale**2 * step_size / (1.0 - a * a)
    return np.broadcast_to(np.asarray(target_mean, dtype=np.float64), (dim,)).copy(), var * np.eye(dim)


def gaussian_kl(mean_q, cov_q, mean_p, cov_p) -> float:
    """``KL(N(mean_q, cov_q) || N(mean_p, cov_p))``."""
    mean_q, mean_p = np.asarray(mean_q, dtype=np.float64), np.asarray(mean_p, dtype=np.float64)
    cov_q, cov_p = np.asarray(cov_q, dtype=np.float64), np.asarray(cov_p, dtype=np.float64)
    k = len(mean_q)
    p_inv = np.linalg.inv(cov_p)
    d = mean_p - mean_q
    _, logdet_p = np.linalg.slogdet(cov_p)
    _, logdet_q = np.linalg.slogdet(cov_q)
    return float(0.5 * (np.trace(p_inv @ cov_q) + d @ p_inv @ d - k + logdet_p - logdet_q))
