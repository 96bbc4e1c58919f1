"""Contrastive-divergence fine-tuning of a pre-trained critic.

Each iteration contrasts a batch of data against generator samples that were
refreshed by a short Langevin chain on the current critic, and moves the
critic up the difference of means. The generator stays frozen.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import synth
from .nn import MlpCritic, MlpGenerator
from .numcore import make_rng
from .sampler import PRESETS, LangevinConfig, run_chain
from .wgan import STREAM_CHAIN, STREAM_DATA, STREAM_LATENT, AdamConfig, TrainingDiverged, critic_step, draw_batches


@dataclass
class DcdConfig:
    seed: int
    iterations: int = 1000
    batch_size: int = 64
    chain: LangevinConfig = field(default_factory=lambda: PRESETS["latent"])
    critic_adam: AdamConfig = field(default_factory=lambda: AdamConfig(lr=2e-5))

    def __post_init__(self):
        if isinstance(self.chain, dict):
            self.chain = LangevinConfig(**self.chain)
        if isinstance(self.critic_adam, dict):
            self.critic_adam = AdamConfig(**self.critic_adam)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def space(self) -> str:
        return self.chain.space

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DcdLog:
    objective: list[float] = field(default_factory=list)
    mean_d_real: list[float] = field(default_factory=list)
    mean_d_chain: list[float] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)
    elapsed: list[float] = field(default_factory=list, compare=False)

    def __len__(self) -> int:
        return len(self.objective)

    def rows(self):
        for i in range(len(self)):
            yield {
                "iteration": i + 1,
                "L": self.objective[i],
                "mean_d_real": self.mean_d_real[i],
                "mean_d_chain": self.mean_d_chain[i],
                "acceptance": self.acceptance[i],
            }


def dcd_objective(d_real: np.ndarray, d_chain: np.ndarray) -> float:
    """Mean critic on data minus mean critic on chain samples."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_chain = np.asarray(d_chain, dtype=np.float64)
    if d_real.shape != d_chain.shape:
        raise ValueError(f"batch shapes differ: {d_real.shape} vs {d_chain.shape}")
    return float(d_real.mean() - d_chain.mean())


def dcd_finetune(
    generator: MlpGenerator,
    critic: MlpCritic,
    spec: synth.MixtureSpec,
    cfg: DcdConfig,
) -> tuple[MlpCritic, DcdLog]:
    """Fine-tune a copy of ``critic``; the inputs are left untouched.

    Data and latent batches come from the same RNG streams as WGAN training
    under the same seed, so with an empty chain each iteration is exactly a
    ``wgan``-variant critic step.
    """
    if critic.in_dim != 2 or generator.dims[-1] != critic.in_dim:
        raise ValueError(f"generator output dim {generator.dims[-1]} incompatible with critic input dim {critic.in_dim}")
    critic = critic.copy()
    data_rng = make_rng(cfg.seed, STREAM_DATA)
    latent_rng = make_rng(cfg.seed, STREAM_LATENT)
    chain_rng = make_rng(cfg.seed, STREAM_CHAIN)
    state = cfg.critic_adam.new_state()
    log = DcdLog()
    start = time.perf_counter()

    for it in range(cfg.iterations):
        x_real, z = draw_batches(spec, data_rng, latent_rng, cfg.batch_size)
        try:
            if cfg.chain.space == "latent":
                chain = run_chain(critic, z, cfg.chain, chain_rng, generator=generator, keep_trajectory=False)
            else:
                chain = run_chain(critic, generator(z), cfg.chain, chain_rng, keep_trajectory=False)
            value, d_real, d_chain = critic_step(critic, state, x_real, chain.samples, "wgan")
        except FloatingPointError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", {"iteration": it, "critic": critic.copy()}) from exc
        log.objective.append(value)
        log.mean_d_real.append(float(d_real.mean()))
        log.mean_d_chain.append(float(d_chain.mean()))
        log.acceptance.append(chain.acceptance_rate)
        log.elapsed.append(time.perf_counter() - start)
    return critic, log
