"""Spectrally normalized WGAN pre-training on a 2D mixture."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from . import synth
from .nn import (
    HIDDEN,
    AdamState,
    MlpCritic,
    MlpGenerator,
    adam_step,
    init_critic,
    init_generator,
    spectral_grad,
    spectral_normalize,
)
from .numcore import Tape, make_rng

LossVariant = Literal["wgan", "hinge", "logistic"]
VARIANTS = ("wgan", "hinge", "logistic")

# RNG stream ids; each concern draws from its own Philox stream under the run seed
STREAM_INIT = 0
STREAM_DATA = 1
STREAM_LATENT = 2
STREAM_CHAIN = 3


class TrainingDiverged(FloatingPointError):
    """A loss went non-finite; ``snapshot`` holds the state just before the failing step."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8

    def new_state(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass
class TrainConfig:
    seed: int
    iterations: int = 10_000
    batch_size: int = 64
    critic_steps: int = 5
    loss: LossVariant = "hinge"
    hidden: int = HIDDEN
    critic_adam: AdamConfig = field(default_factory=AdamConfig)
    generator_adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if isinstance(self.critic_adam, dict):
            self.critic_adam = AdamConfig(**self.critic_adam)
        if isinstance(self.generator_adam, dict):
            self.generator_adam = AdamConfig(**self.generator_adam)
        if self.loss not in VARIANTS:
            raise ValueError(f"loss: expected one of {VARIANTS}, got {self.loss!r}")
        for name in ("batch_size", "critic_steps", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    critic_loss: list[float] = field(default_factory=list)
    generator_loss: list[float] = field(default_factory=list)
    # seconds since start from a monotonic clock; excluded from equality
    elapsed: list[float] = field(default_factory=list, compare=False)
    snapshots: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.critic_loss)

    def rows(self):
        for i, (c, g, t) in enumerate(zip(self.critic_loss, self.generator_loss, self.elapsed)):
            yield {"iteration": i + 1, "critic_loss": c, "generator_loss": g, "elapsed": t}


def critic_loss(variant: LossVariant, d_real: np.ndarray, d_fake: np.ndarray) -> float:
    """The objective the critic maximizes."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("critic_loss needs non-empty batches")
    if variant == "wgan":
        return float(d_real.mean() - d_fake.mean())
    if variant == "hinge":
        return float(np.minimum(0.0, d_real - 1.0).mean() + np.minimum(0.0, -1.0 - d_fake).mean())
    if variant == "logistic":
        return float(-np.logaddexp(0.0, -d_real).mean() - np.logaddexp(0.0, d_fake).mean())
    raise ValueError(f"unknown loss variant {variant!r}")


def critic_loss_grad(variant: LossVariant, d_real: np.ndarray, d_fake: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`critic_loss` with respect to each critic output."""
    n, k = len(d_real), len(d_fake)
    if variant == "wgan":
        return np.full(n, 1.0 / n), np.full(k, -1.0 / k)
    if variant == "hinge":
        # kink convention matches relu: derivative 0 exactly at the hinge
        return (d_real < 1.0) / n, -1.0 * (d_fake > -1.0) / k
    if variant == "logistic":
        sig = lambda t: 0.5 * (1.0 + np.tanh(0.5 * t))
        return sig(-d_real) / n, -sig(d_fake) / k
    raise ValueError(f"unknown loss variant {variant!r}")


def generator_loss(variant: LossVariant, d_fake: np.ndarray) -> float:
    """What the generator minimizes; the same ``-mean(d_fake)`` for every variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if d_fake.size == 0:
        raise ValueError("generator_loss needs a non-empty batch")
    return float(-d_fake.mean())


def critic_step(
    critic: MlpCritic,
    state: AdamState,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    variant: LossVariant,
    power_iters: int = 1,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One Adam ascent step on the critic objective, then spectral normalization.

    Returns the objective value and the critic outputs on both batches, all
    measured before the update.
    """
    n = len(x_real)
    tape = Tape()
    x = tape.leaf(np.concatenate([x_real, x_fake]), name="x", requires_grad=False)
    out, pvars = critic.build(tape, x)
    d_real, d_fake = out.value[:n], out.value[n:]
    value = critic_loss(variant, d_real, d_fake)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite critic objective {value}", {"critic": critic.copy()})
    g_real, g_fake = critic_loss_grad(variant, d_real, d_fake)
    tape.backward(out, np.concatenate([g_real, g_fake]))
    grads = spectral_grad(critic, {k: v.grad for k, v in pvars.items()})
    adam_step(state, critic.params(), grads, "ascend")
    spectral_normalize(critic, power_iters)
    return value, d_real.copy(), d_fake.copy()


def generator_step(
    generator: MlpGenerator,
    critic: MlpCritic,
    state: AdamState,
    z: np.ndarray,
    variant: LossVariant,
) -> float:
    tape = Tape()
    zv = tape.leaf(z, name="z", requires_grad=False)
    x, gvars = generator.build(tape, zv, prefix="G.")
    d, _ = critic.build(tape, x, prefix="D.", requires_grad=False)
    value = generator_loss(variant, d.value)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite generator loss {value}", {"generator": generator.copy()})
    tape.backward(d, np.full(len(z), -1.0 / len(z)))
    grads = {k: v.grad for k, v in gvars.items()}
    adam_step(state, generator.params(), grads, "descend")
    return value


def draw_batches(spec: synth.MixtureSpec, data_rng, latent_rng, m: int) -> tuple[np.ndarray, np.ndarray]:
    """One batch of mixture samples and one of prior latents."""
    return synth.sample(spec, data_rng, m), latent_rng.standard_normal((m, 2))


def train(
    spec: synth.MixtureSpec,
    cfg: TrainConfig,
    generator: MlpGenerator | None = None,
    critic: MlpCritic | None = None,
    callback: Callable[[int, MlpGenerator, MlpCritic], dict] | None = None,
    eval_every: int = 0,
) -> tuple[MlpGenerator, MlpCritic, TrainLog]:
    """Alternate ``cfg.critic_steps`` critic ascents with one generator descent.

    Networks are initialized from ``cfg.seed`` unless given, in which case
    they are updated in place. Everything is deterministic in ``cfg.seed``.
    """
    init_rng = make_rng(cfg.seed, STREAM_INIT)
    if generator is None:
        generator = init_generator(init_rng, cfg.hidden)
    if critic is None:
        critic = init_critic(init_rng, cfg.hidden)
    data_rng = make_rng(cfg.seed, STREAM_DATA)
    latent_rng = make_rng(cfg.seed, STREAM_LATENT)
    d_state = cfg.critic_adam.new_state()
    g_state = cfg.generator_adam.new_state()
    log = TrainLog()
    start = time.perf_counter()

    for it in range(cfg.iterations):
        try:
            for _ in range(cfg.critic_steps):
                x_real, z = draw_batches(spec, data_rng, latent_rng, cfg.batch_size)
                c_value, _, _ = critic_step(critic, d_state, x_real, generator(z), cfg.loss)
            z = latent_rng.standard_normal((cfg.batch_size, 2))
            g_value = generator_step(generator, critic, g_state, z, cfg.loss)
        except FloatingPointError as exc:
            snapshot = {"iteration": it, "generator": generator.copy(), "critic": critic.copy()}
            raise TrainingDiverged(f"iteration {it}: {exc}", snapshot) from exc
        log.critic_loss.append(c_value)
        log.generator_loss.append(g_value)
        log.elapsed.append(time.perf_counter() - start)
        if callback is not None and eval_every and (it + 1) % eval_every == 0:
            log.snapshots.append({"iteration": it + 1, **callback(it + 1, generator, critic)})
    return generator, critic, log
