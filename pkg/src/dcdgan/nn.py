"""Four-layer ReLU MLPs (generator and critic), spectral normalization and Adam.

Weights are stored as ``(fan_in, fan_out)`` arrays so a layer computes
``x @ W + b`` on row-major batches. Any object with ``value(x)`` and
``input_grad(x)`` methods can serve as a critic for the samplers; the small
analytic critics at the bottom of this module are used for checks with known
answers.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .numcore import Tape, Var

HIDDEN = 128
LATENT_DIM = 2
DATA_DIM = 2


@dataclass
class Mlp:
    """Affine layers with ReLU between them and no activation on the output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: fan_in {w.shape[0]} != previous fan_out {self.weights[i - 1].shape[1]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def copy(self):
        return copy.deepcopy(self)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        return x

    def build(self, tape: Tape, x: Var, prefix: str = "", requires_grad: bool = True) -> tuple[Var, dict[str, Var]]:
        """Record the forward pass on ``tape``; parameters become leaves."""
        pvars = {k: tape.leaf(v, name=prefix + k, requires_grad=requires_grad) for k, v in self.params().items()}
        h = x
        n = len(self.weights)
        for i in range(n):
            h = tape.add(tape.matmul(h, pvars[f"W{i}"], name=f"{prefix}matmul{i}"), pvars[f"b{i}"], name=f"{prefix}affine{i}")
            if i < n - 1:
                h = tape.relu(h)
        return h, pvars

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = self._check_input(x)
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n - 1:
                h = np.maximum(h, 0.0)
        return h


@dataclass
class MlpGenerator(Mlp):
    pass


@dataclass
class MlpCritic(Mlp):
    """Scalar-output MLP carrying persistent power-iteration vectors per layer.

    ``u[i]`` lives in the fan-in space of layer ``i`` and ``v[i]`` in its
    fan-out space.
    """

    u: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        super().__post_init__()
        if self.weights[-1].shape[1] != 1:
            raise ValueError("critic must have a scalar output")
        if not self.u:
            self.u = [np.full(w.shape[0], 1.0 / np.sqrt(w.shape[0])) for w in self.weights]
        if not self.v:
            self.v = [np.full(w.shape[1], 1.0 / np.sqrt(w.shape[1])) for w in self.weights]

    def build(self, tape: Tape, x: Var, prefix: str = "", requires_grad: bool = True) -> tuple[Var, dict[str, Var]]:
        out, pvars = super().build(tape, x, prefix, requires_grad)
        return tape.reshape(out, (out.shape[0],), name=f"{prefix}output"), pvars

    def value(self, x: np.ndarray) -> np.ndarray:
        return self(x)[:, 0]

    def input_grad(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        tape = Tape()
        xv = tape.leaf(x, name="x")
        out, _ = self.build(tape, xv, requires_grad=False)
        tape.backward(out)
        return xv.grad


def _uniform_layers(dims, rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def init_generator(rng: np.random.Generator, hidden: int = HIDDEN) -> MlpGenerator:
    weights, biases = _uniform_layers([LATENT_DIM, hidden, hidden, hidden, DATA_DIM], rng)
    return MlpGenerator(weights, biases)


def init_critic(rng: np.random.Generator, hidden: int = HIDDEN, power_iters: int = 50) -> MlpCritic:
    """Random critic, spectrally normalized with fresh random power-iteration vectors."""
    weights, biases = _uniform_layers([DATA_DIM, hidden, hidden, hidden, 1], rng)
    u = []
    for w in weights:
        vec = rng.standard_normal(w.shape[0])
        u.append(vec / np.linalg.norm(vec))
    critic = MlpCritic(weights, biases, u=u)
    spectral_normalize(critic, power_iters)
    return critic


def critic_value(critic, x: np.ndarray) -> np.ndarray:
    """Critic output per row of ``x``; shape ``(batch,)``."""
    return critic.value(x)


def critic_input_grad(critic, x: np.ndarray) -> np.ndarray:
    """Gradient of the critic output with respect to each input row."""
    return critic.input_grad(x)


def power_iteration(w: np.ndarray, u: np.ndarray, iters: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Top singular value estimate of ``w`` starting from left vector ``u``.

    Returns ``(sigma, u, v)`` with ``sigma = u @ w @ v``.
    """
    if iters < 1:
        raise ValueError("power_iters must be >= 1")
    for _ in range(iters):
        v = w.T @ u
        v /= max(np.linalg.norm(v), 1e-300)
        u = w @ v
        u /= max(np.linalg.norm(u), 1e-300)
    return float(u @ w @ v), u, v


def spectral_normalize(critic: MlpCritic, power_iters: int = 1) -> list[float]:
    """Divide each critic weight in place by its estimated spectral norm.

    The power-iteration vectors are stored back on the critic so subsequent
    calls warm-start. Biases are left alone. Returns the estimates used.
    """
    sigmas = []
    for i, w in enumerate(critic.weights):
        sigma, u, v = power_iteration(w, critic.u[i], power_iters)
        if sigma <= 0.0:
            raise ValueError(f"layer {i}: weight has zero spectral norm")
        w /= sigma
        critic.u[i], critic.v[i] = u, v
        sigmas.append(sigma)
    return sigmas


def spectral_grad(critic: MlpCritic, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Carry weight gradients through the map ``W -> W / sigma(W)``.

    ``sigma`` is read off the stored power-iteration vectors, so its
    derivative is ``u v^T``. The result drops the part of the gradient that
    would only rescale ``W``, which the next normalization undoes anyway.
    Bias gradients pass through unchanged.
    """
    out = dict(grads)
    for i, w in enumerate(critic.weights):
        u, v = critic.u[i], critic.v[i]
        sigma = float(u @ w @ v)
        if sigma <= 0.0:
            raise ValueError(f"layer {i}: power-iteration vectors give spectral norm {sigma}")
        g = grads[f"W{i}"]
        out[f"W{i}"] = g / sigma - (np.vdot(g, w) / sigma**2) * np.outer(u, v)
    return out


def spectral_norms(net: Mlp) -> list[float]:
    return [float(np.linalg.norm(w, 2)) for w in net.weights]


@dataclass
class AdamState:
    """Per-parameter moment estimates for bias-corrected Adam."""

    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    direction: Literal["ascend", "descend"] = "descend",
) -> dict[str, np.ndarray]:
    """One Adam update applied in place to ``params``.

    ``ascend`` maximizes the objective whose gradient is ``grads``.
    """
    if direction not in ("ascend", "descend"):
        raise ValueError(f"direction must be 'ascend' or 'descend', got {direction!r}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    sign = -1.0 if direction == "ascend" else 1.0
    state.step += 1
    step_size = state.lr / (1.0 - state.beta1**state.step)
    inv_bc2 = 1.0 / (1.0 - state.beta2**state.step)
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * sign * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v * inv_bc2)
        denom += state.eps
        params[name] -= step_size * m / denom
    return params


# -- analytic critics ---------------------------------------------------


@dataclass
class LinearCritic:
    """``D(x) = w . x + c``."""

    w: np.ndarray
    c: float = 0.0

    def value(self, x):
        return np.asarray(x, dtype=np.float64) @ np.asarray(self.w, dtype=np.float64) + self.c

    def input_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(np.asarray(self.w, dtype=np.float64), x.shape).copy()


@dataclass
class QuadraticCritic:
    """``D(x) = -|x - mean|^2 / (2 var)``, so ``exp(D)`` is an isotropic Gaussian."""

    mean: float | np.ndarray = 0.0
    var: float = 1.0

    def value(self, x):
        d = np.asarray(x, dtype=np.float64) - self.mean
        return -0.5 * (d * d).sum(axis=1) / self.var

    def input_grad(self, x):
        return -(np.asarray(x, dtype=np.float64) - self.mean) / self.var


@dataclass
class ConstantCritic:
    c: float = 0.0

    def value(self, x):
        return np.full(np.asarray(x).shape[0], float(self.c))

    def input_grad(self, x):
        return np.zeros(np.asarray(x).shape, dtype=np.float64)


@dataclass
class ComposedCritic:
    """``z -> D(G(z))``: the critic seen through a frozen generator.

    Gradients with respect to ``z`` are taken through both networks on one tape.
    """

    critic: MlpCritic
    generator: MlpGenerator

    def decode(self, z):
        return self.generator(z)

    def value(self, z):
        return self.critic.value(self.generator(z))

    def input_grad(self, z):
        z = self.generator._check_input(z)
        tape = Tape()
        zv = tape.leaf(z, name="z")
        x, _ = self.generator.build(tape, zv, prefix="G.", requires_grad=False)
        d, _ = self.critic.build(tape, x, prefix="D.", requires_grad=False)
        tape.backward(d)
        return zv.grad
