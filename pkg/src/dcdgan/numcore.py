"""Dense float64 arrays, a define-by-run reverse-mode tape, and seeded RNG streams.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The :class:`Tape`
records primitive ops as they are executed and replays them backwards to get
gradients with respect to every leaf, parameters and inputs alike.

Example::

    tape = Tape()
    x = tape.leaf(np.array([3.0]), name="x")
    y = tape.sum(tape.square(x))
    (gx,) = tape.backward(y)      # -> array([6.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tape",
    "Var",
    "tensor",
    "make_rng",
    "gaussian",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the op recorded as ``node``."""

    def __init__(self, node: str, message: str):
        super().__init__(f"{node}: {message}")
        self.node = node


class TapeError(RuntimeError):
    pass


def tensor(data, name: str = "tensor") -> np.ndarray:
    """Convert external input to a float64 array, rejecting NaN and Inf."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values in input")
    return arr


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, stream)``.

    The same pair yields the same sequence on every platform; distinct stream
    ids give statistically independent sequences.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    key = (int(seed) & 0xFFFFFFFFFFFFFFFF) | ((int(stream) & 0xFFFFFFFFFFFFFFFF) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    name: str
    # maps the adjoint of this node to adjoints of its parents (None where not needed)
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
    needs_grad: bool = True
    grad: np.ndarray | None = field(default=None, repr=False)


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray | None:
        return self.tape.nodes[self.index].grad

    def __add__(self, other: "Var") -> "Var":
        return self.tape.add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return self.tape.add(self, self.tape.scale(other, -1.0))

    def __neg__(self) -> "Var":
        return self.tape.scale(self, -1.0)

    def __mul__(self, other) -> "Var":
        if isinstance(other, Var):
            return self.tape.mul(self, other)
        return self.tape.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Var") -> "Var":
        return self.tape.matmul(self, other)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.index]
        return f"Var({node.name}, op={node.op}, shape={node.value.shape})"


class Tape:
    """Record of primitive ops in execution order.

    Nodes are appended as ops run, so every parent index precedes its child.
    A tape is meant for one forward pass; build a fresh one per call.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Var]:
        return [Var(self, i) for i in self._leaves]

    def _push(self, op, parents, value, name, vjp=None, needs_grad=None) -> Var:
        if needs_grad is None:
            needs_grad = any(self.nodes[p.index].needs_grad for p in parents)
        if not needs_grad and parents:
            vjp = None  # constant subgraph, never differentiated through
        self.nodes.append(_Node(op, tuple(p.index for p in parents), value, name or f"{op}{len(self.nodes)}", vjp, needs_grad))
        return Var(self, len(self.nodes) - 1)

    def _needs(self, *vars: Var) -> tuple[bool, ...]:
        return tuple(self.nodes[v.index].needs_grad for v in vars)

    def _check(self, *vars: Var) -> None:
        for v in vars:
            if not isinstance(v, Var) or v.tape is not self:
                raise TapeError(f"operand {v!r} is not recorded on this tape")

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Var:
        """Register an input or parameter.

        Gradients are reported for every leaf; those registered with
        ``requires_grad=False`` get zeros and cost nothing in the backward pass.
        """
        arr = np.asarray(value, dtype=np.float64)
        var = self._push("leaf", (), arr, name, needs_grad=requires_grad)
        self._leaves.append(var.index)
        return var

    # -- primitives -----------------------------------------------------

    def matmul(self, a: Var, b: Var, name: str | None = None) -> Var:
        self._check(a, b)
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
            raise ShapeError(name or f"matmul{len(self.nodes)}", f"cannot multiply {av.shape} by {bv.shape}")
        need_a, need_b = self._needs(a, b)
        if bv.ndim == 1:
            vjp = lambda g: (np.outer(g, bv) if need_a else None, av.T @ g if need_b else None)
        else:
            vjp = lambda g: (g @ bv.T if need_a else None, av.T @ g if need_b else None)
        return self._push("matmul", (a, b), av @ bv, name, vjp)

    def add(self, a: Var, b: Var, name: str | None = None) -> Var:
        """Elementwise sum; ``b`` may also be a row vector added to every row of ``a``."""
        self._check(a, b)
        av, bv = a.value, b.value
        if av.shape == bv.shape:
            vjp = lambda g: (g, g)
        elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
            need_b = self._needs(b)[0]
            vjp = lambda g: (g, g.sum(axis=0) if need_b else None)
        else:
            raise ShapeError(name or f"add{len(self.nodes)}", f"cannot add {av.shape} and {bv.shape}")
        return self._push("add", (a, b), av + bv, name, vjp)

    def mul(self, a: Var, b: Var, name: str | None = None) -> Var:
        self._check(a, b)
        av, bv = a.value, b.value
        if av.shape != bv.shape:
            raise ShapeError(name or f"mul{len(self.nodes)}", f"cannot multiply {av.shape} and {bv.shape} elementwise")
        return self._push("mul", (a, b), av * bv, name, lambda g: (g * bv, g * av))

    def scale(self, a: Var, c: float, name: str | None = None) -> Var:
        self._check(a)
        return self._push("scale", (a,), a.value * c, name, lambda g: (g * c,))

    def relu(self, a: Var, name: str | None = None) -> Var:
        self._check(a)
        mask = a.value > 0.0  # subgradient 0 at 0
        return self._push("relu", (a,), np.where(mask, a.value, 0.0), name, lambda g: (g * mask,))

    def square(self, a: Var, name: str | None = None) -> Var:
        self._check(a)
        av = a.value
        return self._push("square", (a,), av * av, name, lambda g: (2.0 * av * g,))

    def sum(self, a: Var, axis: int | None = None, name: str | None = None) -> Var:
        self._check(a)
        av = a.value
        if axis is None:
            vjp = lambda g: (np.broadcast_to(g, av.shape).copy(),)
        else:
            vjp = lambda g: (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)
        return self._push("sum", (a,), np.asarray(av.sum(axis=axis)), name, vjp)

    def norm(self, a: Var, axis: int | None = None, name: str | None = None) -> Var:
        """Euclidean norm, of the whole array or along ``axis``. Gradient at 0 is 0."""
        self._check(a)
        av = a.value
        out = np.asarray(np.sqrt((av * av).sum(axis=axis)))
        safe = np.where(out > 0.0, out, 1.0)

        def vjp(g):
            if axis is None:
                return (av * (g / safe) * (out > 0.0),)
            ratio = np.where(out > 0.0, g / safe, 0.0)
            return (av * np.expand_dims(ratio, axis),)

        return self._push("norm", (a,), out, name, vjp)

    def reshape(self, a: Var, shape, name: str | None = None) -> Var:
        self._check(a)
        old = a.value.shape
        try:
            out = a.value.reshape(shape)
        except ValueError as exc:
            raise ShapeError(name or f"reshape{len(self.nodes)}", str(exc)) from None
        return self._push("reshape", (a,), out, name, lambda g: (g.reshape(old),))

    # -- reverse sweep --------------------------------------------------

    def backward(self, output: Var, output_grad=None) -> list[np.ndarray]:
        """Propagate ``output_grad`` (default ones) from ``output`` to every leaf.

        Returns one gradient per leaf in registration order; each leaf
        :class:`Var` also exposes it as ``.grad``. Leaves that do not
        influence ``output`` get zeros.
        """
        if not self.nodes:
            raise TapeError("backward called before any forward op was recorded")
        self._check(output)
        out_val = output.value
        seed = np.ones_like(out_val) if output_grad is None else np.asarray(output_grad, dtype=np.float64)
        if seed.shape != out_val.shape:
            raise ShapeError(self.nodes[output.index].name, f"output_grad shape {seed.shape} != output shape {out_val.shape}")

        adj: dict[int, np.ndarray] = {output.index: seed}
        for i in range(output.index, -1, -1):
            g = adj.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            if not node.parents:
                adj[i] = g  # leaf: keep for collection below
                continue
            if node.vjp is None:
                continue
            for p, gp in zip(node.parents, node.vjp(g)):
                if gp is None or not self.nodes[p].needs_grad:
                    continue
                adj[p] = adj[p] + gp if p in adj else gp
        grads = []
        for i in self._leaves:
            node = self.nodes[i]
            node.grad = adj.get(i, np.zeros_like(node.value))
            grads.append(node.grad)
        return grads


def forward(fn: Callable[..., Var], inputs: Sequence[np.ndarray]) -> tuple[Tape, list[Var], Var]:
    """Run ``fn`` on fresh leaves for ``inputs`` and return ``(tape, leaves, output)``."""
    tape = Tape()
    leaves = [tape.leaf(x, name=f"input{i}") for i, x in enumerate(inputs)]
    return tape, leaves, fn(tape, *leaves)
