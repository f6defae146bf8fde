"""Dense-network machinery: MLPs with analytic gradients, SGD, and seeded RNG.

Everything is float64. Matrices are plain 2-D ``numpy`` arrays stored
row-major with shape ``(out_dim, in_dim)``; an MLP maps a row vector (or a
batch of row vectors) through ``x @ W.T + b`` per layer.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError

LOG_EPS = 1e-12
ACTIVATIONS = ("relu", "identity")


class Prng:
    """Seeded random source built on numpy's PCG64.

    Substreams are derived with ``SeedSequence`` spawn keys, so
    ``Prng(7).substream("data")`` is independent of
    ``Prng(7).substream("policy")`` and both are reproducible.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = _key
        seq = np.random.SeedSequence(self.seed, spawn_key=_key)
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def substream(self, name: str) -> "Prng":
        return Prng(self.seed, self._key + (zlib.crc32(name.encode("utf-8")),))

    def random(self, size=None):
        return self.gen.random(size)

    def normal(self, scale: float = 1.0, size=None):
        return self.gen.normal(0.0, scale, size)

    def uniform(self, low: float, high: float, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, high: int, size=None):
        return self.gen.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def macs(self) -> int:
        rows, cols = self.weight.shape
        return int(rows) * int(cols)


@dataclass
class Mlp:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ContractError("Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ContractError(
                    f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ContractError("bias length must equal weight rows")
        if self.layers[-1].activation != "identity":
            raise ContractError("final layer activation must be identity")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def macs(self) -> int:
        """Multiply-accumulates for one input vector."""
        return sum(layer.macs for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (W0, b0, W1, b1, ...), by reference."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def squared_norm(self) -> float:
        return float(sum(np.vdot(p, p) for p in self.params()))


def glorot_init(shape: tuple[int, int], rng: Prng) -> np.ndarray:
    rows, cols = shape
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def make_mlp(sizes: Sequence[int], rng: Prng) -> Mlp:
    """Glorot-initialized relu MLP; ``sizes = [in, hidden..., out]``."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(glorot_init((n_out, n_in), rng), np.zeros(n_out), act))
    return Mlp(layers)


def forward(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Run ``net`` on ``x`` (shape ``(in,)`` or ``(batch, in)``).

    Returns ``[x, a_1, ..., a_L]``: the input followed by each layer's
    post-activation output. The last entry is the network output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim or x.ndim not in (1, 2):
        raise ContractError(f"input shape {x.shape} does not match input_dim {net.input_dim}")
    acts = [x]
    for layer in net.layers:
        z = acts[-1] @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            z = np.maximum(z, 0.0)
        acts.append(z)
    return acts


def backward(
    net: Mlp, acts: list[np.ndarray], grad_out: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass.

    For batched activations the parameter gradients are summed over rows,
    which is what tied-weight applications (one encoder over N clips) need.
    Returns gradients aligned with ``net.params()`` and the input gradient.
    """
    if len(acts) != len(net.layers) + 1:
        raise ContractError("activations were not produced by forward on this net")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ContractError(f"grad shape {g.shape} != output shape {acts[-1].shape}")
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (acts[i + 1] > 0.0)
        inp = acts[i]
        if g.ndim == 1:
            dw = np.outer(g, inp)
            db = g.copy()
        else:
            dw = g.T @ inp
            db = g.sum(axis=0)
        grads[:0] = [dw, db]
        g = g @ layer.weight
    return grads, g


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient at the logits given the gradient at the softmax output."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    if not 0 <= label < len(probs):
        raise ContractError(f"label {label} out of range for {len(probs)} classes")
    return float(-np.log(max(probs[label], LOG_EPS)))


def argmax_low(v: np.ndarray) -> int:
    """Argmax with ties resolved toward the lowest index."""
    return int(np.argmax(v))  # numpy returns the first maximal index


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be non-negative")


def sgd_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: SgdState,
    direction: str = "minimize",
) -> list[np.ndarray]:
    """Momentum SGD, updating ``params`` in place (and returning them).

    ``v <- mu*v + g``; minimize moves against ``v`` and adds ``2*lambda*p``
    to ``g`` first, maximize moves along ``v`` with no decay.
    """
    if direction not in ("minimize", "maximize"):
        raise ContractError(f"unknown direction {direction!r}")
    if len(params) != len(grads):
        raise ContractError("params/grads length mismatch")
    if state.velocity is None:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(state.velocity) != len(params):
        raise ContractError("velocity buffers do not match params")
    sign = -1.0 if direction == "minimize" else 1.0
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ContractError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        if direction == "minimize" and state.weight_decay:
            g = g + 2.0 * state.weight_decay * p
        v *= state.momentum
        v += g
        p += sign * state.learning_rate * v
    return params
