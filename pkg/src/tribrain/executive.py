"""Executive decision system: queries, attention, synaptic pathway mixing, state update."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .nn import LayerNorm, Linear, Module, param
from .numerics import ShapeError, Tensor, ops
from .perception import KVPair


@dataclass
class TickState:
    z: Tensor  # [B, D]
    z_combined: Tensor  # [B, D]
    o: Tensor | None = None  # [B, d_v]
    tick: int = 0


class ActivationMemory:
    """Ring buffer of the last ``M`` activation arrays (oldest evicted first)."""

    def __init__(self, M: int):
        if M < 1:
            raise ValueError(f"memory length must be >= 1, got {M}")
        self.M = M
        self._buf: deque[np.ndarray] = deque(maxlen=M)

    def push(self, a) -> "ActivationMemory":
        self._buf.append(np.array(a.data if isinstance(a, Tensor) else a, dtype=np.float64))
        return self

    def window(self) -> list[np.ndarray]:
        return list(self._buf)

    def newest(self) -> np.ndarray | None:
        return self._buf[-1] if self._buf else None

    def __len__(self) -> int:
        return len(self._buf)


def push_memory(mem: ActivationMemory, a) -> ActivationMemory:
    return mem.push(a)


def make_query(z_combined: Tensor, W_q: Tensor) -> Tensor:
    if z_combined.shape[-1] != W_q.shape[0]:
        raise ShapeError(f"query projection expects state dim {W_q.shape[0]}, got {z_combined.shape}")
    return z_combined @ W_q


def attend(q: Tensor, kv: KVPair, temp: Tensor | None = None, heads: int = 1) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention of one query per row over N positions.

    Returns the output [B, d_v] and the attention weights [B, heads, N].
    ``temp`` multiplies the scaled logits ([B, 1] or [1]).
    """
    keys, values = kv.keys, kv.values
    B, N, d_k = keys.shape
    if N == 0:
        raise ShapeError("attention over zero positions")
    if q.shape != (B, d_k):
        raise ShapeError(f"query {q.shape} does not match keys {keys.shape}")
    d_v = values.shape[-1]
    if d_k % heads or d_v % heads:
        raise ShapeError(f"{heads} heads do not divide d_k={d_k} and d_v={d_v}")
    dh, dvh = d_k // heads, d_v // heads
    qh = q.reshape(B, heads, 1, dh)
    kh = keys.reshape(B, N, heads, dh).transpose(0, 2, 3, 1)
    scores = (qh @ kh) * (1.0 / np.sqrt(dh))  # [B, H, 1, N]
    if temp is not None:
        scores = scores * temp.reshape(-1, 1, 1, 1)
    weights = ops.softmax(scores, axis=-1)
    vh = values.reshape(B, N, heads, dvh).transpose(0, 2, 1, 3)
    out = (weights @ vh).reshape(B, d_v)
    return out, weights.data.reshape(B, heads, N)


class ComplexityNet(Module):
    """Ω: pooled features -> scalar logit; α = sigmoid(Ω(F_pool))."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int = 32, zero_final: bool = False):
        self.hidden = Linear(d, hidden, rng)
        self.out = Linear(hidden, 1, rng, zero=zero_final)

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.out(ops.relu(self.hidden(pooled)))


def estimate_complexity(pooled: Tensor, omega: ComplexityNet) -> Tensor:
    return ops.sigmoid(omega(pooled)).reshape(-1)


class DeepPathway(Module):
    """U-shaped perceptron in -> w -> w/2 -> w -> D with an additive skip between the w layers."""

    def __init__(self, n_in: int, D: int, width: int, dropout: float, rng: np.random.Generator, out_scale: float = 0.1):
        half = max(1, width // 2)
        self.down = Linear(n_in, width, rng)
        self.down_norm = LayerNorm(width)
        self.mid = Linear(width, half, rng)
        self.mid_norm = LayerNorm(half)
        self.up = Linear(half, width, rng)
        self.up_norm = LayerNorm(width)
        self.out = Linear(width, D, rng, scale=out_scale)
        self.dropout = dropout

    @property
    def first_width(self) -> int:
        return self.down.n_out

    def __call__(self, x: Tensor, rng=None, gain: Tensor | None = None) -> Tensor:
        drop = lambda t: ops.dropout(t, self.dropout, rng, self.training)  # noqa: E731
        h0 = ops.relu(self.down_norm(self.down(x)))
        if gain is not None:
            h0 = h0 * gain
        h0 = drop(h0)
        h1 = drop(ops.relu(self.mid_norm(self.mid(h0))))
        u = drop(ops.relu(self.up_norm(self.up(h1)))) + h0
        return self.out(u)


class ShallowPathway(Module):
    """One hidden layer of width D: linear -> relu -> layernorm -> dropout -> linear."""

    def __init__(self, n_in: int, D: int, dropout: float, rng: np.random.Generator, out_scale: float = 0.1):
        self.hidden = Linear(n_in, D, rng)
        self.norm = LayerNorm(D)
        self.out = Linear(D, D, rng, scale=out_scale)
        self.dropout = dropout

    @property
    def first_width(self) -> int:
        return self.hidden.n_out

    def __call__(self, x: Tensor, rng=None, gain: Tensor | None = None) -> Tensor:
        h = self.norm(ops.relu(self.hidden(x)))
        if gain is not None:
            h = h * gain
        return self.out(ops.dropout(h, self.dropout, rng, self.training))


@dataclass
class SynapsePathways:
    deep: DeepPathway | None
    shallow: ShallowPathway
    complexity_net: ComplexityNet | None


def synaptic_update(
    z_combined: Tensor,
    o: Tensor,
    alpha: Tensor | None,
    pathways: SynapsePathways,
    film_gain: tuple[Tensor, Tensor] | None = None,
    rng=None,
) -> Tensor:
    """a = α·deep([z, o]) + (1-α)·shallow([z, o]); with ``alpha=None`` only the shallow map runs."""
    x = ops.concat([z_combined, o], axis=-1)
    g_deep, g_shallow = film_gain if film_gain is not None else (None, None)
    shallow = pathways.shallow(x, rng, g_shallow)
    if alpha is None or pathways.deep is None:
        return shallow
    a = alpha.data
    if not np.all(np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("complexity coefficient must lie in [0, 1]")
    deep = pathways.deep(x, rng, g_deep)
    al = alpha.reshape(-1, 1)
    return deep * al + shallow * (1.0 - al)


def update_state(state: TickState, a: Tensor, memory: ActivationMemory | None = None) -> TickState:
    if a.shape != state.z.shape:
        raise ShapeError(f"activation {a.shape} does not match state {state.z.shape}")
    if memory is not None:
        memory.push(a)
    z = state.z + a
    return TickState(z=z, z_combined=z, o=state.o, tick=state.tick + 1)


class Executive(Module):
    def __init__(
        self,
        D: int,
        d_k: int,
        d_v: int,
        d_feat: int,
        rng: np.random.Generator,
        sda: bool = True,
        deep_width: int | None = None,
        dropout: float = 0.1,
        update_scale: float = 0.1,
    ):
        self.z_init = param(rng.normal(0.0, 0.02, size=D))
        self.W_q = param(rng.uniform(-1, 1, size=(D, d_k)) / np.sqrt(D))
        n_in = D + d_v
        self.shallow = ShallowPathway(n_in, D, dropout, rng, out_scale=update_scale)
        if sda:
            self.deep = DeepPathway(n_in, D, deep_width or 2 * D, dropout, rng, out_scale=update_scale)
            self.complexity = ComplexityNet(d_feat, rng)
        else:
            self.deep = None
            self.complexity = None

    @property
    def pathways(self) -> SynapsePathways:
        return SynapsePathways(self.deep, self.shallow, self.complexity)
