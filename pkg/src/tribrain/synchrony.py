"""Synchronization as representation: decayed pairwise products with phase weighting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Module, param
from .numerics import ShapeError, Tensor, ops


@dataclass(frozen=True)
class SyncPairs:
    left: np.ndarray
    right: np.ndarray

    def __len__(self) -> int:
        return self.left.size

    def as_list(self) -> list[tuple[int, int]]:
        return list(zip(self.left.tolist(), self.right.tolist()))


@dataclass
class SyncRepresentation:
    values: Tensor  # [B, N_s]
    phase_weights: np.ndarray  # [N_s] or [B, N_s]


def sample_pairs(D: int, n_pairs: int, seed: int) -> SyncPairs:
    """Draw ``n_pairs`` distinct (i, j), i <= j, from the upper triangle (self pairs allowed)."""
    total = D * (D + 1) // 2
    if n_pairs > total:
        raise ValueError(f"cannot sample {n_pairs} distinct pairs from {total} available for D={D}")
    iu, ju = np.triu_indices(D)
    pick = np.random.default_rng(seed).choice(total, size=n_pairs, replace=False)
    return SyncPairs(iu[pick].astype(np.intp), ju[pick].astype(np.intp))


class DecayParams(Module):
    """Per-pair decay rates r = exp(log_rate) >= 0."""

    def __init__(self, n_pairs: int, init_rate: float = 0.1):
        self.log_rate = param(np.full(n_pairs, np.log(init_rate)))

    def rates(self) -> Tensor:
        return ops.exp(self.log_rate)


def sync_entry(z_i, z_j, rate: float, phi_i=None, phi_j=None) -> float:
    """Direct evaluation over the full history (ticks 1..t) of one pair.

    S = Σ_τ w_τ z_i z_j / sqrt(Σ_τ w_τ) · |(1/t) Σ_τ exp(i(φ_i - φ_j))|,
    w_τ = exp(-rate·(t - τ)).  Without phases the phase factor is 1.
    """
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    t = z_i.shape[0]
    if t == 0:
        raise ValueError("synchronization needs at least one tick of history")
    w = np.exp(-rate * (t - np.arange(1, t + 1)))
    val = float((w * z_i * z_j).sum() / np.sqrt(w.sum()))
    if phi_i is None:
        return val
    dphi = np.asarray(phi_i, dtype=np.float64) - np.asarray(phi_j, dtype=np.float64)
    return val * abs(np.exp(1j * dphi).mean())


class SyncAccumulator:
    """O(1)-per-tick running sums for every sampled pair.

    Holds the decayed product sum [B, N_s], the weight sum [N_s] and the
    phasor sums of the pair phase differences; all are tensors so gradients
    reach the decay rates, the states and the phases.
    """

    def __init__(self, pairs: SyncPairs, decay: DecayParams):
        self.pairs = pairs
        self.decay = ops.exp(-decay.rates())
        self.prod: Tensor | None = None
        self.weight: Tensor | None = None
        self.cos_sum: Tensor | None = None
        self.sin_sum: Tensor | None = None
        self.t = 0

    def update(self, z: Tensor, phase: Tensor | None = None) -> SyncRepresentation:
        left, right = self.pairs.left, self.pairs.right
        if z.shape[-1] <= max(left.max(), right.max()):
            raise ShapeError(f"state width {z.shape[-1]} too small for sampled pairs")
        zz = ops.gather(z, left, axis=-1) * ops.gather(z, right, axis=-1)
        self.t += 1
        if self.prod is None:
            self.prod, self.weight = zz, Tensor(np.ones(len(self.pairs)))
        else:
            self.prod = self.prod * self.decay + zz
            self.weight = self.weight * self.decay + 1.0
        values = self.prod / ops.sqrt(self.weight)
        if phase is None:
            return SyncRepresentation(values, np.ones(len(self.pairs)))
        dphi = ops.gather(phase, left, axis=-1) - ops.gather(phase, right, axis=-1)
        c, s = ops.cos(dphi), ops.sin(dphi)
        if self.cos_sum is None:
            self.cos_sum, self.sin_sum = c, s
        else:
            self.cos_sum, self.sin_sum = self.cos_sum + c, self.sin_sum + s
        pw = ops.hypot(self.cos_sum, self.sin_sum) * (1.0 / self.t)
        return SyncRepresentation(values * pw, pw.data)


def output_logits(sync: SyncRepresentation | Tensor, W_out: Tensor) -> Tensor:
    values = sync.values if isinstance(sync, SyncRepresentation) else sync
    if W_out.shape[1] != values.shape[-1]:
        raise ShapeError(f"W_out {W_out.shape} does not match {values.shape[-1]} sync values")
    return values @ W_out.T


class Synchrony(Module):
    def __init__(self, D: int, n_pairs: int, n_classes: int, seed: int, rng: np.random.Generator, init_rate: float = 0.1):
        self.pairs = sample_pairs(D, n_pairs, seed)
        self.decay = DecayParams(n_pairs, init_rate)
        self.W_out = param(rng.uniform(-1, 1, size=(n_classes, n_pairs)) / np.sqrt(n_pairs))

    def accumulator(self) -> SyncAccumulator:
        return SyncAccumulator(self.pairs, self.decay)
