"""Auxiliary modulation: oscillator bank, neuromodulatory signals, certainty measures."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import Linear, Module, param
from .numerics import ShapeError, Tensor, ops

TWO_PI = 2.0 * np.pi

# (label, low Hz, high Hz); neurons are dealt round-robin in this order
BANDS = (("gamma", 40.0, 100.0), ("beta", 13.0, 30.0), ("alpha", 8.0, 12.0), ("theta", 4.0, 7.0))


@dataclass(frozen=True)
class OscillatorBank:
    """Per-neuron oscillator state.  ``phase``/``amplitude`` are [D] or [B, D]."""

    base_freq: np.ndarray  # cycles per tick
    freq_offset: Tensor
    phase: Tensor
    amplitude: Tensor
    band_id: np.ndarray

    @property
    def size(self) -> int:
        return self.base_freq.shape[0]


@dataclass(frozen=True)
class ModulationSignals:
    dfreq: Tensor
    dphase: Tensor
    damp: Tensor


@dataclass(frozen=True)
class CertaintyRecord:
    entropy_certainty: np.ndarray
    phase_certainty: np.ndarray
    total: np.ndarray
    beta: float


def band_ranges(tick_seconds: float = 0.01) -> dict[str, tuple[float, float]]:
    """Band frequency ranges converted to cycles per tick."""
    return {name: (lo * tick_seconds, hi * tick_seconds) for name, lo, hi in BANDS}


def assign_bands(D: int, seed: int, tick_seconds: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Round-robin band labels and uniformly drawn base frequencies (cycles/tick)."""
    if D < 4:
        raise ValueError(f"need at least 4 neurons to cover every band, got D={D}")
    rng = np.random.default_rng(seed)
    band_id = np.arange(D) % len(BANDS)
    lo = np.array([b[1] for b in BANDS])[band_id] * tick_seconds
    hi = np.array([b[2] for b in BANDS])[band_id] * tick_seconds
    return rng.uniform(lo, hi), band_id


class Oscillators(Module):
    """Learnable oscillator parameters: frequency offset, initial phase and amplitude."""

    def __init__(self, D: int, seed: int, tick_seconds: float = 0.01, init_phase_spread: float = 0.0):
        self.base_freq, self.band_id = assign_bands(D, seed, tick_seconds)
        self.freq_offset = param(np.zeros(D))
        rng = np.random.default_rng(seed + 1)
        self.init_phase = param(rng.uniform(0.0, TWO_PI, size=D) * init_phase_spread)
        self.init_amplitude = param(np.ones(D))

    def initial_bank(self, batch_size: int | None = None) -> OscillatorBank:
        phase, amp = self.init_phase, self.init_amplitude
        if batch_size is not None:
            ones = np.ones((batch_size, 1))
            phase, amp = phase * ones, amp * ones
        return OscillatorBank(self.base_freq, self.freq_offset, ops.wrap(phase, TWO_PI), amp, self.band_id)


def bank_from_arrays(base_freq, phase, amplitude, freq_offset=None) -> OscillatorBank:
    base_freq = np.asarray(base_freq, dtype=np.float64)
    off = Tensor(np.zeros_like(base_freq) if freq_offset is None else freq_offset)
    return OscillatorBank(base_freq, off, Tensor(phase), Tensor(amplitude), np.arange(base_freq.size) % 4)


def advance(bank: OscillatorBank, mods: ModulationSignals | None, kappas=(0.1, 0.1, 0.1)) -> OscillatorBank:
    """One tick of modulated phase accumulation and amplitude scaling.

    ω = (ω_base + δω)(1 + κ_ω·dfreq);  φ ← wrap(φ + 2πω + κ_φ·dphase);
    A ← max(0, A(1 + κ_A·damp)).  ``mods=None`` means no modulation.
    """
    k_w, k_p, k_a = kappas
    omega = bank.freq_offset + bank.base_freq
    phase, amp = bank.phase, bank.amplitude
    if mods is not None:
        for name in ("dfreq", "dphase", "damp"):
            sig = getattr(mods, name)
            if sig.shape[-1] != bank.size:
                raise ShapeError(f"modulation {name} has {sig.shape[-1]} neurons, bank has {bank.size}")
            if not np.all(np.isfinite(sig.data)):
                raise ValueError(f"non-finite modulation signal {name}")
        omega = omega * (mods.dfreq * k_w + 1.0)
        phase = phase + omega * TWO_PI + mods.dphase * k_p
        amp = ops.clamp_min(amp * (mods.damp * k_a + 1.0), 0.0)
    else:
        phase = phase + omega * TWO_PI
    return replace(bank, phase=ops.wrap(phase, TWO_PI), amplitude=amp)


def oscillatory_state(bank: OscillatorBank) -> Tensor:
    return bank.amplitude * ops.sin(bank.phase)


def combine_state(z: Tensor, z_osc: Tensor, lam: float) -> Tensor:
    return z + z_osc * lam


class ModulationNet(Module):
    """Γ: attention output -> tanh-bounded (δω, δφ, δA), 3·D values per row."""

    def __init__(self, d_v: int, D: int, rng: np.random.Generator, hidden: int = 64, zero_final: bool = False):
        self.hidden = Linear(d_v, hidden, rng)
        self.out = Linear(hidden, 3 * D, rng, zero=zero_final)
        self.D = D

    def __call__(self, o: Tensor) -> Tensor:
        return ops.tanh(self.out(ops.relu(self.hidden(o))))


def split_modulation(raw: Tensor, D: int, batch_mean: bool = True) -> ModulationSignals:
    if batch_mean:
        raw = raw.mean(axis=0)
    return ModulationSignals(raw[..., :D], raw[..., D : 2 * D], raw[..., 2 * D :])


def generate_modulation(o: Tensor, gamma_net: ModulationNet, batch_mean: bool = True) -> ModulationSignals:
    """Signals from the attention output; averaged over the batch for a shared bank."""
    if not np.all(np.isfinite(o.data)):
        raise ValueError("attention output contains non-finite values")
    return split_modulation(gamma_net(o), gamma_net.D, batch_mean)


class FilmGain(Module):
    """Multiplicative gain 1 + M·W for a hidden layer; starts as identity."""

    def __init__(self, n_mod: int, width: int, rng: np.random.Generator):
        self.proj = Linear(n_mod, width, rng, zero=True)

    def __call__(self, raw_mod: Tensor) -> Tensor:
        return self.proj(raw_mod) + 1.0


def attention_temperature(damp: Tensor) -> Tensor:
    """Logit scale 1 + mean(δA) per row (or a scalar for a shared bank)."""
    return damp.mean(axis=-1, keepdims=True) + 1.0


# ---------------------------------------------------------------------------
# certainty


def phase_coherence(phase) -> np.ndarray:
    """|mean_d exp(iφ_d)| over the last axis."""
    phi = phase.data if isinstance(phase, Tensor) else np.asarray(phase, dtype=np.float64)
    if phi.shape[-1] < 1:
        raise ValueError("phase coherence needs at least one neuron")
    return np.hypot(np.cos(phi).mean(axis=-1), np.sin(phi).mean(axis=-1))


def _check_probs(p: np.ndarray) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("probabilities must sum to 1 along the class axis")


def entropy(probs) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0·ln 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    _check_probs(p)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def entropy_certainty(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    n_cls = p.shape[-1]
    if n_cls < 2:
        return np.ones(p.shape[:-1])
    return np.clip(1.0 - entropy(p) / np.log(n_cls), 0.0, 1.0)


def total_certainty(c_entropy, c_phase, beta: float) -> np.ndarray:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * np.asarray(c_entropy) + (1.0 - beta) * np.asarray(c_phase)


def certainty(probs, phase, beta: float) -> CertaintyRecord:
    ce = entropy_certainty(probs)
    cp = np.broadcast_to(phase_coherence(phase), ce.shape)
    return CertaintyRecord(ce, cp, total_certainty(ce, cp, beta), beta)
