"""The full tick-based model: perception once, then a recurrent executive loop.

Per tick::

    query(z_combined) -> attend -> Γ(o) -> synaptic update -> z += a
    -> advance oscillators -> z_combined = z + λ·A·sin φ -> sync -> logits
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import auxiliary as aux
from .config import AblationConfig, ModelConfig
from .executive import ActivationMemory, Executive, TickState, attend, estimate_complexity, make_query, synaptic_update
from .nn import Module
from .numerics import Tensor
from .perception import FeatureMap, ImageBatch, KVPair, Perception
from .synchrony import SyncAccumulator, Synchrony, output_logits


@dataclass
class TickOutput:
    logits: Tensor
    c_phase: np.ndarray | None  # [B]; None when oscillations are off
    attention: np.ndarray  # [B, heads, N]
    activation: np.ndarray  # [B, D]
    z_combined: np.ndarray  # [B, D]
    phase: np.ndarray | None
    amplitude: np.ndarray | None
    alpha: np.ndarray | None


@dataclass
class RunState:
    fmap: FeatureMap
    kv: KVPair
    alpha: Tensor | None
    state: TickState
    bank: aux.OscillatorBank | None
    sync: SyncAccumulator
    memory: ActivationMemory
    rng: np.random.Generator | None
    prev_damp: Tensor | None = None
    extras: dict = field(default_factory=dict)


class TriBrainModel(Module):
    def __init__(self, cfg: ModelConfig, ablation: AblationConfig | None = None, init_seed: int | None = None):
        self.cfg = cfg
        self.flags = ablation or AblationConfig()
        rng = np.random.default_rng(cfg.seed if init_seed is None else init_seed)
        D, d_feat = cfg.D, cfg.widths[-1]
        self.perception = Perception(cfg.in_channels, tuple(cfg.widths), cfg.d_k, cfg.d_v, rng)
        self.executive = Executive(
            D, cfg.d_k, cfg.d_v, d_feat, rng, sda=self.flags.sda, deep_width=cfg.deep_width or None, dropout=cfg.dropout,
            update_scale=cfg.update_scale,
        )
        self.oscillators = aux.Oscillators(D, cfg.seed + 17, cfg.tick_seconds, cfg.init_phase_spread)
        self.gamma = aux.ModulationNet(cfg.d_v, D, rng, hidden=cfg.gamma_hidden) if self.flags.neuromodulation else None
        if self.flags.neuromodulation and self.flags.film:
            deep_w = self.executive.deep.first_width if self.executive.deep is not None else 0
            self.film_deep = aux.FilmGain(3 * D, deep_w, rng) if deep_w else None
            self.film_shallow = aux.FilmGain(3 * D, self.executive.shallow.first_width, rng)
        else:
            self.film_deep = self.film_shallow = None
        self.synchrony = Synchrony(D, cfg.n_sync, cfg.classes, cfg.seed + 29, rng, cfg.decay_init)

    # ------------------------------------------------------------------
    @property
    def oscillating(self) -> bool:
        return self.flags.oscillation

    @property
    def effective_beta(self) -> float:
        """Weight on entropy certainty; phase coherence only exists with oscillations."""
        return self.cfg.beta if self.oscillating else 1.0

    def _combine(self, z: Tensor, bank) -> Tensor:
        if bank is None:
            return z
        return aux.combine_state(z, aux.oscillatory_state(bank), self.cfg.lam)

    def start(self, batch, rng: np.random.Generator | None = None) -> RunState:
        pixels = batch.pixels if isinstance(batch, ImageBatch) else batch
        fmap, kv = self.perception(pixels)
        B = fmap.flat.shape[0]
        ex = self.executive
        alpha = estimate_complexity(fmap.pooled, ex.complexity) if ex.complexity is not None else None
        z = ex.z_init * np.ones((B, 1))
        bank = None
        if self.oscillating:
            bank = self.oscillators.initial_bank(B if self.cfg.per_sample_bank else None)
        zc = self._combine(z, bank)
        return RunState(
            fmap=fmap,
            kv=kv,
            alpha=alpha,
            state=TickState(z=z, z_combined=zc, tick=0),
            bank=bank,
            sync=self.synchrony.accumulator(),
            memory=ActivationMemory(self.cfg.memory),
            rng=rng,
        )

    def tick(self, rs: RunState) -> TickOutput:
        cfg, flags, ex = self.cfg, self.flags, self.executive
        st = rs.state
        q_src = st.z_combined if cfg.query_from_combined else st.z
        q = make_query(q_src, ex.W_q)
        temp = None
        if flags.neuromodulation and flags.attention_modulation and rs.prev_damp is not None:
            temp = aux.attention_temperature(rs.prev_damp)
        o, attn = attend(q, rs.kv, temp, cfg.heads)

        mods = film = None
        if self.gamma is not None:
            raw = self.gamma(o)
            mods = aux.split_modulation(raw, cfg.D, batch_mean=not cfg.per_sample_bank)
            rs.prev_damp = mods.damp
            if self.film_shallow is not None:
                film = (self.film_deep(raw) if self.film_deep is not None else None, self.film_shallow(raw))

        a = synaptic_update(st.z_combined, o, rs.alpha, ex.pathways, film, rs.rng if self.training else None)
        rs.memory.push(a)
        z = st.z + a

        bank = rs.bank
        if bank is not None:
            kappas = (cfg.kappa_freq, cfg.kappa_phase, cfg.kappa_amp)
            bank = aux.advance(bank, mods if flags.neuromodulation else None, kappas)
            rs.bank = bank
        zc = self._combine(z, bank)
        rs.state = TickState(z=z, z_combined=zc, o=o, tick=st.tick + 1)

        sync = rs.sync.update(zc, bank.phase if bank is not None else None)
        logits = output_logits(sync, self.synchrony.W_out)

        B = z.shape[0]
        c_phase = None
        if bank is not None:
            c_phase = np.broadcast_to(aux.phase_coherence(bank.phase), (B,)).copy()
        return TickOutput(
            logits=logits,
            c_phase=c_phase,
            attention=attn,
            activation=a.data,
            z_combined=zc.data,
            phase=None if bank is None else bank.phase.data,
            amplitude=None if bank is None else bank.amplitude.data,
            alpha=None if rs.alpha is None else rs.alpha.data,
        )
