"""Iterative adaptive control: entropy-change tracking, certainty-gated stopping, the tick loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .auxiliary import entropy, entropy_certainty, total_certainty
from .config import PolicyConfig
from .numerics import Tensor, no_grad


class NumericalError(ArithmeticError):
    """Non-finite model state; carries the tick and the offending quantity."""

    def __init__(self, tick: int, quantity: str):
        super().__init__(f"non-finite {quantity} at tick {tick}")
        self.tick = tick
        self.quantity = quantity


@dataclass(frozen=True)
class StopPolicy:
    epsilon: float = 0.01
    tau: float = 0.75
    window: int = 2
    t_min: int = 5
    t_max: int = 50

    def __post_init__(self):
        if not (1 <= self.t_min <= self.t_max):
            raise ValueError(f"need 1 <= t_min <= T, got t_min={self.t_min}, T={self.t_max}")
        if self.window < 1 or self.epsilon <= 0 or not (0.0 < self.tau < 1.0):
            raise ValueError("need window >= 1, epsilon > 0 and 0 < tau < 1")

    @classmethod
    def from_config(cls, p: PolicyConfig) -> "StopPolicy":
        return cls(epsilon=p.epsilon, tau=p.tau, window=p.window, t_min=p.t_min, t_max=p.T)


def entropy_change(history, k: int):
    """|H^t - H^{t-k}| / k from the trailing entries of ``history``; None when fewer than k+1 values."""
    if len(history) < k + 1:
        return None
    return np.abs(np.asarray(history[-1]) - np.asarray(history[-1 - k])) / k


def should_stop(dH, certainty, t: int, policy: StopPolicy):
    """(ΔH < ε) ∧ (C_total > τ) ∧ (t ≥ T_min), elementwise; not-ready ΔH never stops."""
    if dH is None:
        return np.zeros(np.shape(certainty), dtype=bool) if np.ndim(certainty) else False
    res = (np.asarray(dH) < policy.epsilon) & (np.asarray(certainty) > policy.tau) & (t >= policy.t_min)
    return res if np.ndim(res) else bool(res)


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class RunTrace:
    """Per-tick observables, arrays shaped [ticks, B] unless noted."""

    logits: np.ndarray  # [ticks, B, C]
    entropy: np.ndarray
    delta_entropy: np.ndarray  # NaN while the window is not yet filled
    c_entropy: np.ndarray
    c_phase: np.ndarray
    c_total: np.ndarray
    stop: np.ndarray  # bool, the gating decision at that tick
    active: np.ndarray  # bool, still computing at the start of that tick
    stop_tick: np.ndarray  # [B], 1-based
    labels: np.ndarray | None = None
    alpha: np.ndarray | None = None
    logit_tensors: list[Tensor] = field(default_factory=list, repr=False)
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def ticks(self) -> int:
        return self.logits.shape[0]

    @property
    def batch(self) -> int:
        return self.logits.shape[1]

    def at_stop(self, arr: np.ndarray) -> np.ndarray:
        return arr[self.stop_tick - 1, np.arange(self.batch)]

    @property
    def final_logits(self) -> np.ndarray:
        return self.at_stop(self.logits)

    @property
    def prediction(self) -> np.ndarray:
        return self.final_logits.argmax(axis=-1)

    @property
    def stop_certainty(self) -> np.ndarray:
        return self.at_stop(self.c_total)


def run_ticks(
    model,
    batch,
    policy: StopPolicy,
    mode: str = "eval",
    gate: bool = True,
    rng: np.random.Generator | None = None,
    record: bool = False,
) -> RunTrace:
    """Run the tick loop on one batch.

    ``mode="train"`` always runs the full T ticks with gradients recorded and
    keeps the per-tick logit tensors for the loss.  In ``eval`` mode with
    ``gate`` each sample stops at the first tick where the policy fires; its
    outputs are frozen from then on while the batch keeps computing so the
    shared oscillator bank evolves exactly as in an ungated run.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    training = mode == "train"
    gate = gate and not training
    model.train(training)
    if training:
        return _loop(model, batch, policy, False, rng, record, keep_tensors=True)
    with no_grad():
        return _loop(model, batch, policy, gate, rng, record, keep_tensors=False)


def _loop(model, batch, policy, gate, rng, record, keep_tensors) -> RunTrace:
    rs = model.start(batch, rng)
    B = rs.state.z.shape[0]
    beta = model.effective_beta
    T = policy.t_max
    rows = {k: [] for k in ("logits", "entropy", "delta_entropy", "c_entropy", "c_phase", "c_total", "stop", "active")}
    extras = {k: [] for k in ("attention", "coherence", "activation", "phase", "amplitude")} if record else {}
    tensors: list[Tensor] = []
    active = np.ones(B, dtype=bool)
    stop_tick = np.full(B, T, dtype=np.int64)
    h_hist: list[np.ndarray] = []
    frozen: dict[str, np.ndarray] = {}

    for t in range(1, T + 1):
        out = model.tick(rs)
        lg = out.logits.data
        if not np.all(np.isfinite(lg)):
            raise NumericalError(t, "logits")
        if not np.all(np.isfinite(rs.state.z.data)):
            raise NumericalError(t, "state")
        probs = _softmax_np(lg)
        H = entropy(probs)
        h_hist.append(H)
        dH = entropy_change(h_hist, policy.window)
        c_ent = entropy_certainty(probs)
        c_ph = out.c_phase if out.c_phase is not None else np.zeros(B)
        c_tot = total_certainty(c_ent, c_ph, beta)
        stop_now = np.asarray(should_stop(dH, c_tot, t, policy), dtype=bool) & np.ones(B, dtype=bool)
        cur = {
            "logits": lg.copy(),
            "entropy": H.copy(),
            "delta_entropy": np.full(B, np.nan) if dH is None else dH,
            "c_entropy": c_ent,
            "c_phase": np.asarray(c_ph, dtype=np.float64),
            "c_total": c_tot,
            "stop": stop_now,
        }
        if frozen:
            done = ~active
            for k, v in cur.items():
                v[done] = frozen[k][done]
        rows["active"].append(active.copy())
        for k, v in cur.items():
            rows[k].append(v)
        if keep_tensors:
            tensors.append(out.logits)
        if record:
            extras["attention"].append(out.attention)
            extras["coherence"].append(c_ph)
            extras["activation"].append(np.abs(out.activation))
            if out.phase is not None:
                extras["phase"].append(out.phase)
                extras["amplitude"].append(out.amplitude)
        if gate:
            newly = active & stop_now
            if newly.any():
                stop_tick[newly] = t
                active = active & ~newly
                frozen = {k: np.array(v) for k, v in cur.items()} if not frozen else frozen
                for k, v in cur.items():
                    frozen[k][newly] = v[newly]
            if not active.any():
                break

    return RunTrace(
        logits=np.stack(rows["logits"]),
        entropy=np.stack(rows["entropy"]),
        delta_entropy=np.stack(rows["delta_entropy"]),
        c_entropy=np.stack(rows["c_entropy"]),
        c_phase=np.stack(rows["c_phase"]),
        c_total=np.stack(rows["c_total"]),
        stop=np.stack(rows["stop"]),
        active=np.stack(rows["active"]),
        stop_tick=stop_tick,
        labels=getattr(batch, "labels", None),
        alpha=None if rs.alpha is None else rs.alpha.data.copy(),
        logit_tensors=tensors,
        extras={k: np.stack(v) for k, v in extras.items() if v},
    )
