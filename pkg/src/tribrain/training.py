"""Loss construction, optimisation, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig
from .control import NumericalError, RunTrace, StopPolicy, run_ticks
from .data import Dataset, batches
from .model import TriBrainModel
from .numerics import Tensor, backward, ops
from .perception import ImageBatch

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TRIBRAIN"
CHECKPOINT_VERSION = 1
METRICS_SCHEMA = "tribrain.metrics/1"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int, last_good: dict):
        super().__init__(message)
        self.epoch = epoch
        self.last_good = last_good


# ---------------------------------------------------------------------------
# losses


def tick_loss(logits: Tensor, labels) -> Tensor:
    """Per-sample softmax cross-entropy [B] for one tick's logits."""
    return ops.cross_entropy(logits, labels)


def select_ticks(losses: np.ndarray, certainty: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per sample: earliest argmin of loss and earliest argmax of certainty over ticks."""
    return np.argmin(losses, axis=0), np.argmax(certainty, axis=0)


def aggregate_loss_values(losses, certainty) -> np.ndarray:
    """(L[t1] + L[t2]) / 2 per sample from [T, B] arrays."""
    losses = np.asarray(losses, dtype=np.float64)
    certainty = np.asarray(certainty, dtype=np.float64)
    t1, t2 = select_ticks(losses, certainty)
    cols = np.arange(losses.shape[1])
    return 0.5 * (losses[t1, cols] + losses[t2, cols])


def aggregate_loss(trace: RunTrace, labels) -> Tensor:
    """Batch mean of the dual-point loss over a full training trace."""
    if not trace.logit_tensors:
        raise ValueError("aggregate_loss needs a training-mode trace with logit tensors")
    per_tick = ops.stack([tick_loss(lg, labels) for lg in trace.logit_tensors], axis=0)  # [T, B]
    t1, t2 = select_ticks(per_tick.data, trace.c_total)
    cols = np.arange(per_tick.shape[1])
    picked = per_tick[(np.concatenate([t1, t2]), np.concatenate([cols, cols]))]
    return picked.mean()


# ---------------------------------------------------------------------------
# optimisation


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0
        self.skipped = 0

    def step(self, lr: float) -> bool:
        grads = [p.grad for p in self.params]
        if any(g is not None and not np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            log.warning("non-finite gradient; optimizer step skipped")
            return False
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros(p.shape)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def adam_step(params: list[Tensor], state: Adam, lr: float) -> bool:
    return state.step(lr)


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# checkpoints


def state_arrays(model: TriBrainModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_state_arrays(model: TriBrainModel, arrays: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    missing = set(params) - set(arrays)
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise ValueError(f"parameter {name}: checkpoint shape {arrays[name].shape} != model {p.shape}")
        p.data = np.array(arrays[name], dtype=np.float64)


def save_checkpoint(path, model: TriBrainModel, config: ExperimentConfig, epoch: int = 0, metrics: dict | None = None, arrays=None) -> None:
    """Magic, u64 metadata length, UTF-8 JSON metadata, then a little-endian float64 blob."""
    arrays = arrays if arrays is not None else state_arrays(model)
    index, offset, chunks = {}, 0, []
    for name, arr in arrays.items():
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "seed": config.train.seed,
        "epoch": epoch,
        "metrics": metrics or {},
        "config": cfgmod.dumps(config),
        "index": index,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    meta = json.loads(raw[16 : 16 + n])
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    flat = np.frombuffer(raw[16 + n :], dtype="<f8")
    arrays = {}
    for name, ent in meta["index"].items():
        size = int(np.prod(ent["shape"])) if ent["shape"] else 1
        arrays[name] = flat[ent["offset"] : ent["offset"] + size].reshape(ent["shape"]).astype(np.float64)
    return meta, arrays


def load_checkpoint(path) -> tuple[TriBrainModel, ExperimentConfig, dict]:
    meta, arrays = read_checkpoint(path)
    config = cfgmod.loads(meta["config"])
    model = TriBrainModel(config.model, config.ablation)
    load_state_arrays(model, arrays)
    return model, config, meta


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    mean_stop_ticks: float
    mean_certainty: float
    prediction: np.ndarray
    stop_tick: np.ndarray
    certainty: np.ndarray
    labels: np.ndarray
    traces: list[RunTrace] = field(default_factory=list, repr=False)

    def metrics(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_stop_ticks": self.mean_stop_ticks,
            "mean_certainty": self.mean_certainty,
        }


def evaluate(model: TriBrainModel, ds: Dataset, policy: StopPolicy, batch_size: int = 100, gate: bool = True, keep_traces: bool = False) -> EvalResult:
    preds, stops, certs, traces = [], [], [], []
    for x, y, _ in batches(ds, batch_size):
        tr = run_ticks(model, ImageBatch(x, y), policy, mode="eval", gate=gate)
        preds.append(tr.prediction)
        stops.append(tr.stop_tick)
        certs.append(tr.stop_certainty)
        if keep_traces:
            traces.append(tr)
    pred = np.concatenate(preds)
    stop = np.concatenate(stops)
    cert = np.concatenate(certs)
    return EvalResult(
        accuracy=float((pred == ds.labels).mean()),
        mean_stop_ticks=float(stop.mean()),
        mean_certainty=float(cert.mean()),
        prediction=pred,
        stop_tick=stop,
        certainty=cert,
        labels=ds.labels,
        traces=traces,
    )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: TriBrainModel
    config: ExperimentConfig
    history: list[dict]

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}


def build_model(config: ExperimentConfig) -> TriBrainModel:
    """Weights are drawn from the train seed; bands and sync pairs stay tied to model.seed."""
    return TriBrainModel(config.model, config.ablation, init_seed=config.model.seed + 1000 * config.train.seed)


def train(config: ExperimentConfig, train_ds: Dataset, val_ds: Dataset | None = None, on_epoch=None) -> TrainResult:
    """Full-T training with the dual-point loss, Adam and a per-step cosine schedule."""
    config.validate()
    tc = config.train
    policy = StopPolicy.from_config(config.policy)
    model = build_model(config)
    params = model.parameters()
    opt = Adam(params)
    rng = np.random.default_rng(tc.seed)
    drop_rng = np.random.default_rng(tc.seed + 1)
    steps_per_epoch = math.ceil(len(train_ds) / tc.batch_size)
    total = steps_per_epoch * tc.epochs
    step = 0
    history: list[dict] = []
    last_good = state_arrays(model)
    for epoch in range(1, tc.epochs + 1):
        model.train()
        loss_sum, correct, seen = 0.0, 0, 0
        for x, y, _ in batches(train_ds, tc.batch_size, rng):
            lr = cosine_lr(step, total, tc.lr) if tc.schedule == "cosine" else tc.lr
            try:
                trace = run_ticks(model, ImageBatch(x, y), policy, mode="train", rng=drop_rng)
            except NumericalError as exc:
                raise TrainingDiverged(str(exc), epoch, last_good) from exc
            loss = aggregate_loss(trace, y)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}", epoch, last_good)
            model.zero_grad()
            backward(loss)
            if tc.max_grad_norm > 0:
                clip_grad_norm(params, tc.max_grad_norm)
            opt.step(lr)
            step += 1
            loss_sum += loss.item() * len(y)
            t2 = np.argmax(trace.c_total, axis=0)
            pred = trace.logits[t2, np.arange(len(y))].argmax(axis=-1)
            correct += int((pred == y).sum())
            seen += len(y)
        last_good = state_arrays(model)
        rec = {
            "schema": METRICS_SCHEMA,
            "seed": tc.seed,
            "epoch": epoch,
            "train_loss": loss_sum / seen,
            "train_accuracy": correct / seen,
            "lr": cosine_lr(min(step, total), total, tc.lr) if tc.schedule == "cosine" else tc.lr,
        }
        if val_ds is not None:
            ev = evaluate(model, val_ds, policy, tc.eval_batch_size)
            rec.update({f"val_{k}": v for k, v in ev.metrics().items()})
        history.append(rec)
        log.info("epoch %d: %s", epoch, rec)
        if on_epoch is not None:
            on_epoch(rec)
    model.eval()
    return TrainResult(model, config, history)
