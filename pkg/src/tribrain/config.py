"""Experiment configuration: dataclasses plus a dotted ``key = value`` text format.

    # comment
    model.D = 64
    ablation.oscillation = on
    policy.tau = 0.75

Unknown keys are rejected.  ``dumps`` writes every resolved key so the echoed
file reproduces the run.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class ModelConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    d_k: int = 64
    d_v: int = 64
    heads: int = 1
    D: int = 128
    n_sync: int = 512
    classes: int = 10
    memory: int = 8
    deep_width: int = 0  # 0 -> 2·D
    dropout: float = 0.1
    update_scale: float = 0.1  # init scale of the pathway output layers
    gamma_hidden: int = 64
    omega_hidden: int = 32
    lam: float = 0.1
    kappa_freq: float = 0.1
    kappa_phase: float = 0.1
    kappa_amp: float = 0.1
    beta: float = 0.5
    tick_seconds: float = 0.01
    init_phase_spread: float = 0.0
    decay_init: float = 0.1
    per_sample_bank: bool = False
    query_from_combined: bool = True
    seed: int = 0


@dataclass
class AblationConfig:
    oscillation: bool = True
    neuromodulation: bool = True
    sda: bool = True
    attention_modulation: bool = True
    film: bool = True


@dataclass
class PolicyConfig:
    T: int = 50
    t_min: int = 5
    window: int = 2
    epsilon: float = 0.01
    tau: float = 0.75


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    eval_batch_size: int = 100
    lr: float = 1e-3
    schedule: str = "cosine"
    seed: int = 0
    max_grad_norm: float = 0.0  # 0 disables clipping


@dataclass
class DataConfig:
    source: str = "synth"  # synth | binary
    size: int = 32
    n_train: int = 900
    n_val: int = 300
    n_test: int = 300
    seed: int = 1234
    train_path: str = ""
    test_path: str = ""
    height: int = 32
    width: int = 32
    channels: int = 3
    label_bytes: int = 1
    label_index: int = 0
    val_fraction: float = 0.1
    human_probs: str = ""


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def copy(self) -> "ExperimentConfig":
        return loads(dumps(self))

    def set(self, key: str, value: str) -> None:
        section, _, name = key.partition(".")
        sec = getattr(self, section, None) if section in _SECTIONS else None
        if sec is None or not name or name not in {f.name for f in dataclasses.fields(sec)}:
            raise ConfigError(f"unknown config key: {key}", key)
        ftype = _field_types(type(sec))[name]
        try:
            setattr(sec, name, _parse_value(ftype, value.strip()))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})", key) from None

    def get(self, key: str):
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not hasattr(getattr(self, section), name):
            raise ConfigError(f"unknown config key: {key}", key)
        return getattr(getattr(self, section), name)

    def keys(self) -> list[str]:
        return [f"{s}.{f.name}" for s in _SECTIONS for f in dataclasses.fields(getattr(self, s))]

    def validate(self) -> "ExperimentConfig":
        m, p = self.model, self.policy
        if m.D < 4:
            raise ConfigError("model.D must be at least 4", "model.D")
        if m.n_sync > m.D * (m.D + 1) // 2:
            raise ConfigError("model.n_sync exceeds the number of neuron pairs", "model.n_sync")
        if m.d_k % m.heads or m.d_v % m.heads:
            raise ConfigError("model.heads must divide d_k and d_v", "model.heads")
        if not 0.0 <= m.beta <= 1.0:
            raise ConfigError("model.beta must lie in [0, 1]", "model.beta")
        if not (1 <= p.t_min <= p.T):
            raise ConfigError("policy needs 1 <= t_min <= T", "policy.t_min")
        if p.window < 1 or p.epsilon <= 0 or not (0.0 < p.tau < 1.0):
            raise ConfigError("policy needs window >= 1, epsilon > 0, 0 < tau < 1", "policy.tau")
        if self.data.source not in ("synth", "binary"):
            raise ConfigError("data.source must be synth or binary", "data.source")
        if self.train.schedule not in ("cosine", "constant"):
            raise ConfigError("train.schedule must be cosine or constant", "train.schedule")
        return self


_SECTIONS = ("model", "ablation", "policy", "train", "data")


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_value(ftype, text: str):
    if ftype is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean (on/off, true/false)")
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    if ftype is str:
        return text
    if typing.get_origin(ftype) is tuple:
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if not parts:
            raise ValueError("expected a comma-separated list")
        return tuple(int(p) for p in parts)
    raise ValueError(f"unsupported field type {ftype}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def load(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    cfg = loads(text)
    apply_overrides(cfg, overrides or [])
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    return cfg


def dumps(cfg: ExperimentConfig, header: str | None = None) -> str:
    lines = [f"# tribrain config v{FORMAT_VERSION}"]
    if header:
        lines.append(f"# {header}")
    for key in cfg.keys():
        lines.append(f"{key} = {_format_value(cfg.get(key))}")
    return "\n".join(lines) + "\n"


def desk_config() -> ExperimentConfig:
    """Defaults used for the synthetic 3-class desk-scale experiments."""
    cfg = ExperimentConfig()
    m = cfg.model
    m.D, m.classes, m.n_sync = 64, 3, 512
    cfg.policy.T = 20
    # with beta = 0.5 and a decohered bank, C_total tops out near 0.6, so tau = 0.75 never fires
    cfg.policy.epsilon, cfg.policy.tau = 0.03, 0.5
    cfg.train.epochs = 20
    return cfg


def paper_scale_config() -> ExperimentConfig:
    """CIFAR-10 sizes of the original protocol; not expected to finish at desk scale."""
    cfg = ExperimentConfig()
    cfg.model.D, cfg.model.n_sync, cfg.model.classes = 512, 512, 10
    cfg.train.epochs, cfg.train.batch_size, cfg.train.lr = 100, 1024, 1e-3
    cfg.policy.T = 50
    cfg.data.source = "binary"
    return cfg
