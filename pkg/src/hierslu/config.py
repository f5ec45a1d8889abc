"""Experiment configuration file (JSON).

Every knob has a default; unknown keys are rejected. The resolved config
is written next to each command's outputs and can be fed back in to
reproduce them.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, get_type_hints

from .data import GeneratorSettings
from .errors import ConfigError
from .features import DropFrameConfig
from .losses import LossWeights
from .model import ModelConfig
from .training import TrainingConfig


@dataclass(frozen=True)
class FeaturesSection:
    delta_window: int = 2
    dropframe_max_len: int = 256
    dropframe_enabled: bool = True


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 64
    speech_hidden: int = 32
    speech_layers: int = 2
    text_layers: int = 2
    text_heads: int = 2
    max_tokens: int = 64
    conversation_variant: str = "transformer"
    conversation_layers: int = 2
    conversation_heads: int = 1
    n_max: int = 10
    dropout: float = 0.1
    use_speaker_role: bool = False
    dtype: str = "float32"


@dataclass(frozen=True)
class LossesSection:
    euclidean: float = 1.0
    contrastive: float = 1.0
    temperature: float = 0.07
    crossmodal_on_history: bool = False


@dataclass(frozen=True)
class TrainingSection:
    regime: str = "HIER-ST"
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 60
    patience: int = 10
    freeze_speech_encoder: bool = False
    freeze_text_encoder: bool = False
    grad_clip: float = 5.0
    log_train_f1: bool = True


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 0.5
    split: str = "test"
    context_len: Optional[int] = None


@dataclass(frozen=True)
class AblationSection:
    seeds: tuple = (0, 1, 2)
    rows: tuple = ("utterance-only", "HIER-S", "HIER-ST", "HIER-ST+EUC", "HIER-ST+CON",
                   "HIER-ST+EUC+CON", "HIER-ST+CON (LSTM g)")
    dropframe_lengths: tuple = (16, 64, 256, None)
    dropframe_epochs: int = 3


@dataclass(frozen=True)
class GradcheckSection:
    d_model: int = 8
    base_dim: int = 2
    hidden: int = 4
    vocab_size: int = 12
    batch: int = 3
    max_frames: int = 6
    step: float = 1e-5
    tolerance: float = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    data: GeneratorSettings = field(default_factory=GeneratorSettings)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    model: ModelSection = field(default_factory=ModelSection)
    losses: LossesSection = field(default_factory=LossesSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    seed: int = 0
    output_dir: str = "runs/default"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_dim=self.data.base_dim,
            vocab_size=self.data.vocab_size,
            num_labels=self.data.num_labels,
            **asdict(self.model),
        )

    def training_config(self, seed: Optional[int] = None) -> TrainingConfig:
        t, lo, f = self.training, self.losses, self.features
        return TrainingConfig(
            regime=t.regime,
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            max_epochs=t.max_epochs,
            patience=t.patience,
            seed=self.seed if seed is None else seed,
            dropframe=DropFrameConfig(f.dropframe_max_len, f.dropframe_enabled),
            losses=LossWeights(lo.euclidean, lo.contrastive, lo.temperature),
            freeze_speech_encoder=t.freeze_speech_encoder,
            freeze_text_encoder=t.freeze_text_encoder,
            grad_clip=t.grad_clip,
            crossmodal_on_history=lo.crossmodal_on_history,
            threshold=self.eval.threshold,
            log_train_f1=t.log_train_f1,
        )

    def validate(self) -> "ExperimentConfig":
        # constructing the derived configs runs their invariant checks
        self.model_config()
        self.training_config()
        if self.eval.split not in ("train", "dev", "test"):
            raise ConfigError(f"eval.split must be train, dev or test, got {self.eval.split!r}")
        if self.eval.context_len is not None and self.eval.context_len < 1:
            raise ConfigError("eval.context_len must be >= 1")
        if len(self.ablation.seeds) < 1:
            raise ConfigError("ablation.seeds must not be empty")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, values, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'} must be an object, got {type(values).__name__}")
    hints = get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        typ = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, value, path)
        elif typ is tuple or getattr(typ, "__origin__", None) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path} must be a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, d, "").validate()


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"override {dotted!r} does not name a config field")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"override {dotted!r} does not name a config field")
    node[keys[-1]] = value


def parse_override(text: str):
    """``a.b=value``; the value is parsed as JSON when possible, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=()) -> ExperimentConfig:
    base = ExperimentConfig().to_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        # validate user keys before merging so typos are reported against the file
        _build(ExperimentConfig, user, "")
        base = _merge(base, user)
    for text in overrides:
        key, value = parse_override(text)
        _set_path(base, key, value)
    return config_from_dict(base)


def _merge(base: dict, user: dict) -> dict:
    out = dict(base)
    for k, v in user.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
