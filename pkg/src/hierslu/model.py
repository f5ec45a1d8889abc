"""The hierarchical conversation model, batching, and checkpoint files.

Parameters live in four buckets:

    speech_encoder  speech branch
    text_encoder    text branch (teacher; unused at test time)
    conversation    shared conversation encoder
    classifier      shared classification head
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .conversation import ConversationEncoder, ConversationEncoderConfig
from .data import SPEAKERS, Conversation
from .encoders import SpeechEncoder, SpeechEncoderConfig, TextEncoder, TextEncoderConfig, pad_frames, pad_tokens
from .errors import ConfigError, DataError
from .features import DropFrameConfig, FeatureSequence, drop_frames, output_dim, speech_pipeline
from .losses import Classifier

DTYPES = {"float32": torch.float32, "float64": torch.float64}
BUCKETS = ("speech_encoder", "text_encoder", "conversation", "classifier")


@dataclass(frozen=True)
class ModelConfig:
    base_dim: int = 8
    vocab_size: int = 64
    num_labels: int = 16
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

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("base_dim", "vocab_size", "num_labels", "d_model", "speech_hidden", "speech_layers",
                     "text_layers", "text_heads", "max_tokens", "conversation_layers", "conversation_heads", "n_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        for heads in (self.text_heads, self.conversation_heads):
            if self.d_model % heads:
                raise ConfigError(f"d_model={self.d_model} not divisible by {heads} attention heads")
        self.conversation()  # validates the variant

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    def speech(self) -> SpeechEncoderConfig:
        return SpeechEncoderConfig(output_dim(self.base_dim), self.speech_hidden, self.speech_layers, self.d_model, self.dropout)

    def text(self) -> TextEncoderConfig:
        return TextEncoderConfig(self.vocab_size, self.d_model, self.text_layers, self.text_heads, self.max_tokens, self.dropout)

    def conversation(self) -> ConversationEncoderConfig:
        return ConversationEncoderConfig(
            self.conversation_variant, self.d_model, self.conversation_layers, self.conversation_heads,
            self.n_max, self.dropout, self.use_speaker_role,
        )


# ---------------------------------------------------------------- batching


@dataclass
class PreparedConversation:
    """Conversation with speech already run through the feature pipeline."""

    id: str
    frames: list  # per utterance (T_i, 6 * base_dim)
    tokens: list  # per utterance tuple of ids, or None
    roles: list
    labels: np.ndarray  # (n_utts, L)


def prepare(conversations: Sequence[Conversation], delta_window: int = 2) -> list[PreparedConversation]:
    out = []
    for conv in conversations:
        out.append(
            PreparedConversation(
                id=conv.id,
                frames=[speech_pipeline(u.speech, delta_window).frames for u in conv.utterances],
                tokens=[u.transcript.tokens if u.transcript is not None else None for u in conv.utterances],
                roles=[SPEAKERS.index(u.speaker) for u in conv.utterances],
                labels=np.stack([u.labels for u in conv.utterances]),
            )
        )
    return out


@dataclass
class Batch:
    """All contexts of a group of conversations.

    Each utterance is encoded once and gathered into every context window
    that contains it; ``target`` maps each context to its current utterance.
    """

    frames: list
    tokens: list
    roles: np.ndarray
    context_index: np.ndarray  # (m, N) utterance indices, padded with 0
    context_lengths: np.ndarray  # (m,)
    target: np.ndarray  # (m,)
    labels: np.ndarray  # (m, L)

    @property
    def num_contexts(self) -> int:
        return len(self.target)

    def has_transcripts(self) -> bool:
        return all(t is not None for t in self.tokens)


def make_batch(
    convs: Sequence[PreparedConversation],
    n_max: int,
    dropframe: Optional[DropFrameConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> Batch:
    frames, tokens, roles, labels, windows, target = [], [], [], [], [], []
    for conv in convs:
        base = len(frames)
        for f in conv.frames:
            if dropframe is not None and dropframe.enabled:
                f = drop_frames(FeatureSequence(f), dropframe, rng).frames
            frames.append(f)
        tokens.extend(conv.tokens)
        roles.extend(conv.roles)
        n = len(conv.frames)
        for i in range(n):
            lo = max(0, i - n_max + 1)
            windows.append(list(range(base + lo, base + i + 1)))
            target.append(base + i)
        labels.append(conv.labels)
    N = max(len(w) for w in windows)
    index = np.zeros((len(windows), N), dtype=np.int64)
    for j, w in enumerate(windows):
        index[j, : len(w)] = w
    return Batch(
        frames=frames,
        tokens=tokens,
        roles=np.asarray(roles, dtype=np.int64),
        context_index=index,
        context_lengths=np.array([len(w) for w in windows], dtype=np.int64),
        target=np.asarray(target, dtype=np.int64),
        labels=np.concatenate(labels).astype(np.int64),
    )


# ---------------------------------------------------------------- model


class HierarchicalModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.speech_encoder = SpeechEncoder(cfg.speech())
        self.text_encoder = TextEncoder(cfg.text())
        self.conversation = ConversationEncoder(cfg.conversation())
        self.classifier = Classifier(cfg.d_model, cfg.num_labels)
        self.to(cfg.torch_dtype)

    def bucket(self, name: str) -> nn.Module:
        if name not in BUCKETS:
            raise ConfigError(f"unknown parameter bucket {name!r}")
        return getattr(self, name)

    def context_encoder(self, modality: str) -> ConversationEncoder:
        """The conversation encoder used by the given branch (one shared instance)."""
        if modality not in ("speech", "text"):
            raise ConfigError(f"unknown modality {modality!r}")
        return self.conversation

    def encode_utterances(self, batch: Batch, modality: str) -> torch.Tensor:
        if modality == "speech":
            x, lengths = pad_frames(batch.frames, self.cfg.torch_dtype)
            return self.speech_encoder(x, lengths)
        if modality == "text":
            if not batch.has_transcripts():
                raise ConfigError("text branch requested but some utterances have no transcript")
            toks, lengths = pad_tokens(batch.tokens)
            return self.text_encoder(toks, lengths)
        raise ConfigError(f"unknown modality {modality!r}")

    def encode_contexts(self, utt: torch.Tensor, batch: Batch, modality: str) -> torch.Tensor:
        index = torch.as_tensor(batch.context_index)
        lengths = torch.as_tensor(batch.context_lengths)
        roles = torch.as_tensor(batch.roles)[index]
        return self.context_encoder(modality)(utt[index], lengths, roles)

    def branch(self, batch: Batch, modality: str):
        """Returns (utterance embeddings, context embeddings, logits) for one branch."""
        utt = self.encode_utterances(batch, modality)
        ctx = self.encode_contexts(utt, batch, modality)
        return utt, ctx, self.classifier(ctx)


# ---------------------------------------------------------------- checkpoints
#
# A checkpoint is a NumPy .npz archive: one array per parameter, keyed by its
# dotted module path, plus "__meta__", a JSON string holding the model config
# and any extra metadata. float64 values round-trip exactly.


def save_checkpoint(path, model: HierarchicalModel, extra: Optional[dict] = None) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"model": asdict(model.cfg), "extra": extra or {}}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown model settings: {sorted(unknown)}")
    return ModelConfig(**d)


def load_checkpoint(path, expected: Optional[ModelConfig] = None):
    """Returns (model, meta). Raises ConfigError if ``expected`` disagrees on shapes."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        meta = json.loads(str(archive["__meta__"]))
        cfg = model_config_from_dict(meta["model"])
        if expected is not None:
            shape_keys = [f.name for f in fields(ModelConfig) if f.name not in ("dropout", "dtype")]
            diff = [k for k in shape_keys if getattr(cfg, k) != getattr(expected, k)]
            if diff:
                raise ConfigError(f"checkpoint does not match config on: {', '.join(diff)}")
        model = HierarchicalModel(cfg)
        state = {k: torch.from_numpy(archive[k].copy()) for k in archive.files if k != "__meta__"}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint shape mismatch: {exc}") from exc
    return model, meta


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
