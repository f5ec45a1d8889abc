"""Conversation data model, corpus files, and the synthetic dialog generator."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureSequence

SPEAKERS = ("agent", "caller")
SPLITS = ("train", "dev", "test")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    vocab_size: int

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        if not tokens:
            raise DataError("token sequence must be non-empty")
        bad = [t for t in tokens if not 0 <= t < self.vocab_size]
        if bad:
            raise DataError(f"token ids {bad} outside vocabulary of size {self.vocab_size}")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str
    speech: FeatureSequence
    labels: np.ndarray
    transcript: Optional[TokenSequence] = None

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise DataError(f"unknown speaker {self.speaker!r}")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or not np.isin(labels, (0, 1)).all():
            raise DataError(f"utterance {self.id}: labels must be a binary vector")
        object.__setattr__(self, "labels", labels.astype(np.int64))


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple

    def __post_init__(self):
        if not self.utterances:
            raise DataError(f"conversation {self.id} has no utterances")
        object.__setattr__(self, "utterances", tuple(self.utterances))

    def __len__(self):
        return len(self.utterances)


@dataclass(frozen=True)
class Context:
    """Window of consecutive utterances; the last one is the labelled target."""

    utterances: tuple

    def __post_init__(self):
        if not self.utterances:
            raise DataError("context must contain at least one utterance")

    @property
    def target(self) -> Utterance:
        return self.utterances[-1]

    @property
    def labels(self) -> np.ndarray:
        return self.target.labels

    def __len__(self):
        return len(self.utterances)


def contexts_of(conv: Conversation, n_max: int) -> list[Context]:
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    utts = conv.utterances
    return [Context(utts[max(0, i - n_max + 1) : i + 1]) for i in range(len(utts))]


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorSettings:
    """Synthetic corpus knobs.

    Label layout: the first ``num_labels - num_topics`` labels are local
    dialog acts, each announced by its own keyword token. The last
    ``num_topics`` labels encode the conversation topic. An utterance
    carries its topic label when it reveals the topic (contains the topic
    token) or when it is a reference utterance (contains the reference
    token but not the topic). Reveals happen at positions 0, R, 2R, ...
    with R = ``reveal_every``; every other utterance is a reference with
    probability ``p_hist``.
    """

    n_train: int = 200
    n_dev: int = 30
    n_test: int = 40
    min_utterances: int = 8
    max_utterances: int = 16
    num_labels: int = 16
    num_topics: int = 4
    vocab_size: int = 64
    base_dim: int = 8
    mean_token_frames: int = 4
    max_filler_tokens: int = 3
    noise_std: float = 1.0
    p_hist: float = 0.8
    reveal_every: int = 5
    frame_period_ms: float = 10.0

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(f"invalid generator settings: {msg}")

        need(min(self.n_train, self.n_dev, self.n_test) >= 1, "split sizes must be >= 1")
        need(1 <= self.min_utterances <= self.max_utterances, "need 1 <= min_utterances <= max_utterances")
        need(1 <= self.num_topics < self.num_labels, "need 1 <= num_topics < num_labels")
        need(self.vocab_size >= self.num_acts + self.num_topics + 2, "vocab too small for label layout")
        need(self.base_dim >= 1, "base_dim must be >= 1")
        need(self.mean_token_frames >= 1, "mean_token_frames must be >= 1")
        need(self.max_filler_tokens >= 0, "max_filler_tokens must be >= 0")
        need(self.noise_std >= 0, "noise_std must be >= 0")
        need(0.0 <= self.p_hist <= 1.0, "p_hist must lie in [0, 1]")
        need(self.reveal_every >= 1, "reveal_every must be >= 1")
        need(self.frame_period_ms > 0, "frame_period_ms must be positive")

    @property
    def num_acts(self) -> int:
        return self.num_labels - self.num_topics

    def topic_token(self, k: int) -> int:
        return self.num_acts + k

    @property
    def reference_token(self) -> int:
        return self.num_acts + self.num_topics

    @property
    def first_filler(self) -> int:
        return self.reference_token + 1


@dataclass
class Corpus:
    train: list
    dev: list
    test: list
    settings: Optional[GeneratorSettings] = None
    seed: Optional[int] = None

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)


def _token_frames(centroids, token, settings, rng):
    m = settings.mean_token_frames
    dur = int(rng.integers(max(1, m - m // 2), m + m // 2 + 1))
    return centroids[token] + settings.noise_std * rng.standard_normal((dur, settings.base_dim))


def _generate_conversation(conv_id, settings, centroids, rng):
    n_utts = int(rng.integers(settings.min_utterances, settings.max_utterances + 1))
    topic = int(rng.integers(settings.num_topics))
    first_speaker = int(rng.integers(2))
    utterances = []
    for i in range(n_utts):
        labels = np.zeros(settings.num_labels, dtype=np.int64)
        n_acts = int(rng.integers(1, 3))
        acts = rng.choice(settings.num_acts, size=n_acts, replace=False)
        labels[acts] = 1
        tokens = [int(a) for a in acts]
        if i % settings.reveal_every == 0:
            tokens.append(settings.topic_token(topic))
            labels[settings.num_acts + topic] = 1
        elif rng.random() < settings.p_hist:
            tokens.append(settings.reference_token)
            labels[settings.num_acts + topic] = 1
        n_fill = int(rng.integers(0, settings.max_filler_tokens + 1))
        tokens += [int(t) for t in rng.integers(settings.first_filler, settings.vocab_size, size=n_fill)]
        tokens = [tokens[j] for j in rng.permutation(len(tokens))]
        frames = np.concatenate([_token_frames(centroids, t, settings, rng) for t in tokens])
        utterances.append(
            Utterance(
                id=f"{conv_id}-u{i:02d}",
                speaker=SPEAKERS[(first_speaker + i) % 2],
                speech=FeatureSequence(frames, settings.frame_period_ms),
                labels=labels,
                transcript=TokenSequence(tuple(tokens), settings.vocab_size),
            )
        )
    return Conversation(conv_id, tuple(utterances))


def generate_corpus(settings: GeneratorSettings, seed: int) -> Corpus:
    """Generate train/dev/test conversations; splits never share a conversation."""
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((settings.vocab_size, settings.base_dim))
    out = {}
    for split, n in zip(SPLITS, (settings.n_train, settings.n_dev, settings.n_test)):
        out[split] = [_generate_conversation(f"{split}-{j:04d}", settings, centroids, rng) for j in range(n)]
    return Corpus(**out, settings=settings, seed=seed)


def history_label_bayes_accuracy(settings: GeneratorSettings, n_max: int) -> float:
    """Best achievable accuracy at naming the topic of a reference utterance.

    A reference at position i can be resolved iff the latest reveal, at
    position i - (i mod R), falls inside the context window; otherwise the
    topic is uniform over ``num_topics``. Averaged over reference positions
    for the uniform conversation-length distribution.
    """
    R = settings.reveal_every
    chance = 1.0 / settings.num_topics
    total, weight = 0.0, 0.0
    lengths = range(settings.min_utterances, settings.max_utterances + 1)
    for n in lengths:
        for i in range(n):
            if i % R == 0:
                continue
            total += 1.0 if (i % R) < n_max else chance
            weight += 1.0
    if weight == 0:
        return 1.0
    return total / weight


# ---------------------------------------------------------------- corpus files


def _utterance_record(u: Utterance) -> dict:
    return {
        "id": u.id,
        "speaker": u.speaker,
        "frames": u.speech.frames.tolist(),
        "frame_period_ms": u.speech.frame_period_ms,
        "tokens": list(u.transcript.tokens) if u.transcript is not None else None,
        "labels": u.labels.tolist(),
    }


def conversation_to_record(conv: Conversation) -> dict:
    return {"id": conv.id, "utterances": [_utterance_record(u) for u in conv.utterances]}


def conversation_from_record(rec: dict, vocab_size: int) -> Conversation:
    try:
        utts = []
        for u in rec["utterances"]:
            tokens = u.get("tokens")
            utts.append(
                Utterance(
                    id=u["id"],
                    speaker=u["speaker"],
                    speech=FeatureSequence(np.array(u["frames"], dtype=np.float64), float(u["frame_period_ms"])),
                    labels=np.array(u["labels"], dtype=np.int64),
                    transcript=TokenSequence(tuple(tokens), vocab_size) if tokens else None,
                )
            )
        return Conversation(rec["id"], tuple(utts))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed conversation record: {exc}") from exc


def write_conversations(path: Path, conversations: Sequence[Conversation]) -> None:
    with open(path, "w") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_record(conv)))
            fh.write("\n")


def read_conversations(path: Path, vocab_size: int) -> list[Conversation]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            out.append(conversation_from_record(rec, vocab_size))
    return out


def write_corpus(directory, corpus: Corpus) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        write_conversations(directory / f"{split}.jsonl", corpus.split(split))
    manifest = {
        "seed": corpus.seed,
        "settings": asdict(corpus.settings) if corpus.settings else None,
        "counts": {s: len(corpus.split(s)) for s in SPLITS},
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_corpus(directory) -> Corpus:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    settings = GeneratorSettings(**manifest["settings"]) if manifest.get("settings") else None
    vocab = settings.vocab_size if settings else 2**31
    splits = {}
    for split in SPLITS:
        path = directory / f"{split}.jsonl"
        if not path.exists():
            raise DataError(f"missing corpus split file {path}")
        splits[split] = read_conversations(path, vocab)
    return Corpus(**splits, settings=settings, seed=manifest.get("seed"))


def settings_from_dict(d: dict) -> GeneratorSettings:
    known = {f.name for f in fields(GeneratorSettings)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown generator settings: {sorted(unknown)}")
    return GeneratorSettings(**d)
