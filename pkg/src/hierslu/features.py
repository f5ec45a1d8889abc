"""Acoustic feature pipeline: deltas, frame stacking, and DropFrame.

The synthetic corpus emits base feature frames directly, so the pipeline
starts at the filterbank level:

    base (T, D) --deltas--> (T, 3D) --stack/skip--> (ceil(T/2), 6D)

With D = 40 and a 10 ms frame period this gives 240-dim frames every 20 ms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

DELTA_WINDOW = 2


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major feature matrix for one utterance."""

    frames: np.ndarray
    frame_period_ms: float = 10.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DataError(f"frames must be a 2-D matrix, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DataError(f"frames must have T >= 1 and D >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError("frames contain non-finite values")
        if not self.frame_period_ms > 0:
            raise DataError(f"frame_period_ms must be positive, got {self.frame_period_ms}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class DropFrameConfig:
    max_len: int = 256
    enabled: bool = True

    def __post_init__(self):
        if isinstance(self.max_len, bool) or not isinstance(self.max_len, (int, np.integer)):
            raise ConfigError(f"DropFrame max_len must be an integer, got {self.max_len!r}")
        if self.max_len < 1:
            raise ConfigError(f"DropFrame max_len must be >= 1, got {self.max_len}")


def _delta(frames: np.ndarray, window: int) -> np.ndarray:
    # regression deltas with edge replication
    T = frames.shape[0]
    padded = np.pad(frames, ((window, window), (0, 0)), mode="edge")
    denom = 2 * sum(n * n for n in range(1, window + 1))
    out = np.zeros_like(frames)
    for n in range(1, window + 1):
        out += n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
    return out / denom


def compute_deltas(seq: FeatureSequence, window: int = DELTA_WINDOW) -> FeatureSequence:
    """Append delta and delta-delta blocks: output frames are ``[f | Δf | ΔΔf]``."""
    if window < 1:
        raise ConfigError(f"delta window must be >= 1, got {window}")
    d1 = _delta(seq.frames, window)
    d2 = _delta(d1, window)
    return FeatureSequence(np.concatenate([seq.frames, d1, d2], axis=1), seq.frame_period_ms)


def stack_and_skip(seq: FeatureSequence) -> FeatureSequence:
    """Concatenate frame pairs (2t, 2t+1), halving the rate.

    An odd trailing frame is paired with itself.
    """
    frames = seq.frames
    if frames.shape[0] % 2:
        frames = np.concatenate([frames, frames[-1:]], axis=0)
    stacked = np.concatenate([frames[0::2], frames[1::2]], axis=1)
    return FeatureSequence(stacked, seq.frame_period_ms * 2)


def speech_pipeline(seq: FeatureSequence, window: int = DELTA_WINDOW) -> FeatureSequence:
    return stack_and_skip(compute_deltas(seq, window))


def output_dim(base_dim: int) -> int:
    return 6 * base_dim


def drop_frames(seq: FeatureSequence, cfg: DropFrameConfig, rng: np.random.Generator) -> FeatureSequence:
    """Randomly keep ``cfg.max_len`` frames of a longer sequence, in order.

    Identity when disabled or when the sequence is already short enough;
    the random source is not consumed in that case.
    """
    T = seq.num_frames
    if not cfg.enabled or T <= cfg.max_len:
        return seq
    keep = np.sort(rng.choice(T, size=cfg.max_len, replace=False))
    return FeatureSequence(seq.frames[keep], seq.frame_period_ms)
