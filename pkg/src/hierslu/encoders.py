"""Utterance encoders: speech (bidirectional LSTM) and text (CLS-pooled self-attention)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from .attention import EncoderLayer, lengths_to_mask
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SpeechEncoderConfig:
    input_dim: int = 48
    hidden_size: int = 32
    num_layers: int = 2
    d_model: int = 64
    dropout: float = 0.1


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int = 64
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 2
    max_tokens: int = 64
    dropout: float = 0.1


def init_lstm_(lstm: nn.LSTM) -> None:
    """Uniform(+-1/sqrt(H)) weights, forget-gate bias 1 (split ih=1, hh=0)."""
    H = lstm.hidden_size
    bound = 1.0 / math.sqrt(H)
    with torch.no_grad():
        for name, p in lstm.named_parameters():
            if name.startswith("weight"):
                p.uniform_(-bound, bound)
            else:
                p.zero_()
                if name.startswith("bias_ih"):
                    p[H : 2 * H] = 1.0


def pad_frames(frames: Sequence[np.ndarray], dtype=torch.float32):
    """Right-pad a list of (T_i, D) arrays into (B, T_max, D) plus lengths."""
    lengths = torch.tensor([f.shape[0] for f in frames], dtype=torch.long)
    D = frames[0].shape[1]
    out = torch.zeros(len(frames), int(lengths.max()), D, dtype=dtype)
    for i, f in enumerate(frames):
        out[i, : f.shape[0]] = torch.as_tensor(f, dtype=dtype)
    return out, lengths


def pad_tokens(token_lists: Sequence[Sequence[int]]):
    lengths = torch.tensor([len(t) for t in token_lists], dtype=torch.long)
    out = torch.zeros(len(token_lists), int(lengths.max()), dtype=torch.long)
    for i, t in enumerate(token_lists):
        out[i, : len(t)] = torch.as_tensor(list(t), dtype=torch.long)
    return out, lengths


class SpeechEncoder(nn.Module):
    def __init__(self, cfg: SpeechEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm = nn.LSTM(
            cfg.input_dim,
            cfg.hidden_size,
            num_layers=cfg.num_layers,
            bidirectional=True,
            batch_first=True,
            dropout=cfg.dropout if cfg.num_layers > 1 else 0.0,
        )
        init_lstm_(self.lstm)
        self.proj = nn.Linear(2 * cfg.hidden_size, cfg.d_model)

    def forward(self, frames: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """frames: (B, T, D) right-padded; lengths: (B,). Returns (B, d_model).

        Padding beyond each length is never read.
        """
        if frames.shape[-1] != self.cfg.input_dim:
            raise ConfigError(f"speech encoder expects {self.cfg.input_dim}-dim frames, got {frames.shape[-1]}")
        if int(lengths.min()) < 1:
            raise DataError("every utterance needs at least one frame")
        packed = pack_padded_sequence(frames, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        # h_n[-2]: forward at t = T-1; h_n[-1]: backward after reaching t = 0
        last = torch.cat([h_n[-2], h_n[-1]], dim=-1)
        return self.proj(last)


class TextEncoder(nn.Module):
    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.cls = nn.Parameter(torch.randn(cfg.d_model) * 0.02)
        self.position = nn.Parameter(torch.randn(cfg.max_tokens + 1, cfg.d_model) * 0.02)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.d_model, cfg.num_heads, cfg.dropout) for _ in range(cfg.num_layers)
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """tokens: (B, S) right-padded ids; returns the CLS output (B, d_model)."""
        B, S = tokens.shape
        if S > self.cfg.max_tokens:
            raise DataError(f"utterance of {S} tokens exceeds max_tokens={self.cfg.max_tokens}")
        valid_ids = lengths_to_mask(lengths, S)
        used = tokens[valid_ids]
        if used.numel() and (int(used.min()) < 0 or int(used.max()) >= self.cfg.vocab_size):
            raise DataError(f"token id outside vocabulary of size {self.cfg.vocab_size}")
        x = self.token_embedding(tokens.clamp(0, self.cfg.vocab_size - 1))
        x = torch.cat([self.cls.expand(B, 1, -1), x], dim=1) + self.position[: S + 1]
        x = self.dropout(x)
        valid = lengths_to_mask(lengths + 1, S + 1)
        for layer in self.layers:
            x = layer(x, valid)
        return x[:, 0]
