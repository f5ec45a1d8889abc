"""Modality-agnostic conversation encoder over a window of utterance embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from .attention import EncoderLayer, lengths_to_mask
from .encoders import init_lstm_
from .errors import ConfigError, DataError

VARIANTS = ("transformer", "recurrent")


@dataclass(frozen=True)
class ConversationEncoderConfig:
    variant: str = "transformer"
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 1
    n_max: int = 10
    dropout: float = 0.1
    use_speaker_role: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"conversation variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")


class ConversationEncoder(nn.Module):
    """Maps (B, N, d) utterance embeddings to (B, d) context embeddings.

    The transformer variant returns the output at each context's final
    position; the recurrent variant (one bidirectional LSTM layer) sums the
    final states of the two directions, i.e. each direction's last step.
    """

    def __init__(self, cfg: ConversationEncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        if cfg.variant == "transformer":
            self.position = nn.Parameter(torch.randn(cfg.n_max, d) * 0.02)
            self.layers = nn.ModuleList(EncoderLayer(d, cfg.num_heads, cfg.dropout) for _ in range(cfg.num_layers))
            self.dropout = nn.Dropout(cfg.dropout)
        else:
            self.lstm = nn.LSTM(d, d, num_layers=1, bidirectional=True, batch_first=True)
            init_lstm_(self.lstm)
        if cfg.use_speaker_role:
            self.role = nn.Embedding(2, d)
            nn.init.normal_(self.role.weight, std=0.02)

    def forward(self, utts: torch.Tensor, lengths: torch.Tensor, roles: torch.Tensor | None = None) -> torch.Tensor:
        B, N, d = utts.shape
        if d != self.cfg.d_model:
            raise ConfigError(f"conversation encoder expects d_model={self.cfg.d_model}, got {d}")
        if int(lengths.max()) > self.cfg.n_max:
            raise DataError(f"context of {int(lengths.max())} utterances exceeds n_max={self.cfg.n_max}")
        if int(lengths.min()) < 1:
            raise DataError("empty context")
        x = utts
        if self.cfg.use_speaker_role:
            if roles is None:
                raise ConfigError("speaker roles required when use_speaker_role is set")
            x = x + self.role(roles)
        if self.cfg.variant == "transformer":
            last = (lengths - 1).to(torch.long)
            x = self.dropout(x + self.position[:N])
            valid = lengths_to_mask(lengths, N)
            for layer in self.layers:
                x = layer(x, valid)
            return x[torch.arange(B), last]
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        return h_n[0] + h_n[1]
