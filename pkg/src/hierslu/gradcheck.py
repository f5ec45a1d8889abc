"""Central finite-difference verification of autograd gradients.

Every check runs at float64 with dropout and DropFrame off. The composed
model is checked on the full HIER-ST objective; its cross-modal terms see
the text embeddings as constants, so the numeric side holds them frozen at
their unperturbed values. The recurrent variant re-checks only the
conversation encoder and classifier. A tensor
passes when ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, 1e-8)
is below the tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .data import GeneratorSettings, generate_corpus
from .losses import LossWeights, bce_multilabel, contrastive_loss, euclidean_loss
from .model import HierarchicalModel, ModelConfig, make_batch, prepare
from .training import compute_losses

ABS_FLOOR = 1e-8


@dataclass
class TensorCheck:
    case: str
    name: str
    shape: tuple
    analytic_norm: float
    numeric_norm: float
    rel_error: float
    passed: bool


def numeric_gradient(fn: Callable[[], torch.Tensor], p: torch.Tensor, step: float) -> np.ndarray:
    grad = np.zeros(p.shape)
    flat = p.data.view(-1)
    g = grad.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            g[i] = (up - down) / (2 * step)
    return grad


def check_gradients(case: str, fn: Callable[[], torch.Tensor], named: Sequence[tuple], step: float = 1e-5,
                    tolerance: float = 1e-4) -> list[TensorCheck]:
    tensors = [p for _, p in named]
    for p in tensors:
        p.grad = None
    fn().backward()
    analytic = [p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(p.shape) for p in tensors]
    out = []
    for (name, p), a in zip(named, analytic):
        n = numeric_gradient(fn, p, step)
        an, nn_ = float(np.linalg.norm(a)), float(np.linalg.norm(n))
        err = float(np.linalg.norm(a - n)) / max(an, nn_, ABS_FLOOR)
        out.append(TensorCheck(case, name, tuple(p.shape), an, nn_, err, err < tolerance))
    return out


def toy_model_config(d_model=8, base_dim=2, hidden=4, vocab_size=12, variant="transformer") -> ModelConfig:
    return ModelConfig(
        base_dim=base_dim, vocab_size=vocab_size, num_labels=6, d_model=d_model, speech_hidden=hidden,
        speech_layers=2, text_layers=1, text_heads=2, max_tokens=8, conversation_variant=variant,
        conversation_layers=1, conversation_heads=1, n_max=3, dropout=0.0, dtype="float64",
    )


def toy_batch(model_cfg: ModelConfig, batch: int = 3, max_frames: int = 6, seed: int = 0):
    """One conversation of ``batch`` utterances, each of at most ``max_frames`` base frames."""
    settings = GeneratorSettings(
        n_train=1, n_dev=1, n_test=1, min_utterances=batch, max_utterances=batch,
        num_labels=model_cfg.num_labels, num_topics=2, vocab_size=model_cfg.vocab_size,
        base_dim=model_cfg.base_dim, mean_token_frames=1, max_filler_tokens=1, p_hist=1.0, reveal_every=2,
    )
    corpus = generate_corpus(settings, seed)
    conv = corpus.train[0]
    rng = np.random.default_rng(seed)
    utts = []
    for u in conv.utterances:
        frames = u.speech.frames[:max_frames]
        frames = frames + 0.1 * rng.standard_normal(frames.shape)
        utts.append(type(u)(u.id, u.speaker, type(u.speech)(frames, u.speech.frame_period_ms), u.labels, u.transcript))
    conv = type(conv)(conv.id, tuple(utts))
    return make_batch(prepare([conv]), model_cfg.n_max)


def _perturb_(model: HierarchicalModel, seed: int) -> None:
    # non-trivial biases/norm params so every tensor carries gradient signal
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def run_gradcheck(d_model=8, base_dim=2, hidden=4, vocab_size=12, batch=3, max_frames=6,
                  step=1e-5, tolerance=1e-4, seed=0) -> list[TensorCheck]:
    results = []
    gen = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float64)

    logits = rand(batch, 5).requires_grad_()
    targets = (rand(batch, 5) > 0).to(torch.float64)
    results += check_gradients("bce", lambda: bce_multilabel(logits, targets), [("logits", logits)], step, tolerance)

    u_s = rand(batch, d_model).requires_grad_()
    u_t = rand(batch, d_model)
    results += check_gradients("euclidean", lambda: euclidean_loss(u_s, u_t), [("speech_embeddings", u_s)], step, tolerance)
    results += check_gradients("contrastive", lambda: contrastive_loss(u_s, u_t, 0.07),
                               [("speech_embeddings", u_s)], step, tolerance)

    for variant in ("transformer", "recurrent"):
        cfg = toy_model_config(d_model, base_dim, hidden, vocab_size, variant)
        torch.manual_seed(seed)
        model = HierarchicalModel(cfg)
        _perturb_(model, seed)
        model.eval()
        b = toy_batch(cfg, batch, max_frames, seed)
        weights = LossWeights(1.0, 1.0, 0.07)
        with torch.no_grad():
            anchor = model.encode_utterances(b, "text").clone()

        def fn():
            return compute_losses(model, b, "HIER-ST", weights, text_anchor=anchor)["total"]

        named = list(model.named_parameters())
        if variant != "transformer":
            # utterance encoders are identical across variants and already covered
            named = [(n, p) for n, p in named if n.startswith(("conversation.", "classifier."))]
        results += check_gradients(f"model[{variant}]", fn, named, step, tolerance)
    return results


def format_report(results: Sequence[TensorCheck]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.case:<22} {r.name:<55} rel_err={r.rel_error:.2e}  |g|={r.analytic_norm:.3e}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} tensors passed")
    return "\n".join(lines)
