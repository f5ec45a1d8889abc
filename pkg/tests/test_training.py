import dataclasses

import numpy as np
import pytest
import torch

from hierslu.encoders import SpeechEncoder, TextEncoder
from hierslu.errors import ConfigError, DataError
from hierslu.features import DropFrameConfig
from hierslu.losses import LossWeights
from hierslu.model import (HierarchicalModel, load_checkpoint, make_batch,
                           parameter_checksum, save_checkpoint)
from hierslu.training import (EarlyStopping, TrainingConfig, benchmark_dropframe, compute_losses,
                              trainable_parameters, train)


def quick(regime="HIER-S", **kw):
    kw.setdefault("max_epochs", 3)
    kw.setdefault("log_train_f1", False)
    return TrainingConfig(regime=regime, learning_rate=3e-3, batch_size=2, **kw)


def test_early_stopping_contract():
    stream = [0.1, 0.3, 0.5, 0.4, 0.45, 0.2, 0.9]
    stopper = EarlyStopping(patience=2)
    stopped_at = None
    for epoch, metric in enumerate(stream, 1):
        stopper.update(epoch, metric)
        if stopper.should_stop(epoch):
            stopped_at = epoch
            break
    assert stopper.best_epoch == 3
    assert stopped_at == 5


def test_early_stopping_ties_do_not_reset():
    stopper = EarlyStopping(patience=1)
    assert stopper.update(1, 0.5)
    assert not stopper.update(2, 0.5)
    assert stopper.should_stop(2)


def test_train_restores_best_epoch(tiny_model_cfg, tiny_prepared):
    from hierslu.evaluation import evaluate

    train_c, dev_c, _ = tiny_prepared
    result = train(tiny_model_cfg, quick(max_epochs=12, patience=2), train_c, dev_c)
    k = result.state.best_epoch
    dev = [h["dev_macro_f1"] for h in result.history]
    assert dev[k - 1] == max(dev)
    assert len(result.history) in (k + 2, 12)
    assert evaluate(result.model, dev_c).macro_f1 == pytest.approx(dev[k - 1], abs=1e-12)


def test_training_is_deterministic(tiny_model_cfg, tiny_prepared):
    train_c, dev_c, _ = tiny_prepared
    cfg = quick("HIER-ST", dropframe=DropFrameConfig(2, True))
    a = train(tiny_model_cfg, cfg, train_c, dev_c)
    b = train(tiny_model_cfg, cfg, train_c, dev_c)
    assert parameter_checksum(a.model) == parameter_checksum(b.model)
    strip = lambda h: [{k: v for k, v in r.items() if not k.endswith("seconds")} for r in h]  # noqa: E731
    assert strip(a.history) == strip(b.history)
    c = train(tiny_model_cfg, dataclasses.replace(cfg, seed=1), train_c, dev_c)
    assert parameter_checksum(a.model) != parameter_checksum(c.model)


def _forbid(monkeypatch, cls):
    def boom(*args, **kwargs):
        raise AssertionError(f"{cls.__name__} must not run under this regime")

    monkeypatch.setattr(cls, "forward", boom)


@pytest.mark.parametrize("regime, idle, idle_cls", [("HIER-S", "text_encoder", TextEncoder),
                                                    ("HIER-T", "speech_encoder", SpeechEncoder)])
def test_regime_parameter_isolation(monkeypatch, tiny_model_cfg, tiny_prepared, regime, idle, idle_cls):
    train_c, dev_c, _ = tiny_prepared
    cfg = quick(regime)
    torch.manual_seed(cfg.seed)
    before = parameter_checksum(HierarchicalModel(tiny_model_cfg).bucket(idle))
    _forbid(monkeypatch, idle_cls)
    result = train(tiny_model_cfg, cfg, train_c, dev_c)
    assert parameter_checksum(result.model.bucket(idle)) == before


def test_hier_s_needs_no_transcripts(tiny_model_cfg, tiny_prepared):
    train_c, dev_c, _ = tiny_prepared
    strip = [dataclasses.replace(c, tokens=[None] * len(c.tokens)) for c in train_c]
    strip_dev = [dataclasses.replace(c, tokens=[None] * len(c.tokens)) for c in dev_c]
    train(tiny_model_cfg, quick("HIER-S", max_epochs=1), strip, strip_dev)
    for regime in ("HIER-T", "HIER-ST"):
        with pytest.raises(ConfigError):
            train(tiny_model_cfg, quick(regime, max_epochs=1), strip, strip_dev)


def _step(model, batch, losses, params, lr=1e-2):
    opt = torch.optim.Adam(params, lr=lr)
    opt.zero_grad()
    sum(losses).backward()
    opt.step()


def test_text_branch_step_moves_speech_contexts(f64_cfg, tiny_prepared):
    train_c, _, _ = tiny_prepared
    batch = make_batch(train_c[:2], f64_cfg.n_max)
    y = torch.as_tensor(batch.labels)
    torch.manual_seed(0)
    model = HierarchicalModel(f64_cfg).eval()
    _, before, _ = model.branch(batch, "speech")
    from hierslu.losses import bce_multilabel

    _step(model, batch, [bce_multilabel(model.branch(batch, "text")[2], y)],
          trainable_parameters(model, TrainingConfig(regime="HIER-T")))
    _, after, _ = model.branch(batch, "speech")
    assert not torch.allclose(before, after)

    # with the shared encoder and head excluded, a text step leaves speech outputs untouched
    _step(model, batch, [bce_multilabel(model.branch(batch, "text")[2], y)], list(model.text_encoder.parameters()))
    _, again, _ = model.branch(batch, "speech")
    assert torch.equal(after, again)


def test_both_branches_drive_shared_encoder(f64_cfg, tiny_prepared):
    train_c, _, _ = tiny_prepared
    batch = make_batch(train_c[:2], f64_cfg.n_max)
    w = LossWeights(0.0, 0.0)

    def phi_after(keep):
        torch.manual_seed(0)
        model = HierarchicalModel(f64_cfg).eval()
        losses = compute_losses(model, batch, "HIER-ST", w)
        _step(model, batch, [losses[k] for k in keep], list(model.parameters()))
        return torch.cat([p.detach().flatten() for p in model.conversation.parameters()])

    both = phi_after(["bce_speech", "bce_text"])
    assert not torch.equal(both, phi_after(["bce_speech"]))
    assert not torch.equal(both, phi_after(["bce_text"]))


@pytest.mark.parametrize("regime", ["HIER-S", "HIER-T", "HIER-ST"])
def test_loss_decreases(tiny_model_cfg, tiny_prepared, regime):
    train_c, dev_c, _ = tiny_prepared
    first, last = [], []
    for seed in range(3):
        r = train(tiny_model_cfg, quick(regime, seed=seed, max_epochs=4), train_c, dev_c, early_stopping=False)
        first.append(r.history[0]["losses"]["total"])
        last.append(r.history[-1]["losses"]["total"])
    assert np.mean(last) < np.mean(first)


def test_freeze_flags(tiny_model_cfg, tiny_prepared):
    model = HierarchicalModel(tiny_model_cfg)
    params = trainable_parameters(model, TrainingConfig(regime="HIER-ST", freeze_speech_encoder=True))
    ids = {id(p) for p in params}
    assert not any(id(p) in ids for p in model.speech_encoder.parameters())
    assert all(id(p) in ids for p in model.text_encoder.parameters())


def test_crossmodal_on_history_flag(f64_cfg, tiny_prepared):
    train_c, _, _ = tiny_prepared
    batch = make_batch(train_c[:2], f64_cfg.n_max)
    torch.manual_seed(0)
    model = HierarchicalModel(f64_cfg).eval()
    w = LossWeights(1.0, 1.0)
    a = compute_losses(model, batch, "HIER-ST", w)
    b = compute_losses(model, batch, "HIER-ST", w, crossmodal_on_history=True)
    assert a["bce_speech"].item() == b["bce_speech"].item()
    assert a["euclidean"].item() != b["euclidean"].item()


def test_training_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(regime="HIER-X")
    with pytest.raises(ConfigError):
        TrainingConfig(patience=0)
    with pytest.raises(ConfigError):
        EarlyStopping(0)


def test_checkpoint_round_trip_exact(tmp_path, f64_cfg):
    torch.manual_seed(5)
    model = HierarchicalModel(f64_cfg)
    save_checkpoint(tmp_path / "ck.npz", model, {"note": 1})
    back, meta = load_checkpoint(tmp_path / "ck.npz", expected=f64_cfg)
    assert meta["extra"] == {"note": 1}
    assert back.cfg == f64_cfg
    for (k, v), (k2, v2) in zip(model.state_dict().items(), back.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    assert parameter_checksum(model) == parameter_checksum(back)


def test_checkpoint_config_mismatch(tmp_path, f64_cfg):
    save_checkpoint(tmp_path / "ck.npz", HierarchicalModel(f64_cfg))
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "ck.npz", expected=dataclasses.replace(f64_cfg, d_model=16))
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.npz")


def test_benchmark_dropframe_table(tiny_model_cfg, tiny_prepared):
    train_c, dev_c, _ = tiny_prepared
    rows = benchmark_dropframe(tiny_model_cfg, quick(), train_c, dev_c, [1, 2, None], epochs=1)
    assert [r["max_len"] for r in rows] == [1, 2, None]
    assert all(r["epoch_seconds"] > 0 and 0 <= r["dev_macro_f1"] <= 1 for r in rows)


def test_batch_structure(tiny_prepared):
    train_c, _, _ = tiny_prepared
    batch = make_batch(train_c[:2], 3)
    n = sum(len(c.frames) for c in train_c[:2])
    assert batch.num_contexts == n == len(batch.frames)
    assert np.array_equal(batch.target, np.arange(n))
    for j in range(n):
        row = batch.context_index[j, : batch.context_lengths[j]]
        assert row[-1] == batch.target[j]
        assert np.all(np.diff(row) == 1)
