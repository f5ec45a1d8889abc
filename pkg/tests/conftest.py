import numpy as np
import pytest
import torch

from hierslu.data import GeneratorSettings, generate_corpus
from hierslu.model import ModelConfig, prepare

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_settings():
    return GeneratorSettings(n_train=6, n_dev=3, n_test=3, min_utterances=3, max_utterances=6,
                             num_labels=8, num_topics=2, vocab_size=20, base_dim=3, mean_token_frames=2,
                             max_filler_tokens=1, p_hist=0.8, reveal_every=3)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_settings):
    return generate_corpus(tiny_settings, seed=7)


@pytest.fixture(scope="session")
def tiny_prepared(tiny_corpus):
    return prepare(tiny_corpus.train), prepare(tiny_corpus.dev), prepare(tiny_corpus.test)


@pytest.fixture
def tiny_model_cfg(tiny_settings):
    return ModelConfig(base_dim=tiny_settings.base_dim, vocab_size=tiny_settings.vocab_size,
                       num_labels=tiny_settings.num_labels, d_model=8, speech_hidden=4, text_layers=1,
                       text_heads=2, max_tokens=16, conversation_layers=1, n_max=4, dropout=0.1)


@pytest.fixture
def f64_cfg(tiny_model_cfg):
    import dataclasses

    return dataclasses.replace(tiny_model_cfg, dtype="float64", dropout=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, summary): acceptance criterion check")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    number, summary = marker.args
    ok = call.excinfo is None
    prev = _ACCEPTANCE.get(number, (True, summary))
    _ACCEPTANCE[number] = (prev[0] and ok, summary)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, summary = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {summary}")
