import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hierslu.errors import ConfigError, NumericalDomainError
from hierslu.losses import (Classifier, LossWeights, bce_multilabel, classify, contrastive_loss, euclidean_loss,
                            similarity_matrix)

D = torch.float64


def t(x):
    return torch.tensor(x, dtype=D)


def test_bce_zero_logits_is_ln2():
    y = torch.randint(0, 2, (5, 16), generator=torch.Generator().manual_seed(0))
    assert abs(bce_multilabel(torch.zeros(5, 16, dtype=D), y).item() - math.log(2)) < 1e-12


def test_bce_saturated_logits():
    y = torch.randint(0, 2, (4, 16), generator=torch.Generator().manual_seed(1))
    logits = torch.where(y.bool(), 40.0, -40.0).to(D)
    assert bce_multilabel(logits, y).item() < 1e-10


def test_bce_hand_value():
    # both entries contribute softplus(-1)
    value = bce_multilabel(t([[1.0, -1.0]]), t([[1.0, 0.0]])).item()
    assert value == pytest.approx(math.log1p(math.exp(-1)), abs=1e-15)
    assert value == pytest.approx(0.31326, abs=1e-5)


def test_bce_stable_for_extreme_logits():
    value = bce_multilabel(t([[1e4, -1e4]]), t([[0.0, 1.0]])).item()
    assert math.isfinite(value) and value == pytest.approx(1e4)


def test_bce_shape_mismatch():
    with pytest.raises(ConfigError):
        bce_multilabel(torch.zeros(2, 3), torch.zeros(3, 2))


def test_euclidean_examples():
    x = torch.randn(4, 6, dtype=D)
    assert euclidean_loss(x, x.clone()).item() == 0.0
    s = torch.zeros(1, 8, dtype=D)
    s[0, 0], s[0, 1] = 3.0, 4.0
    assert euclidean_loss(s, torch.zeros(1, 8, dtype=D)).item() == 5.0
    a = torch.zeros(2, 3, dtype=D)
    b = t([[1.0, 0, 0], [0, 3.0, 0]])
    assert euclidean_loss(a, b).item() == 2.0


def test_contrastive_single_aligned_pair_is_zero():
    u = torch.randn(1, 5, dtype=D)
    assert abs(contrastive_loss(u, u.clone(), 0.07).item()) < 1e-12


def test_contrastive_all_equal_is_log_batch():
    u = torch.randn(1, 5, dtype=D).repeat(4, 1)
    assert contrastive_loss(u, u.clone(), 0.07).item() == pytest.approx(math.log(4), abs=1e-9)


def test_contrastive_orthonormal_hand_value():
    e = torch.eye(2, dtype=D)
    s = similarity_matrix(e, e, 1.0)
    np.testing.assert_array_equal(s.numpy(), np.eye(2))
    assert contrastive_loss(e, e.clone(), 1.0).item() == pytest.approx(math.log1p(math.exp(-1)), abs=1e-14)


def test_contrastive_zero_norm_reports_index():
    s = torch.randn(3, 4, dtype=D)
    s[2] = 0
    with pytest.raises(NumericalDomainError) as err:
        contrastive_loss(s, torch.randn(3, 4, dtype=D))
    assert err.value.batch_index == 2


def test_contrastive_rejects_bad_temperature():
    with pytest.raises(ConfigError):
        contrastive_loss(torch.randn(2, 3), torch.randn(2, 3), 0.0)
    with pytest.raises(ConfigError):
        LossWeights(temperature=-1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), i=st.integers(0, 4), c=st.floats(1e-3, 1e3), side=st.booleans())
def test_contrastive_scale_invariant(seed, i, c, side):
    g = torch.Generator().manual_seed(seed)
    s = torch.randn(5, 6, generator=g, dtype=D)
    tx = torch.randn(5, 6, generator=g, dtype=D)
    base = contrastive_loss(s, tx, 0.07).item()
    if side:
        s = s.clone()
        s[i] *= c
    else:
        tx = tx.clone()
        tx[i] *= c
    assert abs(contrastive_loss(s, tx, 0.07).item() - base) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), B=st.integers(1, 7), tau=st.floats(0.01, 2.0))
def test_contrastive_symmetric_in_modalities(seed, B, tau):
    g = torch.Generator().manual_seed(seed)
    s, tx = torch.randn(B, 4, generator=g, dtype=D), torch.randn(B, 4, generator=g, dtype=D)
    a = contrastive_loss(s, tx, tau, detach_text=False).item()
    b = contrastive_loss(tx, s, tau, detach_text=False).item()
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0


def test_cross_modal_losses_do_not_reach_text_side():
    s = torch.randn(4, 6, dtype=D, requires_grad=True)
    tx = torch.randn(4, 6, dtype=D, requires_grad=True)
    (euclidean_loss(s, tx) + contrastive_loss(s, tx)).backward()
    assert tx.grad is None
    assert s.grad.abs().sum() > 0


def test_classify_zero_and_identity():
    head = Classifier(4, 4).to(D)
    c = torch.randn(3, 4, dtype=D)
    with torch.no_grad():
        head.linear.weight.zero_()
        head.linear.bias.zero_()
    assert torch.all(classify(c, head) == 0)
    with torch.no_grad():
        head.linear.weight.copy_(torch.eye(4, dtype=D))
    assert torch.equal(classify(c, head), c)


def test_classify_matches_matrix_vector_oracle():
    head = Classifier(5, 3).to(D)
    c = torch.randn(2, 5, dtype=D)
    W = head.linear.weight.detach().numpy()
    b = head.linear.bias.detach().numpy()
    expected = np.array([[sum(W[j, k] * row[k] for k in range(5)) + b[j] for j in range(3)] for row in c.numpy()])
    np.testing.assert_allclose(classify(c, head).detach().numpy(), expected, atol=1e-14)
