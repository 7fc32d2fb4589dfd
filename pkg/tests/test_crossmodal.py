import math

import numpy as np
import pytest

from promptalign.crossmodal import (AlignmentConfig, image_text_loss, logits,
                                    topk_indices, topk_sparse_similarity,
                                    total_loss)
from promptalign.tensor import Tape, Tensor


def test_alignment_config_validation():
    with pytest.raises(ValueError, match="k"):
        AlignmentConfig(k=0)
    with pytest.raises(ValueError, match="beta"):
        AlignmentConfig(beta=-0.1)
    with pytest.raises(ValueError, match="tau_logits"):
        AlignmentConfig(tau_logits=0.0)


def test_topk_similarity_hand_values():
    locals_ = Tensor(np.array([[1.0, 0.0],
                               [0.0, 1.0],
                               [-1.0, 0.0],
                               [0.6, 0.8]], np.float32))
    text = Tensor(np.array([1.0, 0.0], np.float32))
    # sims = [1.0, 0.0, -1.0, 0.6]
    assert topk_sparse_similarity(locals_, text, 1).item() == pytest.approx(1.0)
    assert topk_sparse_similarity(locals_, text, 2).item() == pytest.approx(0.8)
    # k larger than the patch count falls back to all patches
    assert topk_sparse_similarity(locals_, text, 9).item() == pytest.approx(0.15)


def test_topk_similarity_validation():
    with pytest.raises(ValueError, match="locals"):
        topk_sparse_similarity(Tensor(np.ones(4)), Tensor(np.ones(4)), 2)


def test_topk_indices_ties_prefer_lower():
    locals_ = np.array([[1.0], [2.0], [2.0], [0.5]], np.float32)
    text = np.array([1.0], np.float32)
    np.testing.assert_array_equal(topk_indices(locals_, text, 2), [1, 2])
    np.testing.assert_array_equal(topk_indices(locals_, text, 1), [1])


def test_topk_gradient_only_through_selected():
    locals_ = Tensor(np.array([[1.0, 0.0],
                               [0.0, 1.0],
                               [0.5, 0.5]], np.float32), requires_grad=True)
    text = Tensor(np.array([1.0, 0.0], np.float32))
    with Tape() as tape:
        tape.backward(topk_sparse_similarity(locals_, text, 1))
    np.testing.assert_allclose(locals_.grad[0], [1.0, 0.0])
    np.testing.assert_array_equal(locals_.grad[1:], 0.0)


def test_logits_decompose_into_global_plus_topk():
    rng = np.random.default_rng(2)
    B, N, P, C, k = 3, 6, 5, 4, 2
    g = rng.standard_normal((B, P)).astype(np.float32)
    loc = rng.standard_normal((B, N, P)).astype(np.float32)
    txt = rng.standard_normal((C, P)).astype(np.float32)
    out = logits(Tensor(g), Tensor(loc), Tensor(txt), k).data
    for b in range(B):
        for c in range(C):
            local = topk_sparse_similarity(Tensor(loc[b]), Tensor(txt[c]), k)
            expected = g[b] @ txt[c] + local.item()
            assert out[b, c] == pytest.approx(expected, abs=1e-5)


def test_logits_shape_validation():
    with pytest.raises(ValueError, match="logits"):
        logits(Tensor(np.ones(4)), Tensor(np.ones((2, 3, 4))),
               Tensor(np.ones((2, 4))), 2)


def test_image_text_loss_uniform_and_scaling():
    B, C = 4, 7
    flat = Tensor(np.zeros((B, C), np.float32))
    labels = np.zeros(B, dtype=np.int64)
    loss = image_text_loss(flat, labels, 0.07)
    assert loss.item() == pytest.approx(math.log(C), abs=1e-5)
    # confident logits at a colder temperature give a smaller loss
    m = np.zeros((B, C), np.float32)
    m[np.arange(B), labels] = 1.0
    warm = image_text_loss(Tensor(m), labels, 0.5).item()
    cold = image_text_loss(Tensor(m), labels, 0.07).item()
    assert cold < warm
    with pytest.raises(ValueError, match="tau_logits"):
        image_text_loss(flat, labels, -1.0)


def test_total_loss_weighted_sum():
    vt, t, v = Tensor(np.float32(2.0)), Tensor(np.float32(3.0)), Tensor(np.float32(5.0))
    assert total_loss(vt, t, v, 1.0, 1.0).item() == pytest.approx(10.0)
    assert total_loss(vt, t, v, 0.5, 0.0).item() == pytest.approx(3.5)
    assert total_loss(vt, t, v, 0.0, 0.0).item() == pytest.approx(2.0)
