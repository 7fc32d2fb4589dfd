import numpy as np
import pytest

from promptalign import tensor as T
from promptalign.encoders import (BOS_ID, EOS_ID, UNK_ID, EncoderConfig,
                                  VisualPromptStack, Vocabulary, embed_tokens,
                                  image_encode, init_frozen_weights,
                                  text_encode, tokenize)
from promptalign.tensor import Tape, Tensor


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        EncoderConfig(embed_dim=10, num_heads=4)
    with pytest.raises(ValueError, match="divisible"):
        EncoderConfig(image_size=30, patch_size=8)
    cfg = EncoderConfig()
    assert cfg.grid_size == 4 and cfg.num_local == 16 and cfg.head_dim == 16


def test_vocabulary_sorted_and_stable():
    v = Vocabulary.from_corpus(["the happy face", "a happy smile"])
    assert v.words == sorted(set(v.words))
    assert v.word_id("happy") == v.word_id("happy")
    assert v.word_id("zzz-unseen") == UNK_ID
    assert v.size == 3 + len(v.words)


def test_tokenize_bos_eos_and_truncation():
    v = Vocabulary.from_corpus(["one two three four five"])
    ids = tokenize("one two", v)
    assert ids[0] == BOS_ID and ids[-1] == EOS_ID and len(ids) == 4
    long = tokenize("one two three four five", v, max_len=4)
    assert len(long) == 4 and long[-1] == EOS_ID and long[0] == BOS_ID


def test_tokenize_lowercases_and_strips_punctuation():
    v = Vocabulary.from_corpus(["happy face"])
    assert tokenize("Happy, FACE!", v) == tokenize("happy face", v)


def test_frozen_weights_deterministic(small_encoder):
    cfg, fw = small_encoder
    again = init_frozen_weights(cfg, seed=11)
    assert fw.checksum() == again.checksum()
    other = init_frozen_weights(cfg, seed=12)
    assert fw.checksum() != other.checksum()


def test_frozen_weights_not_trainable(small_encoder):
    _, fw = small_encoder
    assert all(not t.requires_grad for t in fw.params.values())


def test_embed_tokens_constant(small_encoder):
    _, fw = small_encoder
    emb = embed_tokens(fw, [BOS_ID, 5, EOS_ID])
    assert emb.shape == (3, fw.config.embed_dim)
    assert not emb.requires_grad


def test_text_encode_unit_norm_and_determinism(small_encoder):
    cfg, fw = small_encoder
    emb = embed_tokens(fw, [BOS_ID, 4, 5, EOS_ID])
    out = text_encode(fw, emb)
    assert out.shape == (cfg.projection_dim,)
    assert np.linalg.norm(out.data) == pytest.approx(1.0, abs=1e-5)
    assert np.array_equal(out.data, text_encode(fw, emb).data)


def test_text_encode_eos_pooling_position_matters(small_encoder):
    _, fw = small_encoder
    emb = embed_tokens(fw, [BOS_ID, 4, 5, 6, EOS_ID])
    full = text_encode(fw, emb)
    mid = text_encode(fw, emb, eos_index=2)
    assert not np.allclose(full.data, mid.data)


def test_text_encode_length_validation(small_encoder):
    cfg, fw = small_encoder
    with pytest.raises(ValueError, match="length"):
        text_encode(fw, embed_tokens(fw, [BOS_ID]))
    too_long = embed_tokens(fw, [BOS_ID] * (cfg.max_text_len + 1))
    with pytest.raises(ValueError, match="length"):
        text_encode(fw, too_long)
    with pytest.raises(ValueError, match="expected"):
        text_encode(fw, Tensor(np.zeros((4, cfg.embed_dim + 1), np.float32)))


def _images(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(
        (n, cfg.image_size, cfg.image_size, cfg.image_channels)
    ).astype(np.float32)


def test_image_encode_shapes_and_norms(small_encoder):
    cfg, fw = small_encoder
    feats = image_encode(fw, Tensor(_images(cfg, 3)))
    assert feats.global_.shape == (3, cfg.projection_dim)
    assert feats.locals_.shape == (3, cfg.num_local, cfg.projection_dim)
    np.testing.assert_allclose(np.linalg.norm(feats.global_.data, axis=-1),
                               1.0, atol=1e-5)
    np.testing.assert_allclose(np.linalg.norm(feats.locals_.data, axis=-1),
                               1.0, atol=1e-5)


def test_image_encode_single_matches_batch(small_encoder):
    cfg, fw = small_encoder
    imgs = _images(cfg, 2)
    batch = image_encode(fw, Tensor(imgs))
    one = image_encode(fw, Tensor(imgs[0]))
    np.testing.assert_allclose(one.global_.data[0], batch.global_.data[0],
                               atol=1e-5)


def test_image_encode_shape_validation(small_encoder):
    cfg, fw = small_encoder
    bad = np.zeros((1, cfg.image_size + 1, cfg.image_size, 1), np.float32)
    with pytest.raises(ValueError, match="image_encode"):
        image_encode(fw, Tensor(bad))


def test_visual_prompts_change_features_not_shapes(small_encoder):
    cfg, fw = small_encoder
    imgs = Tensor(_images(cfg, 2))
    plain = image_encode(fw, imgs)
    vps = VisualPromptStack(cfg, num_prompts=3, seed=7)
    assert vps.tokens.shape == (cfg.num_layers, 3, cfg.embed_dim)
    prompted = image_encode(fw, imgs, vps)
    # prompt outputs are discarded each layer, so local count is unchanged
    assert prompted.locals_.shape == plain.locals_.shape
    assert prompted.global_.shape == plain.global_.shape
    assert not np.allclose(prompted.global_.data, plain.global_.data)


def test_zero_std_prompts_still_perturb_via_positions(small_encoder):
    # even zero-initialized prompts participate in attention, so the
    # prompted forward pass is a genuinely different function
    cfg, fw = small_encoder
    imgs = Tensor(_images(cfg, 1))
    vps = VisualPromptStack(cfg, num_prompts=2, seed=0, std=0.0)
    plain = image_encode(fw, imgs)
    prompted = image_encode(fw, imgs, vps)
    assert not np.allclose(prompted.global_.data, plain.global_.data)


def test_prompt_gradients_flow_frozen_stay_frozen(small_encoder):
    cfg, fw = small_encoder
    imgs = Tensor(_images(cfg, 2))
    vps = VisualPromptStack(cfg, num_prompts=2, seed=3)
    with Tape() as tape:
        feats = image_encode(fw, imgs, vps)
        tape.backward(T.sum_(feats.global_))
    assert vps.tokens.grad is not None
    assert np.abs(vps.tokens.grad).max() > 0
    assert all(t.grad is None for t in fw.params.values())


def test_visual_prompt_stack_validation_and_determinism(small_encoder):
    cfg, _ = small_encoder
    with pytest.raises(ValueError, match="num_prompts"):
        VisualPromptStack(cfg, num_prompts=0)
    a = VisualPromptStack(cfg, num_prompts=4, seed=5)
    b = VisualPromptStack(cfg, num_prompts=4, seed=5)
    assert np.array_equal(a.tokens.data, b.tokens.data)
    assert a.tokens.requires_grad
