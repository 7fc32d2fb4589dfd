"""Bundles the frozen backbone, prompt sets and prototypes into one model."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import crossmodal, prototypes as proto, tensor as T
from .config import TrainConfig, config_hash
from .checkpoint import Checkpoint
from .data import Dataset
from .encoders import (EncoderConfig, FrozenWeights, ImageFeatures,
                       VisualPromptStack, Vocabulary, image_encode,
                       init_frozen_weights)
from .prompts import (ClassDescription, HardPromptSet, SoftPromptSet,
                      build_hard_prompts, build_prompt_text,
                      prompt_level_alignment_loss, textual_alignment_loss,
                      token_level_alignment_loss)
from .tensor import Tensor


def build_vocabulary(class_names: Sequence[str],
                     descriptions: Sequence[ClassDescription]) -> Vocabulary:
    """Vocabulary over every prompt text that can occur, for any template."""
    texts = list(class_names)
    by_name = {d.class_name: d.description for d in descriptions}
    for tc in (1, 2, 3):
        for name in class_names:
            texts.append(build_prompt_text(tc, name, by_name.get(name, "")))
    return Vocabulary.from_corpus(texts)


class PromptModel:
    """Frozen dual encoder plus the trainable prompt parameters."""

    def __init__(self, cfg: TrainConfig, enc_cfg: EncoderConfig,
                 fw: FrozenWeights, vocab: Vocabulary, hard: HardPromptSet,
                 soft: SoftPromptSet, visual_prompts: Optional[VisualPromptStack],
                 prototype_table: proto.PrototypeTable):
        self.cfg = cfg
        self.enc_cfg = enc_cfg
        self.fw = fw
        self.vocab = vocab
        self.hard = hard
        self.soft = soft
        self.visual_prompts = visual_prompts
        self.prototype_table = prototype_table

    @classmethod
    def build(cls, cfg: TrainConfig, train_ds: Dataset,
              descriptions: Sequence[ClassDescription]) -> "PromptModel":
        vocab = build_vocabulary(train_ds.class_names, descriptions)
        enc_cfg = EncoderConfig(vocab_size=vocab.size,
                                image_size=train_ds.images.shape[1],
                                image_channels=train_ds.images.shape[3])
        fw = init_frozen_weights(enc_cfg, cfg.weights_seed)
        hard = build_hard_prompts(descriptions, cfg.template_config, fw, vocab)
        soft = SoftPromptSet(train_ds.class_names, fw, vocab,
                             context_len=cfg.context_len, seed=cfg.train_seed)
        vps = (VisualPromptStack(enc_cfg, cfg.num_visual_prompts,
                                 seed=cfg.train_seed + 1)
               if cfg.use_visual_prompts else None)
        table = proto.compute_prototypes(train_ds.images, train_ds.labels, fw,
                                         cfg.prototype_subset, cfg.prototype_seed)
        return cls(cfg, enc_cfg, fw, vocab, hard, soft, vps, table)

    # -- parameters --------------------------------------------------------

    def trainable_tensors(self) -> list[Tensor]:
        params = [self.soft.context]
        if self.visual_prompts is not None:
            params.append(self.visual_prompts.tokens)
        return params

    def trainable_parameter_count(self) -> int:
        return sum(p.size for p in self.trainable_tensors())

    # -- forward -----------------------------------------------------------

    def encode_images(self, images: Tensor) -> ImageFeatures:
        return image_encode(self.fw, images, self.visual_prompts)

    def class_logits(self, feats: ImageFeatures, soft_features: Tensor) -> Tensor:
        if self.cfg.use_local_alignment:
            return crossmodal.logits(feats.global_, feats.locals_,
                                     soft_features, self.cfg.k)
        return T.matmul(feats.global_, T.transpose(soft_features, (1, 0)))

    def batch_losses(self, images: Tensor, labels: np.ndarray) -> dict:
        """All loss components plus raw logits for one (possibly taped) batch."""
        cfg = self.cfg
        feats = self.encode_images(images)
        soft_features = self.soft.encode_features(self.fw)
        logit_mat = self.class_logits(feats, soft_features)
        l_vt = crossmodal.image_text_loss(logit_mat, labels, cfg.tau_logits)
        l_ta = token_level_alignment_loss(self.soft, self.hard, cfg.tau)
        l_pa = prompt_level_alignment_loss(soft_features, self.hard.features,
                                           cfg.tau)
        l_t = textual_alignment_loss(l_ta, l_pa)
        l_v = proto.visual_alignment_loss(feats.global_, labels,
                                          self.prototype_table, cfg.metric)
        l_total = crossmodal.total_loss(l_vt, l_t, l_v, cfg.beta, cfg.gamma)
        return {"total": l_total, "vt": l_vt, "ta": l_ta, "pa": l_pa,
                "t": l_t, "v": l_v, "logits": logit_mat}

    def predict_logits(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference logits for a stack of images (no tape, no gradients)."""
        soft_features = self.soft.encode_features(self.fw)
        rows = []
        for start in range(0, len(images), batch_size):
            feats = self.encode_images(Tensor(images[start:start + batch_size]))
            rows.append(self.class_logits(feats, soft_features).data)
        return np.concatenate(rows, axis=0)

    # -- state -------------------------------------------------------------

    def state_checkpoint(self) -> Checkpoint:
        if self.visual_prompts is not None:
            vps = self.visual_prompts.tokens.data.copy()
        else:
            vps = np.zeros((self.enc_cfg.num_layers, self.cfg.num_visual_prompts,
                            self.enc_cfg.embed_dim), dtype=np.float32)
        return Checkpoint(soft_context=self.soft.context.data.copy(),
                          visual_prompts=vps,
                          prototypes=self.prototype_table.table.data.copy(),
                          weights_seed=self.cfg.weights_seed,
                          config_hash=config_hash(self.cfg))

    def load_state(self, ckpt: Checkpoint) -> None:
        own_hash = config_hash(self.cfg)
        if ckpt.config_hash != own_hash:
            raise ValueError(f"checkpoint config hash {ckpt.config_hash} does not "
                             f"match current config hash {own_hash}")
        self.soft.context.data[...] = ckpt.soft_context
        if self.visual_prompts is not None:
            self.visual_prompts.tokens.data[...] = ckpt.visual_prompts
        self.prototype_table.table.data[...] = ckpt.prototypes
