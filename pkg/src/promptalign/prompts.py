"""Hard prompt construction, learnable soft prompts, and soft-hard alignment losses.

Hard prompts combine a generic template, the class name, and an LLM-generated
description of the class's distinguishing visual cues.  They are tokenized,
embedded and encoded once, then held constant; soft prompts are pulled toward
them by a token-level and a prompt-level contrastive loss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .encoders import (BOS_ID, EOS_ID, FrozenWeights, Vocabulary, embed_tokens,
                       text_encode, tokenize)
from .tensor import Tensor

TEMPLATES = {
    1: "a photo of {name}",
    2: "a photo of a person making a facial expression of {name}",
    3: "a photo of a person making a facial expression of {name}, {description}",
}


class DescriptionSource(Enum):
    FIXTURE_FILE = "fixture_file"
    REMOTE_LLM = "remote_llm"


@dataclass
class ClassDescription:
    class_name: str
    description: str
    source: DescriptionSource


@dataclass
class ProviderConfig:
    """Where class descriptions come from: a fixtures file, a remote LLM, or both."""
    fixtures_path: Optional[str] = None
    base_url: Optional[str] = None
    api_key_env: str = "PROMPTALIGN_LLM_API_KEY"
    model: str = "gpt-3.5-turbo"
    timeout: float = 30.0

    @property
    def has_remote(self) -> bool:
        return bool(self.base_url)


QUERY_TEMPLATE = ("What are the most useful visual features to distinguish "
                  "the facial expression of {name}?")


def parse_fixtures(path) -> dict[str, str]:
    """Parse a blank-line separated fixtures file: name line, then description lines."""
    out: dict[str, str] = {}
    block: list[str] = []
    block_start = 0
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if line:
            if not block:
                block_start = lineno
            block.append(line)
            continue
        if block:
            _store_block(out, block, path, block_start)
            block = []
    if block:
        _store_block(out, block, path, block_start)
    return out


def _store_block(out: dict[str, str], block: list[str], path, lineno: int):
    if len(block) < 2:
        raise ValueError(f"{path}:{lineno}: class '{block[0]}' has no description lines")
    name = block[0].lower()
    if name in out:
        raise ValueError(f"{path}:{lineno}: duplicate class '{name}'")
    out[name] = " ".join(block[1:])


def write_fixtures(path, descriptions: dict[str, str]) -> None:
    lines = []
    for name in descriptions:
        lines.append(name)
        lines.append(descriptions[name])
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def fetch_descriptions(provider: ProviderConfig,
                       class_names: Sequence[str]) -> list[ClassDescription]:
    """Resolve one description per class from fixtures and/or a remote LLM.

    Fixture hits never touch the network; remote responses are appended to the
    fixtures file so subsequent calls are offline-reproducible.
    """
    cached: dict[str, str] = {}
    if provider.fixtures_path and Path(provider.fixtures_path).exists():
        cached = parse_fixtures(provider.fixtures_path)
    results: list[ClassDescription] = []
    fetched: dict[str, str] = {}
    for name in class_names:
        key = name.lower()
        if key in cached:
            results.append(ClassDescription(name, cached[key],
                                            DescriptionSource.FIXTURE_FILE))
            continue
        if not provider.has_remote:
            raise ValueError(f"no description for class '{name}': "
                             f"not in fixtures and no remote LLM configured")
        try:
            text = _query_remote(provider, name)
        except Exception as exc:
            raise ValueError(f"no description for class '{name}': "
                             f"remote request failed ({exc}) and class missing "
                             f"from fixtures") from exc
        fetched[key] = text
        results.append(ClassDescription(name, text, DescriptionSource.REMOTE_LLM))
    if fetched and provider.fixtures_path:
        cached.update(fetched)
        write_fixtures(provider.fixtures_path, cached)
    return results


def _query_remote(provider: ProviderConfig, class_name: str) -> str:
    import requests

    headers = {}
    key = os.environ.get(provider.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = requests.post(
        provider.base_url,
        json={"model": provider.model,
              "prompt": QUERY_TEMPLATE.format(name=class_name)},
        headers=headers, timeout=provider.timeout)
    resp.raise_for_status()
    body = resp.json()
    text = body.get("text") or body.get("response")
    if not text:
        raise ValueError(f"remote LLM response missing 'text' field: {body}")
    return text.strip()


def build_prompt_text(template_config: int, class_name: str, description: str) -> str:
    if template_config not in TEMPLATES:
        raise ValueError(f"template_config must be one of {sorted(TEMPLATES)}, "
                         f"got {template_config}")
    return TEMPLATES[template_config].format(name=class_name, description=description)


class HardPromptSet:
    """Per-class hard prompt texts with frozen embeddings and encoded features."""

    def __init__(self, class_names, texts, pooled: Tensor, features: Tensor):
        self.class_names = list(class_names)
        self.texts = list(texts)
        self.pooled = pooled        # [C, embed_dim], constant
        self.features = features    # [C, projection_dim], constant, unit rows

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def build_hard_prompts(descriptions: Sequence[ClassDescription],
                       template_config: int, fw: FrozenWeights,
                       vocab: Vocabulary) -> HardPromptSet:
    texts, pooled_rows, feat_rows = [], [], []
    for d in descriptions:
        text = build_prompt_text(template_config, d.class_name, d.description)
        texts.append(text)
        ids = tokenize(text, vocab, fw.config.max_text_len)
        emb = embed_tokens(fw, ids)
        pooled_rows.append(emb.data.mean(axis=0))
        feat_rows.append(text_encode(fw, emb).data)
    pooled = Tensor(np.stack(pooled_rows))
    features = Tensor(np.stack(feat_rows))
    return HardPromptSet([d.class_name for d in descriptions], texts, pooled, features)


class SoftPromptSet:
    """Shared learnable context vectors plus frozen per-class name embeddings.

    The per-class sequence is [BOS, context vectors, class-name tokens, EOS];
    only the context matrix trains.
    """

    def __init__(self, class_names: Sequence[str], fw: FrozenWeights,
                 vocab: Vocabulary, context_len: int = 10, seed: int = 0,
                 std: float = 0.02):
        rng = np.random.default_rng(seed)
        self.class_names = list(class_names)
        self.context = Tensor(
            rng.standard_normal((context_len, fw.config.embed_dim)).astype(np.float32) * std,
            requires_grad=True)
        self._bos = embed_tokens(fw, [BOS_ID])
        self._eos = embed_tokens(fw, [EOS_ID])
        self._name_embeds = []
        for name in self.class_names:
            ids = tokenize(name, vocab, fw.config.max_text_len)[1:-1]  # words only
            self._name_embeds.append(embed_tokens(fw, ids))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def sequence(self, c: int) -> Tensor:
        return T.concat([self._bos, self.context, self._name_embeds[c], self._eos],
                        axis=0)

    def pooled_embeddings(self) -> Tensor:
        """[C, embed_dim]; mean over each class's token embeddings."""
        rows = [T.reshape(T.mean(self.sequence(c), axis=0), (1, -1))
                for c in range(self.num_classes)]
        return T.concat(rows, axis=0)

    def encode_features(self, fw: FrozenWeights) -> Tensor:
        """[C, projection_dim]; per-class text-encoder features, unit rows."""
        rows = [T.reshape(text_encode(fw, self.sequence(c)), (1, -1))
                for c in range(self.num_classes)]
        return T.concat(rows, axis=0)


def contrastive_alignment_loss(soft_mat: Tensor, hard_mat: Tensor,
                               tau: float) -> Tensor:
    """Mean cross-entropy of each hard anchor's soft-similarity column.

    Column d of the C x C cosine matrix sim(soft_c, hard_d) / tau is treated
    as a C-way classification of the soft prompts against hard anchor d, with
    target class d.
    """
    if soft_mat.shape != hard_mat.shape:
        raise ValueError(f"alignment loss: class mismatch {soft_mat.shape} "
                         f"vs {hard_mat.shape}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    c = soft_mat.shape[0]
    sims = T.matmul(T.l2_normalize(soft_mat),
                    T.transpose(T.l2_normalize(hard_mat), (1, 0)))
    logits = T.scale(T.transpose(sims, (1, 0)), 1.0 / tau)  # rows indexed by d
    return T.softmax_cross_entropy_rows(logits, np.arange(c))


def token_level_alignment_loss(soft: SoftPromptSet, hard: HardPromptSet,
                               tau: float) -> Tensor:
    if soft.num_classes != hard.num_classes:
        raise ValueError(f"class count mismatch: soft {soft.num_classes} "
                         f"vs hard {hard.num_classes}")
    return contrastive_alignment_loss(soft.pooled_embeddings(), hard.pooled, tau)


def prompt_level_alignment_loss(soft_features: Tensor, hard_features: Tensor,
                                tau: float) -> Tensor:
    return contrastive_alignment_loss(soft_features, hard_features, tau)


def textual_alignment_loss(token_loss: Tensor, prompt_loss: Tensor) -> Tensor:
    return T.add(token_loss, prompt_loss)
