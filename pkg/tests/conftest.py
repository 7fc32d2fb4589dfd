import numpy as np
import pytest

from promptalign.config import TrainConfig
from promptalign.data import SyntheticDatasetSpec, generate_split
from promptalign.encoders import EncoderConfig, init_frozen_weights
from promptalign.prompts import ProviderConfig, fetch_descriptions

FIXTURES_7 = "fixtures/descriptions_7.txt"


@pytest.fixture(scope="session")
def tiny_spec():
    return SyntheticDatasetSpec(num_classes=7, samples_per_class=4,
                                test_per_class=2, sigma_bg=0.5)


@pytest.fixture(scope="session")
def tiny_data(tiny_spec):
    return {split: generate_split(tiny_spec, split)
            for split in ("train", "val", "test")}


@pytest.fixture(scope="session")
def descriptions(tiny_data):
    provider = ProviderConfig(fixtures_path=FIXTURES_7)
    return fetch_descriptions(provider, tiny_data["train"].class_names)


@pytest.fixture(scope="session")
def tiny_config():
    return TrainConfig(epochs=2, k=4, batch_size=8)


@pytest.fixture(scope="session")
def small_encoder():
    cfg = EncoderConfig(embed_dim=16, num_layers=2, num_heads=2, mlp_ratio=2,
                        image_size=8, patch_size=4, vocab_size=64,
                        max_text_len=20, projection_dim=8)
    return cfg, init_frozen_weights(cfg, seed=11)
