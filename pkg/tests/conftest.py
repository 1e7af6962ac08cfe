"""Shared fixtures: a tiny experiment config and seeded draws."""

from typing import Callable

import numpy as np
import pytest

from lib.config import AugmentationSpec, DataConfig, EncoderConfig, TrainConfig
from lib.data import Utterance, generate
from lib.rng import SeededRng


def make_tiny_config(operator: str = "none", **training) -> TrainConfig:
    """Three layers of width 8 over a 3-token vocabulary; trains in seconds."""
    cfg = TrainConfig(
        epochs=2,
        batch_size=4,
        warmup_steps=10,
        lr_factor=1.0,
        checkpoint_avg_k=2,
        encoder=EncoderConfig(
            num_layers=3,
            model_dim=8,
            input_dim=4,
            vocab_size_ext=4,
            intermediate_layers=(1, 2),
            hidden_dim=8,
        ),
        augmentation=AugmentationSpec(operator=operator, w_feat=4),
        data=DataConfig(
            vocab_size=3,
            feature_dim=4,
            label_len_min=2,
            label_len_max=4,
            train_size=12,
            dev_size=4,
            test_size=4,
        ),
    )
    for key, value in training.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return make_tiny_config()


@pytest.fixture
def tiny_corpora(tiny_cfg: TrainConfig) -> dict:
    return {split: generate(tiny_cfg.data.synth_spec(split)) for split in ("train", "dev", "test")}


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(1234, "test")


@pytest.fixture
def random_grid(rng: SeededRng) -> Callable[[int, int], np.ndarray]:
    """Factory for row-stochastic T x |V'| grids."""

    def make(frames: int, size_ext: int) -> np.ndarray:
        logits = rng.normal(1.0, (frames, size_ext))
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    return make


@pytest.fixture
def utterance() -> Utterance:
    features = SeededRng(7, "utt").normal(1.0, (9, 4))
    return Utterance("utt-0", features, (1, 2, 2))
