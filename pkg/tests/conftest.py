import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from config.app import RESERVED_TOKENS
from services.data import Vocab, write_lines
from services.model import Checkpoint, ModelConfig, init_params
from utils.experiment_config import build_config

TINY_WORDS = ["a", "b", "c"]


def tiny_model_config(vocab_size: int = 7, seed: int = 0, **overrides) -> ModelConfig:
    settings = dict(
        num_layers=1,
        num_heads=2,
        d_model=8,
        d_ff=16,
        source_vocab_size=vocab_size,
        target_vocab_size=vocab_size,
        max_positions=16,
        dropout_rate=0.0,
        seed=seed,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


def sharpened_checkpoint(vocab_size: int, seed: int, scale: float = 4.0) -> Checkpoint:
    """Tiny random model whose output logits are spread widely enough for search to matter."""
    ckpt = init_params(tiny_model_config(vocab_size=vocab_size, seed=seed))
    rng = np.random.default_rng(seed + 1000)
    ckpt.params["output.weight"] = ckpt.params["output.weight"] * scale
    ckpt.params["output.bias"] = rng.normal(0.0, 1.0, size=vocab_size)
    return ckpt


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def tiny_checkpoint(tiny_config):
    return init_params(tiny_config)


@pytest.fixture
def tiny_vocab():
    return Vocab(tuple(RESERVED_TOKENS) + tuple(TINY_WORDS))


@pytest.fixture
def copy_corpus(tmp_path):
    """Copy-task train/dev/test files over a four-word vocabulary."""
    rng = np.random.default_rng(7)
    words = ["w1", "w2", "w3", "w4"]
    folder = tmp_path / "copy"
    for split, count in (("train", 40), ("dev", 6), ("test", 6)):
        lines = [" ".join(rng.choice(words, size=int(rng.integers(2, 5)))) for _ in range(count)]
        write_lines(folder / f"{split}.src", lines)
        write_lines(folder / f"{split}.tgt", lines)
    return folder


@pytest.fixture
def experiment(tmp_path, copy_corpus):
    """Validated experiment settings small enough to train in seconds."""
    return build_config(
        {
            "model": {
                "num_layers": 1,
                "num_heads": 2,
                "d_model": 8,
                "d_ff": 16,
                "max_positions": 16,
                "dropout_rate": 0.0,
            },
            "loss": {"head": "scones", "alpha": 1.0},
            "optimizer": {"total_steps": 4, "warmup_steps": 2, "eval_every": 2, "batch_size": 8},
            "data": {
                "data_dir": str(copy_corpus),
                "max_len": 10,
                "dev_eval_sentences": 6,
                "train_sentences": 30,
                "dev_sentences": 5,
                "test_sentences": 5,
                "source_words": 6,
                "target_words": 6,
                "min_length": 2,
                "max_length": 4,
                "gammas": [0.5, 1.0],
            },
            "decode": {"beam_sizes": [1, 2], "max_states": 2000, "max_len": 6},
            "sweep": {"alphas": [0.5], "include_softmax": True},
            "run": {"seed": 3, "out_dir": str(tmp_path / "runs"), "threads": 1, "record_timings": False},
        }
    )
