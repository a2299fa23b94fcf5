"""Shared fixtures: bundled corpus slices, vocabularies, small trained models."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from xfercomplete import corpus as C
from xfercomplete import tokenizer as T

REPO_ROOT = Path(__file__).resolve().parents[1]
SAMPLE_CORPUS = REPO_ROOT / "data" / "sample_corpus"


def load_partition(language: str, partition: str):
    origin = C.ORIGIN_IDE if partition == "ide" else C.ORIGIN_COMMIT
    return C.load_documents(SAMPLE_CORPUS / language / partition, language, origin)


@pytest.fixture(scope="session")
def curly_ide_docs():
    return load_partition("curly", "ide")


@pytest.fixture(scope="session")
def curly_commit_docs():
    return load_partition("curly", "commit")


@pytest.fixture(scope="session")
def snake_ide_docs():
    return load_partition("snake", "ide")


@pytest.fixture(scope="session")
def curly_ide(curly_ide_docs):
    return C.build_dataset("ide", "curly", documents=curly_ide_docs)


@pytest.fixture(scope="session")
def curly_commit(curly_commit_docs):
    return C.build_dataset("commit", "curly", documents=curly_commit_docs)


@pytest.fixture(scope="session")
def snake_ide(snake_ide_docs):
    return C.build_dataset("ide", "snake", documents=snake_ide_docs)


@pytest.fixture(scope="session")
def curly_vocab(curly_ide, curly_commit):
    return T.build_vocab([curly_ide, curly_commit], cutoff=2)


@pytest.fixture(scope="session")
def curly_events(curly_ide_docs):
    policy = C.EventPolicy(candidate_mean=26.3, sample_rate=0.15)
    return C.synthesize_events(curly_ide_docs, policy, seed=401)


@pytest.fixture(scope="session")
def tiny_model():
    """A small random-weights model compatible with curly_vocab-sized ids."""
    from xfercomplete.model import ModelConfig, TransformerLM, init_params
    cfg = ModelConfig(vocab_size=600, context_len=64, d_model=32, n_heads=4,
                      n_layers=2, d_ff=64, seed=11)
    return TransformerLM(cfg, init_params(cfg, dtype=np.float64))
