import numpy as np
import pytest

from mintaudit.classifier import AuditedModelSpec, build_model, train
from mintaudit.corpus import make_split, make_synthetic_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small deterministic corpus shared by fast structural tests."""
    return make_synthetic_corpus(3, 12, seed=0)


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return make_split(tiny_corpus, 0.5, seed=1)


@pytest.fixture(scope="session")
def trained_toy():
    """One short training run shared by every stage test downstream."""
    corpus = make_synthetic_corpus(3, 20, seed=0)
    split = make_split(corpus, 0.5, seed=1)
    model = build_model(AuditedModelSpec("paper_cnn", 3), init_seed=0)
    checkpoint, report = train(model, corpus, split, epochs=4, batch_size=16, train_seed=0)
    return corpus, split, checkpoint, report


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
