import os

# Pin BLAS threading before numpy loads anywhere so numeric results and
# timings stay deterministic on any host.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from simrec.corpus import (
    SyntheticConfig,
    build_vocab,
    canonical_sentence,
    generate_synthetic,
)
from simrec.encoder import EncoderConfig


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticConfig(n_sentences=40, seed=7))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus)


@pytest.fixture()
def fig_sentence():
    return canonical_sentence()


@pytest.fixture()
def tiny_config():
    return EncoderConfig(
        d_model=12,
        n_selfattn_layers=1,
        n_gat_layers=2,
        edge_emb_dim=5,
        max_tokens=20,
        max_positions=24,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
