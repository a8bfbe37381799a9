"""
Shared fixtures built on the micro corpus and models in ``tests.builders``.
"""

import pytest

from icred.corpus import build_vocabulary, synth_generate

from tests.builders import FIXTURES, MICRO_SYNTH, micro_model


@pytest.fixture
def synth_corpus():
    return synth_generate(MICRO_SYNTH, seed=7)


@pytest.fixture
def micro_vocab(synth_corpus):
    return build_vocabulary(synth_corpus)


@pytest.fixture
def micro(micro_vocab):
    return micro_model(micro_vocab)


@pytest.fixture
def instance(synth_corpus):
    return synth_corpus[0]


@pytest.fixture
def sample_log_lines():
    return (FIXTURES / "sample_log.txt").read_text(encoding="utf-8").splitlines()
