"""Shared fixtures: templated toy corpora and small model configurations.

The toy corpus is built from subject-verb-object templates so every
"paraphrase" is a deterministic rephrasing; negatives pair an input with
a reference from a different template.
"""

import itertools

import pytest

from parawgan.corpus import (NEGATIVE, POSITIVE, PairCorpus, SentencePair,
                             build_vocabulary, encode_sentence, tokenize)
from parawgan.trainer import TrainConfig

SUBJECTS = ["cat", "dog", "bird", "fish", "horse"]
VERBS = ["eats", "sees", "likes", "finds"]
OBJECTS = ["apple", "ball", "food", "toy"]


def rephrasings(s, v, o):
    base = f"the {s} {v} the {o}"
    return base, [
        f"the {o} is {v} by the {s}",
        f"it is the {s} that {v} the {o}",
        f"the {s} really {v} the {o}",
        f"the {o} the {s} {v}",
    ]


def templated_corpus(n_inputs, refs_per_input, max_len, with_negatives=True):
    """Vocabulary, PairCorpus and raw input sentences for an SVO template set."""
    combos = list(itertools.product(SUBJECTS, VERBS, OBJECTS))
    if n_inputs > len(combos):
        raise ValueError(f"at most {len(combos)} template inputs available")
    inputs, rows = [], []
    for s, v, o in combos[:n_inputs]:
        base, refs = rephrasings(s, v, o)
        inputs.append(base)
        for r in refs[:refs_per_input]:
            rows.append((base, r, POSITIVE))
    if with_negatives:
        n = len(rows)
        for i in range(n):
            rows.append((rows[i][0], rows[(i + 7) % n][1], NEGATIVE))
    sentences = [tokenize(a) for a, b, l in rows] + [tokenize(b) for a, b, l in rows]
    vocab = build_vocabulary(sentences)
    pairs = [SentencePair(tuple(encode_sentence(vocab, tokenize(a), max_len)),
                          tuple(encode_sentence(vocab, tokenize(b), max_len)),
                          label)
             for a, b, label in rows]
    return vocab, PairCorpus(pairs), inputs


def small_config(**overrides):
    """Training config sized for CPU unit tests; override freely."""
    base = dict(batch_size=8, max_len=8, emb_dim=16, hidden_size=32,
                pattern_dim=8, num_layers=1, seed=0,
                pretrain_steps_ae=0, pretrain_steps_trs=0, adv_steps=0,
                lr_gen=1e-3, lr_critic=1e-3, patience=10_000)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def corpus32():
    """32 positive pairs (16 inputs x 2 references), no negatives, max_len 8."""
    return templated_corpus(16, 2, 8, with_negatives=False)


@pytest.fixture(scope="session")
def corpus200():
    """200 positive + 200 negative pairs (50 inputs x 4 references), max_len 8."""
    return templated_corpus(50, 4, 8, with_negatives=True)
