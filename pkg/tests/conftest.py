"""Shared fixtures: the word-cipher corpus generator used across tests.

A cipher corpus is a synthetic bitext whose target side is a token-level
substitution of the source side (plus optional word noise), so ground-truth
lexical correspondences are known exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from divergescope.corpus import SentencePair


@dataclass
class CipherCorpus:
    pairs: list[SentencePair]
    cipher: dict[str, str]  # e-word -> primary f-word ground truth
    translations: dict[str, tuple[str, ...]]  # full translation sets
    e_vocab: list[str]
    f_vocab: list[str]


def make_cipher_corpus(
    n_pairs: int,
    vocab_size: int = 50,
    min_len: int = 3,
    max_len: int = 12,
    noise: float = 0.1,
    seed: int = 0,
    zipf: float = 1.0,
    synonym_fraction: float = 0.0,
    primary_probability: float = 0.7,
) -> CipherCorpus:
    """Monotone word-for-word cipher bitext with Zipf-distributed vocabulary
    and `noise` probability of replacing a target token at random.

    With `synonym_fraction > 0`, that share of source words gets a second
    translation (drawn from an extra target pool) used with probability
    1 - primary_probability: translation ambiguity that a discrete dictionary
    at threshold 0.5 cannot fully capture.
    """
    rng = random.Random(seed)
    e_vocab = [f"src{i:02d}" for i in range(vocab_size)]
    n_synonyms = round(synonym_fraction * vocab_size)
    f_vocab = [f"tgt{i:02d}" for i in range(vocab_size + n_synonyms)]
    permutation = list(range(vocab_size))
    rng.shuffle(permutation)
    cipher = {e_vocab[i]: f_vocab[permutation[i]] for i in range(vocab_size)}
    translations = {word: (cipher[word],) for word in e_vocab}
    with_synonym = rng.sample(e_vocab, n_synonyms)
    for k, word in enumerate(with_synonym):
        translations[word] = (cipher[word], f_vocab[vocab_size + k])
    weights = [1.0 / (rank + 1) ** zipf for rank in range(vocab_size)]
    pairs = []
    for idx in range(n_pairs):
        length = rng.randint(min_len, max_len)
        e_tokens = tuple(rng.choices(e_vocab, weights=weights, k=length))
        f_tokens = []
        for token in e_tokens:
            if rng.random() < noise:
                f_tokens.append(rng.choice(f_vocab))
                continue
            options = translations[token]
            if len(options) > 1 and rng.random() >= primary_probability:
                f_tokens.append(options[1])
            else:
                f_tokens.append(options[0])
        pairs.append(SentencePair(idx, e_tokens, tuple(f_tokens)))
    return CipherCorpus(pairs, cipher, translations, e_vocab, f_vocab)


@pytest.fixture(scope="session")
def cipher_corpus() -> CipherCorpus:
    """The 2,000-pair corpus used by the EM and dictionary checks."""
    return make_cipher_corpus(2000, vocab_size=50, min_len=3, max_len=12, noise=0.1, seed=101)
