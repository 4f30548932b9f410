"""Noisy synthetic supervision: parallel pairs as positives, filtered
Cartesian-product pairs as negatives, assembled at a fixed class ratio.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from typing import Sequence

from .align import BilingualDictionary, Direction
from .corpus import Label, LabeledPair, SentencePair
from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class SyntheticDataset:
    examples: list[LabeledPair]
    positive_count: int
    negative_count: int
    generation_seed: int


def coverage(
    e_tokens: Sequence[str],
    f_tokens: Sequence[str],
    dictionary: BilingualDictionary,
    direction: Direction = Direction.E2F,
) -> float:
    """Fraction of source-side tokens with a dictionary translation present in
    the other side.  Duplicate tokens each count; an empty source side is 0.
    """
    if direction is Direction.E2F:
        src, other = e_tokens, f_tokens
        entries = dictionary.e2f
    else:
        src, other = f_tokens, e_tokens
        entries = dictionary.f2e
    if not src:
        return 0.0
    other_set = frozenset(other)
    covered = 0
    for token in src:
        translations = entries.get(token)
        if translations and not other_set.isdisjoint(translations):
            covered += 1
    return covered / len(src)


def generate_negatives(
    positives: Sequence[SentencePair],
    dictionary: BilingualDictionary,
    max_length_ratio: float = 2.0,
    min_coverage: float = 0.5,
    window: int | None = 1000,
    bidirectional_coverage: bool = True,
) -> list[SentencePair]:
    """Filtered Cartesian product (e_i, f_j), i != j, in lexicographic (i, j) order.

    A candidate survives iff max(|e|,|f|)/min(|e|,|f|) <= max_length_ratio and
    its dictionary coverage clears min_coverage (both directions by default).
    Candidates equal to some positive are dropped.  With more than `window`
    positives, each e_i is only paired against the `window` nearest indices to
    bound memory and time.
    """
    if not positives:
        raise DataError("cannot generate negatives without positive examples")
    if not dictionary.e2f and not dictionary.f2e:
        raise DataError("cannot generate negatives with an empty dictionary")
    n = len(positives)
    f_sets = [frozenset(p.f_tokens) for p in positives]
    e_sets = [frozenset(p.e_tokens) for p in positives]
    e_trans = [
        [dictionary.e2f.get(tok) for tok in p.e_tokens]
        for p in positives
    ]
    f_trans = [
        [dictionary.f2e.get(tok) for tok in p.f_tokens]
        for p in positives
    ]
    positive_keys = {(p.e_tokens, p.f_tokens) for p in positives}
    use_window = window is not None and n > window

    def covered_fraction(trans_lists, other_set) -> float:
        covered = 0
        for translations in trans_lists:
            if translations and not other_set.isdisjoint(translations):
                covered += 1
        return covered / len(trans_lists)

    negatives: list[SentencePair] = []
    for i, pos_i in enumerate(positives):
        e_len = len(pos_i.e_tokens)
        if use_window:
            start = max(0, min(i - window // 2, n - window))
            candidate_js = range(start, min(n, start + window))
        else:
            candidate_js = range(n)
        for j in candidate_js:
            if i == j:
                continue
            pos_j = positives[j]
            f_len = len(pos_j.f_tokens)
            if max(e_len, f_len) > max_length_ratio * min(e_len, f_len):
                continue
            if covered_fraction(e_trans[i], f_sets[j]) < min_coverage:
                continue
            if bidirectional_coverage and covered_fraction(f_trans[j], e_sets[i]) < min_coverage:
                continue
            if (pos_i.e_tokens, pos_j.f_tokens) in positive_keys:
                continue
            negatives.append(SentencePair(len(negatives), pos_i.e_tokens, pos_j.f_tokens))
    return negatives


def assemble_dataset(
    positives: Sequence[SentencePair],
    negative_pool: Sequence[SentencePair],
    ratio: int = 5,
    seed: int = 0,
) -> SyntheticDataset:
    """Label positives Equivalent, sample ratio x negatives as Divergent, and
    shuffle deterministically.  Ids are reassigned 0..n-1 so the dataset has
    its own id space for score files.
    """
    if not positives:
        raise DataError("cannot assemble a dataset without positive examples")
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    rng = random.Random(seed)
    wanted = ratio * len(positives)
    if len(negative_pool) <= wanted:
        negatives = list(negative_pool)
        achieved = len(negatives) / len(positives)
        log.warning(
            "negative pool exhausted: achieved ratio 1:%g instead of 1:%d",
            round(achieved, 2),
            ratio,
        )
    else:
        negatives = rng.sample(list(negative_pool), wanted)
    examples = [LabeledPair(p, Label.EQUIVALENT) for p in positives]
    examples += [LabeledPair(p, Label.DIVERGENT) for p in negatives]
    rng.shuffle(examples)
    examples = [
        LabeledPair(replace(ex.pair, id=idx), ex.label) for idx, ex in enumerate(examples)
    ]
    return SyntheticDataset(examples, len(positives), len(negatives), seed)
