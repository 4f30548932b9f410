"""Parallel corpus loading, tokenization, deduplication, splitting, and TSV I/O.

Pairs are the unit every other module consumes.  Ids are load-order indices;
all downstream score files reference them.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import DataError

log = logging.getLogger(__name__)


class Label(Enum):
    EQUIVALENT = "equivalent"
    DIVERGENT = "divergent"


@dataclass(frozen=True)
class SentencePair:
    id: int
    e_tokens: tuple[str, ...]
    f_tokens: tuple[str, ...]


@dataclass(frozen=True)
class LabeledPair:
    pair: SentencePair
    label: Label


@dataclass
class CorpusSplit:
    train: list
    dev: list
    test: list


def tokenize(line: str) -> tuple[str, ...]:
    """Lowercase and split on Unicode whitespace; no further normalization."""
    return tuple(line.lower().split())


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_parallel(source_path, target_path) -> tuple[list[SentencePair], int]:
    """Load a two-file bitext; returns (pairs, rejected_count).

    Pairs whose either side is empty after tokenization are dropped and
    counted instead of loaded.
    """
    e_lines = _read_lines(source_path)
    f_lines = _read_lines(target_path)
    if len(e_lines) != len(f_lines):
        raise DataError(f"line count mismatch {len(e_lines)} vs {len(f_lines)}")
    pairs: list[SentencePair] = []
    rejected = 0
    for e_line, f_line in zip(e_lines, f_lines):
        e_tokens = tokenize(e_line)
        f_tokens = tokenize(f_line)
        if not e_tokens or not f_tokens:
            rejected += 1
            continue
        pairs.append(SentencePair(len(pairs), e_tokens, f_tokens))
    if rejected:
        log.info("rejected %d pair(s) with an empty side", rejected)
    return pairs, rejected


def deduplicate(pairs: Sequence[SentencePair]) -> tuple[list[SentencePair], int]:
    """Keep the first occurrence of each exact (e, f) pair; returns (pairs, removed)."""
    seen: set[tuple[tuple[str, ...], tuple[str, ...]]] = set()
    kept: list[SentencePair] = []
    for pair in pairs:
        key = (pair.e_tokens, pair.f_tokens)
        if key in seen:
            continue
        seen.add(key)
        kept.append(pair)
    return kept, len(pairs) - len(kept)


def _item_id(item) -> int:
    return item.pair.id if isinstance(item, LabeledPair) else item.id


def split_corpus(pairs: Sequence, fractions: Sequence[float], seed: int) -> CorpusSplit:
    """Deterministic shuffle-then-cut split; remainder after flooring goes to train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"need three non-negative fractions, got {fractions!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    items = list(pairs)
    random.Random(seed).shuffle(items)
    n = len(items)
    n_dev = math.floor(fractions[1] * n)
    n_test = math.floor(fractions[2] * n)
    n_train = n - n_dev - n_test
    return CorpusSplit(
        train=items[:n_train],
        dev=items[n_train : n_train + n_dev],
        test=items[n_train + n_dev :],
    )


def write_corpus_files(pairs: Sequence[SentencePair], e_path, f_path) -> None:
    """Emit the two-file corpus format (one sentence per line, space-joined)."""
    with open(e_path, "w", encoding="utf-8") as e_out, open(f_path, "w", encoding="utf-8") as f_out:
        for pair in pairs:
            e_out.write(" ".join(pair.e_tokens) + "\n")
            f_out.write(" ".join(pair.f_tokens) + "\n")


def write_pairs_tsv(items: Sequence, path) -> None:
    """Write pairs (or labeled pairs, with a fourth label column) as TSV."""
    with open(path, "w", encoding="utf-8") as out:
        for item in items:
            if isinstance(item, LabeledPair):
                pair, label = item.pair, item.label
                out.write(
                    f"{pair.id}\t{' '.join(pair.e_tokens)}\t{' '.join(pair.f_tokens)}\t{label.value}\n"
                )
            else:
                out.write(f"{item.id}\t{' '.join(item.e_tokens)}\t{' '.join(item.f_tokens)}\n")


def _parse_tsv_line(line: str, lineno: int, path) -> list[str]:
    fields = line.split("\t")
    if len(fields) not in (3, 4):
        raise DataError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(fields)}")
    return fields


def read_pairs_tsv(path) -> list[SentencePair]:
    pairs = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        fields = _parse_tsv_line(line, lineno, path)
        try:
            pair_id = int(fields[0])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad pair id {fields[0]!r}") from exc
        pairs.append(SentencePair(pair_id, tuple(fields[1].split()), tuple(fields[2].split())))
    return pairs


def read_labeled_tsv(path) -> list[LabeledPair]:
    labeled = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        fields = _parse_tsv_line(line, lineno, path)
        if len(fields) != 4:
            raise DataError(f"{path}:{lineno}: labeled TSV needs 4 fields, got {len(fields)}")
        try:
            pair_id = int(fields[0])
            label = Label(fields[3])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        pair = SentencePair(pair_id, tuple(fields[1].split()), tuple(fields[2].split()))
        labeled.append(LabeledPair(pair, label))
    return labeled
