"""Divergence-based data selection: ingest score files and keep the
least-divergent fraction of a corpus in its original order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .corpus import SentencePair, write_corpus_files
from .errors import DataError


@dataclass(frozen=True)
class ScoredPair:
    pair_id: int
    score: float


def ingest_scores(path, valid_ids: set[int] | None = None) -> list[ScoredPair]:
    """Parse a `pair_id<TAB>score` TSV.  Duplicate ids, non-finite scores, and
    (when valid_ids is given) unknown ids are fatal.
    """
    records: list[ScoredPair] = []
    seen: set[int] = set()
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        try:
            pair_id = int(fields[0])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad pair id {fields[0]!r}") from exc
        try:
            score = float(fields[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric score {fields[1]!r}") from exc
        if not math.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score {fields[1]!r}")
        if pair_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate pair id {pair_id}")
        if valid_ids is not None and pair_id not in valid_ids:
            raise DataError(f"{path}:{lineno}: pair id {pair_id} not in corpus")
        seen.add(pair_id)
        records.append(ScoredPair(pair_id, score))
    return records


def write_scores(records: Sequence[ScoredPair], path) -> None:
    """Score file TSV with 6-decimal fixed point."""
    with open(path, "w", encoding="utf-8") as out:
        for record in records:
            out.write(f"{record.pair_id}\t{record.score:.6f}\n")


def select_top(
    pairs: Sequence[SentencePair],
    scores: Sequence[ScoredPair],
    keep_fraction: float,
) -> list[SentencePair]:
    """Keep the ceil(keep_fraction * N) highest-scored pairs, boundary ties
    broken toward smaller pair ids; output preserves corpus order.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    score_by_id = {record.pair_id: record.score for record in scores}
    missing = [p.id for p in pairs if p.id not in score_by_id]
    if missing:
        raise DataError(f"{len(missing)} pair(s) missing scores (first: {missing[0]})")
    n = len(pairs)
    # Guard against float error in fraction * n (e.g. 0.9 * 120000).
    keep = math.ceil(keep_fraction * n - 1e-9)
    ranked = sorted(pairs, key=lambda p: (-score_by_id[p.id], p.id))
    kept_ids = {p.id for p in ranked[:keep]}
    return [p for p in pairs if p.id in kept_ids]


def write_selection(pairs: Sequence[SentencePair], e_path, f_path, ids_path) -> None:
    """Two-file corpus format plus a sidecar file of kept ids."""
    write_corpus_files(pairs, e_path, f_path)
    with open(ids_path, "w", encoding="utf-8") as out:
        for pair in pairs:
            out.write(f"{pair.id}\n")
