"""IBM Model 1/2 word alignment by EM, symmetrization heuristics, and
bilingual dictionary extraction.

Source position 0 is the NULL word; words that align to NULL produce no link.
Alignments are always expressed in (e_index, f_index) space regardless of the
model direction, so symmetrization never needs a manual transpose.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .corpus import SentencePair
from .errors import DataError

log = logging.getLogger(__name__)

# Real tokens are lowercased at ingestion, so an uppercase sentinel cannot collide.
NULL_WORD = "<NULL>"


class Direction(Enum):
    E2F = "e2f"
    F2E = "f2e"


class Heuristic(Enum):
    UNION = "union"
    INTERSECTION = "intersection"
    GROW_DIAG_FINAL_AND = "grow-diag-final-and"


@dataclass
class TranslationTable:
    """Lexical translation distribution t(target_word | source_word)."""

    t: dict[str, dict[str, float]]

    def prob(self, target_word: str, source_word: str) -> float:
        return self.t.get(source_word, {}).get(target_word, 0.0)


@dataclass
class Ibm2Model:
    table: TranslationTable
    # (target_pos, source_len, target_len) -> probs over source positions 0..source_len
    align_prob: dict[tuple[int, int, int], list[float]]
    direction: Direction
    _target_vocab: frozenset[str] | None = field(default=None, repr=False, compare=False)

    def target_vocab(self) -> frozenset[str]:
        if self._target_vocab is None:
            vocab: set[str] = set()
            for row in self.table.t.values():
                vocab.update(row)
            self._target_vocab = frozenset(vocab)
        return self._target_vocab


@dataclass(frozen=True)
class Alignment:
    links: frozenset[tuple[int, int]]
    e_len: int
    f_len: int

    def __post_init__(self):
        for e_idx, f_idx in self.links:
            if not (0 <= e_idx < self.e_len and 0 <= f_idx < self.f_len):
                raise ValueError(f"link ({e_idx},{f_idx}) outside {self.e_len}x{self.f_len}")


@dataclass
class BilingualDictionary:
    """Word-to-translation maps with probabilities, in both directions."""

    e2f: dict[str, dict[str, float]]
    f2e: dict[str, dict[str, float]]

    def translations(self, word: str, direction: Direction = Direction.E2F) -> frozenset[str]:
        side = self.e2f if direction is Direction.E2F else self.f2e
        return frozenset(side.get(word, ()))


def _roles(pair: SentencePair, direction: Direction) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if direction is Direction.E2F:
        return pair.e_tokens, pair.f_tokens
    return pair.f_tokens, pair.e_tokens


def _uniform_init(corpus) -> TranslationTable:
    # Uniform over co-occurring vocabulary; plain dicts keep insertion order
    # so results do not depend on hash seeds.
    cooc: dict[str, dict[str, None]] = {}
    for src_tokens, tgt_tokens in corpus:
        for src in (NULL_WORD,) + src_tokens:
            row = cooc.setdefault(src, {})
            for tgt in tgt_tokens:
                row[tgt] = None
    table = {
        src: {tgt: 1.0 / len(row) for tgt in row}
        for src, row in cooc.items()
    }
    return TranslationTable(table)


def train_ibm1(
    pairs: Sequence[SentencePair],
    iterations: int,
    direction: Direction = Direction.E2F,
) -> tuple[TranslationTable, list[float]]:
    """Model 1 EM with a NULL source token; returns (table, per-iteration log-likelihood)."""
    if not pairs:
        raise DataError("cannot train an alignment model on an empty corpus")
    corpus = [_roles(p, direction) for p in pairs]
    table = _uniform_init(corpus)
    history: list[float] = []
    for _ in range(iterations):
        counts: dict[str, dict[str, float]] = {}
        totals: dict[str, float] = {}
        ll = 0.0
        for src_tokens, tgt_tokens in corpus:
            srcs = (NULL_WORD,) + src_tokens
            for tgt in tgt_tokens:
                probs = [table.t[src].get(tgt, 0.0) for src in srcs]
                z = sum(probs)
                ll += math.log(z) - math.log(len(srcs))
                for src, p in zip(srcs, probs):
                    if p == 0.0:
                        continue
                    share = p / z
                    counts.setdefault(src, {})
                    counts[src][tgt] = counts[src].get(tgt, 0.0) + share
                    totals[src] = totals.get(src, 0.0) + share
        table = TranslationTable(
            {src: {tgt: c / totals[src] for tgt, c in row.items()} for src, row in counts.items()}
        )
        history.append(ll)
        log.debug("ibm1 iteration %d log-likelihood %.6f", len(history), ll)
    return table, history


def train_ibm2(
    pairs: Sequence[SentencePair],
    iterations: int,
    init: TranslationTable,
    direction: Direction = Direction.E2F,
) -> tuple[Ibm2Model, list[float]]:
    """Model 2 EM over the lexical table and the position distribution jointly."""
    if not pairs:
        raise DataError("cannot train an alignment model on an empty corpus")
    corpus = [_roles(p, direction) for p in pairs]
    table = TranslationTable({src: dict(row) for src, row in init.t.items()})
    align_prob: dict[tuple[int, int, int], list[float]] = {}
    for src_tokens, tgt_tokens in corpus:
        l_src, l_tgt = len(src_tokens), len(tgt_tokens)
        for i in range(l_tgt):
            key = (i, l_src, l_tgt)
            if key not in align_prob:
                align_prob[key] = [1.0 / (l_src + 1)] * (l_src + 1)
    history: list[float] = []
    for _ in range(iterations):
        t_counts: dict[str, dict[str, float]] = {}
        t_totals: dict[str, float] = {}
        a_counts: dict[tuple[int, int, int], list[float]] = {}
        ll = 0.0
        for src_tokens, tgt_tokens in corpus:
            l_src, l_tgt = len(src_tokens), len(tgt_tokens)
            srcs = (NULL_WORD,) + src_tokens
            for i, tgt in enumerate(tgt_tokens):
                key = (i, l_src, l_tgt)
                ap = align_prob[key]
                terms = [table.t.get(src, {}).get(tgt, 0.0) * ap[j] for j, src in enumerate(srcs)]
                z = sum(terms)
                ll += math.log(z)
                acc = a_counts.setdefault(key, [0.0] * (l_src + 1))
                for j, (src, term) in enumerate(zip(srcs, terms)):
                    if term == 0.0:
                        continue
                    share = term / z
                    t_counts.setdefault(src, {})
                    t_counts[src][tgt] = t_counts[src].get(tgt, 0.0) + share
                    t_totals[src] = t_totals.get(src, 0.0) + share
                    acc[j] += share
        table = TranslationTable(
            {src: {tgt: c / t_totals[src] for tgt, c in row.items()} for src, row in t_counts.items()}
        )
        align_prob = {}
        for key, acc in a_counts.items():
            total = sum(acc)
            align_prob[key] = [c / total for c in acc]
        history.append(ll)
        log.debug("ibm2 iteration %d log-likelihood %.6f", len(history), ll)
    return Ibm2Model(table, align_prob, direction), history


def viterbi_align(model: Ibm2Model, pair: SentencePair, counters: dict | None = None) -> Alignment:
    """Link each target position to its argmax source position (ties to the
    smallest position, NULL included); links in (e, f) space either direction.

    Out-of-vocabulary target words align to NULL; the count is reported via
    `counters["oov"]` when a dict is supplied, and logged otherwise.
    """
    src_tokens, tgt_tokens = _roles(pair, model.direction)
    l_src, l_tgt = len(src_tokens), len(tgt_tokens)
    vocab = model.target_vocab()
    links: set[tuple[int, int]] = set()
    oov = 0
    for i, tgt in enumerate(tgt_tokens):
        if tgt not in vocab:
            oov += 1
            continue
        ap = model.align_prob.get((i, l_src, l_tgt))
        if ap is None:
            ap = [1.0 / (l_src + 1)] * (l_src + 1)
        best_j = 0
        best_p = model.table.prob(tgt, NULL_WORD) * ap[0]
        for j, src in enumerate(src_tokens, start=1):
            p = model.table.prob(tgt, src) * ap[j]
            if p > best_p:
                best_p = p
                best_j = j
        if best_j > 0:
            if model.direction is Direction.E2F:
                links.add((best_j - 1, i))
            else:
                links.add((i, best_j - 1))
    if counters is not None:
        counters["oov"] = counters.get("oov", 0) + oov
    elif oov:
        log.debug("viterbi: %d out-of-vocabulary word(s) aligned to NULL", oov)
    return Alignment(frozenset(links), len(pair.e_tokens), len(pair.f_tokens))


_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def _grow_diag_final_and(
    fwd: frozenset[tuple[int, int]],
    rev: frozenset[tuple[int, int]],
    e_len: int,
    f_len: int,
) -> frozenset[tuple[int, int]]:
    union = fwd | rev
    aligned = set(fwd & rev)
    e_aligned = {e for e, _ in aligned}
    f_aligned = {f for _, f in aligned}
    changed = True
    while changed:
        changed = False
        for e_idx, f_idx in sorted(aligned):
            for de, df in _NEIGHBORS:
                cand = (e_idx + de, f_idx + df)
                if cand in aligned or cand not in union:
                    continue
                if cand[0] not in e_aligned or cand[1] not in f_aligned:
                    aligned.add(cand)
                    e_aligned.add(cand[0])
                    f_aligned.add(cand[1])
                    changed = True
    for cand in sorted(union - aligned):
        if cand[0] not in e_aligned and cand[1] not in f_aligned:
            aligned.add(cand)
            e_aligned.add(cand[0])
            f_aligned.add(cand[1])
    return frozenset(aligned)


def symmetrize(forward: Alignment, reverse: Alignment, heuristic: Heuristic) -> Alignment:
    """Combine two directional alignments already expressed in (e, f) space."""
    if (forward.e_len, forward.f_len) != (reverse.e_len, reverse.f_len):
        raise DataError(
            f"alignment length mismatch: {forward.e_len}x{forward.f_len} vs "
            f"{reverse.e_len}x{reverse.f_len}"
        )
    if heuristic is Heuristic.UNION:
        links = forward.links | reverse.links
    elif heuristic is Heuristic.INTERSECTION:
        links = forward.links & reverse.links
    else:
        links = _grow_diag_final_and(forward.links, reverse.links, forward.e_len, forward.f_len)
    return Alignment(frozenset(links), forward.e_len, forward.f_len)


def extract_dictionary(
    model_ef: Ibm2Model,
    model_fe: Ibm2Model,
    prob_threshold: float = 0.5,
) -> BilingualDictionary:
    """Collect translations whose lexical probability clears the threshold."""
    if not (0.0 < prob_threshold <= 1.0):
        raise ValueError(f"probability threshold must be in (0, 1], got {prob_threshold}")

    def collect(table: TranslationTable) -> dict[str, dict[str, float]]:
        entries: dict[str, dict[str, float]] = {}
        for src, row in table.t.items():
            if src == NULL_WORD:
                continue
            kept = {tgt: p for tgt, p in row.items() if p >= prob_threshold}
            if kept:
                entries[src] = kept
        return entries

    return BilingualDictionary(collect(model_ef.table), collect(model_fe.table))


# ---------------------------------------------------------------------------
# File formats


def write_alignments(alignments: Iterable[Alignment], path) -> None:
    """One pair per line, space-separated `e-f` index links."""
    with open(path, "w", encoding="utf-8") as out:
        for alignment in alignments:
            out.write(" ".join(f"{e}-{f}" for e, f in sorted(alignment.links)) + "\n")


def read_alignments(path, pairs: Sequence[SentencePair]) -> list[Alignment]:
    lines = open(path, encoding="utf-8").read().splitlines()
    if len(lines) != len(pairs):
        raise DataError(f"{path}: {len(lines)} alignment lines for {len(pairs)} pairs")
    alignments = []
    for pair, line in zip(pairs, lines):
        links = set()
        for chunk in line.split():
            e_str, _, f_str = chunk.partition("-")
            links.add((int(e_str), int(f_str)))
        alignments.append(Alignment(frozenset(links), len(pair.e_tokens), len(pair.f_tokens)))
    return alignments


def write_dictionary_side(entries: dict[str, dict[str, float]], path) -> None:
    """TSV `src_word<TAB>tgt_word<TAB>probability`, sorted for reproducibility."""
    with open(path, "w", encoding="utf-8") as out:
        for src in sorted(entries):
            for tgt in sorted(entries[src]):
                out.write(f"{src}\t{tgt}\t{entries[src][tgt]:.6f}\n")


def read_dictionary(e2f_path, f2e_path) -> BilingualDictionary:
    def read_side(path) -> dict[str, dict[str, float]]:
        entries: dict[str, dict[str, float]] = {}
        for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            entries.setdefault(fields[0], {})[fields[1]] = float(fields[2])
        return entries

    return BilingualDictionary(read_side(e2f_path), read_side(f2e_path))


def save_ibm2(model: Ibm2Model, path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"direction\t{model.direction.value}\n")
        rows = [
            (src, tgt, p)
            for src in sorted(model.table.t)
            for tgt, p in sorted(model.table.t[src].items())
        ]
        out.write(f"table\t{len(rows)}\n")
        for src, tgt, p in rows:
            out.write(f"{src}\t{tgt}\t{p:.17g}\n")
        out.write(f"align\t{len(model.align_prob)}\n")
        for key in sorted(model.align_prob):
            probs = " ".join(f"{p:.17g}" for p in model.align_prob[key])
            out.write(f"{key[0]}\t{key[1]}\t{key[2]}\t{probs}\n")


def load_ibm2(path) -> Ibm2Model:
    lines = open(path, encoding="utf-8").read().splitlines()
    if not lines or not lines[0].startswith("direction\t"):
        raise DataError(f"{path}: missing direction header")
    direction = Direction(lines[0].split("\t")[1])
    idx = 1
    kind, count = lines[idx].split("\t")
    if kind != "table":
        raise DataError(f"{path}: expected table section")
    idx += 1
    table: dict[str, dict[str, float]] = {}
    for _ in range(int(count)):
        src, tgt, p = lines[idx].split("\t")
        table.setdefault(src, {})[tgt] = float(p)
        idx += 1
    kind, count = lines[idx].split("\t")
    if kind != "align":
        raise DataError(f"{path}: expected align section")
    idx += 1
    align_prob: dict[tuple[int, int, int], list[float]] = {}
    for _ in range(int(count)):
        i, l_src, l_tgt, probs = lines[idx].split("\t")
        align_prob[(int(i), int(l_src), int(l_tgt))] = [float(x) for x in probs.split()]
        idx += 1
    return Ibm2Model(TranslationTable(table), align_prob, direction)
