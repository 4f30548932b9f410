"""Shared bilingual word-vector space: loading/saving plain-text vectors,
alignment-guided bilingual skip-gram training, and the mean-embedding cosine
scoring baseline.

Tokens are language-tagged ("e:word" / "f:word") so one table holds both
languages in a single namespace.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .align import Alignment
from .corpus import SentencePair
from .errors import DataError

log = logging.getLogger(__name__)

TAGS = ("e", "f")


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def get(self, tag: str, token: str) -> np.ndarray | None:
        return self.vectors.get(f"{tag}:{token}")


def load_embeddings(path) -> EmbeddingTable:
    """Plain-text format: header `<count> <dim>`, then `<tagged_token> v1 ... v_dim`."""
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or len(lines[0].split()) != 2:
        raise DataError(f"{path}: missing header")
    try:
        count, dim = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise DataError(f"{path}: malformed header {lines[0]!r}") from exc
    if dim <= 0:
        raise DataError(f"{path}: non-positive dimension {dim}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != dim + 1:
            raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(fields) - 1}")
        token = fields[0]
        if token in vectors:
            log.warning("%s:%d: duplicate token %r, last occurrence wins", path, lineno, token)
        vectors[token] = np.asarray([float(x) for x in fields[1:]], dtype=np.float64)
    if len(vectors) != count:
        log.warning("%s: header declares %d vectors, found %d", path, count, len(vectors))
    return EmbeddingTable(dim, vectors)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(f"{len(table.vectors)} {table.dim}\n")
        for token, vec in table.vectors.items():
            out.write(token + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


def sentence_embedding(
    tokens: Sequence[str], table: EmbeddingTable, language_tag: str
) -> tuple[np.ndarray, bool]:
    """Mean of in-vocabulary token vectors; returns (vector, all_oov_flag)."""
    found = [v for token in tokens if (v := table.get(language_tag, token)) is not None]
    if not found:
        return np.zeros(table.dim), True
    return np.mean(found, axis=0), False


def cosine_score(pair: SentencePair, table: EmbeddingTable) -> float:
    """Cosine of the two mean sentence vectors; 0.0 if either vector is zero."""
    e_vec, _ = sentence_embedding(pair.e_tokens, table, "e")
    f_vec, _ = sentence_embedding(pair.f_tokens, table, "f")
    e_norm = float(np.linalg.norm(e_vec))
    f_norm = float(np.linalg.norm(f_vec))
    if e_norm == 0.0 or f_norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(e_vec, f_vec) / (e_norm * f_norm), -1.0, 1.0))


def train_bilingual_embeddings(
    pairs: Sequence[SentencePair],
    alignments: Sequence[Alignment] | None,
    dim: int = 200,
    epochs: int = 5,
    window: int = 5,
    negatives_per_target: int = 5,
    seed: int = 0,
    learning_rate: float = 0.025,
    subsample: float = 0.0,
) -> EmbeddingTable:
    """Skip-gram with negative sampling over four prediction streams: both
    monolingual context windows plus cross-lingual contexts projected through
    alignment links.  `subsample > 0` enables standard frequent-token
    subsampling (useful at real-corpus scale).  Deterministic given the seed.
    """
    if dim <= 0:
        raise ValueError(f"embedding dimension must be positive, got {dim}")
    if epochs <= 0 or window <= 0 or negatives_per_target <= 0:
        raise ValueError("epochs, window, and negatives_per_target must be positive")
    if not pairs:
        raise DataError("cannot train embeddings on an empty corpus")
    if alignments is not None and len(alignments) != len(pairs):
        raise DataError(f"{len(alignments)} alignments for {len(pairs)} pairs")
    have_links = alignments is not None and any(a.links for a in alignments)
    if not have_links:
        log.warning("no alignment links available; training monolingual streams only")

    vocab: dict[str, int] = {}
    counts: list[int] = []
    for pair in pairs:
        for tag, tokens in (("e", pair.e_tokens), ("f", pair.f_tokens)):
            for token in tokens:
                tagged = f"{tag}:{token}"
                idx = vocab.get(tagged)
                if idx is None:
                    vocab[tagged] = len(counts)
                    counts.append(1)
                else:
                    counts[idx] += 1
    words = list(vocab)
    counts_arr = np.asarray(counts, dtype=np.float64)
    lang_of = np.asarray([0 if w.startswith("e:") else 1 for w in words])

    # Per-language unigram^0.75 negative-sampling tables.
    neg_candidates = []
    neg_cumulative = []
    lang_totals = []
    for lang in (0, 1):
        idxs = np.nonzero(lang_of == lang)[0]
        weights = counts_arr[idxs] ** 0.75
        neg_candidates.append(idxs)
        neg_cumulative.append(np.cumsum(weights / weights.sum()))
        lang_totals.append(counts_arr[idxs].sum())
    if subsample > 0:
        freq = counts_arr / np.asarray(lang_totals)[lang_of]
        keep_prob = np.minimum(1.0, np.sqrt(subsample / freq) + subsample / freq)
    else:
        keep_prob = np.ones(len(words))

    rng = np.random.default_rng(seed)
    vec_in = (rng.random((len(words), dim)) - 0.5) / dim
    vec_out = np.zeros((len(words), dim))

    def sentence_ids(tag: str, tokens: tuple[str, ...]) -> np.ndarray:
        return np.asarray([vocab[f"{tag}:{t}"] for t in tokens])

    def mono_events(kept_ids: np.ndarray):
        centers = []
        contexts = []
        for anchor in range(len(kept_ids)):
            lo = max(0, anchor - window)
            hi = min(len(kept_ids), anchor + window + 1)
            for pos in range(lo, hi):
                if pos == anchor:
                    continue
                centers.append(kept_ids[anchor])
                contexts.append(kept_ids[pos])
        return centers, contexts

    total_sentences = epochs * len(pairs)
    processed = 0
    for _ in range(epochs):
        for p_idx, pair in enumerate(pairs):
            lr = learning_rate * max(1.0 - processed / total_sentences, 1e-4)
            processed += 1
            e_ids = sentence_ids("e", pair.e_tokens)
            f_ids = sentence_ids("f", pair.f_tokens)
            e_keep = rng.random(len(e_ids)) < keep_prob[e_ids]
            f_keep = rng.random(len(f_ids)) < keep_prob[f_ids]
            batches = [mono_events(e_ids[e_keep]), mono_events(f_ids[f_keep])]
            if have_links and alignments[p_idx].links:
                # Cross-lingual stream: the window around the link anchor in
                # the other sentence, aligned word included; subsampling
                # filters both centers and contexts.
                e2f: tuple[list, list] = ([], [])
                f2e: tuple[list, list] = ([], [])
                for e_idx, f_idx in sorted(alignments[p_idx].links):
                    if e_keep[e_idx]:
                        lo, hi = max(0, f_idx - window), min(len(f_ids), f_idx + window + 1)
                        for pos in range(lo, hi):
                            if f_keep[pos]:
                                e2f[0].append(e_ids[e_idx])
                                e2f[1].append(f_ids[pos])
                    if f_keep[f_idx]:
                        lo, hi = max(0, e_idx - window), min(len(e_ids), e_idx + window + 1)
                        for pos in range(lo, hi):
                            if e_keep[pos]:
                                f2e[0].append(f_ids[f_idx])
                                f2e[1].append(e_ids[pos])
                batches.append(e2f)
                batches.append(f2e)
            for centers, contexts in batches:
                if not centers:
                    continue
                _sgns_update(
                    vec_in,
                    vec_out,
                    np.asarray(centers),
                    np.asarray(contexts),
                    neg_candidates,
                    neg_cumulative,
                    lang_of,
                    negatives_per_target,
                    lr,
                    rng,
                )

    # Input plus output vectors: the cross-lingual in/out dot products are the
    # directly trained quantities, so the sum gives sharper translation
    # neighborhoods than the input matrix alone.
    table = {word: vec_in[idx] + vec_out[idx] for word, idx in vocab.items()}
    return EmbeddingTable(dim, table)


def _sgns_update(
    vec_in: np.ndarray,
    vec_out: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    neg_candidates: list[np.ndarray],
    neg_cumulative: list[np.ndarray],
    lang_of: np.ndarray,
    k_neg: int,
    lr: float,
    rng: np.random.Generator,
) -> None:
    n = len(centers)
    ctx_lang = lang_of[contexts[0]]
    cand = neg_candidates[ctx_lang]
    cum = neg_cumulative[ctx_lang]
    negs = cand[np.searchsorted(cum, rng.random((n, k_neg)), side="right").clip(max=len(cand) - 1)]
    c_vecs = vec_in[centers]
    o_vecs = vec_out[contexts]
    n_vecs = vec_out[negs]
    # tanh form of the sigmoid saturates instead of overflowing
    pos_score = 0.5 * (np.tanh(0.5 * np.einsum("nd,nd->n", c_vecs, o_vecs)) + 1.0)
    neg_score = 0.5 * (np.tanh(0.5 * np.einsum("nd,nkd->nk", c_vecs, n_vecs)) + 1.0)
    g_pos = pos_score - 1.0
    d_center = g_pos[:, None] * o_vecs + np.einsum("nk,nkd->nd", neg_score, n_vecs)
    np.add.at(vec_in, centers, -lr * d_center)
    np.add.at(vec_out, contexts, -lr * g_pos[:, None] * c_vecs)
    np.add.at(
        vec_out.reshape(-1, vec_out.shape[1]),
        negs.reshape(-1),
        -lr * (neg_score[:, :, None] * c_vecs[:, None, :]).reshape(-1, vec_out.shape[1]),
    )


def nearest_neighbor(
    table: EmbeddingTable, tagged_token: str, candidate_tag: str
) -> str | None:
    """Nearest candidate-tag token by cosine; None if the token is missing."""
    query = table.vectors.get(tagged_token)
    if query is None:
        return None
    q_norm = np.linalg.norm(query)
    if q_norm == 0:
        return None
    best, best_score = None, -math.inf
    prefix = candidate_tag + ":"
    for token, vec in table.vectors.items():
        if not token.startswith(prefix):
            continue
        norm = np.linalg.norm(vec)
        if norm == 0:
            continue
        score = float(np.dot(query, vec) / (q_norm * norm))
        if score > best_score:
            best, best_score = token, score
    return best
