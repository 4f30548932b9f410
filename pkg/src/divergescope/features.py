"""Parallel vs non-parallel baseline: length/alignment/dictionary features
plus a regularized logistic-regression classifier on standardized features.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .align import Alignment, BilingualDictionary, Direction, Heuristic
from .corpus import SentencePair
from .datagen import coverage
from .errors import DataError

log = logging.getLogger(__name__)

HEURISTIC_ORDER = (Heuristic.UNION, Heuristic.INTERSECTION, Heuristic.GROW_DIAG_FINAL_AND)

_SIDE_FEATURES = (
    "unaligned_count",
    "unaligned_ratio",
    "fertility_1",
    "fertility_2",
    "fertility_3",
    "longest_unaligned_run",
    "longest_aligned_run",
)


def feature_names(heuristics: Sequence[Heuristic] = HEURISTIC_ORDER) -> tuple[str, ...]:
    names = ["len_f", "len_e", "len_ratio_f_e", "len_ratio_e_f"]
    for heuristic in heuristics:
        for side in ("e", "f"):
            for feat in _SIDE_FEATURES:
                names.append(f"{heuristic.value}_{side}_{feat}")
    names += ["coverage_e2f", "coverage_f2e"]
    return tuple(names)


@dataclass
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray


def _longest_run(flags: Sequence[bool], wanted: bool) -> int:
    best = current = 0
    for flag in flags:
        if flag is wanted or flag == wanted:
            current += 1
            best = max(best, current)
        else:
            current = 0
    return best


def _side_features(length: int, link_indices: Sequence[int]) -> list[float]:
    fertility = Counter(link_indices)
    aligned_flags = [fertility[i] > 0 for i in range(length)]
    unaligned = length - sum(aligned_flags)
    top3 = sorted(fertility.values(), reverse=True)[:3]
    top3 += [0] * (3 - len(top3))
    return [
        float(unaligned),
        unaligned / length,
        float(top3[0]),
        float(top3[1]),
        float(top3[2]),
        float(_longest_run(aligned_flags, False)),
        float(_longest_run(aligned_flags, True)),
    ]


def extract_features(
    pair: SentencePair,
    alignments: Mapping[Heuristic, Alignment],
    dictionary: BilingualDictionary,
    heuristics: Sequence[Heuristic] = HEURISTIC_ORDER,
) -> FeatureVector:
    """Length, per-heuristic alignment, and dictionary-coverage features.

    A word counts as aligned iff it participates in at least one link; words
    the aligner linked to NULL have no link and count as unaligned.
    """
    e_len, f_len = len(pair.e_tokens), len(pair.f_tokens)
    values = [float(f_len), float(e_len), f_len / e_len, e_len / f_len]
    for heuristic in heuristics:
        alignment = alignments.get(heuristic)
        if alignment is None:
            raise DataError(f"missing alignment for heuristic {heuristic.value!r}")
        if (alignment.e_len, alignment.f_len) != (e_len, f_len):
            raise DataError(
                f"alignment size {alignment.e_len}x{alignment.f_len} does not match "
                f"pair {e_len}x{f_len}"
            )
        values += _side_features(e_len, [e for e, _ in alignment.links])
        values += _side_features(f_len, [f for _, f in alignment.links])
    values.append(coverage(pair.e_tokens, pair.f_tokens, dictionary, Direction.E2F))
    values.append(coverage(pair.e_tokens, pair.f_tokens, dictionary, Direction.F2E))
    return FeatureVector(feature_names(heuristics), np.asarray(values, dtype=np.float64))


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...]
    train_accuracy: float


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train_linear(
    features: np.ndarray,
    labels: np.ndarray,
    names: tuple[str, ...],
    l2_strength: float = 1e-4,
    epochs: int = 500,
    learning_rate: float = 0.1,
    seed: int = 0,
) -> LinearModel:
    """Full-batch logistic regression on standardized features.  The loss is
    monitored each epoch and the learning rate halves whenever it increases.
    Initialization is zeros, so runs are deterministic (the seed is accepted
    for interface stability).
    """
    del seed
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(labels):
        raise DataError("features must be (n, d) with one label per row")
    classes = set(labels.tolist())
    if classes != {0.0, 1.0}:
        raise DataError(f"need both classes in training data, got labels {sorted(classes)}")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    x = (features - mean) / std
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    prev_loss = np.inf
    lr = learning_rate
    for _ in range(epochs):
        z = x @ w + b
        p = _sigmoid(z)
        clipped = np.clip(p, 1e-12, 1.0 - 1e-12)
        loss = -np.mean(labels * np.log(clipped) + (1 - labels) * np.log(1 - clipped))
        loss += 0.5 * l2_strength * float(w @ w)
        if loss > prev_loss:
            lr *= 0.5
        prev_loss = loss
        grad_w = x.T @ (p - labels) / n + l2_strength * w
        grad_b = float(np.mean(p - labels))
        w -= lr * grad_w
        b -= lr * grad_b
    predictions = (_sigmoid(x @ w + b) >= 0.5).astype(np.float64)
    accuracy = float(np.mean(predictions == labels))
    return LinearModel(w, b, mean, std, names, accuracy)


def score_linear(model: LinearModel, features: FeatureVector | np.ndarray) -> float:
    """Equivalent-class probability: sigmoid over standardized features."""
    values = features.values if isinstance(features, FeatureVector) else np.asarray(features)
    if values.shape != model.weights.shape:
        raise DataError(
            f"feature layout mismatch: got {values.shape}, model expects {model.weights.shape}"
        )
    z = float((values - model.mean) / model.std @ model.weights + model.bias)
    return float(_sigmoid(np.asarray([z]))[0])


def save_linear(model: LinearModel, path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write("format\tlinear-model-1\n")
        out.write(f"bias\t{float(model.bias).hex()}\n")
        out.write(f"train_accuracy\t{model.train_accuracy!r}\n")
        out.write("names\t" + " ".join(model.names) + "\n")
        for key, arr in (("weights", model.weights), ("mean", model.mean), ("std", model.std)):
            out.write(f"{key}\t" + " ".join(float(x).hex() for x in arr) + "\n")


def load_linear(path) -> LinearModel:
    lines = open(path, encoding="utf-8").read().splitlines()
    if not lines or lines[0] != "format\tlinear-model-1":
        raise DataError(f"{path}: not a linear model file")
    entries = dict(line.split("\t", 1) for line in lines[1:] if line)
    names = tuple(entries["names"].split())
    arrays = {
        key: np.asarray([float.fromhex(x) for x in entries[key].split()])
        for key in ("weights", "mean", "std")
    }
    return LinearModel(
        arrays["weights"],
        float.fromhex(entries["bias"]),
        arrays["mean"],
        arrays["std"],
        names,
        float(entries["train_accuracy"]),
    )


def write_feature_dump(rows: Sequence[FeatureVector], path) -> None:
    """TSV with a header row naming each feature, for external inspection."""
    if not rows:
        raise DataError("no feature rows to write")
    with open(path, "w", encoding="utf-8") as out:
        out.write("\t".join(rows[0].names) + "\n")
        for row in rows:
            out.write("\t".join(f"{v:.6f}" for v in row.values) + "\n")
