"""Threshold tuning, per-class precision/recall/F reporting, majority-vote
label aggregation, and Fleiss' kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Label
from .errors import DataError


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    n = len(xs)
    if n == 0 or n != len(ys):
        return None
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    if var_x == 0.0 or var_y == 0.0:
        return None
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return cov / math.sqrt(var_x * var_y)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    equivalent: ClassMetrics
    divergent: ClassMetrics
    overall_f: float
    # Confusion counts with equivalent as the positive class.
    tp: int
    fp: int
    fn: int
    tn: int
    average: str = "weighted"
    zero_division: bool = False


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf_report(
    predictions: Sequence[Label], gold: Sequence[Label], average: str = "weighted"
) -> EvalReport:
    """Per-class P/R/F from the confusion matrix; zero denominators yield 0
    with the zero_division flag set.  Overall F is the support-weighted mean
    of the class F-scores by default ("macro" averages them evenly).
    """
    if len(predictions) != len(gold):
        raise DataError(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if not gold:
        raise DataError("cannot evaluate with no gold labels")
    if average not in ("weighted", "macro"):
        raise ValueError(f"unknown averaging mode {average!r}")
    tp = fp = fn = tn = 0
    for pred, actual in zip(predictions, gold):
        if pred is Label.EQUIVALENT:
            if actual is Label.EQUIVALENT:
                tp += 1
            else:
                fp += 1
        else:
            if actual is Label.EQUIVALENT:
                fn += 1
            else:
                tn += 1
    zero_division = False

    def safe_div(num: int, den: int) -> float:
        nonlocal zero_division
        if den == 0:
            zero_division = True
            return 0.0
        return num / den

    eq = ClassMetrics(safe_div(tp, tp + fp), safe_div(tp, tp + fn), 0.0)
    eq.f1 = _f1(eq.precision, eq.recall)
    dv = ClassMetrics(safe_div(tn, tn + fn), safe_div(tn, tn + fp), 0.0)
    dv.f1 = _f1(dv.precision, dv.recall)
    support_eq = tp + fn
    support_dv = tn + fp
    if average == "weighted":
        overall = (eq.f1 * support_eq + dv.f1 * support_dv) / (support_eq + support_dv)
    else:
        overall = (eq.f1 + dv.f1) / 2.0
    return EvalReport(eq, dv, overall, tp, fp, fn, tn, average, zero_division)


def predict_with_threshold(scores: Sequence[float], threshold: float) -> list[Label]:
    """Predict Equivalent iff score >= threshold."""
    return [Label.EQUIVALENT if s >= threshold else Label.DIVERGENT for s in scores]


def tune_threshold(
    scores: Sequence[float], labels: Sequence[Label], average: str = "weighted"
) -> float:
    """Evaluate candidate thresholds at midpoints between consecutive distinct
    sorted scores (plus +-infinity sentinels) and return the overall-F
    maximizer, ties broken toward the larger threshold.
    """
    if len(scores) != len(labels):
        raise DataError(f"{len(scores)} scores for {len(labels)} labels")
    label_set = set(labels)
    if len(label_set) < 2:
        raise DataError("threshold tuning needs at least one example of each class")
    distinct = sorted(set(scores))
    candidates = [-math.inf]
    candidates += [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])]
    candidates.append(math.inf)
    best_threshold = candidates[0]
    best_f = -1.0
    for threshold in candidates:
        report = prf_report(predict_with_threshold(scores, threshold), labels, average)
        if report.overall_f >= best_f:
            best_f = report.overall_f
            best_threshold = threshold
    return best_threshold


def tune_threshold_by_id(
    scored: Sequence[tuple[int, float]],
    labels: Mapping[int, Label],
    average: str = "weighted",
) -> float:
    """Threshold tuning over (pair_id, score) records labeled by id."""
    scores = []
    gold = []
    for pair_id, score in scored:
        if pair_id not in labels:
            raise DataError(f"no label for scored pair {pair_id}")
        scores.append(score)
        gold.append(labels[pair_id])
    return tune_threshold(scores, gold, average)


@dataclass
class AnnotationMatrix:
    """Per-item (equivalent, divergent) rating counts from n raters each."""

    rows: list[tuple[int, int]]
    raters_per_item: int

    def __post_init__(self):
        if self.raters_per_item < 2:
            raise DataError("need at least 2 raters per item")
        for idx, (eq, dv) in enumerate(self.rows):
            if eq < 0 or dv < 0 or eq + dv != self.raters_per_item:
                raise DataError(
                    f"row {idx}: counts ({eq}, {dv}) do not sum to {self.raters_per_item}"
                )


def majority_vote(matrix: AnnotationMatrix) -> list[tuple[Label, int]]:
    """Per item, the majority category and its agreement count.  A tie (only
    possible with an even rater count) is an error.
    """
    results = []
    for idx, (eq, dv) in enumerate(matrix.rows):
        if eq == dv:
            raise DataError(f"row {idx}: tie with even raters ({eq} vs {dv})")
        if eq > dv:
            results.append((Label.EQUIVALENT, eq))
        else:
            results.append((Label.DIVERGENT, dv))
    return results


def fleiss_kappa(matrix: AnnotationMatrix) -> float:
    """kappa = (P_bar - P_bar_e) / (1 - P_bar_e); exactly 1.0 when every item
    is unanimous (including the degenerate single-category case).
    """
    rows = matrix.rows
    if len(rows) < 2:
        raise DataError("Fleiss' kappa needs at least 2 items")
    n = matrix.raters_per_item
    big_n = len(rows)
    p_bar = sum((eq * eq + dv * dv - n) / (n * (n - 1)) for eq, dv in rows) / big_n
    if p_bar == 1.0:
        return 1.0
    total = big_n * n
    p_eq = sum(eq for eq, _ in rows) / total
    p_dv = sum(dv for _, dv in rows) / total
    p_e = p_eq * p_eq + p_dv * p_dv
    return (p_bar - p_e) / (1.0 - p_e)


def read_annotations(path) -> AnnotationMatrix:
    """TSV `item_id<TAB>count_equivalent<TAB>count_divergent`."""
    rows: list[tuple[int, int]] = []
    raters = None
    for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
        try:
            eq, dv = int(fields[1]), int(fields[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer count") from exc
        if raters is None:
            raters = eq + dv
        rows.append((eq, dv))
    if raters is None:
        raise DataError(f"{path}: no annotation rows")
    return AnnotationMatrix(rows, raters)


def format_report_text(report: EvalReport, title: str = "evaluation") -> str:
    lines = [
        f"{title}",
        f"{'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}",
        f"{'equivalent':<12}{report.equivalent.precision:>10.4f}{report.equivalent.recall:>10.4f}{report.equivalent.f1:>10.4f}",
        f"{'divergent':<12}{report.divergent.precision:>10.4f}{report.divergent.recall:>10.4f}{report.divergent.f1:>10.4f}",
        f"overall F ({report.average}): {report.overall_f:.4f}",
        f"confusion (equivalent as positive): tp={report.tp} fp={report.fp} fn={report.fn} tn={report.tn}",
    ]
    if report.zero_division:
        lines.append("note: at least one metric had a zero denominator and was reported as 0")
    return "\n".join(lines) + "\n"


def report_to_kv(report: EvalReport) -> list[str]:
    """Flat `metric<TAB>value` lines."""
    return [
        f"equivalent_precision\t{report.equivalent.precision:.6f}",
        f"equivalent_recall\t{report.equivalent.recall:.6f}",
        f"equivalent_f1\t{report.equivalent.f1:.6f}",
        f"divergent_precision\t{report.divergent.precision:.6f}",
        f"divergent_recall\t{report.divergent.recall:.6f}",
        f"divergent_f1\t{report.divergent.f1:.6f}",
        f"overall_f\t{report.overall_f:.6f}",
        f"tp\t{report.tp}",
        f"fp\t{report.fp}",
        f"fn\t{report.fn}",
        f"tn\t{report.tn}",
    ]
