"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
with its runtime.  Heavy artifacts (the cipher corpus pipelines) are shared
session fixtures.  Run with `pytest tests/test_acceptance.py -v -s`.
"""

import contextlib
import math
import os
import random
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from divergescope import autodiff as ad
from divergescope import vdpwi
from divergescope.align import (
    Alignment,
    Direction,
    Heuristic,
    symmetrize,
    train_ibm1,
    train_ibm2,
)
from divergescope.cli import PipelineConfig, run_pipeline
from divergescope.corpus import Label, SentencePair, write_corpus_files
from divergescope.embed import EmbeddingTable
from divergescope.evaluation import (
    AnnotationMatrix,
    fleiss_kappa,
    predict_with_threshold,
    prf_report,
    tune_threshold,
)
from divergescope.selection import ScoredPair, select_top

from conftest import make_cipher_corpus
from test_autodiff import OP_CHECKS
from test_evaluation import _brute_force_best_f, _kappa_oracle

EQ, DV = Label.EQUIVALENT, Label.DIVERGENT


@contextlib.contextmanager
def criterion(number: int, title: str, budget_seconds: float):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} FAIL: {title}", flush=True)
        raise
    elapsed = time.time() - start
    print(f"\nACCEPTANCE {number} PASS: {title} ({elapsed:.1f}s)", flush=True)
    assert elapsed < budget_seconds, f"runtime {elapsed:.1f}s exceeds budget {budget_seconds}s"


# ---------------------------------------------------------------------------
# Criterion 1: protocol constants of the synthetic dataset


def _read_dictionary_tsv(path) -> dict[str, set[str]]:
    entries: dict[str, set[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        src, tgt, _ = line.split("\t")
        entries.setdefault(src, set()).add(tgt)
    return entries


def _recheck_coverage(src_tokens, other_tokens, entries) -> float:
    other = set(other_tokens)
    covered = sum(
        1 for tok in src_tokens if any(t in other for t in entries.get(tok, ()))
    )
    return covered / len(src_tokens)


def test_criterion_1_protocol_constants(tmp_path):
    with criterion(1, "synthetic datasets satisfy the generation protocol exactly", 60):
        corpus = make_cipher_corpus(6000, seed=77)
        write_corpus_files(corpus.pairs, tmp_path / "c.e", tmp_path / "c.f")
        cfg = PipelineConfig(
            corpus_source=str(tmp_path / "c.e"),
            corpus_target=str(tmp_path / "c.f"),
            out_dir=str(tmp_path / "out"),
            seed=5,
            align_dictionary_sample=2500,
            datagen_window=200,
            embed_dim=16,
            embed_epochs=1,
            vdpwi_preset="desk",
            vdpwi_epochs=1,
        )
        # Only the datagen-relevant prefix of the pipeline is needed here.
        from divergescope.cli import (
            Workspace,
            build_synthetic_split,
            split_positive_pools,
            train_aligners,
        )
        from divergescope import align as align_mod
        from divergescope.corpus import read_labeled_tsv, write_pairs_tsv

        pairs = corpus.pairs
        model_ef, model_fe = train_aligners(pairs, cfg)
        dictionary = align_mod.extract_dictionary(model_ef, model_fe, 0.5)
        train_pos, _, _ = split_positive_pools(pairs, cfg)
        assert len(train_pos) == 5000, "default positives sample must be 5000 when the corpus allows"
        dataset = build_synthetic_split(train_pos, dictionary, cfg, 0)
        ws = Workspace(cfg.out_dir)
        write_pairs_tsv(dataset.examples, ws.synthetic("train"))
        align_mod.write_dictionary_side(dictionary.e2f, ws.dictionary("e2f"))
        align_mod.write_dictionary_side(dictionary.f2e, ws.dictionary("f2e"))

        # Independent re-check over the emitted files only.
        examples = read_labeled_tsv(ws.synthetic("train"))
        e2f = _read_dictionary_tsv(ws.dictionary("e2f"))
        f2e = _read_dictionary_tsv(ws.dictionary("f2e"))
        positives = [ex for ex in examples if ex.label is EQ]
        negatives = [ex for ex in examples if ex.label is DV]
        assert len(positives) == 5000
        assert len(negatives) == 5 * len(positives)
        positive_keys = {(ex.pair.e_tokens, ex.pair.f_tokens) for ex in positives}
        for ex in negatives:
            e_tokens, f_tokens = ex.pair.e_tokens, ex.pair.f_tokens
            ratio = max(len(e_tokens), len(f_tokens)) / min(len(e_tokens), len(f_tokens))
            assert ratio <= 2.0
            assert _recheck_coverage(e_tokens, f_tokens, e2f) >= 0.5
            assert _recheck_coverage(f_tokens, e_tokens, f2e) >= 0.5
            assert (e_tokens, f_tokens) not in positive_keys


# ---------------------------------------------------------------------------
# Criterion 2: autodiff gradient checks


def test_criterion_2_autodiff_soundness():
    with criterion(2, "per-op and end-to-end gradient checks", 300):
        for kind in sorted(OP_CHECKS):
            fn, shapes, sampler, reject = OP_CHECKS[kind]
            for seed in range(100):
                err = ad.grad_check(fn, shapes, eps=1e-4, seed=seed, sampler=sampler, reject=reject)
                assert err < 1e-4, f"{kind} grad check failed at seed {seed}: {err}"

        # End-to-end tiny model in 64-bit mode.
        config = vdpwi.tiny_config(seed=3)
        model = vdpwi.VdpwiModel(config)
        rng = np.random.default_rng(0)
        dim = config.embedding_dim
        table = EmbeddingTable(
            dim,
            {f"e:w{i}": rng.standard_normal(dim) for i in range(6)}
            | {f"f:v{i}": rng.standard_normal(dim) for i in range(6)},
        )
        pair = SentencePair(0, ("w0", "w1", "w2", "w3"), ("v0", "v1", "v2"))
        gold = vdpwi.gold_distribution(EQ, np.float64)

        def loss_value() -> float:
            return float(ad.kl_loss(model.forward_pair(pair, table), gold).data)

        loss = ad.kl_loss(model.forward_pair(pair, table), gold)
        ad.backward(loss)
        analytic = {name: p.grad.copy() for name, p in model.params.items()}
        eps = 1e-5
        worst = 0.0
        for name, param in model.params.items():
            flat = param.data.reshape(-1)
            grads = analytic[name].reshape(-1)
            for idx in range(flat.size):
                original = flat[idx]
                flat[idx] = original + eps
                plus = loss_value()
                flat[idx] = original - eps
                minus = loss_value()
                flat[idx] = original
                numeric = (plus - minus) / (2 * eps)
                err = abs(grads[idx] - numeric) / max(1e-8, abs(grads[idx]) + abs(numeric))
                worst = max(worst, err)
        assert worst < 1e-3, f"end-to-end gradient error {worst}"


# ---------------------------------------------------------------------------
# Criterion 3: EM correctness on the cipher corpus


def test_criterion_3_em_correctness(cipher_corpus):
    with criterion(3, "EM log-likelihood monotone; cipher recovered at >= 95%", 120):
        pairs = cipher_corpus.pairs
        table_ef, hist1 = train_ibm1(pairs, 20)
        assert len(hist1) == 20
        for prev, cur in zip(hist1, hist1[1:]):
            assert cur >= prev - 1e-9 * abs(prev)
        model_ef, hist2 = train_ibm2(pairs, 20, table_ef)
        for prev, cur in zip(hist2, hist2[1:]):
            assert cur >= prev - 1e-9 * abs(prev)

        cipher = cipher_corpus.cipher
        recovered = 0
        for e_word, f_word in cipher.items():
            row = model_ef.table.t.get(e_word, {})
            if row and max(row, key=row.get) == f_word:
                recovered += 1
        assert recovered >= 0.95 * len(cipher), f"argmax recovery {recovered}/{len(cipher)}"

        table_fe, _ = train_ibm1(pairs, 5, Direction.F2E)
        model_fe, _ = train_ibm2(pairs, 5, table_fe, Direction.F2E)
        from divergescope.align import extract_dictionary

        dictionary = extract_dictionary(model_ef, model_fe, 0.5)
        exact = sum(
            1 for e_word, f_word in cipher.items() if dictionary.translations(e_word) == {f_word}
        )
        assert exact >= 0.95 * len(cipher), f"dictionary recovery {exact}/{len(cipher)}"


# ---------------------------------------------------------------------------
# Criterion 4: symmetrization laws


def test_criterion_4_symmetrization_laws():
    with criterion(4, "containment on 1,000 random alignment pairs + hand-traced fixture", 10):
        rng = random.Random(99)
        for _ in range(1000):
            e_len = rng.randint(1, 8)
            f_len = rng.randint(1, 8)
            cells = [(e, f) for e in range(e_len) for f in range(f_len)]
            fwd_links = frozenset(c for c in cells if rng.random() < 0.3)
            rev_links = frozenset(c for c in cells if rng.random() < 0.3)
            fwd = Alignment(fwd_links, e_len, f_len)
            rev = Alignment(rev_links, e_len, f_len)
            inter = symmetrize(fwd, rev, Heuristic.INTERSECTION).links
            gdfa = symmetrize(fwd, rev, Heuristic.GROW_DIAG_FINAL_AND).links
            union = symmetrize(fwd, rev, Heuristic.UNION).links
            assert inter <= gdfa <= union
        fwd = Alignment(frozenset({(0, 0), (1, 2)}), 2, 3)
        rev = Alignment(frozenset({(0, 0), (1, 1)}), 2, 3)
        merged = symmetrize(fwd, rev, Heuristic.GROW_DIAG_FINAL_AND)
        assert merged.links == {(0, 0), (1, 1), (1, 2)}


# ---------------------------------------------------------------------------
# Criterion 5: end-to-end discrimination ordering (3-seed median)


@pytest.fixture(scope="session")
def cipher_pipeline_runs(tmp_path_factory):
    # The bed keeps the EM corpus design (2,000 pairs, vocab 50, lengths 3-12,
    # 10% noise) and adds translation ambiguity: 40% of source words carry a
    # secondary translation used 30% of the time.  A discrete dictionary at
    # threshold 0.5 cannot represent the secondaries, while the embedding
    # space captures them, so the bed can separate soft semantic matching
    # from surface alignment features instead of saturating both.
    base = tmp_path_factory.mktemp("cipher_pipeline")
    corpus = make_cipher_corpus(
        2000,
        vocab_size=50,
        min_len=3,
        max_len=12,
        noise=0.1,
        seed=101,
        synonym_fraction=0.4,
        primary_probability=0.7,
    )
    write_corpus_files(corpus.pairs, base / "corpus.e", base / "corpus.f")
    results = {"vdpwi": [], "feat": [], "cosine": []}
    start = time.time()
    for seed in (1, 2, 3):
        cfg = PipelineConfig(
            corpus_source=str(base / "corpus.e"),
            corpus_target=str(base / "corpus.f"),
            out_dir=str(base / f"run{seed}"),
            seed=seed,
            datagen_positives=500,
            datagen_dev_positives=200,
            datagen_test_positives=100,
            embed_dim=32,
            embed_epochs=30,
            vdpwi_preset="desk",
        )
        artifacts = run_pipeline(cfg)
        for model_name in results:
            kv = dict(
                line.split("\t")
                for line in Path(artifacts[f"report_{model_name}"]).read_text().splitlines()
            )
            results[model_name].append(float(kv["overall_f"]))
    return results, time.time() - start


def test_criterion_5_end_to_end_discrimination(cipher_pipeline_runs):
    results, elapsed = cipher_pipeline_runs
    with criterion(5, "scorer ordering on held-out synthetic test (3-seed median)", 1800):
        med = {name: statistics.median(scores) for name, scores in results.items()}
        print(f"\n  3-seed overall F: vdpwi={results['vdpwi']} feat={results['feat']} cosine={results['cosine']}")
        print(f"  medians: vdpwi={med['vdpwi']:.4f} feat={med['feat']:.4f} cosine={med['cosine']:.4f}")
        print(f"  pipeline wall time for 3 seeds: {elapsed:.0f}s")
        assert med["vdpwi"] >= 0.90
        assert med["vdpwi"] >= med["feat"], "similarity model must match or beat the feature baseline"
        assert med["feat"] >= med["cosine"] - 0.02
        assert elapsed < 1800


# ---------------------------------------------------------------------------
# Criterion 6: evaluation oracles


def test_criterion_6_evaluation_oracles():
    with criterion(6, "threshold/PRF/kappa match independent oracles", 30):
        rng = random.Random(1234)
        for _ in range(1000):
            n = rng.randint(2, 50)
            scores = [round(rng.random(), 2) for _ in range(n)]
            labels = [EQ if rng.random() < 0.5 else DV for _ in range(n)]
            if len(set(labels)) < 2:
                labels[0], labels[-1] = EQ, DV
            threshold = tune_threshold(scores, labels)
            achieved = prf_report(predict_with_threshold(scores, threshold), labels).overall_f
            best = _brute_force_best_f(scores, labels)
            assert math.isclose(achieved, best, abs_tol=1e-12)

            predictions = [EQ if rng.random() < 0.5 else DV for _ in range(n)]
            report = prf_report(predictions, labels)
            tp = sum(1 for p, g in zip(predictions, labels) if p is EQ and g is EQ)
            fp = sum(1 for p, g in zip(predictions, labels) if p is EQ and g is DV)
            fn = sum(1 for p, g in zip(predictions, labels) if p is DV and g is EQ)
            tn = n - tp - fp - fn
            assert (report.tp, report.fp, report.fn, report.tn) == (tp, fp, fn, tn)

        for _ in range(1000):
            n_raters = rng.randint(2, 7)
            rows = []
            for _ in range(rng.randint(2, 25)):
                eq_count = rng.randint(0, n_raters)
                rows.append((eq_count, n_raters - eq_count))
            matrix = AnnotationMatrix(rows, n_raters)
            assert math.isclose(
                fleiss_kappa(matrix), _kappa_oracle(rows, n_raters), abs_tol=1e-9
            )

        assert fleiss_kappa(AnnotationMatrix([(5, 0), (0, 5)], 5)) == 1.0
        assert fleiss_kappa(AnnotationMatrix([(1, 1), (1, 1)], 2)) == pytest.approx(-1.0)


# ---------------------------------------------------------------------------
# Criterion 7: selection contract


def test_criterion_7_selection_contract():
    with criterion(7, "select_top sizes, dominance, and transform invariance", 10):
        rng = random.Random(4321)
        n = 10_001
        pairs = [SentencePair(i, (f"w{i}",), (f"v{i}",)) for i in range(n)]
        scores = [ScoredPair(i, rng.random()) for i in range(n)]
        kept = select_top(pairs, scores, 0.5)
        assert len(kept) == 5001
        by_id = {record.pair_id: record.score for record in scores}
        kept_ids = {p.id for p in kept}
        kept_scores = [by_id[i] for i in kept_ids]
        dropped_scores = [by_id[p.id] for p in pairs if p.id not in kept_ids]
        assert min(kept_scores) >= max(dropped_scores)
        transformed = [ScoredPair(r.pair_id, math.atan(5 * r.score) + 2) for r in scores]
        assert select_top(pairs, transformed, 0.5) == kept

        big = [SentencePair(i, ("w",), ("v",)) for i in range(120_000)]
        big_scores = [ScoredPair(i, rng.random()) for i in range(120_000)]
        assert len(select_top(big, big_scores, 0.9)) == 108_000


# ---------------------------------------------------------------------------
# Criterion 8: byte-identical reproducibility of the pipeline


def test_criterion_8_reproducibility(tmp_path):
    with criterion(8, "pipeline reruns are byte-identical on score/selection/report files", 600):
        corpus = make_cipher_corpus(300, vocab_size=30, min_len=3, max_len=10, noise=0.1, seed=55)
        write_corpus_files(corpus.pairs, tmp_path / "c.e", tmp_path / "c.f")
        outputs = []
        for name in ("a", "b"):
            out_dir = tmp_path / f"out_{name}"
            config_path = tmp_path / f"config_{name}.txt"
            config_path.write_text(
                "\n".join(
                    [
                        f"corpus.source = {tmp_path / 'c.e'}",
                        f"corpus.target = {tmp_path / 'c.f'}",
                        f"out.dir = {out_dir}",
                        "seed = 9",
                        "datagen.positives = 60",
                        "datagen.dev_positives = 40",
                        "datagen.test_positives = 40",
                        "embed.dim = 16",
                        "embed.epochs = 2",
                        "vdpwi.preset = desk",
                        "vdpwi.epochs = 2",
                    ]
                )
                + "\n",
                encoding="utf-8",
            )
            env = dict(os.environ)
            env.pop("PYTHONHASHSEED", None)  # distinct hash seeds per process
            proc = subprocess.run(
                [sys.executable, "-m", "divergescope.cli", "pipeline", "--config", str(config_path)],
                capture_output=True,
                text=True,
                env=env,
            )
            assert proc.returncode == 0, proc.stderr[-2000:]
            outputs.append(out_dir)

        compared = 0
        for sub in ("scores", "select", "eval"):
            dir_a = outputs[0] / sub
            dir_b = outputs[1] / sub
            names_a = sorted(p.name for p in dir_a.iterdir())
            assert names_a == sorted(p.name for p in dir_b.iterdir())
            for file_name in names_a:
                if file_name.endswith(".png"):
                    continue
                assert (dir_a / file_name).read_bytes() == (dir_b / file_name).read_bytes(), (
                    f"{sub}/{file_name} differs between reruns"
                )
                compared += 1
        assert compared >= 10
