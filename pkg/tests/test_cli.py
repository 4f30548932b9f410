import os

import pytest

from divergescope.cli import (
    PipelineConfig,
    Workspace,
    build_parser,
    config_lines,
    load_config,
    main,
)
from divergescope.corpus import Label, LabeledPair, SentencePair, write_corpus_files, write_pairs_tsv
from divergescope.errors import ConfigError


def test_load_config_defaults():
    cfg = load_config(None, [])
    assert cfg.datagen_positives == 5000
    assert cfg.datagen_ratio == 5
    assert cfg.align_dictionary_threshold == 0.5
    assert cfg.select_keep_fraction == 0.5


def test_load_config_file_and_overrides(tmp_path):
    config_path = tmp_path / "config.txt"
    config_path.write_text(
        "# comment\nseed = 42\ndatagen.ratio = 3\nembed.dim = 16\n", encoding="utf-8"
    )
    cfg = load_config(config_path, ["datagen.ratio=7"])
    assert cfg.seed == 42
    assert cfg.datagen_ratio == 7
    assert cfg.embed_dim == 16


def test_load_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(None, ["no.such.key=1"])


def test_load_config_bad_value():
    with pytest.raises(ConfigError):
        load_config(None, ["seed=abc"])


def test_env_threads(monkeypatch):
    monkeypatch.setenv("DIVERGESCOPE_THREADS", "4")
    cfg = load_config(None, [])
    assert cfg.threads == 4
    monkeypatch.setenv("DIVERGESCOPE_THREADS", "zero")
    with pytest.raises(ConfigError):
        load_config(None, [])


def test_config_lines_round_trip():
    cfg = PipelineConfig(seed=9)
    lines = config_lines(cfg)
    assert "seed = 9" in lines
    assert any(line.startswith("datagen.ratio = ") for line in lines)


def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_no_subcommand_exits_1(capsys):
    assert main([]) == 1


def test_missing_config_key_for_align(tmp_path, capsys):
    assert main(["align", "--set", f"out.dir={tmp_path}"]) == 1
    assert "corpus.source" in capsys.readouterr().err


def test_score_requires_model_or_file(tmp_path, capsys):
    pairs = [SentencePair(0, ("a",), ("x",))]
    pairs_path = tmp_path / "pairs.tsv"
    write_pairs_tsv(pairs, pairs_path)
    code = main(["score", "--pairs", str(pairs_path), "--set", f"out.dir={tmp_path}"])
    assert code == 1


def test_score_external_scores_file(tmp_path):
    pairs = [SentencePair(0, ("a",), ("x",)), SentencePair(1, ("b",), ("y",))]
    pairs_path = tmp_path / "pairs.tsv"
    write_pairs_tsv(pairs, pairs_path)
    ext = tmp_path / "external.tsv"
    ext.write_text("0\t0.25\n1\t0.75\n", encoding="utf-8")
    out = tmp_path / "scores.tsv"
    code = main(
        [
            "score",
            "--pairs",
            str(pairs_path),
            "--scores-file",
            str(ext),
            "--out",
            str(out),
            "--set",
            f"out.dir={tmp_path / 'ws'}",
        ]
    )
    assert code == 0
    assert out.read_text(encoding="utf-8") == "0\t0.250000\n1\t0.750000\n"


def test_score_external_bad_scores_exit_2(tmp_path):
    pairs = [SentencePair(0, ("a",), ("x",))]
    pairs_path = tmp_path / "pairs.tsv"
    write_pairs_tsv(pairs, pairs_path)
    ext = tmp_path / "external.tsv"
    ext.write_text("0\tNaN\n", encoding="utf-8")
    code = main(
        ["score", "--pairs", str(pairs_path), "--scores-file", str(ext),
         "--out", str(tmp_path / "s.tsv"), "--set", f"out.dir={tmp_path / 'ws'}"]
    )
    assert code == 2


def test_tune_eval_kappa_select_chain(tmp_path, capsys):
    ws = tmp_path / "ws"
    labeled = [
        LabeledPair(SentencePair(0, ("a",), ("x",)), Label.EQUIVALENT),
        LabeledPair(SentencePair(1, ("b",), ("y",)), Label.EQUIVALENT),
        LabeledPair(SentencePair(2, ("c",), ("z",)), Label.DIVERGENT),
        LabeledPair(SentencePair(3, ("d",), ("w",)), Label.DIVERGENT),
    ]
    labels_path = tmp_path / "labeled.tsv"
    write_pairs_tsv(labeled, labels_path)
    scores_path = tmp_path / "scores.tsv"
    scores_path.write_text("0\t0.9\n1\t0.8\n2\t0.2\n3\t0.1\n", encoding="utf-8")

    code = main(
        ["tune", "--scores", str(scores_path), "--labels", str(labels_path),
         "--name", "demo", "--set", f"out.dir={ws}"]
    )
    assert code == 0
    threshold_path = ws / "eval" / "demo.threshold.txt"
    assert threshold_path.exists()
    threshold = float(threshold_path.read_text().strip())
    assert 0.2 < threshold < 0.8

    code = main(
        ["eval", "--scores", str(scores_path), "--labels", str(labels_path),
         "--name", "demo", "--set", f"out.dir={ws}"]
    )
    assert code == 0
    report_kv = (ws / "eval" / "demo.report.tsv").read_text(encoding="utf-8")
    assert "overall_f\t1.000000" in report_kv
    assert (ws / "figures" / "demo_score_hist.png").exists()
    assert (ws / "figures" / "demo_threshold_curve.png").exists()

    annotations = tmp_path / "annotations.tsv"
    annotations.write_text("0\t5\t0\n1\t1\t4\n2\t2\t3\n", encoding="utf-8")
    code = main(["kappa", "--annotations", str(annotations), "--set", f"out.dir={ws}"])
    assert code == 0
    assert (ws / "eval" / "kappa.txt").exists()

    corpus_e = tmp_path / "corpus.e"
    corpus_f = tmp_path / "corpus.f"
    write_corpus_files([lp.pair for lp in labeled], corpus_e, corpus_f)
    code = main(
        ["select", "--scores", str(scores_path),
         "--set", f"out.dir={ws}",
         "--set", f"corpus.source={corpus_e}",
         "--set", f"corpus.target={corpus_f}",
         "--set", "select.keep_fraction=0.5"]
    )
    assert code == 0
    kept = (ws / "select" / "kept_ids.txt").read_text().split()
    assert kept == ["0", "1"]
    manifest = (ws / "select.manifest").read_text(encoding="utf-8")
    assert "subcommand = select" in manifest
    assert "sha256:" in manifest


def test_score_cosine_three_pair_corpus(tmp_path):
    import numpy as np

    from divergescope.embed import EmbeddingTable, save_embeddings

    ws = Workspace(tmp_path / "ws")
    rng = np.random.default_rng(0)
    table = EmbeddingTable(
        4,
        {f"e:{t}": rng.standard_normal(4) for t in ("a", "b", "c")}
        | {f"f:{t}": rng.standard_normal(4) for t in ("x", "y", "z")},
    )
    save_embeddings(table, ws.embeddings())
    pairs = [
        SentencePair(0, ("a",), ("x",)),
        SentencePair(1, ("b",), ("y",)),
        SentencePair(2, ("c",), ("z",)),
    ]
    pairs_path = tmp_path / "pairs.tsv"
    write_pairs_tsv(pairs, pairs_path)
    out = tmp_path / "cosine.tsv"
    code = main(
        ["score", "--model", "cosine", "--pairs", str(pairs_path),
         "--out", str(out), "--set", f"out.dir={ws.root}"]
    )
    assert code == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    for line in lines:
        pair_id, score = line.split("\t")
        assert -1.0 <= float(score) <= 1.0


def test_parser_lists_all_subcommands():
    parser = build_parser()
    text = parser.format_help()
    for name in ("align", "dict", "datagen", "train-embed", "train-vdpwi",
                 "train-feat", "score", "tune", "eval", "kappa", "select", "pipeline"):
        assert name in text


def test_workspace_paths_create_parents(tmp_path):
    ws = Workspace(tmp_path / "deep")
    path = ws.scores("vdpwi", "test")
    assert path.parent.is_dir()
