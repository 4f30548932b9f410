"""Subcommand front end wiring the pipeline together from a single flat
`key = value` configuration file, with flag overrides.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  Every run writes a manifest (config snapshot, seeds, input hashes,
version) next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import random
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, align, datagen, embed, features, selection, vdpwi
from . import evaluation as evalmod
from . import report as reportmod
from .corpus import (
    Label,
    LabeledPair,
    SentencePair,
    deduplicate,
    load_parallel,
    read_labeled_tsv,
    read_pairs_tsv,
    write_pairs_tsv,
)
from .errors import ConfigError, DataError, DivergescopeError, NumericalError

log = logging.getLogger(__name__)

MODELS = ("vdpwi", "feat", "cosine")


@dataclass
class PipelineConfig:
    corpus_source: str = ""
    corpus_target: str = ""
    out_dir: str = "out"
    embeddings_path: str = ""
    seed: int = 13
    threads: int = 1
    corpus_dedup: bool = True
    align_iterations_model1: int = 5
    align_iterations_model2: int = 5
    align_dictionary_threshold: float = 0.5
    align_dictionary_sample: int = 1000000
    align_symmetrization: str = "grow-diag-final-and"
    datagen_positives: int = 5000
    datagen_dev_positives: int = 500
    datagen_test_positives: int = 500
    datagen_ratio: int = 5
    datagen_max_length_ratio: float = 2.0
    datagen_min_coverage: float = 0.5
    datagen_bidirectional_coverage: bool = True
    datagen_window: int = 1000
    embed_dim: int = 200
    embed_epochs: int = 5
    embed_window: int = 5
    embed_negatives: int = 5
    embed_learning_rate: float = 0.025
    embed_subsample: float = 0.0
    vdpwi_preset: str = "default"
    vdpwi_epochs: int = 0
    vdpwi_hidden: int = 0
    vdpwi_fc: int = 0
    # 0 means "keep the preset's value"
    vdpwi_learning_rate: float = 0.0
    vdpwi_lr_decay: float = 0.0
    vdpwi_optimizer: str = "adam"
    features_heuristics: str = "all"
    features_l2: float = 1e-4
    features_learning_rate: float = 0.1
    features_epochs: int = 500
    eval_average: str = "weighted"
    select_keep_fraction: float = 0.5
    select_model: str = "vdpwi"

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.vdpwi_preset not in ("default", "desk", "tiny"):
            raise ConfigError(f"unknown vdpwi preset {self.vdpwi_preset!r}")
        if self.select_model not in MODELS:
            raise ConfigError(f"select.model must be one of {MODELS}")
        if self.eval_average not in ("weighted", "macro"):
            raise ConfigError(f"eval.average must be weighted or macro")
        if self.features_heuristics not in ("all", "union", "intersection", "grow-diag-final-and"):
            raise ConfigError(f"unknown features.heuristics {self.features_heuristics!r}")
        if not (0.0 < self.select_keep_fraction <= 1.0):
            raise ConfigError("select.keep_fraction must be in (0, 1]")
        try:
            align.Heuristic(self.align_symmetrization)
        except ValueError:
            raise ConfigError(
                f"unknown align.symmetrization {self.align_symmetrization!r}"
            ) from None


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_KEY_TO_FIELD = {name.replace("_", ".", 1): name for name in _FIELDS}


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r}") from None
    return raw


def parse_config_lines(lines: Sequence[str], origin: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_config(path: str | None, overrides: Sequence[str]) -> PipelineConfig:
    cfg = PipelineConfig()
    entries: dict[str, str] = {}
    if path:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        entries.update(parse_config_lines(lines, str(path)))
    for item in overrides:
        entries.update(parse_config_lines([item], "--set"))
    for key, raw in entries.items():
        field_name = _KEY_TO_FIELD.get(key)
        if field_name is None:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, field_name, _coerce(_FIELDS[field_name], raw))
    env_threads = os.environ.get("DIVERGESCOPE_THREADS")
    if env_threads:
        try:
            cfg.threads = int(env_threads)
        except ValueError:
            raise ConfigError(f"DIVERGESCOPE_THREADS must be an integer, got {env_threads!r}")
    cfg.validate()
    return cfg


def config_lines(cfg: PipelineConfig) -> list[str]:
    return [
        f"{key} = {getattr(cfg, field_name)}"
        for key, field_name in sorted(_KEY_TO_FIELD.items())
    ]


# ---------------------------------------------------------------------------
# Workspace layout and manifests


class Workspace:
    def __init__(self, out_dir: str):
        self.root = Path(out_dir)

    def path(self, *parts) -> Path:
        target = self.root.joinpath(*parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    # Fixed artifact names so subcommands compose without flag plumbing.
    def ibm_model(self, direction: str) -> Path:
        return self.path("align", f"{direction}.ibm2")

    def alignment_file(self, name: str) -> Path:
        return self.path("align", f"{name}.align")

    def dictionary(self, direction: str) -> Path:
        return self.path("dictionary", f"{direction}.tsv")

    def synthetic(self, split: str) -> Path:
        return self.path("synthetic", f"{split}.tsv")

    def embeddings(self) -> Path:
        return self.path("embeddings", "embeddings.txt")

    def vdpwi_checkpoint(self) -> Path:
        return self.path("models", "vdpwi.ckpt")

    def linear_model(self) -> Path:
        return self.path("models", "linear.txt")

    def scores(self, model: str, split: str) -> Path:
        return self.path("scores", f"{model}.{split}.tsv")

    def threshold(self, model: str) -> Path:
        return self.path("eval", f"{model}.threshold.txt")

    def report(self, model: str, suffix: str) -> Path:
        return self.path("eval", f"{model}.report.{suffix}")

    def figure(self, name: str) -> Path:
        return self.path("figures", name)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    ws: Workspace,
    subcommand: str,
    cfg: PipelineConfig,
    inputs: Sequence[Path],
    outputs: Sequence[Path],
) -> Path:
    lines = [f"tool = divergescope {__version__}", f"subcommand = {subcommand}"]
    lines += [f"config.{line}" for line in config_lines(cfg)]
    for path in inputs:
        lines.append(f"input.{Path(path).name} = sha256:{_sha256(Path(path))}")
    for path in outputs:
        resolved = Path(path).resolve()
        try:
            shown = resolved.relative_to(ws.root.resolve())
        except ValueError:
            shown = resolved
        lines.append(f"output = {shown}")
    manifest = ws.path(f"{subcommand}.manifest")
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def _require(cfg: PipelineConfig, *fields: str) -> None:
    for field_name in fields:
        if not getattr(cfg, field_name):
            key = field_name.replace("_", ".", 1)
            raise ConfigError(f"config key {key} is required for this subcommand")


def load_corpus(cfg: PipelineConfig) -> list[SentencePair]:
    _require(cfg, "corpus_source", "corpus_target")
    pairs, rejected = load_parallel(cfg.corpus_source, cfg.corpus_target)
    if rejected:
        log.info("dropped %d pair(s) with an empty side", rejected)
    if cfg.corpus_dedup:
        pairs, removed = deduplicate(pairs)
        if removed:
            log.info("removed %d duplicate pair(s)", removed)
    if not pairs:
        raise DataError("corpus is empty after loading")
    return pairs


def _aligner_sample(pairs: list[SentencePair], cfg: PipelineConfig) -> list[SentencePair]:
    if len(pairs) <= cfg.align_dictionary_sample:
        return pairs
    rng = random.Random(cfg.seed)
    return rng.sample(pairs, cfg.align_dictionary_sample)


def train_aligners(
    pairs: list[SentencePair], cfg: PipelineConfig
) -> tuple[align.Ibm2Model, align.Ibm2Model]:
    sample = _aligner_sample(pairs, cfg)
    models = []
    for direction in (align.Direction.E2F, align.Direction.F2E):
        table, _ = align.train_ibm1(sample, cfg.align_iterations_model1, direction)
        model, _ = align.train_ibm2(sample, cfg.align_iterations_model2, table, direction)
        models.append(model)
    return models[0], models[1]


def symmetrized_alignments(
    pairs: Sequence[SentencePair],
    model_ef: align.Ibm2Model,
    model_fe: align.Ibm2Model,
    heuristics: Sequence[align.Heuristic],
) -> dict[align.Heuristic, list[align.Alignment]]:
    forward = [align.viterbi_align(model_ef, p) for p in pairs]
    reverse = [align.viterbi_align(model_fe, p) for p in pairs]
    return {
        heuristic: [align.symmetrize(f, r, heuristic) for f, r in zip(forward, reverse)]
        for heuristic in heuristics
    }


def split_positive_pools(
    pairs: list[SentencePair], cfg: PipelineConfig
) -> tuple[list[SentencePair], list[SentencePair], list[SentencePair]]:
    shuffled = list(pairs)
    random.Random(cfg.seed).shuffle(shuffled)
    n = len(shuffled)
    n_dev = min(cfg.datagen_dev_positives, n // 4)
    n_test = min(cfg.datagen_test_positives, n // 4)
    n_train = min(cfg.datagen_positives, n - n_dev - n_test)
    train = shuffled[:n_train]
    dev = shuffled[n_train : n_train + n_dev]
    test = shuffled[n_train + n_dev : n_train + n_dev + n_test]
    return train, dev, test


def build_synthetic_split(
    positives: list[SentencePair],
    dictionary: align.BilingualDictionary,
    cfg: PipelineConfig,
    seed_offset: int,
) -> datagen.SyntheticDataset:
    pool = datagen.generate_negatives(
        positives,
        dictionary,
        max_length_ratio=cfg.datagen_max_length_ratio,
        min_coverage=cfg.datagen_min_coverage,
        window=cfg.datagen_window,
        bidirectional_coverage=cfg.datagen_bidirectional_coverage,
    )
    return datagen.assemble_dataset(
        positives, pool, ratio=cfg.datagen_ratio, seed=cfg.seed + seed_offset
    )


def build_vdpwi_config(cfg: PipelineConfig, embedding_dim: int) -> vdpwi.VdpwiConfig:
    if cfg.vdpwi_preset == "desk":
        config = vdpwi.desk_config(embedding_dim, seed=cfg.seed)
    elif cfg.vdpwi_preset == "tiny":
        config = vdpwi.tiny_config(seed=cfg.seed)
        config.embedding_dim = embedding_dim
    else:
        config = vdpwi.VdpwiConfig(embedding_dim=embedding_dim, seed=cfg.seed)
    if cfg.vdpwi_epochs:
        config.epochs = cfg.vdpwi_epochs
    if cfg.vdpwi_hidden:
        config.lstm_hidden_dim = cfg.vdpwi_hidden
    if cfg.vdpwi_fc:
        config.fc_dim = cfg.vdpwi_fc
    if cfg.vdpwi_learning_rate:
        config.learning_rate = cfg.vdpwi_learning_rate
    if cfg.vdpwi_lr_decay:
        config.lr_decay = cfg.vdpwi_lr_decay
    config.optimizer = cfg.vdpwi_optimizer
    config.validate()
    return config


def feature_heuristics(cfg: PipelineConfig) -> tuple[align.Heuristic, ...]:
    if cfg.features_heuristics == "all":
        return features.HEURISTIC_ORDER
    return (align.Heuristic(cfg.features_heuristics),)


def pair_feature_vector(
    pair: SentencePair,
    model_ef: align.Ibm2Model,
    model_fe: align.Ibm2Model,
    dictionary: align.BilingualDictionary,
    heuristics: Sequence[align.Heuristic],
) -> features.FeatureVector:
    forward = align.viterbi_align(model_ef, pair)
    reverse = align.viterbi_align(model_fe, pair)
    per_heuristic = {h: align.symmetrize(forward, reverse, h) for h in heuristics}
    return features.extract_features(pair, per_heuristic, dictionary, heuristics)


def score_pairs(
    model_name: str,
    pairs: Sequence[SentencePair],
    ws: Workspace,
    cfg: PipelineConfig,
) -> list[selection.ScoredPair]:
    if model_name == "cosine":
        table = embed.load_embeddings(ws.embeddings())
        return [selection.ScoredPair(p.id, embed.cosine_score(p, table)) for p in pairs]
    if model_name == "vdpwi":
        table = embed.load_embeddings(ws.embeddings())
        model = vdpwi.load_checkpoint(ws.vdpwi_checkpoint())
        return [selection.ScoredPair(p.id, vdpwi.score_pair(model, p, table)) for p in pairs]
    if model_name == "feat":
        linear = features.load_linear(ws.linear_model())
        model_ef = align.load_ibm2(ws.ibm_model("e2f"))
        model_fe = align.load_ibm2(ws.ibm_model("f2e"))
        dictionary = align.read_dictionary(ws.dictionary("e2f"), ws.dictionary("f2e"))
        heuristics = feature_heuristics(cfg)
        return [
            selection.ScoredPair(
                p.id,
                features.score_linear(
                    linear, pair_feature_vector(p, model_ef, model_fe, dictionary, heuristics)
                ),
            )
            for p in pairs
        ]
    raise ConfigError(f"unknown model {model_name!r}")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_align(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    pairs = load_corpus(cfg)
    model_ef, model_fe = train_aligners(pairs, cfg)
    align.save_ibm2(model_ef, ws.ibm_model("e2f"))
    align.save_ibm2(model_fe, ws.ibm_model("f2e"))
    forward = [align.viterbi_align(model_ef, p) for p in pairs]
    reverse = [align.viterbi_align(model_fe, p) for p in pairs]
    align.write_alignments(forward, ws.alignment_file("e2f"))
    align.write_alignments(reverse, ws.alignment_file("f2e"))
    outputs = [ws.ibm_model("e2f"), ws.ibm_model("f2e"), ws.alignment_file("e2f"), ws.alignment_file("f2e")]
    for heuristic in align.Heuristic:
        merged = [align.symmetrize(f, r, heuristic) for f, r in zip(forward, reverse)]
        target = ws.alignment_file(heuristic.value)
        align.write_alignments(merged, target)
        outputs.append(target)
    write_manifest(ws, "align", cfg, [Path(cfg.corpus_source), Path(cfg.corpus_target)], outputs)


def cmd_dict(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    model_ef = align.load_ibm2(ws.ibm_model("e2f"))
    model_fe = align.load_ibm2(ws.ibm_model("f2e"))
    dictionary = align.extract_dictionary(model_ef, model_fe, cfg.align_dictionary_threshold)
    align.write_dictionary_side(dictionary.e2f, ws.dictionary("e2f"))
    align.write_dictionary_side(dictionary.f2e, ws.dictionary("f2e"))
    write_manifest(
        ws,
        "dict",
        cfg,
        [ws.ibm_model("e2f"), ws.ibm_model("f2e")],
        [ws.dictionary("e2f"), ws.dictionary("f2e")],
    )


def cmd_datagen(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    pairs = load_corpus(cfg)
    dictionary = align.read_dictionary(ws.dictionary("e2f"), ws.dictionary("f2e"))
    train_pos, dev_pos, test_pos = split_positive_pools(pairs, cfg)
    outputs = []
    for offset, (split, positives) in enumerate(
        (("train", train_pos), ("dev", dev_pos), ("test", test_pos))
    ):
        if not positives:
            log.warning("no positives available for the %s split; skipping", split)
            continue
        dataset = build_synthetic_split(positives, dictionary, cfg, offset)
        write_pairs_tsv(dataset.examples, ws.synthetic(split))
        outputs.append(ws.synthetic(split))
        log.info(
            "%s split: %d positives, %d negatives",
            split,
            dataset.positive_count,
            dataset.negative_count,
        )
    write_manifest(ws, "datagen", cfg, [ws.dictionary("e2f"), ws.dictionary("f2e")], outputs)


def cmd_train_embed(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    if cfg.embeddings_path:
        table = embed.load_embeddings(cfg.embeddings_path)
        embed.save_embeddings(table, ws.embeddings())
        write_manifest(ws, "train-embed", cfg, [Path(cfg.embeddings_path)], [ws.embeddings()])
        return
    pairs = load_corpus(cfg)
    heuristic = align.Heuristic(cfg.align_symmetrization)
    alignment_path = ws.alignment_file(heuristic.value)
    alignments = align.read_alignments(alignment_path, pairs) if alignment_path.exists() else None
    table = embed.train_bilingual_embeddings(
        pairs,
        alignments,
        dim=cfg.embed_dim,
        epochs=cfg.embed_epochs,
        window=cfg.embed_window,
        negatives_per_target=cfg.embed_negatives,
        seed=cfg.seed,
        learning_rate=cfg.embed_learning_rate,
        subsample=cfg.embed_subsample,
    )
    embed.save_embeddings(table, ws.embeddings())
    inputs = [Path(cfg.corpus_source), Path(cfg.corpus_target)]
    if alignments is not None:
        inputs.append(alignment_path)
    write_manifest(ws, "train-embed", cfg, inputs, [ws.embeddings()])


def cmd_train_vdpwi(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    train_examples = read_labeled_tsv(ws.synthetic("train"))
    dev_examples = read_labeled_tsv(ws.synthetic("dev")) if ws.synthetic("dev").exists() else []
    table = embed.load_embeddings(ws.embeddings())
    config = build_vdpwi_config(cfg, table.dim)
    positives = sum(1 for ex in train_examples if ex.label is Label.EQUIVALENT)
    dataset = datagen.SyntheticDataset(
        train_examples, positives, len(train_examples) - positives, cfg.seed
    )
    model, history = vdpwi.train(dataset, dev_examples, config, table)
    vdpwi.save_checkpoint(model, ws.vdpwi_checkpoint())
    history_path = ws.path("models", "vdpwi.history.tsv")
    with open(history_path, "w", encoding="utf-8") as out:
        out.write("epoch\tloss\tpearson\n")
        for entry in history:
            out.write(f"{entry['epoch']}\t{entry['loss']:.6f}\t{entry['pearson']:.6f}\n")
    reportmod.render_training_curve(history, ws.figure("vdpwi_training.png"))
    write_manifest(
        ws,
        "train-vdpwi",
        cfg,
        [ws.synthetic("train"), ws.embeddings()],
        [ws.vdpwi_checkpoint(), history_path, ws.figure("vdpwi_training.png")],
    )


def cmd_train_feat(cfg: PipelineConfig) -> None:
    ws = Workspace(cfg.out_dir)
    train_examples = read_labeled_tsv(ws.synthetic("train"))
    model_ef = align.load_ibm2(ws.ibm_model("e2f"))
    model_fe = align.load_ibm2(ws.ibm_model("f2e"))
    dictionary = align.read_dictionary(ws.dictionary("e2f"), ws.dictionary("f2e"))
    heuristics = feature_heuristics(cfg)
    vectors = [
        pair_feature_vector(ex.pair, model_ef, model_fe, dictionary, heuristics)
        for ex in train_examples
    ]
    labels = [1.0 if ex.label is Label.EQUIVALENT else 0.0 for ex in train_examples]
    matrix = np.stack([v.values for v in vectors])
    linear = features.train_linear(
        matrix,
        np.asarray(labels),
        vectors[0].names,
        l2_strength=cfg.features_l2,
        epochs=cfg.features_epochs,
        learning_rate=cfg.features_learning_rate,
        seed=cfg.seed,
    )
    features.save_linear(linear, ws.linear_model())
    dump_path = ws.path("models", "train.features.tsv")
    features.write_feature_dump(vectors, dump_path)
    log.info("linear classifier training accuracy: %.4f", linear.train_accuracy)
    write_manifest(
        ws,
        "train-feat",
        cfg,
        [ws.synthetic("train")],
        [ws.linear_model(), dump_path],
    )


def _read_any_pairs(path) -> list[SentencePair]:
    try:
        return [ex.pair for ex in read_labeled_tsv(path)]
    except DataError:
        return read_pairs_tsv(path)


def cmd_score(cfg: PipelineConfig, args) -> None:
    ws = Workspace(cfg.out_dir)
    pairs = _read_any_pairs(args.pairs)
    out_path = Path(args.out) if args.out else ws.scores(args.model or "external", Path(args.pairs).stem)
    if args.scores_file:
        records = selection.ingest_scores(args.scores_file, {p.id for p in pairs})
        if len(records) != len(pairs):
            raise DataError(
                f"{args.scores_file}: {len(records)} scores for {len(pairs)} pairs"
            )
    else:
        if not args.model:
            raise ConfigError("score requires --model or --scores-file")
        records = score_pairs(args.model, pairs, ws, cfg)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    selection.write_scores(records, out_path)
    inputs = [Path(args.pairs)] + ([Path(args.scores_file)] if args.scores_file else [])
    write_manifest(ws, "score", cfg, inputs, [out_path])


def cmd_tune(cfg: PipelineConfig, args) -> None:
    ws = Workspace(cfg.out_dir)
    labeled = read_labeled_tsv(args.labels)
    labels = {ex.pair.id: ex.label for ex in labeled}
    records = selection.ingest_scores(args.scores, set(labels))
    threshold = evalmod.tune_threshold_by_id(
        [(r.pair_id, r.score) for r in records], labels, cfg.eval_average
    )
    out_path = Path(args.out) if args.out else ws.threshold(args.name)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(f"{threshold:.17g}\n", encoding="utf-8")
    scores = [r.score for r in records]
    gold = [labels[r.pair_id] for r in records]
    curve_path = ws.figure(f"{args.name}_threshold_curve.png")
    reportmod.render_threshold_curve(scores, gold, threshold, curve_path, cfg.eval_average)
    write_manifest(ws, "tune", cfg, [Path(args.scores), Path(args.labels)], [out_path, curve_path])
    print(f"threshold\t{threshold:.6f}")


def cmd_eval(cfg: PipelineConfig, args) -> None:
    ws = Workspace(cfg.out_dir)
    labeled = read_labeled_tsv(args.labels)
    labels = {ex.pair.id: ex.label for ex in labeled}
    records = selection.ingest_scores(args.scores, set(labels))
    if args.threshold is not None:
        threshold = float(args.threshold)
    else:
        threshold_path = Path(args.threshold_file) if args.threshold_file else ws.threshold(args.name)
        threshold = float(threshold_path.read_text().strip())
    scores = [r.score for r in records]
    gold = [labels[r.pair_id] for r in records]
    predictions = evalmod.predict_with_threshold(scores, threshold)
    result = evalmod.prf_report(predictions, gold, cfg.eval_average)
    text_path = ws.report(args.name, "txt")
    kv_path = ws.report(args.name, "tsv")
    text_path.write_text(
        evalmod.format_report_text(result, title=f"{args.name} (threshold {threshold:.6f})"),
        encoding="utf-8",
    )
    kv_path.write_text("\n".join(evalmod.report_to_kv(result)) + "\n", encoding="utf-8")
    hist_path = ws.figure(f"{args.name}_score_hist.png")
    reportmod.render_score_histogram(scores, gold, hist_path, title=f"{args.name} scores")
    write_manifest(
        ws, "eval", cfg, [Path(args.scores), Path(args.labels)], [text_path, kv_path, hist_path]
    )
    sys.stdout.write(evalmod.format_report_text(result, title=args.name))


def cmd_kappa(cfg: PipelineConfig, args) -> None:
    ws = Workspace(cfg.out_dir)
    matrix = evalmod.read_annotations(args.annotations)
    kappa = evalmod.fleiss_kappa(matrix)
    votes = evalmod.majority_vote(matrix)
    divergent = sum(1 for label, _ in votes if label is Label.DIVERGENT)
    out_path = Path(args.out) if args.out else ws.path("eval", "kappa.txt")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        f"kappa\t{kappa:.6f}\n"
        f"items\t{len(matrix.rows)}\n"
        f"raters\t{matrix.raters_per_item}\n"
        f"divergent_fraction\t{divergent / len(votes):.6f}\n",
        encoding="utf-8",
    )
    write_manifest(ws, "kappa", cfg, [Path(args.annotations)], [out_path])
    print(f"kappa\t{kappa:.6f}")


def cmd_select(cfg: PipelineConfig, args) -> None:
    ws = Workspace(cfg.out_dir)
    pairs = load_corpus(cfg)
    scores_path = Path(args.scores) if args.scores else ws.scores(cfg.select_model, "corpus")
    records = selection.ingest_scores(scores_path, {p.id for p in pairs})
    kept = selection.select_top(pairs, records, cfg.select_keep_fraction)
    e_path = ws.path("select", "corpus.e")
    f_path = ws.path("select", "corpus.f")
    ids_path = ws.path("select", "kept_ids.txt")
    selection.write_selection(kept, e_path, f_path, ids_path)
    log.info("kept %d of %d pairs", len(kept), len(pairs))
    write_manifest(ws, "select", cfg, [scores_path], [e_path, f_path, ids_path])


def run_pipeline(cfg: PipelineConfig) -> dict[str, Path]:
    """Run the full chain; returns the key artifact paths."""
    ws = Workspace(cfg.out_dir)
    pairs = load_corpus(cfg)
    log.info("pipeline: %d corpus pairs", len(pairs))

    model_ef, model_fe = train_aligners(pairs, cfg)
    align.save_ibm2(model_ef, ws.ibm_model("e2f"))
    align.save_ibm2(model_fe, ws.ibm_model("f2e"))
    forward = [align.viterbi_align(model_ef, p) for p in pairs]
    reverse = [align.viterbi_align(model_fe, p) for p in pairs]
    align.write_alignments(forward, ws.alignment_file("e2f"))
    align.write_alignments(reverse, ws.alignment_file("f2e"))
    merged_by_heuristic = {}
    for heuristic in align.Heuristic:
        merged = [align.symmetrize(f, r, heuristic) for f, r in zip(forward, reverse)]
        merged_by_heuristic[heuristic] = merged
        align.write_alignments(merged, ws.alignment_file(heuristic.value))

    dictionary = align.extract_dictionary(model_ef, model_fe, cfg.align_dictionary_threshold)
    align.write_dictionary_side(dictionary.e2f, ws.dictionary("e2f"))
    align.write_dictionary_side(dictionary.f2e, ws.dictionary("f2e"))

    train_pos, dev_pos, test_pos = split_positive_pools(pairs, cfg)
    datasets = {}
    for offset, (split, positives) in enumerate(
        (("train", train_pos), ("dev", dev_pos), ("test", test_pos))
    ):
        if not positives:
            raise DataError(f"corpus too small to populate the {split} positives split")
        dataset = build_synthetic_split(positives, dictionary, cfg, offset)
        datasets[split] = dataset
        write_pairs_tsv(dataset.examples, ws.synthetic(split))
        log.info("%s split: %d+, %d-", split, dataset.positive_count, dataset.negative_count)

    if cfg.embeddings_path:
        table = embed.load_embeddings(cfg.embeddings_path)
    else:
        heuristic = align.Heuristic(cfg.align_symmetrization)
        table = embed.train_bilingual_embeddings(
            pairs,
            merged_by_heuristic[heuristic],
            dim=cfg.embed_dim,
            epochs=cfg.embed_epochs,
            window=cfg.embed_window,
            negatives_per_target=cfg.embed_negatives,
            seed=cfg.seed,
            learning_rate=cfg.embed_learning_rate,
            subsample=cfg.embed_subsample,
        )
    embed.save_embeddings(table, ws.embeddings())

    config = build_vdpwi_config(cfg, table.dim)
    model, history = vdpwi.train(datasets["train"], datasets["dev"].examples, config, table)
    vdpwi.save_checkpoint(model, ws.vdpwi_checkpoint())
    reportmod.render_training_curve(history, ws.figure("vdpwi_training.png"))

    heuristics = feature_heuristics(cfg)
    train_vectors = [
        pair_feature_vector(ex.pair, model_ef, model_fe, dictionary, heuristics)
        for ex in datasets["train"].examples
    ]
    train_labels = np.asarray(
        [1.0 if ex.label is Label.EQUIVALENT else 0.0 for ex in datasets["train"].examples]
    )
    linear = features.train_linear(
        np.stack([v.values for v in train_vectors]),
        train_labels,
        train_vectors[0].names,
        l2_strength=cfg.features_l2,
        epochs=cfg.features_epochs,
        learning_rate=cfg.features_learning_rate,
        seed=cfg.seed,
    )
    features.save_linear(linear, ws.linear_model())
    features.write_feature_dump(train_vectors, ws.path("models", "train.features.tsv"))

    def model_scores(model_name: str, examples: Sequence[LabeledPair]) -> list[selection.ScoredPair]:
        if model_name == "cosine":
            return [
                selection.ScoredPair(ex.pair.id, embed.cosine_score(ex.pair, table))
                for ex in examples
            ]
        if model_name == "vdpwi":
            return [
                selection.ScoredPair(ex.pair.id, vdpwi.score_pair(model, ex.pair, table))
                for ex in examples
            ]
        return [
            selection.ScoredPair(
                ex.pair.id,
                features.score_linear(
                    linear,
                    pair_feature_vector(ex.pair, model_ef, model_fe, dictionary, heuristics),
                ),
            )
            for ex in examples
        ]

    artifacts: dict[str, Path] = {
        "train_tsv": ws.synthetic("train"),
        "dev_tsv": ws.synthetic("dev"),
        "test_tsv": ws.synthetic("test"),
        "embeddings": ws.embeddings(),
        "vdpwi_checkpoint": ws.vdpwi_checkpoint(),
        "linear_model": ws.linear_model(),
    }
    for model_name in MODELS:
        dev_records = model_scores(model_name, datasets["dev"].examples)
        test_records = model_scores(model_name, datasets["test"].examples)
        selection.write_scores(dev_records, ws.scores(model_name, "dev"))
        selection.write_scores(test_records, ws.scores(model_name, "test"))
        dev_labels = {ex.pair.id: ex.label for ex in datasets["dev"].examples}
        threshold = evalmod.tune_threshold_by_id(
            [(r.pair_id, r.score) for r in dev_records], dev_labels, cfg.eval_average
        )
        ws.threshold(model_name).write_text(f"{threshold:.17g}\n", encoding="utf-8")
        test_scores = [r.score for r in test_records]
        test_gold = [ex.label for ex in datasets["test"].examples]
        predictions = evalmod.predict_with_threshold(test_scores, threshold)
        result = evalmod.prf_report(predictions, test_gold, cfg.eval_average)
        ws.report(model_name, "txt").write_text(
            evalmod.format_report_text(result, title=f"{model_name} (threshold {threshold:.6f})"),
            encoding="utf-8",
        )
        ws.report(model_name, "tsv").write_text(
            "\n".join(evalmod.report_to_kv(result)) + "\n", encoding="utf-8"
        )
        reportmod.render_score_histogram(
            test_scores, test_gold, ws.figure(f"{model_name}_score_hist.png"),
            title=f"{model_name} scores",
        )
        reportmod.render_threshold_curve(
            [r.score for r in dev_records],
            [dev_labels[r.pair_id] for r in dev_records],
            threshold,
            ws.figure(f"{model_name}_threshold_curve.png"),
            cfg.eval_average,
        )
        artifacts[f"scores_{model_name}_test"] = ws.scores(model_name, "test")
        artifacts[f"report_{model_name}"] = ws.report(model_name, "tsv")
        log.info("%s overall F: %.4f (threshold %.4f)", model_name, result.overall_f, threshold)

    corpus_records = (
        [selection.ScoredPair(p.id, embed.cosine_score(p, table)) for p in pairs]
        if cfg.select_model == "cosine"
        else [selection.ScoredPair(p.id, vdpwi.score_pair(model, p, table)) for p in pairs]
        if cfg.select_model == "vdpwi"
        else [
            selection.ScoredPair(
                p.id,
                features.score_linear(
                    linear, pair_feature_vector(p, model_ef, model_fe, dictionary, heuristics)
                ),
            )
            for p in pairs
        ]
    )
    selection.write_scores(corpus_records, ws.scores(cfg.select_model, "corpus"))
    kept = selection.select_top(pairs, corpus_records, cfg.select_keep_fraction)
    selection.write_selection(
        kept, ws.path("select", "corpus.e"), ws.path("select", "corpus.f"), ws.path("select", "kept_ids.txt")
    )
    artifacts["selection_ids"] = ws.path("select", "kept_ids.txt")
    artifacts["corpus_scores"] = ws.scores(cfg.select_model, "corpus")
    write_manifest(
        ws,
        "pipeline",
        cfg,
        [Path(cfg.corpus_source), Path(cfg.corpus_target)],
        sorted(artifacts.values()),
    )
    return artifacts


def cmd_pipeline(cfg: PipelineConfig) -> None:
    run_pipeline(cfg)


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="divergescope", description=__doc__)
    parser.add_argument("--version", action="version", version=f"divergescope {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value (repeatable)",
    )
    common.add_argument("--out-dir", help="shorthand for --set out.dir=...")
    common.add_argument("--threads", type=int, help="worker threads (mirrors DIVERGESCOPE_THREADS)")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    plain = {
        "align": "train IBM models and write directional/symmetrized alignments",
        "dict": "extract the bilingual dictionary from trained models",
        "datagen": "build the synthetic train/dev/test datasets",
        "train-embed": "train (or import) the bilingual embeddings",
        "train-vdpwi": "train the pairwise word interaction model",
        "train-feat": "train the alignment-feature linear classifier",
        "pipeline": "run the full chain end to end",
    }
    for name, help_text in plain.items():
        sub.add_parser(name, parents=[common], help=help_text)
    p_score = sub.add_parser("score", parents=[common], help="score pairs with a model or ingest external scores")
    p_score.add_argument("--model", choices=MODELS)
    p_score.add_argument("--pairs", required=True, help="pairs TSV (labeled or not)")
    p_score.add_argument("--scores-file", help="ingest externally produced scores instead")
    p_score.add_argument("--out", dest="out", help="output score TSV")
    p_tune = sub.add_parser("tune", parents=[common], help="tune a score threshold on labeled development data")
    p_tune.add_argument("--scores", required=True)
    p_tune.add_argument("--labels", required=True, help="labeled pairs TSV")
    p_tune.add_argument("--name", default="model", help="artifact name prefix")
    p_tune.add_argument("--out", dest="out")
    p_eval = sub.add_parser("eval", parents=[common], help="per-class P/R/F report with figures")
    p_eval.add_argument("--scores", required=True)
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--threshold", type=float)
    p_eval.add_argument("--threshold-file")
    p_eval.add_argument("--name", default="model")
    p_kappa = sub.add_parser("kappa", parents=[common], help="majority vote and Fleiss' kappa over annotations")
    p_kappa.add_argument("--annotations", required=True)
    p_kappa.add_argument("--out")
    p_select = sub.add_parser("select", parents=[common], help="keep the least divergent corpus fraction")
    p_select.add_argument("--scores", help="score TSV (defaults to the pipeline corpus scores)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.subcommand:
            parser.print_usage(sys.stderr)
            raise ConfigError("a subcommand is required")
        overrides = list(args.overrides)
        if args.out_dir:
            overrides.append(f"out.dir={args.out_dir}")
        cfg = load_config(args.config, overrides)
        if args.threads is not None:
            cfg.threads = args.threads
        if cfg.threads > 1:
            log.info("threads=%d requested; running serial for reproducibility", cfg.threads)
        if args.subcommand == "align":
            cmd_align(cfg)
        elif args.subcommand == "dict":
            cmd_dict(cfg)
        elif args.subcommand == "datagen":
            cmd_datagen(cfg)
        elif args.subcommand == "train-embed":
            cmd_train_embed(cfg)
        elif args.subcommand == "train-vdpwi":
            cmd_train_vdpwi(cfg)
        elif args.subcommand == "train-feat":
            cmd_train_feat(cfg)
        elif args.subcommand == "score":
            cmd_score(cfg, args)
        elif args.subcommand == "tune":
            cmd_tune(cfg, args)
        elif args.subcommand == "eval":
            cmd_eval(cfg, args)
        elif args.subcommand == "kappa":
            cmd_kappa(cfg, args)
        elif args.subcommand == "select":
            cmd_select(cfg, args)
        elif args.subcommand == "pipeline":
            cmd_pipeline(cfg)
        else:
            raise ConfigError(f"unknown subcommand {args.subcommand!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergescopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
