"""Cross-lingual pairwise word interaction similarity model: a shared
bidirectional LSTM contextualizes both sentences, pairwise similarity scores
form a multi-channel cube, a focus layer re-weights a greedy matching of the
most similar cells, and a deep CNN with a 2-way softmax scores the pair.

Output class order is (divergent, equivalent); the divergence score returned
to callers is the equivalent-class probability, so higher means less
divergent.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Label, LabeledPair, SentencePair
from .datagen import SyntheticDataset
from .embed import EmbeddingTable
from .errors import DataError, NumericalError
from .evaluation import pearson

log = logging.getLogger(__name__)

# Cube channel layout: for each representation variant (forward, backward,
# concatenation, elementwise sum) the measures (cosine, negative L2, dot),
# then a constant-1 validity indicator.
CHANNEL_NAMES = tuple(
    f"{measure}_{variant}"
    for variant in ("forward", "backward", "concat", "sum")
    for measure in ("cosine", "neg_l2", "dot")
) + ("indicator",)
COSINE_CONCAT_CHANNEL = CHANNEL_NAMES.index("cosine_concat")
DOT_CONCAT_CHANNEL = CHANNEL_NAMES.index("dot_concat")
NUM_CHANNELS = len(CHANNEL_NAMES)

_EPS = 1e-12


class CnnStage(NamedTuple):
    filters: int
    kernel: int
    pool: int


@dataclass
class VdpwiConfig:
    embedding_dim: int = 200
    lstm_hidden_dim: int = 250
    cube_channels: int = NUM_CHANNELS
    cnn_spec: tuple[CnnStage, ...] = (
        CnnStage(128, 3, 2),
        CnnStage(128, 3, 2),
        CnnStage(128, 3, 2),
        CnnStage(128, 3, 2),
        CnnStage(128, 3, 2),
    )
    fc_dim: int = 128
    epochs: int = 25
    seed: int = 0
    max_sentence_length: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    optimizer: str = "adam"
    dtype: str = "float32"
    focus_primary_channel: int = COSINE_CONCAT_CHANNEL
    focus_secondary_channel: int = DOT_CONCAT_CHANNEL

    @property
    def grid(self) -> int:
        g = 1
        for stage in self.cnn_spec:
            g *= stage.pool
        return g

    def validate(self) -> None:
        if self.embedding_dim <= 0 or self.lstm_hidden_dim <= 0 or self.fc_dim <= 0:
            raise ValueError("model dimensions must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if not self.cnn_spec:
            raise ValueError("cnn_spec must have at least one stage")
        if self.max_sentence_length <= 0 or self.max_sentence_length > self.grid:
            raise ValueError(
                f"max_sentence_length {self.max_sentence_length} must be in "
                f"[1, {self.grid}] (grid is the product of pool sizes)"
            )
        if self.cube_channels != NUM_CHANNELS:
            raise ValueError(f"cube_channels must be {NUM_CHANNELS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def desk_config(embedding_dim: int, seed: int = 0, epochs: int = 15) -> VdpwiConfig:
    """Small preset for fast desk-scale runs and tests.

    Adam at 1e-3 is visibly unstable at batch size 1 on desk-scale synthetic
    data, so the preset halves it.
    """
    return VdpwiConfig(
        embedding_dim=embedding_dim,
        lstm_hidden_dim=64,
        cnn_spec=(CnnStage(32, 3, 4), CnnStage(32, 3, 4)),
        fc_dim=64,
        epochs=epochs,
        seed=seed,
        max_sentence_length=16,
        learning_rate=5e-4,
    )


def tiny_config(seed: int = 0) -> VdpwiConfig:
    """Gradient-check preset: 64-bit, one conv stage, tiny dimensions."""
    return VdpwiConfig(
        embedding_dim=4,
        lstm_hidden_dim=3,
        cnn_spec=(CnnStage(4, 3, 8),),
        fc_dim=8,
        epochs=1,
        seed=seed,
        max_sentence_length=8,
        dtype="float64",
    )


@dataclass
class FocusCube:
    tensor: Tensor
    mask: np.ndarray


class VdpwiModel:
    """Holds the LSTM/CNN/FC parameters and runs the five-stage forward pass."""

    def __init__(self, config: VdpwiConfig):
        config.validate()
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.RandomState(config.seed)
        h = config.lstm_hidden_dim
        self.params: dict[str, Tensor] = {}
        for direction in ("fw", "bw"):
            self._add_param(rng, f"lstm_{direction}_w", (config.embedding_dim, 4 * h))
            self._add_param(rng, f"lstm_{direction}_u", (h, 4 * h))
            bias = np.zeros(4 * h, dtype=self.dtype)
            bias[h : 2 * h] = 1.0  # forget-gate bias
            self.params[f"lstm_{direction}_b"] = Tensor(bias, requires_grad=True)
        in_channels = NUM_CHANNELS
        for k, stage in enumerate(config.cnn_spec):
            self._add_param(rng, f"conv{k}_w", (stage.filters, in_channels, stage.kernel, stage.kernel))
            self.params[f"conv{k}_b"] = Tensor(np.zeros(stage.filters, dtype=self.dtype), requires_grad=True)
            in_channels = stage.filters
        self._add_param(rng, "fc1_w", (in_channels, config.fc_dim))
        self.params["fc1_b"] = Tensor(np.zeros(config.fc_dim, dtype=self.dtype), requires_grad=True)
        self._add_param(rng, "fc2_w", (config.fc_dim, 2))
        self.params["fc2_b"] = Tensor(np.zeros(2, dtype=self.dtype), requires_grad=True)
        self._truncated = 0

    def _add_param(self, rng, name: str, shape: tuple[int, ...]) -> None:
        fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
        fan_out = shape[1] if len(shape) == 2 else shape[0]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        data = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        self.params[name] = Tensor(data, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, data in state.items():
            self.params[name].data = data.copy()

    # -- forward components ------------------------------------------------

    def embed_sentence(self, tokens: Sequence[str], table: EmbeddingTable, tag: str) -> Tensor:
        limit = self.config.max_sentence_length
        if len(tokens) > limit:
            self._truncated += 1
            tokens = tokens[:limit]
        rows = np.zeros((len(tokens), self.config.embedding_dim), dtype=self.dtype)
        for idx, token in enumerate(tokens):
            vec = table.get(tag, token)
            if vec is not None:
                rows[idx] = vec
        return Tensor(rows)

    def contextualize(self, token_vectors: Tensor) -> tuple[Tensor, Tensor]:
        """Per-position forward and backward LSTM hidden states (zero initial
        states); parameters are shared across the two languages.
        """
        p = self.params
        fw = ad.lstm_seq(token_vectors, p["lstm_fw_w"], p["lstm_fw_u"], p["lstm_fw_b"])
        bw_rev = ad.lstm_seq(
            ad.reverse(token_vectors, axis=0), p["lstm_bw_w"], p["lstm_bw_u"], p["lstm_bw_b"]
        )
        return fw, ad.reverse(bw_rev, axis=0)

    def forward_pair(self, pair: SentencePair, table: EmbeddingTable) -> Tensor:
        e_fw, e_bw = self.contextualize(self.embed_sentence(pair.e_tokens, table, "e"))
        f_fw, f_bw = self.contextualize(self.embed_sentence(pair.f_tokens, table, "f"))
        cube = build_similarity_cube(e_fw, e_bw, f_fw, f_bw)
        focused = focus(
            cube,
            primary_channel=self.config.focus_primary_channel,
            secondary_channel=self.config.focus_secondary_channel,
        )
        return cnn_score(self, focused)


def _pairwise_channels(e_states: Tensor, f_states: Tensor) -> list[Tensor]:
    """Cosine, negative L2 distance, and dot product between every (e, f)
    state pair, as (|e|, |f|) tensors."""
    dots = ad.matmul(e_states, ad.transpose(f_states))
    eps = Tensor(np.asarray(_EPS, dtype=e_states.dtype))
    e_sq = ad.tensor_sum(ad.mul(e_states, e_states), axis=1)
    f_sq = ad.tensor_sum(ad.mul(f_states, f_states), axis=1)
    e_norm = ad.sqrt(ad.add(e_sq, eps))
    f_norm = ad.sqrt(ad.add(f_sq, eps))
    norm_outer = ad.matmul(
        ad.reshape(e_norm, (e_norm.shape[0], 1)), ad.reshape(f_norm, (1, f_norm.shape[0]))
    )
    cosine = ad.div(dots, norm_outer)
    sq_dist = ad.add(
        ad.sub(
            ad.add(
                ad.reshape(e_sq, (e_sq.shape[0], 1)),
                ad.reshape(f_sq, (1, f_sq.shape[0])),
            ),
            ad.mul(dots, Tensor(np.asarray(2.0, dtype=e_states.dtype))),
        ),
        eps,
    )
    neg_l2 = ad.mul(ad.sqrt(ad.relu(sq_dist)), Tensor(np.asarray(-1.0, dtype=e_states.dtype)))
    return [cosine, neg_l2, dots]


def build_similarity_cube(e_fw: Tensor, e_bw: Tensor, f_fw: Tensor, f_bw: Tensor) -> Tensor:
    """Stack pairwise similarity matrices for the four representation variants
    plus a constant-1 indicator channel into a (channels, |e|, |f|) cube."""
    variants = [
        (e_fw, f_fw),
        (e_bw, f_bw),
        (ad.concat([e_fw, e_bw], axis=1), ad.concat([f_fw, f_bw], axis=1)),
        (ad.add(e_fw, e_bw), ad.add(f_fw, f_bw)),
    ]
    le, lf = e_fw.shape[0], f_fw.shape[0]
    channels: list[Tensor] = []
    for e_states, f_states in variants:
        channels.extend(_pairwise_channels(e_states, f_states))
    channels.append(Tensor(np.ones((le, lf), dtype=e_fw.dtype)))
    return ad.concat([ad.reshape(c, (1, le, lf)) for c in channels], axis=0)


def _greedy_matching(values: np.ndarray) -> list[tuple[int, int]]:
    """Greedy partial matching over cells ranked by value, descending; ties
    break row-major (stable sort keeps flat order)."""
    le, lf = values.shape
    order = np.argsort(-values, axis=None, kind="stable")
    e_used = np.zeros(le, dtype=bool)
    f_used = np.zeros(lf, dtype=bool)
    selected = []
    for flat in order:
        i, j = divmod(int(flat), lf)
        if not e_used[i] and not f_used[j]:
            e_used[i] = True
            f_used[j] = True
            selected.append((i, j))
    return selected


def focus(
    cube: Tensor,
    primary_channel: int = COSINE_CONCAT_CHANNEL,
    secondary_channel: int = DOT_CONCAT_CHANNEL,
) -> FocusCube:
    """Weight a greedy matching of highly similar cells 1.0 and everything
    else 0.1.  Two ranking passes (primary then secondary channel) each
    contribute a partial matching; the mask multiplies all channels.
    """
    _, le, lf = cube.shape
    mask = np.full((le, lf), 0.1, dtype=cube.dtype)
    for channel in (primary_channel, secondary_channel):
        for i, j in _greedy_matching(cube.data[channel]):
            mask[i, j] = 1.0
    weighted = ad.mul(cube, Tensor(mask[None, :, :]))
    return FocusCube(weighted, mask)


def cnn_score(model: VdpwiModel, focus_cube: FocusCube) -> Tensor:
    """Zero-pad the focus cube to the config grid, run the conv/pool stages,
    then the fully connected head and a 2-way softmax (divergent, equivalent).
    """
    config = model.config
    grid = config.grid
    x = focus_cube.tensor
    _, le, lf = x.shape
    if le > grid or lf > grid:
        raise ValueError(f"cube {le}x{lf} exceeds the {grid}x{grid} grid")
    if le < grid:
        x = ad.concat([x, Tensor(np.zeros((NUM_CHANNELS, grid - le, lf), dtype=x.dtype))], axis=1)
    if lf < grid:
        x = ad.concat([x, Tensor(np.zeros((NUM_CHANNELS, grid, grid - lf), dtype=x.dtype))], axis=2)
    x = ad.reshape(x, (1, NUM_CHANNELS, grid, grid))
    for k, stage in enumerate(config.cnn_spec):
        x = ad.conv2d(
            x,
            model.params[f"conv{k}_w"],
            model.params[f"conv{k}_b"],
            stride=1,
            padding=stage.kernel // 2,
        )
        x = ad.relu(x)
        x = ad.maxpool2d(x, stage.pool, stage.pool)
    flat = ad.reshape(x, (1, x.shape[1]))
    hidden = ad.relu(ad.add(ad.matmul(flat, model.params["fc1_w"]), model.params["fc1_b"]))
    logits = ad.add(ad.matmul(hidden, model.params["fc2_w"]), model.params["fc2_b"])
    return ad.reshape(ad.softmax(logits, axis=1), (2,))


def gold_distribution(label: Label, dtype) -> Tensor:
    if label is Label.EQUIVALENT:
        return Tensor(np.asarray([0.0, 1.0], dtype=dtype))
    return Tensor(np.asarray([1.0, 0.0], dtype=dtype))


def score_pair(model: VdpwiModel, pair: SentencePair, table: EmbeddingTable) -> float:
    """Equivalent-class probability in [0, 1]; higher means less divergent."""
    return float(model.forward_pair(pair, table).data[1])


def train(
    dataset: SyntheticDataset,
    validation: Sequence[LabeledPair],
    config: VdpwiConfig,
    embeddings: EmbeddingTable,
) -> tuple[VdpwiModel, list[dict]]:
    """Train with KL loss; after each epoch compute the Pearson correlation of
    validation scores against binary labels and return the best-epoch snapshot.
    Also returns the per-epoch history (loss, pearson) for reporting.
    """
    if not dataset.examples:
        raise DataError("cannot train on an empty dataset")
    if embeddings.dim != config.embedding_dim:
        raise ValueError(
            f"embedding table dim {embeddings.dim} != config embedding_dim {config.embedding_dim}"
        )
    model = VdpwiModel(config)
    if config.optimizer == "adam":
        optimizer = ad.Adam(model.parameters(), learning_rate=config.learning_rate)
    else:
        optimizer = ad.SGD(model.parameters(), learning_rate=config.learning_rate)
    rng = random.Random(config.seed)
    examples = list(dataset.examples)
    best_pearson = -math.inf
    best_state = model.state()
    history: list[dict] = []
    for epoch in range(config.epochs):
        optimizer.learning_rate = config.learning_rate * config.lr_decay**epoch
        rng.shuffle(examples)
        total_loss = 0.0
        for example in examples:
            probs = model.forward_pair(example.pair, embeddings)
            loss = ad.kl_loss(probs, gold_distribution(example.label, model.dtype))
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise NumericalError(f"non-finite training loss at epoch {epoch + 1}")
            ad.backward(loss)
            optimizer.step()
            total_loss += loss_value
        val_scores = [score_pair(model, lp.pair, embeddings) for lp in validation]
        val_labels = [1.0 if lp.label is Label.EQUIVALENT else 0.0 for lp in validation]
        r = pearson(val_scores, val_labels)
        if r is None:
            log.warning("epoch %d: validation Pearson undefined (zero variance)", epoch + 1)
            r = -1.0
        mean_loss = total_loss / len(examples)
        history.append({"epoch": epoch + 1, "loss": mean_loss, "pearson": r})
        log.info("epoch %d: mean KL %.6f, validation Pearson %.4f", epoch + 1, mean_loss, r)
        if r >= best_pearson:
            best_pearson = r
            best_state = model.state()
    model.load_state(best_state)
    if model._truncated:
        log.info("truncated %d sentence(s) to %d tokens", model._truncated, config.max_sentence_length)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoint format: config header lines, then the parameter container
# (name, dtype, shape, exact hex floats).


def save_checkpoint(model: VdpwiModel, path) -> None:
    config = model.config
    with open(path, "w", encoding="utf-8") as out:
        out.write("format\tvdpwi-checkpoint-1\n")
        out.write(f"embedding_dim\t{config.embedding_dim}\n")
        out.write(f"lstm_hidden_dim\t{config.lstm_hidden_dim}\n")
        out.write(f"fc_dim\t{config.fc_dim}\n")
        out.write(f"epochs\t{config.epochs}\n")
        out.write(f"seed\t{config.seed}\n")
        out.write(f"max_sentence_length\t{config.max_sentence_length}\n")
        out.write(f"learning_rate\t{config.learning_rate!r}\n")
        out.write(f"optimizer\t{config.optimizer}\n")
        out.write(f"dtype\t{config.dtype}\n")
        out.write(f"focus_primary_channel\t{config.focus_primary_channel}\n")
        out.write(f"focus_secondary_channel\t{config.focus_secondary_channel}\n")
        out.write(f"cnn_spec\t{';'.join(f'{s.filters},{s.kernel},{s.pool}' for s in config.cnn_spec)}\n")
        out.write("params\n")
        ad.write_params(model.params, out)


def load_checkpoint(path) -> VdpwiModel:
    lines = open(path, encoding="utf-8").read().splitlines()
    if not lines or lines[0] != "format\tvdpwi-checkpoint-1":
        raise DataError(f"{path}: not a vdpwi checkpoint")
    header: dict[str, str] = {}
    idx = 1
    while idx < len(lines) and lines[idx] != "params":
        key, _, value = lines[idx].partition("\t")
        header[key] = value
        idx += 1
    if idx == len(lines):
        raise DataError(f"{path}: missing params section")
    cnn_spec = tuple(
        CnnStage(*(int(x) for x in chunk.split(",")))
        for chunk in header["cnn_spec"].split(";")
    )
    config = VdpwiConfig(
        embedding_dim=int(header["embedding_dim"]),
        lstm_hidden_dim=int(header["lstm_hidden_dim"]),
        cnn_spec=cnn_spec,
        fc_dim=int(header["fc_dim"]),
        epochs=int(header["epochs"]),
        seed=int(header["seed"]),
        max_sentence_length=int(header["max_sentence_length"]),
        learning_rate=float(header["learning_rate"]),
        optimizer=header["optimizer"],
        dtype=header["dtype"],
        focus_primary_channel=int(header["focus_primary_channel"]),
        focus_secondary_channel=int(header["focus_secondary_channel"]),
    )
    model = VdpwiModel(config)
    try:
        params = ad.read_params(lines[idx + 1 :], str(path))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model.load_state(params)
    return model
