"""Loss, Adam, the training loop, classification metrics and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nm
from .encoders import EventTable
from .errors import CheckpointError, ConfigError, DataError, DivergenceError, NumericError
from .gnn import GteaModel, ModelConfig, build_model, check_graph, forward, validate_model
from .graph import TemporalGraph, full_minibatch, make_minibatch, split_dataset
from .numerics import Tensor

VARIANTS = ("lstm", "lstm+t2v", "transformer", "transformer+t2v")
LR_GRID = (1e-4, 1e-3, 1e-2)
BATCH_GRID = (32, 64, 128)
FANOUT_GRID = (5, 10, 25)
LAYER_GRID = (1, 2, 3)
WIDTH_GRID = (32, 64, 128)
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- config


@dataclass
class TrainConfig:
    """Optimization and architecture settings for one training run.

    Grid checks follow the default hyperparameter grid; set ``off_grid`` to
    allow other values (small models in tests, for instance).
    """

    variant: str = "lstm"
    lr: float = 0.01
    batch_size: int = 64
    fanouts: tuple[int, ...] = (10, 10)
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    width: int = 32
    edge_width: int = 32
    attn_width: int = 32
    num_layers: int = 2
    t2v_dim: int = 8
    attention: str = "sparsemax"
    max_events: int = 32
    zero_edges: bool = False
    lstm_layers: int = 1
    transformer_heads: int = 4
    transformer_layers: int = 1
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    dtype: str = "float32"
    off_grid: bool = False

    def __post_init__(self):
        self.fanouts = tuple(int(f) for f in self.fanouts)
        self.split = tuple(float(r) for r in self.split)

    @property
    def encoder(self) -> str:
        return self.variant.split("+")[0]

    @property
    def t2v(self) -> bool:
        return self.variant.endswith("+t2v")

    def layer_fanouts(self) -> tuple[int, ...]:
        if len(self.fanouts) == 1:
            return self.fanouts * self.num_layers
        return self.fanouts

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if len(self.fanouts) not in (1, self.num_layers):
            raise ConfigError(f"fanouts needs 1 or num_layers={self.num_layers} entries, got {list(self.fanouts)}")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1")
        if self.lr <= 0 or self.batch_size < 1 or min(self.fanouts) < 1:
            raise ConfigError("lr, batch_size and fanouts must be positive")
        if self.off_grid:
            return
        checks = [("lr", self.lr, LR_GRID), ("batch_size", self.batch_size, BATCH_GRID),
                  ("num_layers", self.num_layers, LAYER_GRID)]
        checks += [(n, getattr(self, n), WIDTH_GRID) for n in ("width", "edge_width", "attn_width")]
        checks += [("fanouts", f, FANOUT_GRID) for f in self.fanouts]
        for name, value, grid in checks:
            if not any(np.isclose(value, g, rtol=1e-9, atol=0) for g in grid):
                raise ConfigError(f"{name}={value} is outside the grid {grid}; set off_grid to override")

    def model_config(self, graph: TemporalGraph) -> ModelConfig:
        return ModelConfig(
            node_dim=graph.node_dim, edge_dim=graph.edge_dim, num_classes=graph.num_classes,
            encoder=self.encoder, t2v=self.t2v, t2v_dim=self.t2v_dim, edge_width=self.edge_width,
            attn_width=self.attn_width, width=self.width, num_layers=self.num_layers,
            lstm_layers=self.lstm_layers, transformer_heads=self.transformer_heads,
            transformer_layers=self.transformer_layers, attention=self.attention,
            max_events=self.max_events, zero_edges=self.zero_edges)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fanouts"] = list(self.fanouts)
        d["split"] = list(self.split)
        return d


# ---------------------------------------------------------------- loss and optimizer


def _log_partition(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-max-shifted logits and their log-sum-exp."""
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted, np.log(np.exp(shifted).sum(axis=1))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over labeled rows (label >= 0)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DataError(f"cross_entropy_loss: logits {logits.shape} vs labels {labels.shape}")
    C = logits.shape[1]
    if np.any(labels >= C):
        raise DataError(f"cross_entropy_loss: label {labels.max()} outside [0, {C})")
    rows = np.flatnonzero(labels >= 0)
    if rows.size == 0:
        raise DataError("cross_entropy_loss: no labeled seeds in batch")
    shifted, logsum = _log_partition(logits.data[rows])
    y = labels[rows]
    n = len(rows)
    value = np.asarray((logsum - shifted[np.arange(n), y]).mean(), dtype=logits.dtype)

    def grad(g):
        p = np.exp(shifted - logsum[:, None])
        p[np.arange(n), y] -= 1.0
        out = np.zeros_like(logits.data)
        out[rows] = p * (g / n)
        return (out,)

    return nm.record_op("cross_entropy", value, (logits,), grad)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state).

    Parameters are visited in the order of ``params``.  Nothing is changed
    when any gradient is non-finite.
    """
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ConfigError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {name}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, m_all, v_all = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params[name] = Tensor((p.data - step).astype(p.dtype), requires_grad=True)
        m_all[name] = np.asarray(m, dtype=p.dtype)
        v_all[name] = np.asarray(v, dtype=p.dtype)
    return new_params, dataclasses.replace(state, step=t, m=m_all, v=v_all)


# ---------------------------------------------------------------- metrics


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ratio(a: int, b: int) -> Fraction:
    return Fraction(a, b) if b else Fraction(0)


def compute_metrics(y_true, y_pred, num_classes: int) -> Metrics:
    """Confusion-matrix metrics computed in exact rationals.

    ``confusion[i][j]`` counts nodes of true class i predicted as j.  Any 0/0
    ratio is 0, and absent classes still count toward the macro mean.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise DataError("compute_metrics: empty node set")
    if y_true.shape != y_pred.shape:
        raise DataError(f"compute_metrics: {y_true.shape} truths vs {y_pred.shape} predictions")
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"compute_metrics: class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    prec, rec, f1 = [], [], []
    for c in range(num_classes):
        tp = int(cm[c, c])
        p = _ratio(tp, int(cm[:, c].sum()))
        r = _ratio(tp, int(cm[c, :].sum()))
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    acc = Fraction(int(np.trace(cm)), int(cm.sum()))
    macro = sum(f1, Fraction(0)) / num_classes
    return Metrics(float(acc), float(macro), [float(x) for x in prec], [float(x) for x in rec],
                   [float(x) for x in f1], cm.tolist())


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(logits, axis=1)


def predict_logits(model: GteaModel, graph: TemporalGraph, nodes, table: EventTable | None = None,
                   fanouts: Sequence[int] | None = None, batch_size: int = 256,
                   seed: int = 0) -> np.ndarray:
    """Logits for ``nodes`` in the given order.

    Full neighborhoods are used unless ``fanouts`` is given, in which case
    sampling is seeded by ``seed`` and the chunk index.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    cfg = model.config
    table = table or EventTable.from_graph(graph, cfg.max_events, cfg.zero_edges)
    out = []
    with nm.no_tape():
        for i, start in enumerate(range(0, len(nodes), batch_size)):
            chunk = nodes[start:start + batch_size]
            if fanouts is None:
                batch = full_minibatch(graph, chunk, cfg.num_layers)
            else:
                batch = make_minibatch(graph, chunk, cfg.num_layers, fanouts, np.random.default_rng((seed, i)))
            out.append(forward(batch, graph, model, table).data)
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def _labels_of(graph: TemporalGraph, nodes: np.ndarray, who: str) -> np.ndarray:
    if nodes.size == 0:
        raise DataError(f"{who}: empty node set")
    labels = graph.labels[nodes]
    if np.any(labels < 0):
        raise DataError(f"{who}: node {int(nodes[np.argmax(labels < 0)])} is unlabeled")
    return labels


def evaluate(model: GteaModel, graph: TemporalGraph, nodes, table: EventTable | None = None,
             fanouts: Sequence[int] | None = None) -> Metrics:
    nodes = np.asarray(nodes, dtype=np.int64)
    labels = _labels_of(graph, nodes, "evaluate")
    logits = predict_logits(model, graph, nodes, table, fanouts)
    return compute_metrics(labels, predict(logits), model.config.num_classes)


def validation_scores(model: GteaModel, graph: TemporalGraph, nodes,
                      table: EventTable | None = None) -> tuple[Metrics, float]:
    """Metrics and mean cross-entropy (computed in float64) from one full-neighborhood pass."""
    nodes = np.asarray(nodes, dtype=np.int64)
    labels = _labels_of(graph, nodes, "validation_scores")
    logits = predict_logits(model, graph, nodes, table)
    shifted, logsum = _log_partition(logits.astype(np.float64))
    loss = float(np.mean(logsum - shifted[np.arange(len(labels)), labels]))
    return compute_metrics(labels, predict(logits), model.config.num_classes), loss


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    model: GteaModel
    history: list[dict]
    best_epoch: int
    splits: tuple[np.ndarray, np.ndarray, np.ndarray]
    config: TrainConfig


def make_splits(graph: TemporalGraph, config: TrainConfig):
    labeled = graph.labeled_nodes()
    splits = split_dataset(labeled, graph.labels[labeled], config.split,
                           np.random.default_rng((config.seed, 0)))
    for name, part in zip(("train", "val", "test"), splits):
        if part.size == 0:
            raise DataError(f"{name} split is empty; need more labeled nodes")
    return splits


def train(graph: TemporalGraph, config: TrainConfig, splits=None, log=None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation macro-F1.

    An epoch improves on the best so far if its validation macro-F1 is higher,
    or equal with a lower validation loss.  Returns the parameters of the best
    epoch.  ``log`` receives each history entry if given.
    """
    config.validate()
    dtype = np.dtype(config.dtype)
    splits = splits if splits is not None else make_splits(graph, config)
    train_nodes, val_nodes, _ = splits
    model = build_model(config.model_config(graph), np.random.default_rng((config.seed, 1)), dtype)
    check_graph(model, graph)
    table = EventTable.from_graph(graph, config.max_events, config.zero_edges)
    fanouts = config.layer_fanouts()
    state = AdamState(lr=config.lr)
    best_model, best_key, best_epoch = model, (-1.0, -np.inf), 0
    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng((config.seed, 2, epoch))
        order = rng.permutation(train_nodes)
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            seeds = order[start:start + config.batch_size]
            batch = make_minibatch(graph, seeds, config.num_layers, fanouts, rng)
            params = model.parameters()
            try:
                with nm.Tape() as tape:
                    loss = cross_entropy_loss(forward(batch, graph, model, table), graph.labels[seeds])
                grads = nm.backward(tape, loss, params)
                params, state = adam_step(params, grads, state)
            except NumericError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", model=model, history=history) from exc
            model = model.with_parameters(params)
            total += float(loss.item()) * len(seeds)
            count += len(seeds)
        val, val_loss = validation_scores(model, graph, val_nodes, table)
        entry = {"epoch": epoch, "train_loss": total / count, "val_loss": val_loss,
                 "val_accuracy": val.accuracy, "val_macro_f1": val.macro_f1}
        history.append(entry)
        if log is not None:
            log(entry)
        key = (val.macro_f1, -val_loss)
        if key > best_key:
            best_model, best_key, best_epoch = model, key, epoch
        elif epoch - best_epoch >= config.patience:
            break
    return TrainResult(best_model, history, best_epoch, splits, config)


# ---------------------------------------------------------------- checkpoints
#
# A checkpoint is a zip archive written by numpy.savez.  Member ``__meta__``
# holds UTF-8 JSON with keys format_version, model_config, train_config,
# history and params (name -> [shape, dtype]).  Every other member is one
# parameter array named by its dotted path, stored in the model's dtype.


@dataclass
class Checkpoint:
    model: GteaModel
    train_config: dict | None
    history: list[dict]
    format_version: int


def save_checkpoint(model: GteaModel, path, train_config: TrainConfig | None = None,
                    history: list[dict] | None = None) -> None:
    params = model.parameters()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "history": history or [],
        "params": {k: [list(t.shape), str(t.dtype)] for k, t in params.items()},
    }
    arrays = {k: t.data for k, t in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    try:
        Path(path).write_bytes(buf.getvalue())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format_version {version}, this build reads {CHECKPOINT_VERSION}")
    try:
        config = ModelConfig(**meta["model_config"])
        dtype = np.dtype(next(iter(meta["params"].values()))[1])
        # Initialize a skeleton with the stored config, then overwrite every tensor.
        skeleton = build_model(config, np.random.default_rng(0), dtype)
    except (KeyError, TypeError, StopIteration, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: bad metadata ({exc})") from exc
    expected = skeleton.parameters()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) ^ set(arrays))
        raise CheckpointError(f"checkpoint {path} parameter names do not match its config: {missing[:5]}")
    values = {}
    for name, ref in expected.items():
        arr = arrays[name]
        if arr.shape != ref.shape or arr.dtype != ref.dtype:
            raise CheckpointError(f"checkpoint {path}: {name} has shape {arr.shape} {arr.dtype}, "
                                  f"config implies {ref.shape} {ref.dtype}")
        values[name] = Tensor(arr, requires_grad=True)
    model = skeleton.with_parameters(values)
    validate_model(model)
    return Checkpoint(model, meta.get("train_config"), meta.get("history", []), version)


def load_checkpoint(path, expect: ModelConfig | None = None) -> GteaModel:
    """Load a model; with ``expect``, every config field must match."""
    model = read_checkpoint(path).model
    if expect is not None:
        for f in dataclasses.fields(ModelConfig):
            have, want = getattr(model.config, f.name), getattr(expect, f.name)
            if have != want:
                what = "variant" if f.name in ("t2v", "encoder") else f.name
                raise CheckpointError(f"checkpoint {what} mismatch: {f.name}={have!r} in file, "
                                      f"{want!r} expected ({model.config.variant} vs {expect.variant})")
    return model
