"""GTEA message passing: sparse neighbor attention, MLP edge aggregation, L-layer forward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .encoders import (
    AttentionScorer,
    EventTable,
    LstmParams,
    T2VParams,
    TransformerParams,
    encode_batch,
    event_inputs,
)
from .errors import ConfigError, ShapeError
from .graph import MiniBatch, TemporalGraph
from .numerics import Tensor

ENCODERS = ("lstm", "transformer")
ATTENTIONS = ("sparsemax", "softmax")


@dataclass
class ModelConfig:
    """Architecture settings.  ``edge_dim`` is the raw event feature width D_E."""

    node_dim: int
    edge_dim: int
    num_classes: int
    encoder: str = "lstm"
    t2v: bool = False
    t2v_dim: int = 8
    edge_width: int = 32
    attn_width: int = 32
    width: int = 32
    num_layers: int = 2
    lstm_layers: int = 1
    transformer_heads: int = 4
    transformer_layers: int = 1
    attention: str = "sparsemax"
    max_events: int = 32
    zero_edges: bool = False

    @property
    def event_dim(self) -> int:
        """Encoder input width: features, direction flag, then t or T2V(t)."""
        return self.edge_dim + 1 + (self.t2v_dim + 1 if self.t2v else 1)

    @property
    def variant(self) -> str:
        return self.encoder + ("+t2v" if self.t2v else "")

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.attention not in ATTENTIONS:
            raise ConfigError(f"attention must be one of {ATTENTIONS}, got {self.attention!r}")
        for name in ("node_dim", "edge_dim", "edge_width", "attn_width", "width", "num_layers",
                     "lstm_layers", "transformer_heads", "transformer_layers", "max_events", "t2v_dim"):
            if getattr(self, name) < (0 if name == "t2v_dim" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.encoder == "transformer":
            for name in ("edge_width", "attn_width"):
                if getattr(self, name) % self.transformer_heads:
                    raise ConfigError(f"{name} {getattr(self, name)} is not divisible by "
                                      f"transformer_heads {self.transformer_heads}")


@dataclass
class Mlp:
    """Two-layer perceptron ``W2 act(W1 x + b1) + b2``."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, d_in, hidden, d_out, rng, dtype=np.float32) -> "Mlp":
        return cls(nm.glorot(rng, d_in, hidden, dtype), nm.zeros(hidden, dtype),
                   nm.glorot(rng, hidden, d_out, dtype), nm.zeros(d_out, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"mlp: input width {x.shape[-1]} but weights expect {self.in_dim}")
        h = nm.add(nm.matmul(x, self.W1), self.b1)
        if self.activation == "relu":
            h = nm.relu(h)
        return nm.add(nm.matmul(h, self.W2), self.b2)


@dataclass
class GteaLayerParams:
    mlp1: Mlp
    mlp2: Mlp


@dataclass
class GteaModel:
    config: ModelConfig
    mt: LstmParams | TransformerParams
    ma: AttentionScorer
    t2v: T2VParams | None
    layers: list[GteaLayerParams]

    @property
    def dtype(self):
        return self.ma.a.dtype

    def parameters(self) -> dict[str, Tensor]:
        return nm.flatten_params(self)

    def with_parameters(self, values: dict[str, Tensor]) -> "GteaModel":
        return nm.rebind_params(self, values)

    def astype(self, dtype) -> "GteaModel":
        return self.with_parameters({k: Tensor(t.data.astype(dtype), requires_grad=True)
                                     for k, t in self.parameters().items()})


def _encoder(kind: str, config: ModelConfig, width: int, rng, dtype):
    if kind == "lstm":
        return LstmParams.init(config.event_dim, width, rng, config.lstm_layers, dtype)
    return TransformerParams.init(config.event_dim, width, rng, config.transformer_heads,
                                  config.transformer_layers, True, dtype)


def build_model(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> GteaModel:
    """Initialize every parameter for ``config`` after validating its widths."""
    config.validate()
    t2v = T2VParams.init(config.t2v_dim, rng, dtype) if config.t2v else None
    mt = _encoder(config.encoder, config, config.edge_width, rng, dtype)
    ma = AttentionScorer.init(_encoder(config.encoder, config, config.attn_width, rng, dtype), rng, dtype)
    layers = []
    d = config.node_dim
    for l in range(1, config.num_layers + 1):
        out = config.num_classes if l == config.num_layers else config.width
        layers.append(GteaLayerParams(
            Mlp.init(d + config.edge_width, config.width, config.width, rng, dtype),
            Mlp.init(d + config.width, config.width, out, rng, dtype)))
        d = out
    model = GteaModel(config, mt, ma, t2v, layers)
    validate_model(model)
    return model


def validate_model(model: GteaModel) -> None:
    """Reject any parameter set whose widths do not chain together."""
    cfg = model.config
    if model.mt.in_dim != cfg.event_dim or model.ma.encoder.in_dim != cfg.event_dim:
        raise ConfigError(f"encoder input width must be event_dim={cfg.event_dim}")
    if model.ma.a.shape != (model.ma.encoder.out_dim,):
        raise ConfigError(f"attention vector a has shape {model.ma.a.shape}, "
                          f"expected ({model.ma.encoder.out_dim},)")
    if (model.t2v is not None) != cfg.t2v:
        raise ConfigError("t2v parameters present/absent contrary to config")
    if len(model.layers) != cfg.num_layers:
        raise ConfigError(f"model has {len(model.layers)} layers, config says {cfg.num_layers}")
    d = cfg.node_dim
    for l, layer in enumerate(model.layers, start=1):
        if layer.mlp1.in_dim != d + model.mt.out_dim:
            raise ConfigError(f"layer {l} MLP_1 input {layer.mlp1.in_dim} != {d} + {model.mt.out_dim}")
        if layer.mlp2.in_dim != d + layer.mlp1.out_dim:
            raise ConfigError(f"layer {l} MLP_2 input {layer.mlp2.in_dim} != {d} + {layer.mlp1.out_dim}")
        d = layer.mlp2.out_dim
    if d != cfg.num_classes:
        raise ConfigError(f"final layer width {d} != num_classes {cfg.num_classes}")


def check_graph(model: GteaModel, graph: TemporalGraph) -> None:
    cfg = model.config
    if graph.node_dim != cfg.node_dim:
        raise ConfigError(f"node_dim: dataset has {graph.node_dim}, model expects {cfg.node_dim}")
    if graph.num_edges and graph.edge_dim != cfg.edge_dim:
        raise ConfigError(f"edge_dim: dataset has {graph.edge_dim}, model expects {cfg.edge_dim}")
    if graph.num_classes > cfg.num_classes:
        raise ConfigError(f"num_classes: dataset has {graph.num_classes}, model expects {cfg.num_classes}")


# ---------------------------------------------------------------- layer operations


def sparse_attention(scores: Tensor) -> Tensor:
    """Attention weights of one target's neighbors: sparsemax of their scores."""
    if scores.ndim != 1 or scores.shape[0] == 0:
        raise ShapeError(f"sparse_attention: need a non-empty score vector, got {scores.shape}")
    return nm.sparsemax(scores)


def _weighted_messages(mlp1: Mlp, z_nbrs: Tensor, e_nbrs: Tensor, alpha: Tensor) -> Tensor:
    if not (z_nbrs.shape[0] == e_nbrs.shape[0] == alpha.shape[0]):
        raise ShapeError(f"aggregate: misaligned neighbor lists {z_nbrs.shape[0]}, "
                         f"{e_nbrs.shape[0]}, {alpha.shape[0]}")
    msg = mlp1(nm.concat([z_nbrs, e_nbrs], axis=1))
    return nm.mul(msg, nm.reshape(alpha, (alpha.shape[0], 1)))


def aggregate_neighborhood(z_nbrs, e_nbrs, alpha, mlp1: Mlp) -> Tensor:
    """sum_v alpha_uv MLP_1([z_v || e_uv]) for a single target; zeros if it has no neighbors."""
    z_nbrs, e_nbrs, alpha = (nm.as_tensor(x, mlp1.W1.dtype) for x in (z_nbrs, e_nbrs, alpha))
    if alpha.shape[0] == 0 and z_nbrs.shape[0] == 0 and e_nbrs.shape[0] == 0:
        return Tensor(np.zeros(mlp1.out_dim, dtype=mlp1.W1.dtype))
    weighted = _weighted_messages(mlp1, z_nbrs, e_nbrs, alpha)
    return nm.reshape(nm.segment_sum(weighted, np.zeros(alpha.shape[0], dtype=np.int64), 1), (mlp1.out_dim,))


def update_node(z_self, z_nbr, mlp2: Mlp) -> Tensor:
    """MLP_2([z_u || z_N(u)])."""
    z_self, z_nbr = nm.as_tensor(z_self, mlp2.W1.dtype), nm.as_tensor(z_nbr, mlp2.W1.dtype)
    return mlp2(nm.concat([z_self, z_nbr], axis=-1))


# ---------------------------------------------------------------- forward pass


@dataclass
class ForwardResult:
    logits: Tensor
    alpha: Tensor | None
    pair_u: np.ndarray
    pair_v: np.ndarray
    edge_ids: np.ndarray
    edge_embeddings: Tensor | None
    layer_outputs: list[Tensor] = field(default_factory=list)


def _segment_offsets(sorted_ids: np.ndarray) -> np.ndarray:
    n = len(sorted_ids)
    return np.concatenate([[0], np.flatnonzero(np.diff(sorted_ids)) + 1, [n]]).astype(np.int64)


def forward_details(batch: MiniBatch, graph: TemporalGraph, model: GteaModel,
                    table: EventTable | None = None) -> ForwardResult:
    """Run every layer for ``batch`` and keep the intermediate quantities.

    Edge embeddings, attention scores and attention weights are computed once
    per batch and shared by all layers, since the encoders do not depend on
    the layer index.
    """
    cfg = model.config
    check_graph(model, graph)
    dtype = model.dtype
    if table is None:
        table = EventTable.from_graph(graph, cfg.max_events, cfg.zero_edges)
    L = batch.num_layers
    if L != cfg.num_layers:
        raise ConfigError(f"batch built for {L} layers, model has {cfg.num_layers}")

    pair_u, pair_v = batch.pair_u, batch.pair_v
    alpha = e_tilde = None
    if len(batch.edge_ids):
        feats, times, lengths = table.batch(batch.edge_ids)
        X = event_inputs(feats, times, model.t2v, dtype)
        e_tilde = encode_batch(model.mt, X, lengths)
        h_tilde = encode_batch(model.ma.encoder, X, lengths)
        scores = nm.reshape(nm.matmul(h_tilde, nm.reshape(model.ma.a, (-1, 1))), (len(batch.edge_ids),))
        erow = np.searchsorted(batch.edge_ids, batch.pair_edge)
        pair_scores = scores[erow]
        offsets = _segment_offsets(pair_u)
        if cfg.attention == "sparsemax":
            alpha = nm.segment_sparsemax(pair_scores, offsets)
        else:
            alpha = nm.segment_softmax(pair_scores, offsets)

    nodes = batch.frontiers[L]
    z = Tensor(graph.node_features[nodes].astype(dtype))
    outputs = []
    for l, layer in enumerate(model.layers, start=1):
        targets = batch.frontiers[L - l]
        sel = np.flatnonzero(np.isin(pair_u, targets))
        if len(sel):
            weighted = _weighted_messages(layer.mlp1, z[np.searchsorted(nodes, pair_v[sel])],
                                          e_tilde[erow[sel]], alpha[sel])
            z_nbr = nm.segment_sum(weighted, np.searchsorted(targets, pair_u[sel]), len(targets))
        else:
            z_nbr = Tensor(np.zeros((len(targets), layer.mlp1.out_dim), dtype=dtype))
        z_self = z[np.searchsorted(nodes, targets)]
        z = update_node(z_self, z_nbr, layer.mlp2)
        nodes = targets
        outputs.append(z)
    logits = z[np.searchsorted(nodes, batch.seeds)]
    return ForwardResult(logits, alpha, pair_u, pair_v, batch.edge_ids, e_tilde, outputs)


def forward(batch: MiniBatch, graph: TemporalGraph, model: GteaModel,
            table: EventTable | None = None) -> Tensor:
    """Pre-softmax logits z^(L), one row per seed in ``batch.seeds`` order."""
    return forward_details(batch, graph, model, table).logits


def edge_embeddings(model: GteaModel, graph: TemporalGraph, edge_ids, table: EventTable | None = None) -> np.ndarray:
    """M_t output for the given canonical edges (inference, no tape)."""
    cfg = model.config
    table = table or EventTable.from_graph(graph, cfg.max_events, cfg.zero_edges)
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    with nm.no_tape():
        feats, times, lengths = table.batch(edge_ids)
        X = event_inputs(feats, times, model.t2v, model.dtype)
        return encode_batch(model.mt, X, lengths).data.copy()
