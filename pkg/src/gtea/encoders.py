"""Per-edge sequence encoders: LSTM, Transformer and Time2Vec.

Encoders take a batch of padded event sequences ``X`` of shape (E, T, D_in)
together with the true length of each row.  Rows never interact, so an edge's
embedding does not depend on which other edges share its batch.

Event vectors are built from an :class:`EventTable`: raw features, then the
direction flag, then either the normalized timestamp or its Time2Vec
encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ShapeError
from .graph import EdgeSequence, TemporalGraph
from .numerics import Tensor


# ---------------------------------------------------------------- parameters


@dataclass
class LstmLayer:
    W_i: Tensor
    W_f: Tensor
    W_c: Tensor
    W_o: Tensor
    U_i: Tensor
    U_f: Tensor
    U_c: Tensor
    U_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    @property
    def hidden(self) -> int:
        return self.U_i.shape[0]


@dataclass
class LstmParams:
    """Stacked LSTM weights; one set is shared by every node pair."""

    layers: list[LstmLayer]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].hidden

    @property
    def in_dim(self) -> int:
        return self.layers[0].W_i.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator, num_layers: int = 1,
             dtype=np.float32) -> "LstmParams":
        layers = []
        for k in range(num_layers):
            d = d_in if k == 0 else hidden
            W = {g: nm.glorot(rng, d, hidden, dtype) for g in "ifco"}
            U = {g: nm.glorot(rng, hidden, hidden, dtype) for g in "ifco"}
            b = {g: nm.zeros(hidden, dtype) for g in "ico"}
            # Forget bias starts open so early gradients flow through the cell.
            b["f"] = Tensor(np.ones(hidden, dtype=dtype), requires_grad=True)
            layers.append(LstmLayer(W["i"], W["f"], W["c"], W["o"], U["i"], U["f"], U["c"], U["o"],
                                    b["i"], b["f"], b["c"], b["o"]))
        return cls(layers)


@dataclass
class TransformerLayer:
    W_Q: Tensor
    W_K: Tensor
    W_V: Tensor
    W_O: Tensor | None = None
    b_O: Tensor | None = None
    ln1_g: Tensor | None = None
    ln1_b: Tensor | None = None
    W_ff1: Tensor | None = None
    b_ff1: Tensor | None = None
    W_ff2: Tensor | None = None
    b_ff2: Tensor | None = None
    ln2_g: Tensor | None = None
    ln2_b: Tensor | None = None


@dataclass
class TransformerParams:
    """Multi-head self-attention encoder.

    With ``full_block`` the input is projected to the model width and each
    layer is attention -> residual + layer norm -> feed-forward -> residual +
    layer norm.  Without it there is a single bare attention layer whose
    concatenated head outputs are the embedding.
    """

    layers: list[TransformerLayer]
    heads: int
    W_in: Tensor | None = None
    b_in: Tensor | None = None

    @property
    def full_block(self) -> bool:
        return self.W_in is not None

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W_V.shape[1]

    @property
    def in_dim(self) -> int:
        return (self.W_in if self.full_block else self.layers[0].W_Q).shape[0]

    @classmethod
    def init(cls, d_in: int, width: int, rng: np.random.Generator, heads: int = 4,
             num_layers: int = 1, full_block: bool = True, dtype=np.float32) -> "TransformerParams":
        if heads < 1 or width % heads:
            raise ConfigError(f"transformer width {width} must be a positive multiple of heads {heads}")
        if not full_block and num_layers != 1:
            raise ConfigError("a bare attention encoder has exactly one layer")
        g = lambda a, b: nm.glorot(rng, a, b, dtype)  # noqa: E731
        one = lambda n: Tensor(np.ones(n, dtype=dtype), requires_grad=True)  # noqa: E731
        layers = []
        for k in range(num_layers):
            d = width if full_block else d_in
            if full_block:
                layers.append(TransformerLayer(
                    g(d, width), g(d, width), g(d, width), g(width, width), nm.zeros(width, dtype),
                    one(width), nm.zeros(width, dtype),
                    g(width, 2 * width), nm.zeros(2 * width, dtype), g(2 * width, width), nm.zeros(width, dtype),
                    one(width), nm.zeros(width, dtype)))
            else:
                layers.append(TransformerLayer(g(d, width), g(d, width), g(d, width)))
        if full_block:
            return cls(layers, heads, g(d_in, width), nm.zeros(width, dtype))
        return cls(layers, heads)


@dataclass
class T2VParams:
    """Time2Vec frequencies and phases; index 0 is the linear term."""

    omega: Tensor
    phi: Tensor

    @property
    def out_dim(self) -> int:
        return self.omega.shape[0]

    @classmethod
    def init(cls, l: int, rng: np.random.Generator, dtype=np.float32) -> "T2VParams":
        # Periodic frequencies cover 1..64 cycles per normalized span, log-uniformly.
        cycles = np.exp(rng.uniform(np.log(1.0), np.log(64.0), size=l))
        omega = np.concatenate([[1.0], 2 * np.pi * cycles])
        phi = np.concatenate([[0.0], rng.uniform(0.0, 2 * np.pi, size=l)])
        return cls(Tensor(omega.astype(dtype), requires_grad=True),
                   Tensor(phi.astype(dtype), requires_grad=True))


@dataclass
class AttentionScorer:
    """Sequence model M_a plus projection vector ``a`` giving one score per edge."""

    encoder: LstmParams | TransformerParams
    a: Tensor

    @classmethod
    def init(cls, encoder, rng: np.random.Generator | None = None, dtype=np.float32) -> "AttentionScorer":
        """``a`` starts at zero: equal scores make the first sparsemax uniform,
        so every neighbor gets gradient before the support narrows."""
        return cls(encoder, nm.zeros(encoder.out_dim, dtype=dtype))


# ---------------------------------------------------------------- LSTM


def lstm_batch(params: LstmParams, X, lengths: np.ndarray) -> Tensor:
    """Final hidden state h[S] of each row of a padded (E, T, D_in) batch.

    Steps past a row's length hold its state, so the result equals running
    that row on its own.
    """
    X = nm.as_tensor(X)
    lengths = np.asarray(lengths)
    if X.ndim != 3 or X.shape[0] != len(lengths):
        raise ShapeError(f"lstm: input {X.shape} does not match {len(lengths)} lengths")
    if X.shape[-1] != params.in_dim:
        raise ShapeError(f"lstm: event width {X.shape[-1]} but weights expect {params.in_dim}")
    if len(lengths) and lengths.min() < 1:
        raise ShapeError("lstm: empty event sequence")
    E, T, _ = X.shape
    seq = X
    h = None
    for li, layer in enumerate(params.layers):
        H = layer.hidden
        # Gate order [i, f, o | c] so one sigmoid covers the first 3H columns.
        W = nm.concat([layer.W_i, layer.W_f, layer.W_o, layer.W_c], axis=1)
        U = nm.concat([layer.U_i, layer.U_f, layer.U_o, layer.U_c], axis=1)
        b = nm.concat([layer.b_i, layer.b_f, layer.b_o, layer.b_c], axis=0)
        xw = nm.add(nm.matmul(seq, W), b)
        h = c = None
        outputs = []
        for k in range(T):
            g = xw[:, k, :]
            if h is not None:
                g = nm.add(g, nm.matmul(h, U))
            s = nm.sigmoid(g[:, : 3 * H])
            i, f, o = s[:, :H], s[:, H:2 * H], s[:, 2 * H:]
            cbar = nm.tanh(g[:, 3 * H:])
            c_new = nm.mul(i, cbar) if c is None else nm.add(nm.mul(f, c), nm.mul(i, cbar))
            h_new = nm.mul(o, nm.tanh(c_new))
            active = k < lengths
            if c is None or active.all():
                c, h = c_new, h_new
            else:
                m = active[:, None]
                c, h = nm.where(m, c_new, c), nm.where(m, h_new, h)
            if li + 1 < len(params.layers):
                outputs.append(h)
        if li + 1 < len(params.layers):
            seq = nm.stack(outputs, axis=1)
    return h


def lstm_encode(seq, params: LstmParams) -> Tensor:
    """Edge embedding of one (S, D_in) event sequence: the last hidden state."""
    seq = nm.as_tensor(seq, dtype=params.layers[0].W_i.dtype)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"lstm_encode: need a non-empty (S, D_in) sequence, got {seq.shape}")
    out = lstm_batch(params, nm.reshape(seq, (1,) + seq.shape), np.array([seq.shape[0]]))
    return nm.reshape(out, (params.out_dim,))


# ---------------------------------------------------------------- Transformer


def _self_attention(layer: TransformerLayer, X: Tensor, heads: int) -> Tensor:
    E, S, _ = X.shape
    width = layer.W_Q.shape[1]
    dk = width // heads

    def split(M):
        return nm.transpose(nm.reshape(nm.matmul(X, M), (E, S, heads, dk)), (0, 2, 1, 3))

    Q, K, V = split(layer.W_Q), split(layer.W_K), split(layer.W_V)
    logits = nm.mul(nm.matmul(Q, nm.transpose(K, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    A = nm.softmax(logits, axis=-1)
    out = nm.matmul(A, V)  # (E, heads, S, dk)
    return nm.reshape(nm.transpose(out, (0, 2, 1, 3)), (E, S, width))


def _transformer_same_length(params: TransformerParams, X: Tensor) -> Tensor:
    if not params.full_block:
        Z = _self_attention(params.layers[0], X, params.heads)
        return Z[:, -1, :]
    Z = nm.add(nm.matmul(X, params.W_in), params.b_in)
    for layer in params.layers:
        att = nm.add(nm.matmul(_self_attention(layer, Z, params.heads), layer.W_O), layer.b_O)
        Z = nm.layer_norm(nm.add(Z, att), layer.ln1_g, layer.ln1_b)
        ff = nm.relu(nm.add(nm.matmul(Z, layer.W_ff1), layer.b_ff1))
        ff = nm.add(nm.matmul(ff, layer.W_ff2), layer.b_ff2)
        Z = nm.layer_norm(nm.add(Z, ff), layer.ln2_g, layer.ln2_b)
    return Z[:, -1, :]


def transformer_batch(params: TransformerParams, X, lengths: np.ndarray) -> Tensor:
    """Last-row attention output for each row of a padded batch.

    Rows are grouped by exact length so no padding ever enters an attention
    softmax; no causal mask is applied.
    """
    X = nm.as_tensor(X)
    lengths = np.asarray(lengths)
    if X.ndim != 3 or X.shape[0] != len(lengths):
        raise ShapeError(f"transformer: input {X.shape} does not match {len(lengths)} lengths")
    if X.shape[-1] != params.in_dim:
        raise ShapeError(f"transformer: event width {X.shape[-1]} but weights expect {params.in_dim}")
    if len(lengths) and lengths.min() < 1:
        raise ShapeError("transformer: empty event sequence")
    parts, order = [], []
    for S in np.unique(lengths):
        rows = np.flatnonzero(lengths == S)
        parts.append(_transformer_same_length(params, X[rows, :S, :]))
        order.append(rows)
    if len(parts) == 1:
        return parts[0]
    stacked = nm.concat(parts, axis=0)
    inverse = np.argsort(np.concatenate(order), kind="stable")
    return stacked[inverse]


def transformer_encode(seq, params: TransformerParams) -> Tensor:
    """Edge embedding of one (S, D_in) event matrix: the S-th attention row."""
    seq = nm.as_tensor(seq, dtype=params.layers[0].W_Q.dtype)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"transformer_encode: need a non-empty (S, D_in) matrix, got {seq.shape}")
    out = transformer_batch(params, nm.reshape(seq, (1,) + seq.shape), np.array([seq.shape[0]]))
    return nm.reshape(out, (params.out_dim,))


def encode_batch(params: LstmParams | TransformerParams, X, lengths) -> Tensor:
    if isinstance(params, LstmParams):
        return lstm_batch(params, X, lengths)
    return transformer_batch(params, X, lengths)


# ---------------------------------------------------------------- Time2Vec


def t2v(t, params: T2VParams) -> Tensor:
    """Time2Vec of scalar or array ``t``; output gains a trailing axis of size l+1."""
    t = np.asarray(t, dtype=params.omega.dtype)
    lin = nm.add(nm.mul(t[..., None], params.omega), params.phi)
    if params.out_dim == 1:
        return lin
    return nm.concat([lin[..., :1], nm.cos(lin[..., 1:])], axis=-1)


def augment_events_with_t2v(features, times, params: T2VParams) -> Tensor:
    """Replace each event's timestamp by its Time2Vec code: f^k || T2V(t^k)."""
    features = nm.as_tensor(features, dtype=params.omega.dtype)
    times = np.asarray(times)
    if features.shape[:-1] != times.shape:
        raise ShapeError(f"augment: features {features.shape} vs times {times.shape}")
    return nm.concat([features, t2v(times, params)], axis=-1)


def attention_score(seq, scorer: AttentionScorer) -> Tensor:
    """Scalar a^T M_a(seq) for one (S, D_in) event sequence."""
    enc = scorer.encoder
    h = lstm_encode(seq, enc) if isinstance(enc, LstmParams) else transformer_encode(seq, enc)
    return nm.sum(nm.mul(h, scorer.a))


# ---------------------------------------------------------------- event tables


@dataclass
class EventTable:
    """Padded per-edge event arrays for one graph.

    ``features`` is (M, S_max, D_E + 1): raw features then the direction flag.
    ``times`` holds timestamps normalized to [0, 1] over the graph's full span.
    Only the most recent ``max_events`` events of each edge are kept.
    """

    features: np.ndarray
    times: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_graph(cls, graph: TemporalGraph, max_events: int = 32, zero_edges: bool = False) -> "EventTable":
        if max_events < 1:
            raise ConfigError("max_events must be >= 1")
        M, D = graph.num_edges, graph.edge_dim + 1
        if zero_edges:
            # Ablation: every edge becomes one all-zero event.
            return cls(np.zeros((M, 1, D)), np.zeros((M, 1)), np.ones(M, dtype=np.int64))
        t0, t1 = graph.time_span
        scale = 1.0 / (t1 - t0) if t1 > t0 else 0.0
        lengths = np.array([min(len(e), max_events) for e in graph.edges], dtype=np.int64)
        S = int(lengths.max()) if M else 1
        feats = np.zeros((M, S, D))
        times = np.zeros((M, S))
        for i, e in enumerate(graph.edges):
            n = lengths[i]
            feats[i, :n, :-1] = e.features[-n:]
            feats[i, :n, -1] = e.direction[-n:]
            times[i, :n] = (e.times[-n:] - t0) * scale
        return cls(feats, times, lengths)

    def batch(self, edge_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lengths = self.lengths[edge_ids]
        T = int(lengths.max()) if len(lengths) else 1
        return self.features[edge_ids, :T], self.times[edge_ids, :T], lengths


def sequence_vectors(seq: EdgeSequence, graph: TemporalGraph, max_events: int = 32):
    """(features with direction flag, normalized times) for one edge."""
    t0, t1 = graph.time_span
    scale = 1.0 / (t1 - t0) if t1 > t0 else 0.0
    n = min(len(seq), max_events)
    f = np.concatenate([seq.features[-n:], seq.direction[-n:, None].astype(np.float64)], axis=1)
    return f, (seq.times[-n:] - t0) * scale


def event_inputs(features: np.ndarray, times: np.ndarray, t2v_params: T2VParams | None, dtype) -> Tensor:
    """Encoder input: f || dir || t for vanilla encoders, f || dir || T2V(t) otherwise."""
    if t2v_params is None:
        return Tensor(np.concatenate([features, times[..., None]], axis=-1).astype(dtype))
    return augment_events_with_t2v(features.astype(dtype), times, t2v_params)
