"""Temporal interaction graphs: data model, CSV I/O, sampling and a synthetic generator.

Every undirected node pair is stored once under its canonical key
``(min id, max id)``.  Raw events in both directions are merged into the
pair's :class:`EdgeSequence`, each carrying a direction flag (+1 when the raw
event went min -> max, -1 otherwise).
"""

from __future__ import annotations

import csv
import math
from dataclasses import InitVar, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError


class EventRecord(NamedTuple):
    u: int
    v: int
    t: float
    f: tuple[float, ...]
    dir: int


@dataclass(frozen=True)
class EdgeSequence:
    """All interaction events of one canonical node pair, ascending in time."""

    pair: tuple[int, int]
    times: np.ndarray  # (S,)
    features: np.ndarray  # (S, D_E)
    direction: np.ndarray  # (S,) of +1/-1

    def __len__(self) -> int:
        return len(self.times)

    @property
    def events(self) -> list[EventRecord]:
        u, v = self.pair
        return [EventRecord(u, v, float(t), tuple(float(x) for x in f), int(d))
                for t, f, d in zip(self.times, self.features, self.direction)]


def canonical(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u <= v else (v, u)


def build_edge_sequences(
    events: Iterable[tuple[int, int, float, Sequence[float]]],
) -> dict[tuple[int, int], EdgeSequence]:
    """Group raw ``(u, v, t, f)`` events by canonical pair and sort each group by time.

    Equal timestamps keep their input order.
    """
    grouped: dict[tuple[int, int], list] = {}
    width = None
    for n, (u, v, t, f) in enumerate(events):
        u, v, t = int(u), int(v), float(t)
        if not math.isfinite(t) or t < 0:
            raise DataError(f"event {n}: timestamp {t!r} must be finite and non-negative")
        if u == v:
            raise DataError(f"event {n}: self-interaction on node {u}")
        f = tuple(float(x) for x in f)
        if width is None:
            width = len(f)
        elif len(f) != width:
            raise DataError(f"event {n}: feature width {len(f)} differs from {width}")
        pair = canonical(u, v)
        grouped.setdefault(pair, []).append((t, f, 1 if u < v else -1))

    out = {}
    for pair in sorted(grouped):
        rows = sorted(grouped[pair], key=lambda r: r[0])  # stable
        out[pair] = EdgeSequence(
            pair=pair,
            times=np.array([r[0] for r in rows], dtype=np.float64),
            features=np.array([r[1] for r in rows], dtype=np.float64).reshape(len(rows), width or 0),
            direction=np.array([r[2] for r in rows], dtype=np.int8),
        )
    return out


@dataclass
class TemporalGraph:
    """Immutable-after-construction temporal interaction graph.

    ``labels`` holds -1 for unlabeled nodes.  ``neighbors[u]`` is sorted by id
    and ``neighbor_edges[u]`` gives the matching indices into ``edges``.
    """

    node_features: np.ndarray
    labels: np.ndarray
    edges: list[EdgeSequence]
    num_classes: int
    neighbors: list[np.ndarray] = field(init=False, repr=False)
    neighbor_edges: list[np.ndarray] = field(init=False, repr=False)
    edge_index: dict[tuple[int, int], int] = field(init=False, repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.num_nodes
        self.node_features = np.asarray(self.node_features, dtype=np.float64).reshape(n, -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape} does not match {n} nodes")
        bad = (self.labels < -1) | (self.labels >= self.num_classes)
        if bad.any():
            raise DataError(f"node {int(np.flatnonzero(bad)[0])}: label outside [0, {self.num_classes})")
        self.edges = sorted(self.edges, key=lambda e: e.pair)
        self.edge_index = {e.pair: i for i, e in enumerate(self.edges)}
        nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for i, e in enumerate(self.edges):
            u, v = e.pair
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(f"edge {e.pair} references a node outside [0, {n})")
            nbrs[u].append((v, i))
            nbrs[v].append((u, i))
        self.neighbors, self.neighbor_edges = [], []
        for x in nbrs:
            arr = np.array(sorted(x), dtype=np.int64).reshape(-1, 2)
            self.neighbors.append(arr[:, 0].copy())
            self.neighbor_edges.append(arr[:, 1].copy())

    @property
    def num_nodes(self) -> int:
        return len(self.node_features)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edges[0].features.shape[1] if self.edges else 0

    @property
    def time_span(self) -> tuple[float, float]:
        if not self.edges:
            return (0.0, 0.0)
        return (min(float(e.times[0]) for e in self.edges),
                max(float(e.times[-1]) for e in self.edges))

    def degree(self, u: int) -> int:
        return len(self.neighbors[u])

    def edge_between(self, u: int, v: int) -> EdgeSequence:
        return self.edges[self.edge_index[canonical(u, v)]]

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)


# ---------------------------------------------------------------- CSV I/O


def _read_rows(path: Path, expected: Sequence[str], what: str):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {what} file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty {what} file")
        header = [h.strip() for h in header]
        if header[: len(expected)] != list(expected):
            raise DataError(f"{path}:1: header must start with {','.join(expected)}, got {','.join(header)}")
        extra = header[len(expected):]
        prefix = "feat_" if what == "nodes" else "efeat_"
        if extra != [f"{prefix}{i}" for i in range(len(extra))]:
            raise DataError(f"{path}:1: feature columns must be {prefix}0..{prefix}{len(extra) - 1}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            rows.append((line_no, row))
    return rows, len(extra)


def _num(path, line_no, text, cast=float):
    try:
        value = cast(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: cannot parse {text!r}") from None
    if cast is float and not math.isfinite(value):
        raise DataError(f"{path}:{line_no}: non-finite value {text!r}")
    return value


def load_graph(nodes_path, events_path, num_classes: int | None = None) -> TemporalGraph:
    """Read the nodes and events CSV files into a :class:`TemporalGraph`.

    Node ids must be exactly 0..N-1 (any order).  Timestamps are kept raw.
    """
    nodes_path, events_path = Path(nodes_path), Path(events_path)
    node_rows, dn = _read_rows(nodes_path, ["node_id", "label"], "nodes")
    n = len(node_rows)
    feats = np.zeros((n, dn))
    labels = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    for line_no, row in node_rows:
        nid = _num(nodes_path, line_no, row[0], int)
        if not 0 <= nid < n or seen[nid]:
            raise DataError(f"{nodes_path}:{line_no}: node id {nid} is duplicated or outside [0, {n})")
        seen[nid] = True
        if row[1].strip():
            labels[nid] = _num(nodes_path, line_no, row[1], int)
            if labels[nid] < 0:
                raise DataError(f"{nodes_path}:{line_no}: negative label {labels[nid]}")
        feats[nid] = [_num(nodes_path, line_no, x) for x in row[2:]]

    event_rows, _ = _read_rows(events_path, ["src", "dst", "timestamp"], "events")
    if not event_rows:
        raise DataError(f"{events_path}: no events")
    raw = []
    for line_no, row in event_rows:
        u = _num(events_path, line_no, row[0], int)
        v = _num(events_path, line_no, row[1], int)
        for x in (u, v):
            if not 0 <= x < n:
                raise DataError(f"{events_path}:{line_no}: unknown node {x}")
        t = _num(events_path, line_no, row[2])
        if t < 0:
            raise DataError(f"{events_path}:{line_no}: negative timestamp {t}")
        if u == v:
            raise DataError(f"{events_path}:{line_no}: self-interaction on node {u}")
        raw.append((u, v, t, [_num(events_path, line_no, x) for x in row[3:]]))
    seqs = build_edge_sequences(raw)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0
    return TemporalGraph(feats, labels, list(seqs.values()), num_classes)


def write_graph(graph: TemporalGraph, nodes_path, events_path) -> None:
    """Write ``graph`` in the CSV schemas read by :func:`load_graph`.

    Floats use ``repr`` so a reload reproduces every value exactly.
    """
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "label"] + [f"feat_{i}" for i in range(graph.node_dim)])
        for u in range(graph.num_nodes):
            lab = int(graph.labels[u])
            w.writerow([u, "" if lab < 0 else lab] + [repr(float(x)) for x in graph.node_features[u]])
    with open(events_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "timestamp"] + [f"efeat_{i}" for i in range(graph.edge_dim)])
        for e in graph.edges:
            lo, hi = e.pair
            for t, f, d in zip(e.times, e.features, e.direction):
                src, dst = (lo, hi) if d > 0 else (hi, lo)
                w.writerow([src, dst, repr(float(t))] + [repr(float(x)) for x in f])


# ---------------------------------------------------------------- sampling


def sample_neighbors(graph: TemporalGraph, u: int, fanout: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of at most ``fanout`` distinct neighbors of ``u``, sorted by id."""
    if fanout < 1:
        raise ConfigError(f"fanout must be >= 1, got {fanout}")
    nbrs = graph.neighbors[u]
    if len(nbrs) <= fanout:
        return nbrs.copy()
    return np.sort(rng.choice(nbrs, size=fanout, replace=False))


@dataclass
class MiniBatch:
    """Seeds plus the sampled neighborhoods needed for an L-layer forward pass.

    ``frontiers[0]`` is the sorted seed set and ``frontiers[l]`` holds every
    node within l sampled hops; layer-k embeddings are required for
    ``frontiers[L - k]``.  Each node is sampled once per batch and the same
    sample serves every layer.  The ``pair_*`` arrays list every sampled
    (target, neighbor) pair sorted by target, then neighbor id.
    """

    seeds: np.ndarray
    num_layers: int
    neighbors: dict[int, np.ndarray]
    graph: InitVar[TemporalGraph]
    frontiers: list[np.ndarray] = field(init=False)
    pair_u: np.ndarray = field(init=False)
    pair_v: np.ndarray = field(init=False)
    pair_edge: np.ndarray = field(init=False)
    edge_ids: np.ndarray = field(init=False)

    def __post_init__(self, graph: TemporalGraph):
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        fr = [np.unique(self.seeds)]
        for _ in range(self.num_layers):
            prev = fr[-1]
            fr.append(np.unique(np.concatenate([prev] + [self.neighbors[int(u)] for u in prev])))
        self.frontiers = fr
        inner = fr[self.num_layers - 1]
        self.neighbors = {int(u): np.sort(np.asarray(self.neighbors[int(u)], dtype=np.int64)) for u in inner}
        pu, pv, pe = [], [], []
        for u in inner:
            for v in self.neighbors[int(u)]:
                pu.append(int(u))
                pv.append(int(v))
                pe.append(graph.edge_index[canonical(int(u), int(v))])
        self.pair_u = np.array(pu, dtype=np.int64)
        self.pair_v = np.array(pv, dtype=np.int64)
        self.pair_edge = np.array(pe, dtype=np.int64)
        self.edge_ids = np.unique(self.pair_edge)

    def without_neighbor(self, graph: TemporalGraph, u: int, v: int) -> "MiniBatch":
        """Copy of this batch with ``v`` dropped from ``u``'s sampled neighborhood."""
        nbrs = dict(self.neighbors)
        nbrs[u] = nbrs[u][nbrs[u] != v]
        return MiniBatch(self.seeds, self.num_layers, nbrs, graph)


def make_minibatch(
    graph: TemporalGraph,
    seeds: Sequence[int],
    num_layers: int,
    fanouts: Sequence[int],
    rng: np.random.Generator,
) -> MiniBatch:
    """Sample an L-hop neighborhood around ``seeds``.

    ``fanouts[0]`` applies to the seeds, ``fanouts[1]`` to their neighbors and
    so on.  Each node is sampled at most once, at the first hop that reaches it.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ConfigError("make_minibatch: empty seed set")
    if not 1 <= num_layers <= len(fanouts):
        raise ConfigError(f"need 1 <= layers ({num_layers}) <= len(fanouts) ({len(fanouts)})")
    nbrs: dict[int, np.ndarray] = {}
    frontier = np.unique(seeds)
    for hop in range(num_layers):
        for u in frontier:
            if int(u) not in nbrs:
                nbrs[int(u)] = sample_neighbors(graph, int(u), fanouts[hop], rng)
        frontier = np.unique(np.concatenate([frontier] + [nbrs[int(u)] for u in frontier]))
    return MiniBatch(seeds, num_layers, nbrs, graph)


def full_minibatch(graph: TemporalGraph, seeds: Sequence[int], num_layers: int) -> MiniBatch:
    """Batch over complete (unsampled) neighborhoods."""
    big = max(1, max((graph.degree(u) for u in range(graph.num_nodes)), default=1))
    return make_minibatch(graph, seeds, num_layers, [big] * num_layers, np.random.default_rng(0))


# ---------------------------------------------------------------- splitting


def split_dataset(
    nodes: Sequence[int],
    labels: Sequence[int],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified train/val/test split.

    Each class is shuffled and split on its own: floor(n * ratio) nodes go to
    validation and to test, the remainder to training.
    """
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    rng = rng if rng is not None else np.random.default_rng(0)
    nodes = np.asarray(nodes, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = nodes[labels == c]
        if len(members) < 3:
            raise DataError(f"class {c} has only {len(members)} labeled nodes; merge or drop it (need >= 3)")
        members = rng.permutation(members)
        n_val = int(math.floor(len(members) * ratios[1] + 1e-9))
        n_test = int(math.floor(len(members) * ratios[2] + 1e-9))
        val.append(members[:n_val])
        test.append(members[n_val:n_val + n_test])
        train.append(members[n_val + n_test:])
    return tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64) for p in (train, val, test))


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticSpec:
    """Generator settings.  Times are in seconds; ``horizon`` spans all events.

    Nodes of class c >= 1 each interact with ``pattern_neighbors`` same-class
    partners through periodic events whose first feature equals
    ``pattern_amplitude`` (plus Gaussian ``pattern_noise``), with period
    ``pattern_period / c``.  Every other event is Poisson-timed with features
    drawn from U(0, 1).  Node features are standard normal and independent of
    the labels.
    """

    num_nodes: int = 64
    num_classes: int = 2
    avg_degree: float = 4.0
    degree_dist: str = "regular"
    pattern_neighbors: int = 1
    node_dim: int = 8
    edge_dim: int = 2
    horizon: float = 2_592_000.0
    pattern_period: float = 259_200.0
    pattern_amplitude: float = 3.0
    pattern_noise: float = 0.2
    noise_rate: float = 6.0

    def validate(self) -> None:
        if self.num_nodes < 2:
            raise ConfigError("num_nodes must be >= 2")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.degree_dist not in ("regular", "poisson"):
            raise ConfigError(f"degree_dist must be 'regular' or 'poisson', got {self.degree_dist!r}")
        if not 0 < self.avg_degree <= self.num_nodes - 1:
            raise ConfigError(f"avg_degree {self.avg_degree} infeasible for {self.num_nodes} nodes (max {self.num_nodes - 1})")
        if self.pattern_neighbors < 1 or self.pattern_neighbors > self.avg_degree:
            raise ConfigError("pattern_neighbors must be in [1, avg_degree]")
        if self.node_dim < 1 or self.edge_dim < 1:
            raise ConfigError("node_dim and edge_dim must be >= 1")
        if self.horizon <= 0 or self.pattern_period <= 0 or self.pattern_period > self.horizon:
            raise ConfigError("need 0 < pattern_period <= horizon")
        if self.pattern_noise < 0 or self.noise_rate <= 0 or self.pattern_amplitude <= 1:
            raise ConfigError("need pattern_noise >= 0, noise_rate > 0 and pattern_amplitude > 1")
        for c, size in enumerate(_class_sizes(self)[1:], start=1):
            k = self.pattern_neighbors
            if size <= k or (k % 2 == 1 and size % 2 == 1):
                raise ConfigError(f"class {c} has {size} nodes; cannot give each {k} same-class pattern partners")


def _class_sizes(spec: SyntheticSpec) -> list[int]:
    base = spec.num_nodes // spec.num_classes
    sizes = [base] * spec.num_classes
    sizes[0] += spec.num_nodes - base * spec.num_classes
    return sizes


def _poisson_times(rng, rate, horizon, at_least_one=True):
    k = rng.poisson(rate)
    if at_least_one:
        k = max(k, 1)
    return rng.uniform(0.0, horizon, size=k)


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> TemporalGraph:
    """Build a labeled temporal graph whose labels live only in pairwise event patterns."""
    spec.validate()
    n = spec.num_nodes
    node_features = rng.standard_normal((n, spec.node_dim))

    labels = np.zeros(n, dtype=np.int64)
    order = rng.permutation(n)
    start = 0
    for c, size in enumerate(_class_sizes(spec)):
        labels[order[start:start + size]] = c
        start += size

    pattern_pairs: dict[tuple[int, int], int] = {}
    k = spec.pattern_neighbors
    for c in range(1, spec.num_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        m = len(members)
        for i in range(m):
            for off in range(1, k // 2 + 1):
                pattern_pairs[canonical(int(members[i]), int(members[(i + off) % m]))] = c
            if k % 2 == 1 and i < m // 2:
                pattern_pairs[canonical(int(members[i]), int(members[i + m // 2]))] = c

    pdeg = np.zeros(n, dtype=np.int64)
    for u, v in pattern_pairs:
        pdeg[u] += 1
        pdeg[v] += 1
    if spec.degree_dist == "regular":
        target = np.full(n, int(round(spec.avg_degree)))
    else:
        target = np.minimum(rng.poisson(spec.avg_degree, size=n), n - 1)
    stubs = np.repeat(np.arange(n), np.maximum(target - pdeg, 0))
    taken = set(pattern_pairs)
    noise_pairs: list[tuple[int, int]] = []
    for _ in range(10):
        if len(stubs) < 2:
            break
        stubs = rng.permutation(stubs)
        left = []
        for a, b in zip(stubs[0::2], stubs[1::2]):
            pair = canonical(int(a), int(b))
            if a == b or pair in taken:
                left.extend((int(a), int(b)))
            else:
                taken.add(pair)
                noise_pairs.append(pair)
        if len(stubs) % 2:
            left.append(int(stubs[-1]))
        stubs = np.array(left, dtype=np.int64)
    # Pair up remaining stubs a, b (possibly a == b) by rewiring a noise edge (x, y) into (a, x), (b, y).
    stubs = list(rng.permutation(stubs))
    for _ in range(50 * len(stubs)):
        if len(stubs) < 2 or not noise_pairs:
            break
        a, b = int(stubs[-1]), int(stubs[-2])
        j = int(rng.integers(len(noise_pairs)))
        x, y = noise_pairs[j]
        new = (canonical(a, x), canonical(b, y))
        if a in (x, y) or b in (x, y) or new[0] in taken or new[1] in taken:
            continue
        taken.discard(noise_pairs[j])
        taken.update(new)
        noise_pairs[j] = new[0]
        noise_pairs.append(new[1])
        del stubs[-2:]

    raw = []
    for pair in sorted(taken):
        u, v = pair
        times = list(_poisson_times(rng, spec.noise_rate, spec.horizon, at_least_one=True))
        feats = [rng.uniform(0.0, 1.0, spec.edge_dim) for _ in times]
        c = pattern_pairs.get(pair)
        if c is not None:
            period = spec.pattern_period / c
            phase = rng.uniform(0.0, period)
            for t in np.arange(phase, spec.horizon, period):
                f = rng.uniform(0.0, 1.0, spec.edge_dim)
                f[0] = spec.pattern_amplitude + spec.pattern_noise * rng.standard_normal()
                times.append(float(t))
                feats.append(f)
        dirs = rng.integers(0, 2, size=len(times))
        for t, f, d in zip(times, feats, dirs):
            raw.append((u, v, t, f) if d else (v, u, t, f))
    seqs = build_edge_sequences(raw)
    return TemporalGraph(node_features, labels, list(seqs.values()), spec.num_classes,
                         meta={"pattern_pairs": sorted(pattern_pairs)})
