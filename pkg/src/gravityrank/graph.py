"""Directed, weighted, attributed similar-items graphs.

Loading and writing of the TSV dataset files, train/valid/test splits,
masking of cold nodes, and the out-degree normalized adjacency used by the
GCN encoders.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SPLIT_PARTS = ("train", "valid", "test")


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DirectedWeightedGraph:
    """Row-compressed directed graph with weights in [0, 1].

    ``indptr``/``targets``/``weights`` follow the CSR layout: the out-edges of
    node ``i`` are ``targets[indptr[i]:indptr[i+1]]``, sorted ascending.
    """

    n: int
    indptr: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    k_hint: int | None = None

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        targets = np.asarray(self.targets, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if indptr.shape != (self.n + 1,) or indptr[0] != 0 or indptr[-1] != len(targets):
            raise ValueError("inconsistent indptr")
        if len(targets) != len(weights):
            raise ValueError("targets and weights differ in length")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be nondecreasing")
        if len(targets):
            if targets.min() < 0 or targets.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if not np.all(np.isfinite(weights)) or weights.min() < 0 or weights.max() > 1:
                raise ValueError("edge weights must lie in [0, 1]")
            src = np.repeat(np.arange(self.n), np.diff(indptr))
            if np.any(src == targets):
                raise ValueError("self-loops are not allowed")
            # sorted strictly ascending within each row <=> no duplicates
            same_row = src[1:] == src[:-1]
            if np.any(targets[1:][same_row] <= targets[:-1][same_row]):
                raise ValueError("targets must be strictly ascending per source")
        object.__setattr__(self, "indptr", _frozen(indptr))
        object.__setattr__(self, "targets", _frozen(targets))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def from_edges(cls, n, src, dst, weight, k_hint=None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        order = np.lexsort((dst, src))
        src, dst, weight = src[order], dst[order], weight[order]
        dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
        if np.any(dup):
            i = int(np.flatnonzero(dup)[0])
            raise ValueError(f"duplicate edge ({src[i]}, {dst[i]})")
        indptr = np.zeros(n + 1, dtype=np.int64)
        if len(src):
            if src.min() < 0 or src.max() >= n:
                raise ValueError("edge endpoint out of range")
            np.add.at(indptr, src + 1, 1)
        return cls(n, np.cumsum(indptr), dst, weight, k_hint)

    @property
    def num_edges(self):
        return len(self.targets)

    def sources(self):
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def out_degrees(self):
        return np.diff(self.indptr)

    def in_strength(self):
        """Weighted in-degree: sum of weights pointing to each node."""
        return np.bincount(self.targets, weights=self.weights, minlength=self.n)

    def out_edges(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.targets[lo:hi], self.weights[lo:hi]

    def to_csr(self, dtype=np.float64):
        return sp.csr_matrix(
            (self.weights.astype(dtype), self.targets, self.indptr), shape=(self.n, self.n)
        )

    def to_dense(self, dtype=np.float64):
        return self.to_csr(dtype).toarray()

    def induced_subgraph(self, nodes):
        """Restrict to ``nodes`` (ascending original ids), reindexed 0..len-1."""
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        src = self.sources()
        keep = (local[src] >= 0) & (local[self.targets] >= 0)
        return DirectedWeightedGraph.from_edges(
            len(nodes), local[src[keep]], local[self.targets[keep]], self.weights[keep], self.k_hint
        )

    def __eq__(self, other):
        if not isinstance(other, DirectedWeightedGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.targets, other.targets)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


@dataclass(frozen=True)
class AttributeTable:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("attribute table must be 2-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("attribute values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class NodeMeta:
    """Per-node metadata. ``popularity_rank`` is 0 where unknown."""

    ids: tuple
    popularity_rank: np.ndarray
    country: tuple

    def __post_init__(self):
        object.__setattr__(self, "popularity_rank", _frozen(np.asarray(self.popularity_rank, dtype=np.int64)))
        if not (len(self.ids) == len(self.popularity_rank) == len(self.country)):
            raise ValueError("node metadata columns differ in length")

    @property
    def n(self):
        return len(self.ids)

    def index(self):
        return {node_id: i for i, node_id in enumerate(self.ids)}


@dataclass(frozen=True)
class DataSplit:
    warm_ids: np.ndarray
    valid_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        for name in ("warm_ids", "valid_ids", "test_ids"):
            object.__setattr__(self, name, _frozen(np.sort(np.asarray(getattr(self, name), dtype=np.int64))))
        allids = np.concatenate([self.warm_ids, self.valid_ids, self.test_ids])
        if len(np.unique(allids)) != len(allids):
            raise ValueError("split parts overlap")

    @property
    def cold_ids(self):
        return np.sort(np.concatenate([self.valid_ids, self.test_ids]))

    def part(self, name):
        return {"train": self.warm_ids, "warm": self.warm_ids,
                "valid": self.valid_ids, "test": self.test_ids}[name]

    def check_covers(self, n):
        allids = np.concatenate([self.warm_ids, self.valid_ids, self.test_ids])
        if len(allids) != n or (n and (allids.min() < 0 or allids.max() >= n)):
            raise ValueError(f"split does not partition 0..{n - 1}")


@dataclass(frozen=True)
class MaskedGraphView:
    """Warm-only training graph plus the hidden out-edges of cold nodes.

    ``train_graph`` is indexed locally: local node ``r`` is original node
    ``warm_ids[r]``. Ground-truth lists use original ids and are ordered by
    descending weight (ties by ascending target).
    """

    train_graph: DirectedWeightedGraph
    warm_ids: np.ndarray
    ground_truth: dict
    n_total: int

    @property
    def n_warm(self):
        return self.train_graph.n

    def truth_for(self, ids):
        return {int(i): self.ground_truth[int(i)] for i in ids}


# ---------------------------------------------------------------- loading

def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].startswith("#"):
                continue
            yield lineno, row


def _parse_float(text, path, lineno, what):
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"cannot parse {what} {text!r}", path, lineno) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite {what} {text!r}", path, lineno)
    return value


def load_nodes(path):
    ids, ranks, countries, seen = [], [], [], {}
    for lineno, row in _read_rows(path):
        if len(row) < 1 or len(row) > 3:
            raise DataFormatError(f"expected 1-3 columns, got {len(row)}", path, lineno)
        row = row + [""] * (3 - len(row))
        node_id, rank, country = row[0].strip(), row[1].strip(), row[2].strip()
        if not node_id:
            raise DataFormatError("empty node id", path, lineno)
        if node_id in seen:
            raise DataFormatError(f"duplicate node id {node_id!r}", path, lineno)
        if rank:
            try:
                r = int(rank)
            except ValueError:
                raise DataFormatError(f"cannot parse popularity rank {rank!r}", path, lineno) from None
            if r < 1:
                raise DataFormatError(f"popularity rank {r} must be >= 1", path, lineno)
        else:
            r = 0
        seen[node_id] = lineno
        ids.append(node_id)
        ranks.append(r)
        countries.append(country)
    n = len(ids)
    ranks = np.asarray(ranks, dtype=np.int64)
    if np.any(ranks > n):
        i = int(np.flatnonzero(ranks > n)[0])
        raise DataFormatError(f"popularity rank {ranks[i]} exceeds node count {n}", path, seen[ids[i]])
    known = ranks[ranks > 0]
    if len(np.unique(known)) != len(known):
        raise DataFormatError("popularity ranks are not unique", path)
    return NodeMeta(tuple(ids), ranks, tuple(countries))


def load_edges(path, index, k_hint=None):
    src, dst, w = [], [], []
    pairs = set()
    for lineno, row in _read_rows(path):
        if len(row) != 3:
            raise DataFormatError(f"expected 3 columns, got {len(row)}", path, lineno)
        a, b = row[0].strip(), row[1].strip()
        for endpoint in (a, b):
            if endpoint not in index:
                raise DataFormatError(f"dangling edge endpoint {endpoint!r}", path, lineno)
        weight = _parse_float(row[2], path, lineno, "weight")
        if not 0.0 <= weight <= 1.0:
            raise DataFormatError(f"weight {weight} outside [0, 1]", path, lineno)
        i, j = index[a], index[b]
        if i == j:
            raise DataFormatError(f"self-loop on {a!r}", path, lineno)
        if (i, j) in pairs:
            raise DataFormatError(f"duplicate edge {a!r} -> {b!r}", path, lineno)
        pairs.add((i, j))
        src.append(i)
        dst.append(j)
        w.append(weight)
    return DirectedWeightedGraph.from_edges(len(index), src, dst, w, k_hint)


def load_features(path, index):
    n = len(index)
    values = None
    filled = np.zeros(n, dtype=bool)
    f = None
    for lineno, row in _read_rows(path):
        node_id = row[0].strip()
        if node_id not in index:
            raise DataFormatError(f"unknown node id {node_id!r}", path, lineno)
        vec = [_parse_float(x, path, lineno, "feature") for x in row[1:]]
        if f is None:
            f = len(vec)
            if f == 0:
                raise DataFormatError("feature row has no values", path, lineno)
            values = np.zeros((n, f))
        elif len(vec) != f:
            raise DataFormatError(f"feature dimension mismatch: expected {f}, got {len(vec)}", path, lineno)
        i = index[node_id]
        if filled[i]:
            raise DataFormatError(f"duplicate feature row for {node_id!r}", path, lineno)
        values[i] = vec
        filled[i] = True
    if values is None:
        raise DataFormatError("no feature rows", path)
    if not filled.all():
        missing = [k for k, i in index.items() if not filled[i]][:5]
        raise DataFormatError(f"missing feature rows for {len(index) - filled.sum()} nodes, e.g. {missing}", path)
    return AttributeTable(values)


def load_dataset(node_path, edge_path, feature_path, k_hint=None):
    """Load and validate the node, edge and feature files.

    Node ids are densified to ``0..n-1`` in the order of ``node_path``.
    Returns ``(graph, attrs, meta)``; ``meta.ids`` maps dense ids back to the
    external ones.
    """
    for p in (node_path, edge_path, feature_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")
    meta = load_nodes(node_path)
    index = meta.index()
    graph = load_edges(edge_path, index, k_hint)
    if k_hint is None and graph.num_edges:
        deg = graph.out_degrees()
        graph = DirectedWeightedGraph(graph.n, graph.indptr, graph.targets, graph.weights, int(deg.max()))
    attrs = load_features(feature_path, index)
    return graph, attrs, meta


def write_nodes(path, meta):
    with open(path, "w", encoding="utf-8") as fh:
        for node_id, rank, country in zip(meta.ids, meta.popularity_rank, meta.country):
            fh.write(f"{node_id}\t{rank if rank > 0 else ''}\t{country}\n")


def write_edges(path, graph, ids=None):
    ids = ids if ids is not None else [str(i) for i in range(graph.n)]
    with open(path, "w", encoding="utf-8") as fh:
        for s, t, w in zip(graph.sources(), graph.targets, graph.weights):
            # repr round-trips float64 exactly
            fh.write(f"{ids[s]}\t{ids[t]}\t{float(w)!r}\n")


def write_features(path, attrs, ids=None):
    ids = ids if ids is not None else [str(i) for i in range(attrs.rows)]
    with open(path, "w", encoding="utf-8") as fh:
        for node_id, row in zip(ids, attrs.values):
            fh.write(node_id + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def write_split(path, split, ids):
    label = {}
    for name, part in (("train", split.warm_ids), ("valid", split.valid_ids), ("test", split.test_ids)):
        for i in part:
            label[int(i)] = name
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(ids)):
            fh.write(f"{ids[i]}\t{label[i]}\n")


def read_split(path, index):
    parts = {name: [] for name in SPLIT_PARTS}
    seen = set()
    for lineno, row in _read_rows(path):
        if len(row) != 2:
            raise DataFormatError(f"expected 2 columns, got {len(row)}", path, lineno)
        node_id, part = row[0].strip(), row[1].strip()
        if node_id not in index:
            raise DataFormatError(f"unknown node id {node_id!r}", path, lineno)
        if part not in parts:
            raise DataFormatError(f"unknown split label {part!r}", path, lineno)
        if node_id in seen:
            raise DataFormatError(f"node {node_id!r} listed twice", path, lineno)
        seen.add(node_id)
        parts[part].append(index[node_id])
    split = DataSplit(parts["train"], parts["valid"], parts["test"])
    try:
        split.check_covers(len(index))
    except ValueError as exc:
        raise DataFormatError(str(exc), path) from None
    return split


# ---------------------------------------------------------------- splits

def make_split(n, ratios=(0.8, 0.1, 0.1), seed=0):
    """Uniformly random warm/valid/test partition of ``0..n-1``.

    Validation and test sizes are ``floor(ratio * n)``; the remainder is warm.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("need three positive ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    sizes = [math.floor(r * n + 1e-9) for r in ratios]
    if any(s == 0 for s in sizes):
        raise ValueError(f"ratios {ratios} leave an empty part for n={n}")
    n_valid, n_test = sizes[1], sizes[2]
    perm = np.random.default_rng(seed).permutation(n)
    n_warm = n - n_valid - n_test
    return DataSplit(perm[:n_warm], perm[n_warm:n_warm + n_valid], perm[n_warm + n_valid:])


def subsample(graph, attrs, meta, size, seed=0):
    """Uniformly sampled induced subgraph of ``size`` nodes with aligned tables.

    Known popularity ranks are renumbered 1..m within the sample.
    """
    if not 0 < size <= graph.n:
        raise ValueError(f"cannot sample {size} of {graph.n} nodes")
    nodes = np.sort(np.random.default_rng(seed).choice(graph.n, size, replace=False))
    # re-rank popularity within the sample, keeping the original order
    ranks = meta.popularity_rank[nodes]
    known = np.flatnonzero(ranks > 0)
    new_ranks = np.zeros(size, dtype=np.int64)
    new_ranks[known[np.lexsort((nodes[known], ranks[known]))]] = np.arange(1, len(known) + 1)
    sub_meta = NodeMeta(tuple(meta.ids[i] for i in nodes), new_ranks, tuple(meta.country[i] for i in nodes))
    return graph.induced_subgraph(nodes), AttributeTable(attrs.values[nodes]), sub_meta


def mask_cold(graph, split):
    """Hide every edge touching a cold (valid or test) node.

    The cold nodes' out-edges become the ground truth.
    """
    split.check_covers(graph.n)
    cold = split.cold_ids
    is_cold = np.zeros(graph.n, dtype=bool)
    is_cold[cold] = True
    truth = {}
    for c in cold:
        t, w = graph.out_edges(c)
        order = np.lexsort((t, -w))
        truth[int(c)] = [(int(t[o]), float(w[o])) for o in order]
    train = graph.induced_subgraph(split.warm_ids)
    return MaskedGraphView(train, split.warm_ids, truth, graph.n)


# ---------------------------------------------------------------- normalization

def normalize_out_degree(graph, extra_isolated=0, dtype=np.float64):
    """Row-normalized adjacency ``D_out^-1 (A + I)`` padded with isolated nodes."""
    n = graph.n + extra_isolated
    a = graph.to_csr(np.float64)
    a.resize((n, n))
    a = (a + sp.identity(n, format="csr")).tocsr()
    a.sort_indices()
    rowsum = np.asarray(a.sum(axis=1)).ravel()
    a = sp.diags(1.0 / rowsum) @ a
    a = a.tocsr()
    a.sort_indices()
    return a.astype(dtype)


def extend_with_cold(masked, attrs, cold_ids, dtype=np.float64):
    """Append isolated cold nodes to the warm training system.

    Returns ``(adj, features, index_map)`` where ``index_map[r]`` is the
    original id of extended row ``r`` (warm rows first, then ``cold_ids``).
    """
    cold_ids = np.asarray(cold_ids, dtype=np.int64).reshape(-1)
    if len(cold_ids) and (cold_ids.min() < 0 or cold_ids.max() >= attrs.rows):
        raise ValueError("cold id without attribute row")
    if attrs.rows != masked.n_total:
        raise ValueError(f"attribute table has {attrs.rows} rows, graph has {masked.n_total} nodes")
    adj = normalize_out_degree(masked.train_graph, len(cold_ids), dtype)
    index_map = np.concatenate([masked.warm_ids, cold_ids])
    features = attrs.values[index_map].astype(dtype)
    return adj, features, index_map
