"""Ranking metrics, multi-run reports and node-importance analyses."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .numerics import ConvergenceError

DEFAULT_KS = (20, 100, 200)
METRICS = ("recall", "map", "ndcg")


def _ids(ranked):
    return ranked.candidates if hasattr(ranked, "candidates") else np.asarray(ranked)


def _truth_ids(truth):
    return [t[0] if isinstance(t, tuple) else t for t in truth]


# ---------------------------------------------------------------- metrics
#
# Each metric returns None for an empty ground truth; callers exclude those
# queries from aggregation.

def recall_at_k(ranked, truth, k):
    """Fraction of ground-truth items among the top ``k``."""
    truth = set(_truth_ids(truth))
    if not truth:
        return None
    top = set(int(c) for c in _ids(ranked)[:k])
    return len(top & truth) / len(truth)


def map_at_k(ranked, truth, k):
    """Average precision at ``k`` with binary relevance.

    Normalized by ``min(k, |truth|)`` so the value lies in [0, 1].
    """
    truth = set(_truth_ids(truth))
    if not truth:
        return None
    hits = 0
    total = 0.0
    for r, c in enumerate(_ids(ranked)[:k], start=1):
        if int(c) in truth:
            hits += 1
            total += hits / r
    return total / min(k, len(truth))


def ndcg_at_k(ranked, truth_with_weights, k):
    """NDCG at ``k`` with graded gains ``2**w - 1`` from ground-truth weights."""
    if not truth_with_weights:
        return None
    gain = {int(t): float(w) for t, w in truth_with_weights}
    dcg = 0.0
    for r, c in enumerate(_ids(ranked)[:k], start=1):
        w = gain.get(int(c))
        if w is not None:
            dcg += (2.0 ** w - 1.0) / math.log2(r + 1)
    ideal = sorted(gain.values(), reverse=True)[:k]
    idcg = sum((2.0 ** w - 1.0) / math.log2(r + 1) for r, w in enumerate(ideal, start=1))
    return dcg / idcg if idcg > 0 else 0.0


@dataclass
class EvalReport:
    """Per-K metric values (in percent) for each run.

    ``values[metric][K]`` is an array of length ``runs``; each entry is the
    mean over queries for that run.
    """

    ks: tuple
    values: dict
    n_queries: int
    skipped: int = 0
    seeds: tuple = ()
    meta: dict = field(default_factory=dict)

    def mean(self, metric, k):
        return float(np.mean(self.values[metric][k]))

    def std(self, metric, k):
        v = self.values[metric][k]
        # identical runs: avoid rounding noise from the mean
        if np.all(v == v[0]):
            return 0.0
        return float(np.std(v))

    def to_dict(self):
        cells = {
            m: {str(k): {"mean": self.mean(m, k), "std": self.std(m, k),
                         "runs": [float(v) for v in self.values[m][k]]} for k in self.ks}
            for m in METRICS
        }
        return {"ks": list(self.ks), "metrics": cells, "n_queries": self.n_queries,
                "skipped": self.skipped, "seeds": list(self.seeds), **self.meta}

    def table(self):
        lines = ["metric  " + "  ".join(f"@{k:<14}" for k in self.ks)]
        for m in METRICS:
            cells = [f"{self.mean(m, k):6.2f} ± {self.std(m, k):5.2f}" for k in self.ks]
            lines.append(f"{m:<7} " + "  ".join(f"{c:<15}" for c in cells))
        return "\n".join(lines)


def query_metrics(ranked, truth, ks=DEFAULT_KS):
    """Average metrics over queries for one set of ranked lists.

    Returns ``(values, skipped)`` with ``values[metric][K]`` a fraction.
    """
    sums = {m: {k: 0.0 for k in ks} for m in METRICS}
    count = skipped = 0
    for query in sorted(truth):
        t = truth[query]
        if not t:
            skipped += 1
            continue
        rl = ranked[query]
        count += 1
        for k in ks:
            sums["recall"][k] += recall_at_k(rl, t, k)
            sums["map"][k] += map_at_k(rl, t, k)
            sums["ndcg"][k] += ndcg_at_k(rl, t, k)
    if count == 0:
        raise ValueError("no cold queries with ground truth")
    return {m: {k: sums[m][k] / count for k in ks} for m in METRICS}, skipped


def evaluate(rank_source, truth, ks=DEFAULT_KS, runs=1, seed=0):
    """Mean and spread of metrics over ``runs`` independent runs.

    ``rank_source(run_seed)`` returns ``{query: RankedList}`` covering every
    query of ``truth``; run seeds are ``seed, seed+1, ...``.
    """
    if not truth:
        raise ValueError("no cold queries")
    ks = tuple(int(k) for k in ks)
    values = {m: {k: [] for k in ks} for m in METRICS}
    skipped = 0
    seeds = tuple(seed + r for r in range(runs))
    for s in seeds:
        per_run, skipped = query_metrics(rank_source(s), truth, ks)
        for m in METRICS:
            for k in ks:
                values[m][k].append(100.0 * per_run[m][k])
    values = {m: {k: np.asarray(v) for k, v in d.items()} for m, d in values.items()}
    n_queries = sum(1 for t in truth.values() if t)
    return EvalReport(ks, values, n_queries, skipped, seeds)


# ---------------------------------------------------------------- node measures

def pagerank(graph, damping=0.85, tol=1e-10, max_iter=1000):
    """Weighted PageRank by power iteration; dangling mass spreads uniformly."""
    n = graph.n
    if n == 0:
        raise ValueError("empty graph")
    src = graph.sources()
    out = np.bincount(src, weights=graph.weights, minlength=n)
    dangling = out == 0
    share = np.zeros_like(graph.weights)
    ok = out[src] > 0
    share[ok] = graph.weights[ok] / out[src[ok]]
    x = np.full(n, 1.0 / n)
    change = np.inf
    for _ in range(max_iter):
        nxt = np.bincount(graph.targets, weights=share * x[src], minlength=n)
        nxt += x[dangling].sum() / n
        nxt = damping * nxt + (1.0 - damping) / n
        change = np.abs(nxt - x).sum()
        x = nxt
        if change < tol:
            return x
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations", change)


def betweenness(graph, lengths="inverse", sources=None):
    """Directed betweenness centrality (unnormalized), Brandes accumulation.

    ``lengths="inverse"`` uses ``1/weight`` edge lengths so strong similarity
    means a short path; ``"uniform"`` counts hops. Zero-weight edges are
    ignored under inverse lengths. ``sources`` restricts the outer loop to a
    subset of source nodes (an estimate; exact when ``None``).
    """
    n = graph.n
    if lengths == "inverse":
        edge_len = np.full(len(graph.weights), np.inf)
        pos = graph.weights > 0
        edge_len[pos] = 1.0 / graph.weights[pos]
    elif lengths == "uniform":
        edge_len = np.ones(len(graph.weights))
    else:
        raise ValueError("lengths must be 'inverse' or 'uniform'")
    indptr, targets = graph.indptr.tolist(), graph.targets.tolist()
    edge_len = edge_len.tolist()
    bc = np.zeros(n)
    for s in range(n) if sources is None else sources:
        stack = []
        preds = [[] for _ in range(n)]
        sigma = [0] * n
        sigma[s] = 1
        dist = [math.inf] * n
        dist[s] = 0.0
        seen = [False] * n
        heap = [(0.0, s)]
        while heap:
            dv, v = heapq.heappop(heap)
            if seen[v]:
                continue
            seen[v] = True
            stack.append(v)
            for e in range(indptr[v], indptr[v + 1]):
                le = edge_len[e]
                if le == math.inf:
                    continue
                w = targets[e]
                alt = dv + le
                if alt < dist[w]:
                    dist[w] = alt
                    sigma[w] = sigma[v]
                    preds[w] = [v]
                    heapq.heappush(heap, (alt, w))
                elif alt == dist[w]:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


def popularity_by_country_rank(meta, ids):
    """Rank (1 = most popular) of each node among ``ids`` of the same country."""
    ids = np.asarray(ids)
    ranks = meta.popularity_rank[ids]
    out = np.zeros(len(ids), dtype=np.int64)
    countries = np.array([meta.country[i] for i in ids], dtype=object)
    for c in set(countries.tolist()):
        members = np.flatnonzero(countries == c)
        order = members[np.lexsort((ids[members], ranks[members]))]
        out[order] = np.arange(1, len(order) + 1)
    return out


def node_measures(masked, meta=None, betweenness_lengths="inverse", betweenness_sources=None):
    """The node-level measures compared against learned masses (warm nodes)."""
    g = masked.train_graph
    out = {}
    if meta is not None and np.all(meta.popularity_rank[masked.warm_ids] > 0):
        out["popularity_rank"] = -meta.popularity_rank[masked.warm_ids].astype(np.float64)
        out["popularity_rank_by_country"] = -popularity_by_country_rank(meta, masked.warm_ids).astype(np.float64)
    out["in_degree"] = g.in_strength()
    out["betweenness"] = betweenness(g, betweenness_lengths, betweenness_sources)
    out["pagerank"] = pagerank(g)
    return out


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return float("nan")
    return float(np.clip(a @ b / den, -1.0, 1.0))


@dataclass
class CorrelationTable:
    """``rows[measure] = (pearson, spearman)``; NaN marks an undefined coefficient."""

    rows: dict

    def to_tsv(self):
        lines = ["measure\tpearson\tspearman"]
        lines += [f"{k}\t{p:.6f}\t{s:.6f}" for k, (p, s) in self.rows.items()]
        return "\n".join(lines) + "\n"


def mass_correlations(masses, measures):
    """Pearson on raw values and Spearman on average-tie ranks."""
    rows = {}
    for name, values in measures.items():
        values = np.asarray(values, dtype=np.float64)
        if values.shape != np.shape(masses):
            raise ValueError(f"measure {name!r} not aligned with masses")
        rows[name] = (_pearson(masses, values), _pearson(rankdata(masses), rankdata(values)))
    return CorrelationTable(rows)


@dataclass
class BiasProfile:
    queries: np.ndarray
    min_rank: np.ndarray

    @property
    def quartiles(self):
        return np.percentile(self.min_rank, [25, 50, 75]) if len(self.min_rank) else np.full(3, np.nan)

    @property
    def median(self):
        return float(np.median(self.min_rank))


def popularity_bias_profile(ranked_lists, meta, k=20):
    """Best (smallest) popularity rank within each query's top ``k``.

    Candidates without a known rank are ignored; queries with none are dropped.
    """
    queries, values = [], []
    for q in sorted(ranked_lists):
        ranks = meta.popularity_rank[ranked_lists[q].candidates[:k]]
        ranks = ranks[ranks > 0]
        if len(ranks):
            queries.append(q)
            values.append(int(ranks.min()))
    return BiasProfile(np.asarray(queries, dtype=np.int64), np.asarray(values, dtype=np.int64))
