"""Non-autoencoder comparison methods for cold-start ranking."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics
from .coldstart import RankedList, make_ranked_list

log = logging.getLogger(__name__)

BASELINES = (
    "popularity", "popularity_by_country",
    "in_degree", "in_degree_by_country",
    "knn", "knn_popularity", "knn_in_degree",
    "svd_dnn",
)


def _country_pool(meta, warm_ids, country):
    """Warm ids from ``country``; falls back to all warm ids if none exist."""
    if country is None:
        return warm_ids, ""
    members = np.array([i for i in warm_ids if meta.country[i] == country], dtype=np.int64)
    if not country or len(members) == 0:
        return warm_ids, "country-fallback"
    return members, ""


def popularity_list(meta, warm_ids, k, country=None, query=-1):
    """Most popular warm nodes (ascending rank), optionally from one country."""
    pool, note = _country_pool(meta, np.asarray(warm_ids, dtype=np.int64), country)
    ranks = meta.popularity_rank[pool]
    if np.any(ranks <= 0):
        raise ValueError("popularity rank missing for warm nodes")
    return make_ranked_list(query, -ranks.astype(np.float64), pool, k, note=note)


def in_degree_list(masked, k, meta=None, country=None, query=-1):
    """Warm nodes by descending weighted in-degree in the training graph."""
    strength = masked.train_graph.in_strength()
    warm = masked.warm_ids
    if country is None:
        return make_ranked_list(query, strength, warm, k)
    pool, note = _country_pool(meta, warm, country)
    local = np.searchsorted(warm, pool)
    return make_ranked_list(query, strength[local], pool, k, note=note)


def knn_list(attrs, warm_ids, query_vector, k, rerank=None, pool=200, rerank_values=None, query=-1):
    """Euclidean nearest warm neighbours of ``query_vector``.

    With ``rerank`` set, the ``pool`` nearest are reordered by
    ``rerank_values`` (higher first, aligned with ``warm_ids``) and cut to ``k``.
    """
    warm_ids = np.asarray(warm_ids, dtype=np.int64)
    keep = warm_ids != query
    warm_ids = warm_ids[keep]
    x = attrs.values[warm_ids]
    dist = numerics.pairwise_sq_dist(np.atleast_2d(query_vector), x)[0]
    if rerank is None:
        return make_ranked_list(query, -dist, warm_ids, k)
    if rerank_values is None:
        raise ValueError("rerank needs rerank_values")
    values = np.asarray(rerank_values, dtype=np.float64)[keep]
    near = make_ranked_list(query, -dist, warm_ids, pool)
    note = "pool-short" if pool < k else ""
    pos = np.searchsorted(warm_ids, near.candidates)
    out = make_ranked_list(query, values[pos], near.candidates, min(k, len(near)), note=note)
    return RankedList(out.query, out.candidates, out.scores, short=len(near) < k, note=note)


# ---------------------------------------------------------------- SVD + DNN

@dataclass
class SvdDnnModel:
    warm_ids: np.ndarray
    coords: np.ndarray          # warm coordinates in SVD space
    weights: dict               # W1, b1, W2, b2, W3, b3
    loss_trace: list

    def transform(self, x):
        """Map attribute rows to SVD coordinates."""
        return mlp_forward(self.weights, np.atleast_2d(x))[0]


def mlp_forward(w, x):
    h1_pre = x @ w["W1"] + w["b1"]
    h1 = np.maximum(h1_pre, 0)
    h2_pre = h1 @ w["W2"] + w["b2"]
    h2 = np.maximum(h2_pre, 0)
    out = h2 @ w["W3"] + w["b3"]
    return out, (x, h1_pre, h1, h2_pre, h2)


def mlp_loss(w, x, y):
    """Mean squared error and its gradients."""
    out, (x, h1_pre, h1, h2_pre, h2) = mlp_forward(w, x)
    diff = out - y
    loss = float(np.mean(diff ** 2))
    g_out = 2.0 * diff / diff.size
    g = {"W3": h2.T @ g_out, "b3": g_out.sum(0)}
    g_h2 = (g_out @ w["W3"].T) * (h2_pre > 0)
    g["W2"], g["b2"] = h1.T @ g_h2, g_h2.sum(0)
    g_h1 = (g_h2 @ w["W2"].T) * (h1_pre > 0)
    g["W1"], g["b1"] = x.T @ g_h1, g_h1.sum(0)
    return loss, g


def svd_coordinates(masked, d=32, seed=0, tol=1e-8, max_iter=500):
    """Warm coordinates ``U * sqrt(s)`` from a truncated SVD of the warm adjacency."""
    a = masked.train_graph.to_csr()
    d = min(d, min(a.shape))
    u, s, _ = numerics.truncated_svd(a, d, tol=tol, max_iter=max_iter, rng=np.random.default_rng(seed))
    return u * np.sqrt(s)


def svd_dnn_train(masked, attrs, seed=0, d=32, hidden=(64, 32), epochs=300, lr=0.01, svd_tol=1e-8):
    """Fit the SVD embedding of warm nodes and an MLP from attributes to it."""
    coords = svd_coordinates(masked, d, seed, tol=svd_tol)
    x = attrs.values[masked.warm_ids]
    rng = np.random.default_rng(seed)
    dims = (x.shape[1], hidden[0], hidden[1], coords.shape[1])
    w = {}
    for layer in range(3):
        w[f"W{layer + 1}"] = numerics.glorot_init(dims[layer], dims[layer + 1], rng)
        w[f"b{layer + 1}"] = np.zeros(dims[layer + 1])
    state = numerics.AdamState(lr=lr)
    trace = []
    for _ in range(epochs):
        loss, g = mlp_loss(w, x, coords)
        trace.append(loss)
        numerics.adam_step(w, g, state)
    return SvdDnnModel(masked.warm_ids, coords, w, trace)


def svd_dnn_rank(model, cold_vector, k, query=-1):
    """Warm nodes by ascending distance to the mapped cold vector."""
    z = model.transform(cold_vector)
    dist = numerics.pairwise_sq_dist(z, model.coords)[0]
    return make_ranked_list(query, -dist, model.warm_ids, k)


# ---------------------------------------------------------------- dispatch

def baseline_rankings(kind, masked, attrs, meta, queries, k, seed=0, pool=200):
    """``{query: RankedList}`` for every query under baseline ``kind``."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    warm = masked.warm_ids
    out = {}
    if kind in ("popularity", "in_degree"):
        template = (popularity_list(meta, warm, k) if kind == "popularity"
                    else in_degree_list(masked, k))
        for q in queries:
            out[int(q)] = RankedList(int(q), template.candidates, template.scores, template.short)
        return out
    if kind in ("popularity_by_country", "in_degree_by_country"):
        cache = {}
        for q in queries:
            c = meta.country[int(q)]
            if c not in cache:
                cache[c] = (popularity_list(meta, warm, k, c) if kind == "popularity_by_country"
                            else in_degree_list(masked, k, meta, c))
                if cache[c].note:
                    log.warning("%s: no warm nodes for country %r, using all", kind, c)
            t = cache[c]
            out[int(q)] = RankedList(int(q), t.candidates, t.scores, t.short, t.note)
        return out
    if kind.startswith("knn"):
        rerank, values = None, None
        if kind == "knn_popularity":
            rerank, values = "popularity", -meta.popularity_rank[warm].astype(np.float64)
        elif kind == "knn_in_degree":
            rerank, values = "in_degree", masked.train_graph.in_strength()
        for q in queries:
            out[int(q)] = knn_list(attrs, warm, attrs.values[int(q)], k, rerank, pool, values, query=int(q))
        return out
    model = svd_dnn_train(masked, attrs, seed)
    for q in queries:
        out[int(q)] = svd_dnn_rank(model, attrs.values[int(q)], k, query=int(q))
    return out
