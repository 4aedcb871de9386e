"""Small planted similar-items graphs for demos and tests."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .graph import AttributeTable, DirectedWeightedGraph, NodeMeta


def planted_dataset(n=200, k=5, n_countries=4, latent_dim=3, noise_dims=2, seed=0):
    """Graph whose top-``k`` edges follow a hidden gravity model.

    Nodes get latent positions (clustered by country) and masses. Node ``i``
    points to the ``k`` nodes ``j`` with largest ``mass_j - 2 log |p_i - p_j|^2``.
    Attributes are noisy positions, pure-noise columns and a one-hot country,
    so neighbourhoods are predictable from attributes. Popularity ranks
    follow the masses.
    """
    rng = np.random.default_rng(seed)
    country = rng.integers(n_countries, size=n)
    centers = rng.normal(scale=2.0, size=(n_countries, latent_dim))
    pos = centers[country] + rng.normal(size=(n, latent_dim))
    mass = rng.normal(size=n)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    score = mass[None, :] - 2.0 * np.log(d2)
    src, dst, w = [], [], []
    for i in range(n):
        top = np.argsort(-score[i], kind="stable")[:k]
        best = score[i, top[0]]
        for j in top:
            src.append(i)
            dst.append(int(j))
            w.append(round(0.9 * float(np.exp((score[i, j] - best) / 4.0)), 6))
    graph = DirectedWeightedGraph.from_edges(n, src, dst, w, k_hint=k)
    feats = np.column_stack([
        pos + 0.1 * rng.normal(size=pos.shape),
        rng.normal(size=(n, noise_dims)),
        np.eye(n_countries)[country],
    ])
    popularity = np.empty(n, dtype=np.int64)
    popularity[np.argsort(-(mass + 0.3 * rng.normal(size=n)), kind="stable")] = np.arange(1, n + 1)
    ids = tuple(f"item{i:04d}" for i in range(n))
    meta = NodeMeta(ids, popularity, tuple(f"C{c}" for c in country))
    return graph, AttributeTable(np.round(feats, 6)), meta


def sample_paths():
    """Paths of the bundled 200-node sample dataset (nodes, edges, features)."""
    base = Path(str(resources.files("gravityrank"))) / "data" / "sample"
    return base / "nodes.tsv", base / "edges.tsv", base / "features.tsv"


def write_dataset(directory, graph, attrs, meta):
    from .graph import write_edges, write_features, write_nodes

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_nodes(directory / "nodes.tsv", meta)
    write_edges(directory / "edges.tsv", graph, meta.ids)
    write_features(directory / "features.tsv", attrs, meta.ids)
    return directory / "nodes.tsv", directory / "edges.tsv", directory / "features.tsv"
