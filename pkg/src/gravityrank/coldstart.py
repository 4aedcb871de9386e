"""Projection of cold nodes into a trained embedding and top-K ranking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .graph import extend_with_cold
from .models import decoder_logits, encode, encode_gcn, sample_latent

CANDIDATE_POLICIES = ("all", "warm-only")


@dataclass(frozen=True)
class RankedList:
    """Recommendations for one query, best first.

    ``short`` is set when fewer than the requested ``K`` candidates existed;
    ``note`` carries any other caveat (e.g. a fallback taken by a baseline).
    """

    query: int
    candidates: np.ndarray
    scores: np.ndarray
    short: bool = False
    note: str = ""

    def __len__(self):
        return len(self.candidates)

    def top(self, k):
        return self.candidates[:k]


def top_k_order(keys, ids, k):
    """Positions of the ``k`` largest ``keys``; ties broken by ascending ``ids``.

    The result for ``k`` is always a prefix of the result for any ``k' > k``.
    """
    keys = np.asarray(keys)
    ids = np.asarray(ids)
    m = len(keys)
    if k >= m:
        return np.lexsort((ids, -keys))
    # keep everything tied with the k-th largest so the tie rule is global
    kth = np.partition(keys, m - k)[m - k]
    pool = np.flatnonzero(keys >= kth)
    order = pool[np.lexsort((ids[pool], -keys[pool]))]
    return order[:k]


def make_ranked_list(query, keys, ids, k, scores=None, note=""):
    """Build a :class:`RankedList`, ordering by ``keys`` and reporting ``scores``."""
    if k < 1:
        raise ValueError("K must be >= 1")
    keys = np.asarray(keys)
    ids = np.asarray(ids, dtype=np.int64)
    scores = keys if scores is None else np.asarray(scores)
    keep = ids != query
    keys, ids, scores = keys[keep], ids[keep], scores[keep]
    order = top_k_order(keys, ids, k)
    return RankedList(int(query), ids[order], scores[order], short=len(ids) < k, note=note)


@dataclass
class ProjectedSystem:
    """Encoder output for warm and projected cold nodes.

    Row ``r`` of ``output`` belongs to original node ``index_map[r]``; warm
    nodes come first.
    """

    output: np.ndarray
    index_map: np.ndarray
    n_warm: int
    decoder: object

    def __post_init__(self):
        self._row = {int(i): r for r, i in enumerate(self.index_map)}

    def row(self, node_id):
        return self._row[int(node_id)]

    def rows(self, node_ids):
        return np.array([self._row[int(i)] for i in node_ids], dtype=np.int64)

    @property
    def cold_ids(self):
        return self.index_map[self.n_warm:]

    def cold_output(self):
        return self.output[self.n_warm:]

    def candidate_rows(self, policy="all"):
        if policy == "all":
            return np.arange(len(self.index_map))
        if policy == "warm-only":
            return np.arange(self.n_warm)
        raise ValueError(f"unknown candidate policy {policy!r}")


def project(model, masked, attrs, cold_ids, variational_mean=True, rng=None):
    """Embed cold nodes with one forward pass of the trained GCN.

    ``model`` is a :class:`~gravityrank.models.TrainedModel`. Warm rows of the
    result equal the warm training output.
    """
    params = model.params
    if attrs.cols != params.d_in:
        raise ValueError(f"attributes have {attrs.cols} columns, encoder expects {params.d_in}")
    cold_ids = np.asarray(cold_ids, dtype=np.int64).reshape(-1)
    adj, x, index_map = extend_with_cold(masked, attrs, cold_ids, model.config.dtype)
    out = encode(params, adj, x)
    if params.variational and not variational_mean:
        w = params.weights
        ls = encode_gcn(adj, x, w["W0_sigma"], w["W1_sigma"])
        out = sample_latent(out, ls, rng if rng is not None else np.random.default_rng(0))
    if model.fixed_mass is not None:
        # cold nodes have no measure; standardized mean is 0
        out[:, -1] = np.concatenate([model.fixed_mass, np.zeros(len(cold_ids), out.dtype)])
    return ProjectedSystem(out, index_map, masked.n_warm, model.decoder)


def score_all(system, query, candidates=None, decoder=None):
    """Decoder probabilities from ``query`` to each candidate (original ids)."""
    decoder = decoder or system.decoder
    cand_rows = system.candidate_rows("all") if candidates is None else system.rows(candidates)
    q = system.output[[system.row(query)]]
    return expit(decoder_logits(q, system.output[cand_rows], decoder)[0])


def rank_top_k(system, query, k, candidates="all", decoder=None):
    """Top-``k`` candidates for ``query`` under the decoder, query excluded.

    ``candidates`` is a policy name (``"all"``/``"warm-only"``) or an
    explicit array of original ids.
    """
    return rank_queries(system, [query], k, candidates, decoder)[int(query)]


def rank_queries(system, queries, k, candidates="all", decoder=None, block=256):
    """Rank many queries at once; returns ``{query: RankedList}``."""
    decoder = decoder or system.decoder
    if isinstance(candidates, str):
        cand_rows = system.candidate_rows(candidates)
    else:
        cand_rows = system.rows(candidates)
    cand_ids = system.index_map[cand_rows]
    cand_out = system.output[cand_rows]
    queries = [int(q) for q in queries]
    result = {}
    for start in range(0, len(queries), block):
        chunk = queries[start:start + block]
        logits = decoder_logits(system.output[system.rows(chunk)], cand_out, decoder)
        for qi, query in enumerate(chunk):
            # order by logits: sigmoid saturates and would create false ties
            result[query] = make_ranked_list(query, logits[qi], cand_ids, k, scores=expit(logits[qi]))
    return result


def write_ranked(path, ranked, ids=None):
    """Write ``query_id, rank, candidate_id, score`` rows (rank from 1)."""
    name = (lambda i: ids[i]) if ids is not None else str
    with open(path, "w", encoding="utf-8") as fh:
        for query in sorted(ranked):
            rl = ranked[query]
            for r, (c, s) in enumerate(zip(rl.candidates, rl.scores), start=1):
                fh.write(f"{name(query)}\t{r}\t{name(int(c))}\t{float(s)!r}\n")


def read_ranked(path, index=None):
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            q, r, c, s = line.rstrip("\n").split("\t")
            if index is not None:
                q, c = index[q], index[c]
            else:
                q, c = int(q), int(c)
            rows.setdefault(q, []).append((int(r), c, float(s)))
    out = {}
    for q, items in rows.items():
        items.sort()
        out[q] = RankedList(q, np.array([c for _, c, _ in items], dtype=np.int64),
                            np.array([s for _, _, s in items]))
    return out
