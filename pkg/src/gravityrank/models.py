"""Graph autoencoders with gravity, inner-product and source-target decoders.

All gradients are analytic. The forward pass of a two-layer GCN is

    out = A_norm @ relu(A_norm @ X @ W0) @ W1

and the decoders turn the ``n x d_out`` output into an ``n x n`` matrix of
edge logits that feeds a weighted binary cross entropy.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import numerics
from .graph import extend_with_cold, normalize_out_degree

log = logging.getLogger(__name__)

EPS_DIST = 1e-10
MODEL_NAMES = (
    "gravity_ae", "gravity_vae",
    "standard_ae", "standard_vae",
    "source_target_ae", "source_target_vae",
)
FIXED_MASS_SOURCES = (None, "popularity", "in_degree", "pagerank")


@dataclass(frozen=True)
class DecoderKind:
    kind: str
    lam: float = 1.0
    eps_dist: float = EPS_DIST

    def __post_init__(self):
        if self.kind not in ("gravity", "inner_product", "source_target"):
            raise ValueError(f"unknown decoder {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.eps_dist <= 0:
            raise ValueError("eps_dist must be positive")

    @classmethod
    def gravity(cls, lam=1.0, eps_dist=EPS_DIST):
        return cls("gravity", lam, eps_dist)

    @classmethod
    def inner_product(cls):
        return cls("inner_product")

    @classmethod
    def source_target(cls):
        return cls("source_target")

    @property
    def has_mass(self):
        return self.kind == "gravity"

    def with_lambda(self, lam):
        return replace(self, lam=lam)


@dataclass
class TrainConfig:
    model: str = "gravity_ae"
    d: int = 32
    d_hidden: int = 64
    epochs: int = 300
    lr: float = 0.05
    lam: float = 5.0
    seed: int = 0
    precision: str = "float64"
    fixed_mass_source: str | None = None
    lambda_in_training: bool = True
    eps_dist: float = EPS_DIST
    max_nodes: int = 30000

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.d < 1 or self.d_hidden < 1:
            raise ValueError("d and d_hidden must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")
        if self.fixed_mass_source not in FIXED_MASS_SOURCES:
            raise ValueError(f"fixed_mass_source must be one of {FIXED_MASS_SOURCES}")
        if self.fixed_mass_source is not None and not self.model.startswith("gravity"):
            raise ValueError("fixed_mass_source needs a gravity model")
        if self.model.startswith("source_target") and self.d % 2:
            raise ValueError("source-target models need an even d")

    @property
    def variational(self):
        return self.model.endswith("_vae")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @property
    def d_out(self):
        return self.d + 1 if self.model.startswith("gravity") else self.d

    def decoder(self, lam=None):
        lam = self.lam if lam is None else lam
        if self.model.startswith("gravity"):
            return DecoderKind.gravity(lam, self.eps_dist)
        if self.model.startswith("standard"):
            return DecoderKind.inner_product()
        return DecoderKind.source_target()

    def training_decoder(self):
        return self.decoder(self.lam if self.lambda_in_training else 1.0)


@dataclass
class GcnParams:
    """Encoder weights.

    AE keys: ``W0``, ``W1``. VAE keys: ``W0_mu``, ``W1_mu``, ``W0_sigma``,
    ``W1_sigma``.
    """

    weights: dict
    variational: bool = False

    @property
    def d_in(self):
        return self.weights["W0_mu" if self.variational else "W0"].shape[0]

    @property
    def d_out(self):
        return self.weights["W1_mu" if self.variational else "W1"].shape[1]


@dataclass(frozen=True)
class GravityEmbedding:
    z: np.ndarray
    masses: np.ndarray

    def joined(self):
        return np.column_stack([self.z, self.masses])


@dataclass
class LossTrace:
    total: list = field(default_factory=list)
    reconstruction: list = field(default_factory=list)
    kl: list = field(default_factory=list)

    def __len__(self):
        return len(self.total)

    def as_array(self):
        return np.column_stack([self.total, self.reconstruction, self.kl or [0.0] * len(self.total)])


@dataclass
class TrainedModel:
    config: TrainConfig
    params: GcnParams
    output: np.ndarray        # warm rows, mean output for VAE
    trace: LossTrace
    fixed_mass: np.ndarray | None = None

    @property
    def decoder(self):
        return self.config.decoder()

    def embedding(self):
        if self.config.model.startswith("gravity"):
            return split_embedding(self.output)
        return self.output


# ---------------------------------------------------------------- encoder

def _relu(x):
    return np.maximum(x, 0)


def encode_gcn(adj, x, w0, w1):
    """Two-layer GCN: ``adj @ relu(adj @ x @ w0) @ w1``."""
    if x.shape[1] != w0.shape[0] or w0.shape[1] != w1.shape[0]:
        raise ValueError(f"shape chain mismatch: X{x.shape} W0{w0.shape} W1{w1.shape}")
    if adj.shape[0] != adj.shape[1] or adj.shape[1] != x.shape[0]:
        raise ValueError(f"adjacency {adj.shape} does not match features {x.shape}")
    h = _relu(numerics.spmm(adj, x) @ w0)
    return numerics.spmm(adj, h) @ w1


def _gcn_forward(adj, ax, w0, w1):
    pre = ax @ w0
    h = _relu(pre)
    q = numerics.spmm(adj, h)
    return q @ w1, (pre, q)


def _gcn_backward(adj_t, ax, w1, cache, g_out):
    pre, q = cache
    g_w1 = q.T @ g_out
    g_h = numerics.spmm(adj_t, g_out @ w1.T)
    g_h *= pre > 0
    return ax.T @ g_h, g_w1


def encode(params, adj, x):
    """Deterministic encoder output (the mean for VAE)."""
    w = params.weights
    if params.variational:
        return encode_gcn(adj, x, w["W0_mu"], w["W1_mu"])
    return encode_gcn(adj, x, w["W0"], w["W1"])


def init_params(f, config, rng):
    dtype = config.dtype
    if config.variational:
        names = ("W0_mu", "W1_mu", "W0_sigma", "W1_sigma")
    else:
        names = ("W0", "W1")
    weights = {}
    for name in names:
        shape = (f, config.d_hidden) if name.startswith("W0") else (config.d_hidden, config.d_out)
        weights[name] = numerics.glorot_init(*shape, rng, dtype)
    return GcnParams(weights, config.variational)


# ---------------------------------------------------------------- decoders

def split_embedding(zt):
    zt = np.asarray(zt)
    if zt.ndim != 2 or zt.shape[1] <= 1:
        raise ValueError("need at least two columns (position + mass)")
    return GravityEmbedding(zt[:, :-1], zt[:, -1])


def decode_gravity(emb, lam, eps_dist, i, j):
    diff = emb.z[i] - emb.z[j]
    dist = max(float(diff @ diff), eps_dist)
    return float(expit(emb.masses[j] - lam * np.log(dist)))


def decode_inner(z, i, j):
    return float(expit(z[i] @ z[j]))


def _halves(z):
    d = z.shape[1]
    if d % 2:
        raise ValueError(f"source-target decoding needs an even dimension, got {d}")
    return z[:, : d // 2], z[:, d // 2:]


def decode_source_target(z, i, j):
    src, tgt = _halves(np.asarray(z))
    return float(expit(src[i] @ tgt[j]))


def decoder_logits(zq, zc, decoder):
    """Pre-sigmoid scores of every query row of ``zq`` against every row of ``zc``."""
    if decoder.kind == "gravity":
        pos_q, pos_c, mass_c = zq[:, :-1], zc[:, :-1], zc[:, -1]
        dist = numerics.pairwise_sq_dist(pos_q, pos_c)
        return mass_c[None, :] - decoder.lam * np.log(np.maximum(dist, decoder.eps_dist))
    if decoder.kind == "inner_product":
        return zq @ zc.T
    src, _ = _halves(zq)
    _, tgt = _halves(zc)
    return src @ tgt.T


def _logits_forward(zt, decoder):
    if decoder.kind == "gravity":
        z, m = zt[:, :-1], zt[:, -1]
        dist = numerics.pairwise_sq_dist(z).astype(zt.dtype, copy=False)
        active = dist > decoder.eps_dist
        logits = m[None, :] - decoder.lam * np.log(np.where(active, dist, decoder.eps_dist))
        return logits, (dist, active)
    return decoder_logits(zt, zt, decoder), None


def _logits_backward(zt, decoder, cache, g):
    """Gradient w.r.t. ``zt`` given ``g = dLoss/dlogits``."""
    if decoder.kind == "gravity":
        dist, active = cache
        z = zt[:, :-1]
        k = np.zeros_like(g)
        np.divide(-2.0 * decoder.lam * g, dist, out=k, where=active)
        k += k.T
        g_z = k.sum(axis=1)[:, None] * z - k @ z
        return np.column_stack([g_z, g.sum(axis=0)])
    if decoder.kind == "inner_product":
        return (g + g.T) @ zt
    src, tgt = _halves(zt)
    return np.column_stack([g @ tgt, g.T @ src])


# ---------------------------------------------------------------- losses

def _bce_constants(a):
    n2 = float(a.size)
    s = float(a.sum())
    if s <= 0:
        raise ValueError("degenerate graph: adjacency sums to zero")
    pos_weight = (n2 - s) / s
    norm = n2 / (2.0 * (n2 - s))
    return pos_weight, norm, n2


def loss_weighted_bce(a_hat, a):
    """Weighted cross entropy between predicted probabilities and targets."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    pos_weight, norm, n2 = _bce_constants(a)
    terms = pos_weight * a * np.log(a_hat) + (1.0 - a) * np.log1p(-a_hat)
    return float(-norm * terms.sum() / n2)


def bce_with_logits(logits, a):
    """Weighted cross entropy evaluated stably from logits, with its gradient."""
    pos_weight, norm, n2 = _bce_constants(a)
    # log sigma(x) = -softplus(-x); log(1 - sigma(x)) = -softplus(x)
    loss = pos_weight * a * np.logaddexp(0, -logits) + (1.0 - a) * np.logaddexp(0, logits)
    p = expit(logits)
    grad = (norm / n2) * (p * (1.0 - a) - pos_weight * a * (1.0 - p))
    return float(norm * loss.sum() / n2), grad


def loss_kl(mu, logsigma):
    """KL divergence of ``N(mu, exp(logsigma)^2)`` from the standard normal."""
    n = mu.shape[0]
    return float(-np.sum(1.0 + 2.0 * logsigma - mu ** 2 - np.exp(2.0 * logsigma)) / (2.0 * n))


def _kl_grads(mu, logsigma):
    n = mu.shape[0]
    return mu / n, (np.exp(2.0 * logsigma) - 1.0) / n


def sample_latent(mu, logsigma, rng=None, noise=None):
    """Reparameterized draw ``mu + exp(logsigma) * noise``."""
    if mu.shape != logsigma.shape:
        raise ValueError("mu and logsigma shapes differ")
    if noise is None:
        noise = rng.standard_normal(mu.shape).astype(mu.dtype, copy=False)
    return mu + np.exp(logsigma) * noise


# ---------------------------------------------------------------- objective

def objective(params, adj, adj_t, ax, target, decoder, noise=None, fixed_mass=None):
    """Full-batch loss and gradients.

    ``ax`` is the precomputed ``adj @ X``. Returns
    ``(total, reconstruction, kl, grads)``.
    """
    w = params.weights
    kl = 0.0
    if params.variational:
        mu, cache_mu = _gcn_forward(adj, ax, w["W0_mu"], w["W1_mu"])
        ls, cache_ls = _gcn_forward(adj, ax, w["W0_sigma"], w["W1_sigma"])
        zt = mu if noise is None else mu + np.exp(ls) * noise
    else:
        zt, cache = _gcn_forward(adj, ax, w["W0"], w["W1"])
    if fixed_mass is not None:
        zt = zt.copy()
        zt[:, -1] = fixed_mass
    logits, dec_cache = _logits_forward(zt, decoder)
    recon, g_logits = bce_with_logits(logits, target)
    g_zt = _logits_backward(zt, decoder, dec_cache, g_logits)
    if fixed_mass is not None:
        g_zt[:, -1] = 0.0
    grads = {}
    if params.variational:
        kl = loss_kl(mu, ls)
        g_mu_kl, g_ls_kl = _kl_grads(mu, ls)
        g_mu = g_zt + g_mu_kl
        g_ls = g_ls_kl if noise is None else g_zt * np.exp(ls) * noise + g_ls_kl
        grads["W0_mu"], grads["W1_mu"] = _gcn_backward(adj_t, ax, w["W1_mu"], cache_mu, g_mu)
        grads["W0_sigma"], grads["W1_sigma"] = _gcn_backward(adj_t, ax, w["W1_sigma"], cache_ls, g_ls)
    else:
        grads["W0"], grads["W1"] = _gcn_backward(adj_t, ax, w["W1"], cache, g_zt)
    return recon + kl, recon, kl, grads


def standardize(values):
    values = np.asarray(values, dtype=np.float64)
    sd = values.std()
    if sd == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def fixed_mass_measure(source, masked, meta=None):
    """Standardized node measure over warm nodes, used in place of learned masses."""
    from .evaluation import pagerank

    if source == "in_degree":
        raw = masked.train_graph.in_strength()
    elif source == "pagerank":
        raw = pagerank(masked.train_graph)
    elif source == "popularity":
        if meta is None:
            raise ValueError("popularity masses need node metadata")
        ranks = meta.popularity_rank[masked.warm_ids]
        if np.any(ranks <= 0):
            raise ValueError("popularity rank missing for some warm nodes")
        raw = -ranks.astype(np.float64)
    else:
        raise ValueError(f"unknown fixed mass source {source!r}")
    return standardize(raw)


def train(masked, attrs, config, meta=None, callback=None):
    """Full-batch Adam training on the warm graph.

    Returns a :class:`TrainedModel` whose ``output`` holds the warm-node
    encoder output (the mean for VAE).
    """
    n = masked.n_warm
    if masked.train_graph.num_edges == 0:
        raise ValueError("training graph has no edges")
    if n > config.max_nodes:
        raise ValueError(f"{n} warm nodes exceed max_nodes={config.max_nodes}")
    dtype = config.dtype
    rng = np.random.default_rng(config.seed)
    adj, x, _ = extend_with_cold(masked, attrs, [], dtype)
    adj_t = adj.T.tocsr()
    ax = numerics.spmm(adj, x)
    target = masked.train_graph.to_dense(dtype)
    decoder = config.training_decoder()
    fixed = None
    if config.fixed_mass_source is not None:
        fixed = fixed_mass_measure(config.fixed_mass_source, masked, meta).astype(dtype)

    params = init_params(attrs.cols, config, rng)
    state = numerics.AdamState(lr=config.lr)
    trace = LossTrace()
    for epoch in range(config.epochs):
        noise = None
        if config.variational:
            noise = rng.standard_normal((n, config.d_out)).astype(dtype, copy=False)
        total, recon, kl, grads = objective(params, adj, adj_t, ax, target, decoder, noise, fixed)
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        trace.total.append(total)
        trace.reconstruction.append(recon)
        if config.variational:
            trace.kl.append(kl)
        numerics.adam_step(params.weights, grads, state)
        if callback is not None:
            callback(epoch, total)
    output = encode(params, adj, x)
    if fixed is not None:
        output[:, -1] = fixed
    log.info("trained %s: loss %.5f -> %.5f", config.model, trace.total[0], trace.total[-1])
    return TrainedModel(config, params, output, trace, fixed)
