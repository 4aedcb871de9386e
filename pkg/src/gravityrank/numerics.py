"""Numerical substrate: sparse products, distances, init, Adam, SVD."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def spmm(s, d):
    """Sparse (CSR) times dense product."""
    if not sp.issparse(s):
        raise TypeError("first operand must be a scipy sparse matrix")
    d = np.asarray(d)
    if s.shape[1] != d.shape[0]:
        raise ValueError(f"dimension mismatch: {s.shape} @ {d.shape}")
    out = s @ d
    return np.asarray(out)


def pairwise_sq_dist(z, w=None):
    """Squared Euclidean distances between rows of ``z`` (and ``w``).

    Each entry is the direct sum of squared differences, so duplicate rows
    and the diagonal give exactly 0.
    """
    z = np.asarray(z, dtype=np.float64)
    other = z if w is None else np.asarray(w, dtype=np.float64)
    if z.shape[1] == 0:
        return np.zeros((len(z), len(other)))
    return cdist(z, other, "sqeuclidean")


def glorot_init(rows, cols, rng, dtype=np.float64):
    """Uniform Glorot initialization in ``[-r, r]``, ``r = sqrt(6/(rows+cols))``."""
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    r = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-r, r, size=(rows, cols)).astype(dtype)


@dataclass
class AdamState:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update of the parameter dict, in place.

    Returns ``(params, state)`` for convenience.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def grad_check(loss_fn, params, probe_count=200, h=1e-5, rng=None, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` and be deterministic.
    Coordinates are probed at random across all parameter blocks. The
    relative error uses ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_fn(params)
    coords = [(name, idx) for name, p in params.items() for idx in np.ndindex(p.shape)]
    if len(coords) > probe_count:
        pick = rng.choice(len(coords), size=probe_count, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for name, idx in coords:
        p = params[name]
        orig = p[idx]
        p[idx] = orig + h
        fp, _ = loss_fn(params)
        p[idx] = orig - h
        fm, _ = loss_fn(params)
        p[idx] = orig
        numeric = (fp - fm) / (2 * h)
        analytic = grads[name][idx]
        denom = max(abs(analytic), abs(numeric), floor)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def truncated_svd(m, d, tol=1e-10, max_iter=200, rng=None, oversample=10):
    """Top-``d`` singular triplets by randomized subspace iteration.

    ``m`` may be dense or scipy sparse. Iterates until every retained
    triplet satisfies ``||M v - s u|| <= tol * s_max``. Returns
    ``(u, s, v)`` with ``u`` (rows x d), ``s`` nonincreasing, ``v`` (cols x d).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    rows, cols = m.shape
    if not 1 <= d <= min(rows, cols):
        raise ValueError(f"d={d} must lie in [1, {min(rows, cols)}]")
    width = min(d + oversample, min(rows, cols))
    q, _ = np.linalg.qr(np.asarray(m @ rng.standard_normal((cols, width))))
    residual = np.inf
    for _ in range(max_iter):
        b = np.asarray((m.T @ q).T)  # q^T M, (width x cols)
        ub, s, vt = np.linalg.svd(b, full_matrices=False)
        u = q @ ub[:, :d]
        v = vt[:d].T
        s = s[:d]
        scale = s[0] if s[0] > 0 else 1.0
        # u^T M = s v^T holds exactly by construction; check the other side.
        r = np.asarray(m @ v) - u * s
        residual = float(np.linalg.norm(r, axis=0).max() / scale)
        if residual <= tol:
            return u, s, v
        q, _ = np.linalg.qr(np.asarray(m @ np.asarray(m.T @ q)))
    raise ConvergenceError(f"truncated_svd did not converge in {max_iter} iterations", residual)
