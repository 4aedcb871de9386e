import math

import numpy as np
import pytest
import scipy.sparse as sp

from gravityrank import models
from gravityrank.graph import normalize_out_degree
from gravityrank.models import DecoderKind, GravityEmbedding, TrainConfig

from conftest import all_warm, random_graph


def loop_gcn(a, x, w0, w1):
    """Straight-line reference for the two-layer GCN."""
    n, f = x.shape
    h = np.zeros((n, w0.shape[1]))
    for i in range(n):
        ax = [sum(a[i, k] * x[k, c] for k in range(n)) for c in range(f)]
        for j in range(w0.shape[1]):
            h[i, j] = max(0.0, sum(ax[c] * w0[c, j] for c in range(f)))
    out = np.zeros((n, w1.shape[1]))
    for i in range(n):
        for j in range(w1.shape[1]):
            out[i, j] = sum(a[i, k] * h[k, c] * w1[c, j] for k in range(n) for c in range(h.shape[1]))
    return out


class TestEncoder:
    def test_identity_adjacency(self, rng):
        x, w0, w1 = rng.normal(size=(6, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        out = models.encode_gcn(sp.identity(6, format="csr"), x, w0, w1)
        np.testing.assert_allclose(out, np.maximum(x @ w0, 0) @ w1, atol=1e-14)

    def test_isolated_zero_row(self, rng):
        a = sp.identity(3, format="csr")
        x = rng.normal(size=(3, 2))
        x[1] = 0
        out = models.encode_gcn(a, x, rng.normal(size=(2, 5)), rng.normal(size=(5, 3)))
        assert np.all(out[1] == 0)

    def test_against_loops(self, rng):
        for seed in range(5):
            g = random_graph(8, 2, np.random.default_rng(seed))
            a = normalize_out_degree(g)
            x, w0, w1 = rng.normal(size=(8, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
            np.testing.assert_allclose(models.encode_gcn(a, x, w0, w1), loop_gcn(a.toarray(), x, w0, w1),
                                       atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape chain"):
            models.encode_gcn(sp.identity(3, format="csr"), np.ones((3, 2)), np.ones((3, 4)), np.ones((4, 1)))


class TestDecoders:
    def test_split_embedding(self):
        e = models.split_embedding(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        assert e.z.tolist() == [[1, 2], [4, 5]] and e.masses.tolist() == [3, 6]
        with pytest.raises(ValueError):
            models.split_embedding(np.ones((3, 1)))

    def test_gravity_half(self):
        e = GravityEmbedding(np.array([[0.0], [1.0]]), np.zeros(2))
        assert models.decode_gravity(e, 1.0, 1e-10, 0, 1) == pytest.approx(0.5, abs=1e-15)

    def test_gravity_two_thirds(self):
        e = GravityEmbedding(np.array([[0.0], [1.0]]), np.array([0.0, math.log(2)]))
        assert models.decode_gravity(e, 1.0, 1e-10, 0, 1) == pytest.approx(2 / 3, abs=1e-15)
        # asymmetric: the reverse direction uses mass of node 0
        assert models.decode_gravity(e, 1.0, 1e-10, 1, 0) == pytest.approx(0.5, abs=1e-15)

    def test_gravity_distance_power(self):
        # dist^2 = 4, lambda = 0.5 -> logit = m - log 2
        e = GravityEmbedding(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([0.0, math.log(6)]))
        assert models.decode_gravity(e, 0.5, 1e-10, 0, 1) == pytest.approx(0.75, abs=1e-15)

    def test_gravity_coincident_clamped(self):
        e = GravityEmbedding(np.zeros((2, 2)), np.array([0.0, -30.0]))
        # logit = -30 - log(1e-10) = -30 + 23.0258...
        expect = 1 / (1 + math.exp(30 - 10 * math.log(10)))
        assert models.decode_gravity(e, 1.0, 1e-10, 0, 1) == pytest.approx(expect, rel=1e-12)

    def test_inner(self):
        z = np.array([[1.0, 0.0], [math.log(3), 5.0]])
        assert models.decode_inner(z, 0, 1) == pytest.approx(0.75, abs=1e-15)
        assert models.decode_inner(z, 1, 0) == models.decode_inner(z, 0, 1)

    def test_source_target(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert models.decode_source_target(z, 0, 1) == pytest.approx(0.7310585786, abs=1e-10)
        assert models.decode_source_target(z, 1, 0) == pytest.approx(0.5, abs=1e-15)

    def test_source_target_odd(self):
        with pytest.raises(ValueError, match="even"):
            models.decode_source_target(np.ones((2, 3)), 0, 1)

    @pytest.mark.parametrize("kind", ["gravity", "inner_product", "source_target"])
    def test_logits_match_pairwise(self, rng, kind):
        zt = rng.normal(size=(9, 4))
        dec = DecoderKind(kind, lam=1.7)
        p = 1 / (1 + np.exp(-models.decoder_logits(zt, zt, dec)))
        for i in range(9):
            for j in range(9):
                if kind == "gravity":
                    ref = models.decode_gravity(models.split_embedding(zt), 1.7, dec.eps_dist, i, j)
                elif kind == "inner_product":
                    ref = models.decode_inner(zt, i, j)
                else:
                    ref = models.decode_source_target(zt, i, j)
                assert abs(p[i, j] - ref) <= 1e-12

    def test_bad_decoder(self):
        with pytest.raises(ValueError):
            DecoderKind("cosine")
        with pytest.raises(ValueError):
            DecoderKind.gravity(lam=-1)


def loop_bce(p, a):
    n2 = a.size
    s = a.sum()
    w = (n2 - s) / s
    norm = n2 / (2 * (n2 - s))
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            total += w * a[i, j] * math.log(p[i, j]) + (1 - a[i, j]) * math.log(1 - p[i, j])
    return -norm * total / n2


class TestLosses:
    def test_half_is_ln2(self, rng):
        a = (rng.uniform(size=(10, 10)) < 0.2).astype(float)
        assert models.loss_weighted_bce(np.full((10, 10), 0.5), a) == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_limit(self):
        a = np.eye(4)[[1, 2, 3, 0]]
        p = np.where(a > 0, 1 - 1e-12, 1e-12)
        assert models.loss_weighted_bce(p, a) < 1e-10

    def test_against_loops(self, rng):
        for _ in range(20):
            a = rng.uniform(size=(7, 7)) * (rng.uniform(size=(7, 7)) < 0.3)
            a[0, 1] = 0.5
            logits = rng.normal(size=(7, 7)) * 3
            p = 1 / (1 + np.exp(-logits))
            ref = loop_bce(p, a)
            assert abs(models.loss_weighted_bce(p, a) - ref) <= 1e-10
            assert abs(models.bce_with_logits(logits, a)[0] - ref) <= 1e-10

    def test_logit_gradient(self, rng):
        a = (rng.uniform(size=(5, 5)) < 0.3) * rng.uniform(size=(5, 5))
        a[0, 1] = 1.0
        x = rng.normal(size=(5, 5))
        _, g = models.bce_with_logits(x, a)
        h = 1e-6
        for i, j in [(0, 1), (2, 3), (4, 4)]:
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (models.bce_with_logits(xp, a)[0] - models.bce_with_logits(xm, a)[0]) / (2 * h)
            assert abs(fd - g[i, j]) < 1e-8

    def test_extreme_logits_finite(self):
        a = np.eye(3)[[1, 2, 0]]
        loss, g = models.bce_with_logits(np.where(a > 0, -800.0, 800.0), a)
        assert np.isfinite(loss) and np.all(np.isfinite(g))

    def test_empty_graph(self):
        with pytest.raises(ValueError, match="degenerate"):
            models.loss_weighted_bce(np.full((3, 3), 0.5), np.zeros((3, 3)))

    def test_kl_zero(self):
        assert models.loss_kl(np.zeros((5, 3)), np.zeros((5, 3))) == 0.0

    def test_kl_single_offset(self):
        mu = np.zeros((5, 3))
        mu[2, 1] = 2.0
        # -(1/(2n)) * (1 - 4 - 1) = 2/n
        assert models.loss_kl(mu, np.zeros((5, 3))) == pytest.approx(2 / 5, abs=1e-15)

    def test_kl_nonnegative(self, rng):
        for _ in range(100):
            assert models.loss_kl(rng.normal(size=(4, 3)) * 3, rng.normal(size=(4, 3)) * 2) >= 0


class TestSampling:
    def test_zero_variance(self, rng):
        mu = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(models.sample_latent(mu, np.full((4, 3), -np.inf), rng), mu)

    def test_deterministic(self):
        mu, ls = np.zeros((3, 2)), np.zeros((3, 2))
        a = models.sample_latent(mu, ls, np.random.default_rng(4))
        b = models.sample_latent(mu, ls, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_moments(self):
        mu, ls = np.full((100000, 1), 1.5), np.full((100000, 1), math.log(2.0))
        z = models.sample_latent(mu, ls, np.random.default_rng(0))
        # standard error of the mean is 2 / sqrt(1e5) ~ 0.0063
        assert abs(z.mean() - 1.5) < 4 * 2 / math.sqrt(1e5)
        assert abs(z.std() - 2.0) < 0.03


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.d, c.d_hidden, c.epochs, c.lr, c.lam, c.d_out) == (32, 64, 300, 0.05, 5.0, 33)

    @pytest.mark.parametrize("kwargs", [
        {"model": "nope"},
        {"model": "source_target_ae", "d": 3},
        {"model": "standard_ae", "fixed_mass_source": "in_degree"},
        {"fixed_mass_source": "degree"},
        {"epochs": 0},
        {"precision": "float16"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_training_decoder(self):
        assert TrainConfig(lam=7.0).training_decoder().lam == 7.0
        assert TrainConfig(lam=7.0, lambda_in_training=False).training_decoder().lam == 1.0


def small_config(**kw):
    base = dict(d=3, d_hidden=8, epochs=40, lr=0.01, seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    @pytest.mark.parametrize("model", models.MODEL_NAMES)
    def test_bitwise_deterministic(self, tiny_instance, model):
        _, attrs, m = tiny_instance
        d = 4 if model.startswith("source_target") else 3
        a = models.train(m, attrs, small_config(model=model, d=d))
        b = models.train(m, attrs, small_config(model=model, d=d))
        assert np.array_equal(a.trace.as_array(), b.trace.as_array())
        assert np.array_equal(a.output, b.output)

    def test_seed_changes_result(self, tiny_instance):
        _, attrs, m = tiny_instance
        a = models.train(m, attrs, small_config(seed=1))
        b = models.train(m, attrs, small_config(seed=2))
        assert not np.array_equal(a.output, b.output)

    def test_loss_decreases(self, tiny_instance):
        _, attrs, m = tiny_instance
        tr = models.train(m, attrs, small_config(epochs=200)).trace
        assert len(tr) == 200 and tr.total[-1] < tr.total[0]

    def test_vae_weights_and_kl(self, tiny_instance):
        _, attrs, m = tiny_instance
        res = models.train(m, attrs, small_config(model="gravity_vae", epochs=5))
        assert sorted(res.params.weights) == ["W0_mu", "W0_sigma", "W1_mu", "W1_sigma"]
        assert len(res.trace.kl) == 5

    def test_fixed_mass(self, tiny_instance):
        g, attrs, m = tiny_instance
        res = models.train(m, attrs, small_config(fixed_mass_source="in_degree", epochs=10))
        s = g.in_strength()
        np.testing.assert_allclose(res.output[:, -1], (s - s.mean()) / s.std(), atol=1e-12)

    def test_empty_graph(self, rng):
        from gravityrank.graph import AttributeTable, DirectedWeightedGraph

        g = DirectedWeightedGraph.from_edges(4, [], [], [])
        with pytest.raises(ValueError, match="no edges"):
            models.train(all_warm(g), AttributeTable(np.ones((4, 2))), small_config())

    def test_node_guard(self, tiny_instance):
        _, attrs, m = tiny_instance
        with pytest.raises(ValueError, match="max_nodes"):
            models.train(m, attrs, small_config(max_nodes=5))

    def test_float32(self, tiny_instance):
        _, attrs, m = tiny_instance
        res = models.train(m, attrs, small_config(precision="float32", epochs=5))
        assert res.output.dtype == np.float32

    def test_non_finite_loss(self, tiny_instance):
        _, attrs, m = tiny_instance
        bad = type(attrs)(np.full(attrs.values.shape, 1e200))
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="epoch 0"):
            models.train(m, bad, small_config())


def test_fixed_mass_gradients(tiny_instance):
    from gravityrank import numerics
    from gravityrank.graph import extend_with_cold

    g, attrs, m = tiny_instance
    cfg = TrainConfig(d=3, d_hidden=5, lam=2.0, fixed_mass_source="in_degree")
    params = models.init_params(attrs.cols, cfg, np.random.default_rng(0))
    adj, x, _ = extend_with_cold(m, attrs, [])
    ax = numerics.spmm(adj, x)
    fixed = models.fixed_mass_measure("in_degree", m)

    def fn(w):
        total, _, _, grads = models.objective(models.GcnParams(w), adj, adj.T.tocsr(), ax, g.to_dense(),
                                              cfg.training_decoder(), fixed_mass=fixed)
        return total, grads

    assert numerics.grad_check(fn, params.weights) < 1e-5
    # the last output column no longer influences the loss
    _, _, _, grads = models.objective(models.GcnParams(params.weights), adj, adj.T.tocsr(), ax,
                                      g.to_dense(), cfg.training_decoder(), fixed_mass=fixed)
    assert np.all(grads["W1"][:, -1] == 0)
