"""Local trainers (plain and proximal SGD) and the two variance probes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpbs import (
    LocalConfig,
    ModelSpec,
    PLAIN_SGD,
    PROX_SGD,
    gradient_variance,
    init_params,
    local_prox_sgd,
    local_sgd,
    loss_and_grad,
    loss_variance,
    per_sample_grads,
    synth_clusters,
)
from fedpbs.client import prox_step
from fedpbs.errors import ConfigError
from fedpbs.rng import substream


def make_shard(seed, n=20, features=4, classes=3):
    ds = synth_clusters(features, classes, max(n // classes, 1), 1.0, seed=seed)
    spec = ModelSpec(features, classes)
    w0 = init_params(spec, substream(seed, "init"))
    return spec, w0, ds.features, ds.labels


# Independent probe oracles: one sample at a time through loss_and_grad,
# then the textbook two-pass variance.


def naive_gradient_variance(spec, w, x, y):
    grads = [loss_and_grad(spec, w, x[i : i + 1], y[i : i + 1])[1] for i in range(len(y))]
    mean = sum(grads) / len(grads)
    return sum(float(np.dot(g - mean, g - mean)) for g in grads) / len(grads)


def naive_loss_variance(spec, w, x, y):
    losses = [loss_and_grad(spec, w, x[i : i + 1], y[i : i + 1])[0] for i in range(len(y))]
    mean = sum(losses) / len(losses)
    return sum((v - mean) ** 2 for v in losses) / len(losses)


class TestLocalSgd:
    def test_zero_eta_leaves_model_unchanged(self):
        spec, w0, x, y = make_shard(0)
        rep = local_sgd(spec, w0, x, y, LocalConfig(eta=0.0, epochs=3, batch_size=8, seed=1))
        assert np.array_equal(rep.updated_params, w0)
        assert rep.path_taken == PLAIN_SGD

    def test_single_full_batch_step_closed_form(self):
        spec, w0, x, y = make_shard(1, n=12)
        cfg = LocalConfig(eta=0.2, epochs=1, batch_size=100, seed=3)
        rep = local_sgd(spec, w0, x, y, cfg)
        _, grad = loss_and_grad(spec, w0, x, y)
        np.testing.assert_allclose(rep.updated_params, w0 - 0.2 * grad, atol=1e-12)

    def test_bit_identical_reruns(self):
        spec, w0, x, y = make_shard(2)
        cfg = LocalConfig(eta=0.05, epochs=4, batch_size=5, seed=11)
        a = local_sgd(spec, w0, x, y, cfg)
        b = local_sgd(spec, w0, x, y, cfg)
        assert np.array_equal(a.updated_params, b.updated_params)
        assert a.loss_trace == b.loss_trace

    def test_report_bookkeeping(self):
        spec, w0, x, y = make_shard(3, n=21)
        rep = local_sgd(spec, w0, x, y, LocalConfig(eta=0.1, epochs=5, batch_size=50, seed=0))
        assert rep.n_samples == y.size
        assert rep.effective_batch == y.size  # batch bigger than shard
        assert len(rep.loss_trace) == 5

    def test_empty_shard(self):
        spec, w0, _, _ = make_shard(4)
        with pytest.raises(ValueError):
            local_sgd(spec, w0, np.empty((0, 4)), np.empty(0, int), LocalConfig(0.1, 1, 4))


class TestLocalProxSgd:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_mu_zero_recovers_plain_sgd_bit_exactly(self, seed):
        rng = np.random.default_rng(seed)
        spec, w0, x, y = make_shard(seed % 1000, n=int(rng.integers(6, 30)))
        cfg = LocalConfig(
            eta=float(rng.uniform(1e-3, 0.3)),
            epochs=int(rng.integers(1, 5)),
            batch_size=int(rng.integers(1, 16)),
            mu=0.0,
            seed=int(rng.integers(0, 2**31)),
        )
        plain = local_sgd(spec, w0, x, y, cfg)
        prox = local_prox_sgd(spec, w0, x, y, cfg)
        assert np.array_equal(plain.updated_params, prox.updated_params)
        assert plain.loss_trace == prox.loss_trace
        assert prox.path_taken == PLAIN_SGD  # mu = 0 means no pull was applied

    def test_path_label_with_positive_mu(self):
        spec, w0, x, y = make_shard(5)
        rep = local_prox_sgd(spec, w0, x, y, LocalConfig(0.05, 1, 8, mu=0.5, seed=2))
        assert rep.path_taken == PROX_SGD

    def test_anchor_is_a_fixed_point_under_zero_gradient(self):
        anchor = np.array([0.3, -1.2, 4.0])
        stepped = prox_step(anchor, np.zeros(3), anchor, eta=0.1, mu=2.0)
        assert np.array_equal(stepped, anchor)

    def test_single_step_includes_prox_pull(self):
        # Starting offset by delta, one step must subtract eta*mu*delta.
        rng = np.random.default_rng(8)
        anchor = rng.normal(size=6)
        delta = rng.normal(size=6)
        grad = rng.normal(size=6)
        eta, mu = 0.05, 0.7
        stepped = prox_step(anchor + delta, grad, anchor, eta, mu)
        np.testing.assert_allclose(
            stepped, anchor + delta - eta * grad - eta * mu * delta, atol=1e-15
        )

    def test_offset_contracts_geometrically(self):
        # With gradients pinned to zero every step scales the offset by
        # (1 - eta*mu).
        anchor = np.zeros(4)
        w = np.array([1.0, -2.0, 0.5, 3.0])
        eta, mu = 0.1, 4.0  # eta*mu = 0.4
        for k in range(1, 6):
            w = prox_step(w, np.zeros(4), anchor, eta, mu)
            expected = np.array([1.0, -2.0, 0.5, 3.0]) * (1 - eta * mu) ** k
            np.testing.assert_allclose(w, expected, rtol=1e-12)

    def test_divergent_eta_mu_rejected(self):
        spec, w0, x, y = make_shard(9)
        cfg = LocalConfig(eta=1.0, epochs=1, batch_size=4, mu=2.0)
        with pytest.raises(ConfigError, match="diverge"):
            local_prox_sgd(spec, w0, x, y, cfg)
        # The clamp only guards the proximal path; plain SGD ignores mu.
        local_sgd(spec, w0, x, y, cfg)


class TestGradientVariance:
    def test_identical_samples_zero(self):
        spec, w0, x, y = make_shard(6, n=3)
        xs = np.repeat(x[:1], 5, axis=0)
        ys = np.repeat(y[:1], 5)
        assert gradient_variance(spec, w0, xs, ys) <= 1e-12

    def test_opposite_gradients(self):
        # Same input, both labels, zero weights: per-sample gradients are
        # g and -g, so the variance is exactly ||g||^2.
        spec = ModelSpec(3, 2)
        w = np.zeros(spec.param_count)
        x = np.array([[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]])
        y = np.array([1, 2])
        grads = per_sample_grads(spec, w, x, y)
        np.testing.assert_allclose(grads[0], -grads[1], atol=1e-15)
        expected = float(np.dot(grads[0], grads[0]))
        assert gradient_variance(spec, w, x, y) == pytest.approx(expected, abs=1e-12)
        # Hand expansion: g = outer([x, 1], [-1/2, 1/2]) so ||g||^2 = ||[x,1]||^2 / 2.
        aug = np.array([0.5, -1.0, 2.0, 1.0])
        assert expected == pytest.approx(np.dot(aug, aug) / 2, abs=1e-12)

    @pytest.mark.parametrize("hidden", [0, 4])
    def test_matches_naive_oracle(self, hidden):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            spec = ModelSpec(3, 3, hidden)
            w = rng.normal(size=spec.param_count)
            x = rng.normal(size=(6, 3))
            y = rng.integers(1, 4, size=6)
            ours = gradient_variance(spec, w, x, y)
            assert abs(ours - naive_gradient_variance(spec, w, x, y)) < 1e-12


class TestLossVariance:
    def test_identical_samples_zero(self):
        spec, w0, x, y = make_shard(7, n=3)
        xs = np.repeat(x[:1], 4, axis=0)
        ys = np.repeat(y[:1], 4)
        assert loss_variance(spec, w0, xs, ys) <= 1e-12

    def test_two_known_losses(self):
        # Weights that make logits (t, 0) for scalar input t: losses are
        # ln(1 + e^-t), solved for 1 and 3 -> population variance 1.
        spec = ModelSpec(1, 2)
        w = np.zeros(spec.param_count)
        w.reshape(2, 2)[0] = [1.0, 0.0]
        t1 = -np.log(np.expm1(1.0))
        t3 = -np.log(np.expm1(3.0))
        x = np.array([[t1], [t3]])
        y = np.array([1, 1])
        assert loss_variance(spec, w, x, y) == pytest.approx(1.0, abs=1e-12)

    def test_matches_naive_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed + 100)
            spec = ModelSpec(4, 2, 3)
            w = rng.normal(size=spec.param_count)
            x = rng.normal(size=(7, 4))
            y = rng.integers(1, 3, size=7)
            ours = loss_variance(spec, w, x, y)
            assert abs(ours - naive_loss_variance(spec, w, x, y)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_probes_nonnegative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(3, 3)
    w = rng.normal(size=spec.param_count)
    x = rng.normal(size=(8, 3))
    y = rng.integers(1, 4, size=8)
    perm = rng.permutation(8)
    for probe in (gradient_variance, loss_variance):
        v = probe(spec, w, x, y)
        assert v >= 0
        assert probe(spec, w, x[perm], y[perm]) == pytest.approx(v, abs=1e-12)


def test_loss_trace_mostly_nonincreasing_at_small_eta():
    # Sanity property, not a theorem: eta = 1e-3 on synthetic blobs.
    total, increases = 0, 0
    for seed in range(20):
        spec, w0, x, y = make_shard(seed, n=40, features=5)
        rep = local_sgd(spec, w0, x, y, LocalConfig(1e-3, epochs=8, batch_size=16, seed=seed))
        steps = np.diff(rep.loss_trace)
        total += steps.size
        increases += int((steps > 0).sum())
    assert 1 - increases / total >= 0.9
