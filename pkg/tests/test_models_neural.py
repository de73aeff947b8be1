import numpy as np
import pytest
import scipy.sparse as sp

from recbench.models import MultiDAE, MultiVAE, ValidationData
from recbench.models.neural import (
    MlpAutoencoder,
    TrainConfig,
    forward,
    kl_divergence,
    loss_and_grads,
    train,
)

from conftest import random_binary


def batch6():
    return sp.csr_matrix(np.array(
        [[1, 0, 1, 0, 0, 1], [0, 1, 1, 1, 0, 0], [1, 1, 0, 0, 1, 0], [0, 0, 0, 1, 1, 1]],
        dtype=float,
    ))


def finite_difference_check(net, cfg, batch, step):
    "Largest per-coordinate relative error between backprop and central differences."
    eps_noise = None
    if net.variational:
        eps_noise = np.random.default_rng(9).standard_normal((batch.shape[0], net.latent))

    def loss():
        return loss_and_grads(net, batch, cfg, step, rng=np.random.default_rng(5), eps=eps_noise)

    _, grads = loss()
    worst = 0.0
    h = 1e-6
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        fd = np.empty_like(flat)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss()[0]
            flat[k] = old - h
            down = loss()[0]
            flat[k] = old
            fd[k] = (up - down) / (2 * h)
        gf = g.reshape(-1)
        err = np.abs(gf - fd) / np.maximum(np.maximum(np.abs(gf), np.abs(fd)), 1e-6)
        worst = max(worst, float(err.max()))
    return worst


@pytest.mark.parametrize("variational", [False, True])
def test_gradients_match_finite_differences(variational):
    net = MlpAutoencoder(6, hidden=5, latent=3, variational=variational, dropout=0.3,
                         seed=1, dtype=np.float64)
    rng = np.random.default_rng(2)
    net.params = [p + rng.normal(0, 0.3, p.shape) for p in net.params]
    cfg = TrainConfig(weight_decay=0.05, beta_cap=0.5, anneal_steps=10)
    assert finite_difference_check(net, cfg, batch6(), step=4) < 1e-4


def test_kl_standard_normal_is_zero():
    assert np.all(kl_divergence(np.zeros((3, 4)), np.zeros((3, 4))) == 0.0)


def test_vae_beta_zero_is_reconstruction_only():
    net = MlpAutoencoder(6, 5, 3, variational=True, dropout=0.0, seed=0, dtype=np.float64)
    b = batch6()
    eps = np.random.default_rng(0).standard_normal((4, 3))
    with_kl, _ = loss_and_grads(net, b, TrainConfig(beta_cap=0.0), 10, eps=eps)
    logits, _ = forward(net, b, train=True, rng=np.random.default_rng(0), eps=eps)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    assert with_kl == pytest.approx(-np.sum(b.toarray() * logp) / 4)


def test_beta_annealing_schedule():
    cfg = TrainConfig(beta_cap=0.2, anneal_steps=100)
    assert cfg.beta(0) == 0 and cfg.beta(50) == pytest.approx(0.1) and cfg.beta(1000) == 0.2


def scalar_forward(net, h):
    "Independent forward pass written with explicit loops."
    norm = np.sqrt(sum(v * v for v in h))
    a = [v / norm if norm > 0 else 0.0 for v in h]
    for li, (w, b) in enumerate(net.layers):
        out = []
        for j in range(w.shape[1]):
            s = b[j] + sum(a[i] * w[i, j] for i in range(w.shape[0]))
            out.append(np.tanh(s) if li != 3 else s)
        a = out
    return np.array(a)


def test_forward_matches_scalar_oracle():
    net = MlpAutoencoder(4, 3, 2, variational=False, dropout=0.5, seed=3, dtype=np.float64)
    rng = np.random.default_rng(1)
    net.params = [p + rng.normal(0, 0.2, p.shape) for p in net.params]
    h = np.array([[1.0, 0, 1, 1], [0, 1, 0, 0]])
    logits, _ = forward(net, sp.csr_matrix(h))
    for r in range(2):
        assert np.allclose(logits[r], scalar_forward(net, h[r]), atol=1e-12)


def test_zero_history_is_bias_path():
    net = MlpAutoencoder(4, 3, 2, variational=False, dropout=0.0, seed=3, dtype=np.float64)
    rng = np.random.default_rng(1)
    net.params = [p + rng.normal(0, 0.2, p.shape) for p in net.params]
    (w1, b1), (w2, b2), (w3, b3), (w4, b4) = net.layers
    z = np.tanh(np.tanh(b1) @ w2 + b2)
    expect = np.tanh(z @ w3 + b3) @ w4 + b4
    logits, _ = forward(net, sp.csr_matrix((1, 4)))
    assert np.allclose(logits[0], expect)


def test_inference_deterministic(small):
    m = MultiVAE(epochs=2, hidden=16, latent=4).fit(small)
    assert np.array_equal(m.score(small), m.score(small))


def test_permutation_equivariance():
    net = MlpAutoencoder(6, 5, 3, variational=False, dropout=0.0, seed=4, dtype=np.float64)
    perm = np.random.default_rng(0).permutation(6)
    other = MlpAutoencoder(6, 5, 3, variational=False, dropout=0.0, seed=4, dtype=np.float64)
    other.params = [p.copy() for p in net.params]
    other.params[0] = net.params[0][perm]
    other.params[6] = net.params[6][:, perm]
    other.params[7] = net.params[7][perm]
    h = batch6().toarray()
    a, _ = forward(net, sp.csr_matrix(h))
    b, _ = forward(other, sp.csr_matrix(h[:, perm]))
    assert np.allclose(a[:, perm], b)


def test_training_loss_decreases():
    x = random_binary(50, 20, density=0.25, seed=7)
    net = MlpAutoencoder(20, 16, 8, variational=False, dropout=0.0, seed=0)
    hist = train(net, x, TrainConfig(epochs=10, batch_size=10, lr=1e-2))
    assert np.all(np.diff(hist) < 0)


def test_divergence_detected():
    net = MlpAutoencoder(6, 5, 3, dtype=np.float64)
    net.params[0][:] = np.nan
    with pytest.raises(FloatingPointError, match="numerical divergence"):
        loss_and_grads(net, batch6(), TrainConfig())


def test_widths_shrink_for_small_catalogs(small):
    m = MultiDAE(epochs=1).fit(small)
    assert m.net_.hidden == small.shape[1]


def test_early_stopping_keeps_best_epoch(small):
    targets = small.indices[small.indptr[:-1]]
    hist = small.tolil()
    for u, t in enumerate(targets):
        hist[u, t] = 0
    val = ValidationData(hist.tocsr(), targets)
    m = MultiDAE(epochs=30, patience=2, hidden=16, latent=8).fit(small, validation=val)
    assert len(m.loss_history_) <= 30


def test_checkpoint_roundtrip(tmp_path, small):
    m = MultiVAE(epochs=2, hidden=12, latent=4).fit(small)
    m.save(tmp_path / "vae.npz")
    back = MultiVAE.load(tmp_path / "vae.npz")
    assert np.array_equal(back.score(small), m.score(small))
    with pytest.raises(ValueError):
        MultiDAE.load(tmp_path / "vae.npz")
