"""
Multinomial-likelihood autoencoders (MultiDAE, MultiVAE) in numpy with
hand-written backpropagation and an Adam optimizer.

The encoder sees the L2-normalized history with input dropout; hidden
layers use tanh.  The loss is the negative multinomial log-likelihood of
the raw history under the softmax of the output logits, plus a weight
decay term ``weight_decay / 2 * sum |W|^2`` and, for the VAE, an annealed
KL term.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..metrics import target_ranks
from ..sparse import as_csr
from .base import Recommender, ValidationData

_log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "recbench-autoencoder"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta_cap: float = 0.2
    anneal_steps: int = 1000
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("invalid training configuration")
        if not 0.0 <= self.beta_cap <= 1.0:
            raise ValueError("beta_cap must lie in [0, 1]")

    def beta(self, step: int) -> float:
        "KL weight: rises linearly from 0 and reaches ``beta_cap`` at ``anneal_steps``."
        if self.anneal_steps <= 0:
            return self.beta_cap
        return self.beta_cap * min(1.0, step / self.anneal_steps)


class MlpAutoencoder:
    """
    Weights of an autoencoder ``n -> hidden -> latent -> hidden -> n``.

    For the variational form the last encoder layer emits ``2 * latent``
    values (mean and log-variance).  ``params`` is the flat list
    ``[W, b, W, b, ...]`` over encoder then decoder layers.
    """

    def __init__(self, n_items, hidden=600, latent=200, variational=False,
                 dropout=0.5, seed=0, dtype=np.float32):
        self.n_items = n_items
        self.hidden = hidden
        self.latent = latent
        self.variational = variational
        self.dropout = dropout
        self.dtype = np.dtype(dtype)
        enc_out = 2 * latent if variational else latent
        self.enc_dims = [(n_items, hidden), (hidden, enc_out)]
        self.dec_dims = [(latent, hidden), (hidden, n_items)]
        rng = np.random.default_rng(seed)
        self.params = []
        for fan_in, fan_out in self.enc_dims + self.dec_dims:
            lim = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def layers(self):
        return list(zip(self.params[0::2], self.params[1::2]))

    def copy_params(self):
        return [p.copy() for p in self.params]


def _prepare_input(net: MlpAutoencoder, x: sp.csr_matrix, train: bool, rng) -> sp.csr_matrix:
    "Row-wise L2 normalization followed by inverted input dropout."
    x = as_csr(x, dtype=net.dtype)
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    scale = np.zeros_like(norms)
    np.divide(1.0, norms, out=scale, where=norms > 0)
    x = as_csr(sp.diags(scale) @ x, dtype=net.dtype)
    if train and net.dropout > 0:
        keep = 1.0 - net.dropout
        drop = rng.random(x.nnz) >= keep
        x.data = np.where(drop, 0.0, x.data / keep).astype(net.dtype)
        x.eliminate_zeros()
    return x


def _run(layers, acts, h):
    cache = []
    for (w, b), act in zip(layers, acts):
        a = h @ w + b
        if act:
            a = np.tanh(a)
        cache.append((h, a, act))
        h = a
    return h, cache


def _back(layers, cache, d, grads, input_grad):
    "Backpropagate ``d`` through ``layers``; appends (dW, db) pairs in reverse."
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        h_in, out, act = cache[i]
        if act:
            d = d * (1.0 - out * out)
        grads.append((np.asarray(h_in.T @ d), d.sum(axis=0)))
        if i > 0 or input_grad:
            d = d @ w.T
    return d


def forward(net: MlpAutoencoder, histories, train=False, rng=None, eps=None):
    """
    Item logits for a batch of binary histories.  Returns
    ``(logits, cache)``; the cache feeds :func:`loss_and_grads`.

    In training mode the input is dropout-masked and the VAE samples its
    latent code; otherwise the VAE uses the posterior mean.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = _prepare_input(net, histories, train, rng)
    layers = net.layers
    enc, dec = layers[:2], layers[2:]
    cache = {"input": x}
    if not net.variational:
        z, cache["enc"] = _run(enc, [True, True], x)
    else:
        out, cache["enc"] = _run(enc, [True, False], x)
        mu, logvar = out[:, : net.latent], out[:, net.latent :]
        cache["mu"], cache["logvar"] = mu, logvar
        if train:
            if eps is None:
                eps = rng.standard_normal(mu.shape).astype(net.dtype)
            cache["eps"] = eps
            z = mu + eps * np.exp(0.5 * logvar)
        else:
            z = mu
    logits, cache["dec"] = _run(dec, [True, False], z)
    return logits, cache


def kl_divergence(mu, logvar) -> np.ndarray:
    "Per-row KL(N(mu, exp(logvar)) || N(0, I))."
    return 0.5 * np.sum(-logvar + np.exp(logvar) + mu * mu - 1.0, axis=1)


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(net: MlpAutoencoder, batch, config: TrainConfig, step: int = 0,
                   rng=None, eps=None):
    """
    Training loss and its gradient with respect to ``net.params``.

    The loss is averaged over the users in ``batch``; the VAE adds
    ``beta(step) * KL``.  Dropout masks and latent noise come from ``rng``
    (or ``eps``), so two calls with identically seeded generators see the
    same noise.
    """
    batch = as_csr(batch, dtype=net.dtype)
    n = batch.shape[0]
    logits, cache = forward(net, batch, train=True, rng=rng, eps=eps)
    logp = _log_softmax(logits)
    rows = np.repeat(np.arange(n), np.diff(batch.indptr))
    nll = -np.sum(batch.data * logp[rows, batch.indices]) / n
    loss = nll

    counts = np.asarray(batch.sum(axis=1)).ravel().astype(net.dtype)
    d = np.exp(logp) * (counts[:, None] / n)
    np.subtract.at(d, (rows, batch.indices), batch.data / n)

    layers = net.layers
    grads_rev = []
    if net.variational:
        beta = config.beta(step)
        mu, logvar = cache["mu"], cache["logvar"]
        loss += beta * float(np.mean(kl_divergence(mu, logvar)))
        dz = _back(layers[2:], cache["dec"], d, grads_rev, True)
        std = np.exp(0.5 * logvar)
        dmu = dz + beta * mu / n
        dlogvar = dz * cache["eps"] * 0.5 * std + beta * 0.5 * (np.exp(logvar) - 1.0) / n
        _back(layers[:2], cache["enc"], np.hstack([dmu, dlogvar]), grads_rev, False)
    else:
        dz = _back(layers[2:], cache["dec"], d, grads_rev, True)
        _back(layers[:2], cache["enc"], dz, grads_rev, False)

    grads = []
    for gw, gb in reversed(grads_rev):
        grads.extend([gw, gb])
    if config.weight_decay > 0:
        for i in range(0, len(grads), 2):
            w = net.params[i]
            loss += 0.5 * config.weight_decay * float(np.sum(w * w))
            grads[i] = grads[i] + config.weight_decay * w
    loss = float(loss)
    if not np.isfinite(loss):
        raise FloatingPointError("numerical divergence")
    return loss, [g.astype(net.dtype, copy=False) for g in grads]


class Adam:
    "Per-parameter adaptive moments with bias correction."

    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def validation_hitrate(net: MlpAutoencoder, val: ValidationData) -> float:
    logits, _ = forward(net, val.histories, train=False)
    ranks = target_ranks(logits, val.histories, val.targets)
    return float(np.mean(ranks <= val.k))


def train(net: MlpAutoencoder, x, config: TrainConfig, validation: ValidationData | None = None):
    """
    Mini-batch training over the non-empty rows of ``x``.  With validation
    data the best epoch by hit rate is kept (patience ``config.patience``).
    Returns the per-epoch mean training loss.
    """
    x = as_csr(x, dtype=net.dtype)
    rows = np.flatnonzero(np.diff(x.indptr) > 0)
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params, lr=config.lr)
    history = []
    best, best_params, stale = -1.0, None, 0
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(rows)
        total = 0.0
        for start in range(0, len(perm), config.batch_size):
            batch = x[perm[start : start + config.batch_size]]
            loss, grads = loss_and_grads(net, batch, config, step, rng)
            opt.step(net.params, grads)
            total += loss * batch.shape[0]
            step += 1
        history.append(total / max(len(perm), 1))
        if validation is not None:
            hr = validation_hitrate(net, validation)
            _log.debug("epoch %d: loss %.4f, val HR %.4f", epoch, history[-1], hr)
            if hr > best:
                best, best_params, stale = hr, net.copy_params(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_params is not None:
        net.params = best_params
    return history


class _AutoencoderRecommender(Recommender):
    variational = False

    @classmethod
    def defaults(cls):
        return {
            "hidden": 600,
            "latent": 200,
            "dropout": 0.5,
            "lr": 1e-3,
            "weight_decay": 0.01,
            "epochs": 100,
            "batch_size": 128,
            "patience": 5,
            "seed": 0,
        }

    def train_config(self) -> TrainConfig:
        p = self._params
        return TrainConfig(
            epochs=int(p["epochs"]), batch_size=int(p["batch_size"]), lr=float(p["lr"]),
            weight_decay=float(p["weight_decay"]), beta_cap=float(p.get("beta_cap", 0.0)),
            anneal_steps=int(p.get("anneal_steps", 0)), patience=int(p["patience"]),
            seed=int(p["seed"]),
        )

    def fit(self, x, validation=None):
        n = x.shape[1]
        self.n_items = n
        hidden = min(int(self.hidden), n)
        latent = min(int(self.latent), hidden)
        self.net_ = MlpAutoencoder(
            n, hidden, latent, self.variational, float(self.dropout), int(self.seed)
        )
        self.loss_history_ = train(self.net_, x, self.train_config(), validation)
        return self

    def score(self, histories):
        h = self._check_histories(histories)
        logits, _ = forward(self.net_, h, train=False)
        return logits.astype(np.float64)

    def save(self, path: str | Path):
        "Write a versioned checkpoint of the raw weights and config."
        net = self.net_
        arrays = {f"p{i}": p for i, p in enumerate(net.params)}
        meta = {
            "model": self.name, "params": self._params, "n_items": net.n_items,
            "hidden": net.hidden, "latent": net.latent,
        }
        np.savez(path, magic=np.array(CHECKPOINT_MAGIC), version=np.array(CHECKPOINT_VERSION),
                 meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path: str | Path):
        with np.load(path, allow_pickle=False) as z:
            if str(z["magic"]) != CHECKPOINT_MAGIC or int(z["version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: not a compatible autoencoder checkpoint")
            meta = json.loads(str(z["meta"]))
            if meta["model"] != cls.name:
                raise ValueError(f"{path} holds a {meta['model']} model")
            params = [z[f"p{i}"] for i in range(8)]
        model = cls(**meta["params"])
        model.n_items = meta["n_items"]
        net = MlpAutoencoder(meta["n_items"], meta["hidden"], meta["latent"], cls.variational,
                             float(model.dropout), dtype=params[0].dtype)
        net.params = params
        model.net_ = net
        return model


class MultiDAE(_AutoencoderRecommender):
    name = "multidae"


class MultiVAE(_AutoencoderRecommender):
    name = "multivae"
    variational = True

    @classmethod
    def defaults(cls):
        return {**super().defaults(), "beta_cap": 0.2, "anneal_steps": 1000, "weight_decay": 0.0}
