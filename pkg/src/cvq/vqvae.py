"""A miniature VQ-VAE: MLP encoder -> h x w grid of n_q-dim latents ->
quantizer -> MLP decoder, trained with hand-written backprop and plain SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import Codebook, FeatureBatch, QuantizeResult, init_codebook, perplexity, quantize, usage_fraction
from .idx import MnistSet
from .losses import codebook_loss_grad, commitment_grad, contrastive_loss, straight_through, vq_loss
from .numeric import Rng
from .policies import PolicyConfig, Quantizer, cluster_sums

PARAMS = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")


@dataclass
class MlpAutoencoder:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    h: int
    w: int
    n_q: int

    @classmethod
    def init(cls, rng: Rng, d: int = 784, hidden: int = 256, h: int = 4, w: int = 4, n_q: int = 8) -> "MlpAutoencoder":
        latent = h * w * n_q

        def dense(fan_in, fan_out):
            return rng.gaussian_matrix(fan_in, fan_out, 0.0, 1.0 / np.sqrt(fan_in))

        return cls(
            dense(d, hidden), np.zeros(hidden),
            dense(hidden, latent), np.zeros(latent),
            dense(latent, hidden), np.zeros(hidden),
            dense(hidden, d), np.zeros(d),
            h, w, n_q,
        )

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}

    def copy(self) -> "MlpAutoencoder":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pre1 = x @ self.W1 + self.b1
        h1 = np.maximum(pre1, 0.0)
        z = h1 @ self.W2 + self.b2
        return z.reshape(-1, self.n_q), pre1

    def decode(self, z_flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pre3 = z_flat @ self.W3 + self.b3
        h3 = np.maximum(pre3, 0.0)
        return h3 @ self.W4 + self.b4, pre3


@dataclass
class ForwardCache:
    x: np.ndarray
    pre1: np.ndarray
    z_e: np.ndarray  # (B*h*w, n_q)
    z_q: np.ndarray
    pre3: np.ndarray
    x_hat: np.ndarray
    result: QuantizeResult
    st_backward: object


def forward(model: MlpAutoencoder, x, cb: Codebook, metric: str = "euclidean"):
    x = np.asarray(x, dtype=np.float64)
    z_e, pre1 = model.encode(x)
    result = quantize(cb, z_e, metric)
    z_st, st_backward = straight_through(z_e, result.quantized)
    x_hat, pre3 = model.decode(z_st.reshape(x.shape[0], -1))
    cache = ForwardCache(x, pre1, z_e, result.quantized, pre3, x_hat, result, st_backward)
    return x_hat, z_e, result, cache


def loss_and_grads(model: MlpAutoencoder, cache: ForwardCache, beta: float = 0.25, metric: str = "euclidean"):
    """Loss breakdown plus gradients for every weight and for the codebook.

    The decoder's gradient on z_q passes unchanged to z_e; the encoder also
    receives the commitment gradient. The ``"codebook"`` entry is the
    gradient of the codebook term only (non-zero just for assigned entries).
    """
    x, B = cache.x, cache.x.shape[0]
    loss = vq_loss(x, cache.x_hat, cache.z_e, cache.z_q, beta, metric)

    g_xhat = 2.0 * (cache.x_hat - x) / x.size
    h3 = np.maximum(cache.pre3, 0.0)
    z_flat = cache.z_q.reshape(B, -1)
    grads = {"W4": h3.T @ g_xhat, "b4": g_xhat.sum(axis=0)}
    g_pre3 = (g_xhat @ model.W4.T) * (cache.pre3 > 0)
    grads["W3"] = z_flat.T @ g_pre3
    grads["b3"] = g_pre3.sum(axis=0)
    g_zq = (g_pre3 @ model.W3.T).reshape(cache.z_e.shape)

    g_ze = cache.st_backward(g_zq) + commitment_grad(cache.z_e, cache.z_q, beta, metric)
    g_z = g_ze.reshape(B, -1)
    h1 = np.maximum(cache.pre1, 0.0)
    grads["W2"] = h1.T @ g_z
    grads["b2"] = g_z.sum(axis=0)
    g_pre1 = (g_z @ model.W2.T) * (cache.pre1 > 0)
    grads["W1"] = x.T @ g_pre1
    grads["b1"] = g_pre1.sum(axis=0)

    per_feature = codebook_loss_grad(cache.z_e, cache.z_q, metric)
    grads["codebook"] = cluster_sums(per_feature, cache.result.indices, cache.result.distances.shape[1])
    return loss, grads


def backward_and_step(model: MlpAutoencoder, grads: dict, lr: float) -> dict[str, float]:
    """SGD step on the encoder/decoder weights. The codebook is left to its policy."""
    norms = {}
    for name in PARAMS:
        g = grads[name]
        norms[name] = float(np.linalg.norm(g))
        if lr:
            getattr(model, name)[...] -= lr * g
    return norms


@dataclass
class TrainConfig:
    epochs: int = 10
    batch: int = 64
    learning_rate: float = 2.0
    beta: float = 0.25
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    K: int = 128
    hidden: int = 256
    h: int = 4
    w: int = 4
    n_q: int = 8
    init_std: float = 1.0
    contrastive: bool = False
    contrastive_weight: float = 1e-3
    tau: float = 0.1
    n_neg: int = 16
    contrastive_negatives_only: bool = False
    # distance inside the codebook/commitment terms; the lookup uses policy.metric
    loss_metric: str = "euclidean"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainingTrace:
    rows: list[dict] = field(default_factory=list)
    model: MlpAutoencoder | None = None
    codebook: Codebook | None = None

    @property
    def final(self) -> dict:
        return self.rows[-1]


def evaluate(model: MlpAutoencoder, cb: Codebook, data: MnistSet, metric: str = "euclidean", chunk: int = 512) -> dict:
    sq_err, counts = 0.0, np.zeros(cb.K, dtype=np.int64)
    for start in range(0, data.count, chunk):
        x = data.images[start : start + chunk]
        x_hat, _, result, _ = forward(model, x, cb, metric)
        sq_err += float(np.sum((x - x_hat) ** 2))
        counts += result.counts
    mse = sq_err / data.images.size
    return {"mse": mse, "usage": usage_fraction(counts), "perplexity": perplexity(counts)}


def train(model: MlpAutoencoder, data: MnistSet, cfg: TrainConfig, cb: Codebook | None = None) -> TrainingTrace:
    root = Rng(cfg.seed)
    cb_rng, shuffle_rng, policy_rng, neg_rng = root.spawn(4)
    if cb is None:
        cb = init_codebook(cb_rng, cfg.K, model.n_q, cfg.init_std)
    # gradient-driven codebook moves share the network's learning rate
    policy = replace(cfg.policy, codebook_lr=cfg.learning_rate)
    quantizer = Quantizer(cb, policy, policy_rng)
    metric, loss_metric = policy.metric, cfg.loss_metric
    trace = TrainingTrace(model=model, codebook=cb)
    row = {"epoch": 0, **evaluate(model, cb, data, metric), "loss": float("nan"), "contrastive": 0.0,
           "min_alpha": float("nan"), "max_alpha": float("nan")}
    trace.rows.append(row)

    n = data.count
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total, contrast, steps = 0.0, 0.0, 0
        alphas = []
        for start in range(0, n, cfg.batch):
            x = data.images[order[start : start + cfg.batch]]
            _, z_e, result, cache = forward(model, x, cb, metric)
            loss, grads = loss_and_grads(model, cache, cfg.beta, loss_metric)
            cb_grad = grads["codebook"] if policy.kind == "vanilla-loss" else None
            if cfg.contrastive:
                value, g = contrastive_loss(
                    cb.entries, z_e, result.distances, cfg.tau, cfg.n_neg, neg_rng,
                    negatives_only=cfg.contrastive_negatives_only,
                )
                loss.contrastive_term = cfg.contrastive_weight * value
                g = cfg.contrastive_weight * g
                cb_grad = g if cb_grad is None else cb_grad + g
                contrast += loss.contrastive_term
            backward_and_step(model, grads, cfg.learning_rate)
            feats = FeatureBatch(z_e, x.shape[0], model.h, model.w)
            report = quantizer.step(feats, result, codebook_grad=cb_grad)
            if report.sampler is not None:
                alphas.append((report.min_alpha, report.max_alpha))
            total += loss.total
            steps += 1
        row = {
            "epoch": epoch,
            **evaluate(model, cb, data, metric),
            "loss": total / max(steps, 1),
            "contrastive": contrast / max(steps, 1),
            "min_alpha": min(a for a, _ in alphas) if alphas else float("nan"),
            "max_alpha": max(b for _, b in alphas) if alphas else float("nan"),
        }
        trace.rows.append(row)
    return trace
