"""VQ training objective, straight-through estimator and contrastive term.

All squared-norm terms are means over elements, so the commitment weight
``beta`` does not depend on the latent size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Rng


@dataclass
class LossBreakdown:
    reconstruction: float
    codebook_term: float
    commitment_term: float
    contrastive_term: float = 0.0
    beta: float = 0.25
    tau: float = 0.1

    @property
    def total(self) -> float:
        return self.reconstruction + self.codebook_term + self.commitment_term + self.contrastive_term


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero-norm vector")
    return x / norms, norms


def latent_pair(z_e, z_q, metric: str = "euclidean"):
    """The vectors the latent terms compare: raw, or unit-normalized for cosine."""
    if metric == "cosine":
        return _unit(z_e)[0], _unit(z_q)[0]
    return z_e, z_q


def vq_loss(x, x_hat, z_e, z_q, beta: float = 0.25, metric: str = "euclidean") -> LossBreakdown:
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    z_e, z_q = np.asarray(z_e, dtype=np.float64), np.asarray(z_q, dtype=np.float64)
    _same_shape(x, x_hat, "reconstruction")
    _same_shape(z_e, z_q, "latents")
    a, b = latent_pair(z_e, z_q, metric)
    latent = float(np.mean((a - b) ** 2))
    # codebook term and commitment term share the same norm; only the
    # stop-gradient placement differs
    return LossBreakdown(
        reconstruction=float(np.mean((x - x_hat) ** 2)),
        codebook_term=latent,
        commitment_term=beta * latent,
        beta=beta,
    )


def _normalized_backprop(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull gradient ``g`` w.r.t. ``v/|v|`` back to ``v``."""
    u, n = _unit(v)
    return (g - u * np.sum(g * u, axis=-1, keepdims=True)) / n


def commitment_grad(z_e, z_q, beta: float, metric: str = "euclidean") -> np.ndarray:
    """d(beta * mean||z_e - sg[z_q]||^2) / d z_e."""
    a, b = latent_pair(z_e, z_q, metric)
    g = 2.0 * beta * (a - b) / a.size
    return _normalized_backprop(z_e, g) if metric == "cosine" else g


def codebook_loss_grad(z_e, z_q, metric: str = "euclidean") -> np.ndarray:
    """d(mean||sg[z_e] - z_q||^2) / d z_q, one row per feature."""
    a, b = latent_pair(z_e, z_q, metric)
    g = 2.0 * (b - a) / a.size
    return _normalized_backprop(z_q, g) if metric == "cosine" else g


def straight_through(z_e, z_q):
    """Forward value ``z_q``; the returned backward maps an upstream
    gradient on ``z_q`` unchanged onto ``z_e``."""
    z_e, z_q = np.asarray(z_e, dtype=np.float64), np.asarray(z_q, dtype=np.float64)
    _same_shape(z_e, z_q, "straight_through")
    # z_q itself rather than z_e + (z_q - z_e), which can round
    out = z_q.copy()

    def backward(grad_out):
        return np.array(grad_out, dtype=np.float64, copy=True)

    return out, backward


def _cos_sim_and_grad(e: np.ndarray, z: np.ndarray):
    """Cosine similarity of ``e`` with each row of ``z`` and its gradient in ``e``."""
    ne = np.linalg.norm(e)
    nz = np.linalg.norm(z, axis=1)
    if ne == 0 or np.any(nz == 0):
        raise ValueError("cosine similarity with a zero-norm vector")
    s = z @ e / (nz * ne)
    grad = z / (nz[:, None] * ne) - s[:, None] * e[None, :] / ne**2
    return s, grad


def sample_negatives(distances: np.ndarray, positives: np.ndarray, n_neg: int, rng: Rng) -> np.ndarray:
    """Per entry, ``n_neg`` distinct feature rows drawn with probability
    proportional to their distance, never the positive."""
    n, K = distances.shape
    out = np.empty((K, n_neg), dtype=np.int64)
    for k in range(K):
        w = np.array(distances[:, k], dtype=np.float64)
        w[positives[k]] = 0.0
        if np.count_nonzero(w) < n_neg:
            w = np.ones(n)
            w[positives[k]] = 0.0
        out[k] = rng.gen.choice(n, size=n_neg, replace=False, p=w / w.sum())
    return out


def contrastive_loss(
    entries,
    feats,
    distances,
    tau: float = 0.1,
    n_neg: int = 16,
    rng: Rng | None = None,
    negatives_only: bool = False,
    negatives: np.ndarray | None = None,
):
    """InfoNCE-style loss pulling each entry toward its closest feature.

    Returns ``(value, grad)`` with ``grad`` of shape ``entries.shape``.
    Features are treated as constants. Pass ``negatives`` to reuse a fixed
    draw (finite-difference checks do this); otherwise ``rng`` draws them.
    ``negatives_only`` drops the positive from the denominator, which makes
    the loss unbounded below.
    """
    E = np.asarray(getattr(entries, "entries", entries), dtype=np.float64)
    Z = np.asarray(getattr(feats, "vectors", feats), dtype=np.float64)
    D = np.asarray(distances, dtype=np.float64)
    K, n = E.shape[0], Z.shape[0]
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    if n <= n_neg:
        raise ValueError(f"need more features ({n}) than negatives ({n_neg})")
    if D.shape != (n, K):
        raise ValueError(f"distances must be ({n}, {K}), got {D.shape}")
    positives = np.argmin(D, axis=0)
    if negatives is None:
        if rng is None:
            raise ValueError("rng is required to draw negatives")
        negatives = sample_negatives(D, positives, n_neg, rng)

    total = 0.0
    grad = np.zeros_like(E)
    for k in range(K):
        rows = np.concatenate(([positives[k]], negatives[k]))
        s, ds = _cos_sim_and_grad(E[k], Z[rows])
        logits = s / tau
        # column 0 is the positive
        pool = logits[1:] if negatives_only else logits
        m = pool.max()
        lse = m + np.log(np.sum(np.exp(pool - m)))
        total += lse - logits[0]
        w = np.exp(logits - lse)
        if negatives_only:
            w[0] = 0.0
        w[0] -= 1.0
        grad[k] = (w[:, None] * ds).sum(axis=0) / tau
    return total / K, grad / K
