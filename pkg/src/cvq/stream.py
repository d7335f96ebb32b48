"""Synthetic drifting feature stream and a Lloyd's k-means reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import FeatureBatch
from .numeric import Rng, as_matrix, pairwise_sq_dist


@dataclass
class StreamConfig:
    n_clusters: int = 64
    n_q: int = 8
    cluster_std: float = 0.1
    drift_rate: float = 0.0
    center_scale: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.n_q < 1:
            raise ValueError("n_q must be >= 1")
        if self.cluster_std < 0:
            raise ValueError("cluster_std must be non-negative")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be non-negative")
        if self.center_scale < 0:
            raise ValueError("center_scale must be non-negative")


class StreamState:
    """Gaussian mixture whose means take a random-walk step after every batch."""

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        self.rng = Rng(cfg.seed)
        self.means = self.rng.gaussian_matrix(cfg.n_clusters, cfg.n_q, 0.0, 1.0) * cfg.center_scale
        self.step = 0

    def next_batch(self, B: int, h: int = 1, w: int = 1) -> FeatureBatch:
        n = B * h * w
        if n < 1:
            raise ValueError("batch must contain at least one feature")
        cfg = self.cfg
        which = self.rng.uniform_indices(n, cfg.n_clusters)
        noise = self.rng.gaussian_matrix(n, cfg.n_q, 0.0, cfg.cluster_std)
        batch = FeatureBatch(self.means[which] + noise, B, h, w)
        if cfg.drift_rate > 0:
            self.means = self.means + self.rng.gaussian_matrix(cfg.n_clusters, cfg.n_q, 0.0, cfg.drift_rate)
        self.step += 1
        return batch

    def snapshot(self, n: int, rng: Rng) -> np.ndarray:
        """Draw ``n`` features from the current mixture without advancing it."""
        which = rng.uniform_indices(n, self.cfg.n_clusters)
        return self.means[which] + rng.gaussian_matrix(n, self.cfg.n_q, 0.0, self.cfg.cluster_std)


def new_stream(cfg: StreamConfig) -> StreamState:
    return StreamState(cfg)


def next_batch(state: StreamState, B: int, h: int = 1, w: int = 1) -> FeatureBatch:
    return state.next_batch(B, h, w)


def _kmeanspp_seed(data: np.ndarray, K: int, rng: Rng) -> np.ndarray:
    n = data.shape[0]
    centers = [data[rng.uniform_indices(1, n)[0]]]
    closest = pairwise_sq_dist(data, centers[0][None, :])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = int(rng.uniform_indices(1, n)[0])
        else:
            idx = rng.categorical_sample(closest / total)
        centers.append(data[idx])
        closest = np.minimum(closest, pairwise_sq_dist(data, data[idx][None, :])[:, 0])
    return np.array(centers)


def _inertia(data: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    # direct differences: exact zero when a point sits on its center
    return float(np.mean(np.sum((data - centers[assign]) ** 2, axis=1)))


def lloyd_kmeans(data, K: int, max_iters: int, rng: Rng, return_history: bool = False):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(centers, assignment, inertia)`` where inertia is the mean
    squared distance to the assigned center. With ``return_history`` the
    per-iteration inertia list is appended as a fourth item.
    """
    data = as_matrix(data, "data")
    n = data.shape[0]
    if K > n:
        raise ValueError(f"K={K} exceeds the number of rows ({n})")
    if K < 1:
        raise ValueError("K must be >= 1")
    centers = _kmeanspp_seed(data, K, rng)
    history = []
    assign = np.argmin(pairwise_sq_dist(data, centers), axis=1)
    for _ in range(max_iters):
        d = pairwise_sq_dist(data, centers)
        assign = np.argmin(d, axis=1)
        history.append(_inertia(data, centers, assign))
        new = centers.copy()
        for k in range(K):
            members = data[assign == k]
            if len(members):
                new[k] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    assign = np.argmin(pairwise_sq_dist(data, centers), axis=1)
    inertia = _inertia(data, centers, assign)
    history.append(inertia)
    if return_history:
        return centers, assign, inertia, history
    return centers, assign, inertia
