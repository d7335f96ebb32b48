"""Dense-array helpers, seeded randomness, pairwise distances and softmax.

Matrices are plain float64 ``numpy`` arrays. ``Rng`` wraps numpy's PCG64
bit generator so every random draw in the package goes through one
explicitly seeded object.
"""

from __future__ import annotations

import numpy as np


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Convert external input to a finite 2-D float64 array."""
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def _check_pair(features: np.ndarray, codebook: np.ndarray) -> None:
    if features.ndim != 2 or codebook.ndim != 2:
        raise ValueError(
            f"expected 2-D inputs, got features {features.shape} and codebook {codebook.shape}"
        )
    if features.shape[1] != codebook.shape[1] or features.shape[1] < 1:
        raise ValueError(
            f"dimension mismatch: features {features.shape} vs codebook {codebook.shape}"
        )


def pairwise_sq_dist(features: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance between every feature row and codebook row."""
    features = np.asarray(features, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    _check_pair(features, codebook)
    d = (
        np.sum(features**2, axis=1)[:, None]
        - 2.0 * features @ codebook.T
        + np.sum(codebook**2, axis=1)[None, :]
    )
    # the expansion can go slightly negative through cancellation
    np.maximum(d, 0.0, out=d)
    return d


def _unit_rows(x: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"{name}: row {int(bad[0])} has zero norm")
    return x / norms[:, None]


def pairwise_cos_dist(features: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Cosine distance ``1 - cos(angle)``, in [0, 2]."""
    features = np.asarray(features, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    _check_pair(features, codebook)
    sim = _unit_rows(features, "features") @ _unit_rows(codebook, "codebook").T
    return np.clip(1.0 - sim, 0.0, 2.0)


def softmax_neg(row) -> np.ndarray:
    """``exp(-row) / sum(exp(-row))`` computed with the usual max shift."""
    row = np.asarray(row, dtype=np.float64)
    if row.size == 0:
        raise ValueError("softmax_neg: empty input")
    if not np.all(np.isfinite(row)):
        raise ValueError("softmax_neg: non-finite input")
    z = -row
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


class Rng:
    """Single-owner seeded generator (PCG64).

    Children created with :meth:`spawn` get independent streams derived
    from the parent seed, so adding draws to one consumer never shifts
    another consumer's sequence.
    """

    def __init__(self, seed: int, *, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int = 1) -> list["Rng"]:
        return [Rng(self.seed, _seq=s) for s in self._seq.spawn(n)]

    def uniform_indices(self, n: int, high: int) -> np.ndarray:
        if high < 1:
            raise ValueError("uniform_indices: empty range")
        return self.gen.integers(0, high, size=n)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def gaussian_matrix(self, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self.gen.normal(mean, std, size=(rows, cols))

    def categorical_sample(self, probs, size: int | None = None):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("categorical_sample: invalid probability vector")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"categorical_sample: probabilities sum to {p.sum()!r}, not 1")
        # inverse-CDF draw; keeps zero-probability outcomes unreachable
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        u = self.gen.random(size)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, p.size - 1) if size is not None else int(min(idx, p.size - 1))
