"""Codebook state, nearest-entry quantization and usage statistics."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import Rng, as_matrix, pairwise_cos_dist, pairwise_sq_dist

MAGIC = b"CVQB"
FORMAT_VERSION = 1
METRICS = ("euclidean", "cosine")


@dataclass
class Codebook:
    entries: np.ndarray  # (K, n_q)
    avg_usage: np.ndarray = field(default=None)  # (K,) running-average usage

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 1 or self.entries.shape[1] < 1:
            raise ValueError(f"codebook entries must be (K>=1, n_q>=1), got {self.entries.shape}")
        if self.avg_usage is None:
            self.avg_usage = np.zeros(self.K)
        else:
            self.avg_usage = np.asarray(self.avg_usage, dtype=np.float64)
            if self.avg_usage.shape != (self.K,):
                raise ValueError("avg_usage must have one value per entry")
            if np.any(self.avg_usage < 0):
                raise ValueError("avg_usage must be non-negative")

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def n_q(self) -> int:
        return self.entries.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.entries.copy(), self.avg_usage.copy())

    def save(self, path) -> None:
        header = MAGIC + struct.pack("<III", FORMAT_VERSION, self.K, self.n_q)
        with open(path, "wb") as f:
            f.write(header)
            f.write(self.entries.astype("<f8").tobytes())
            f.write(self.avg_usage.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: bad magic {raw[:4]!r}")
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated header")
        version, K, n_q = struct.unpack("<III", raw[4:16])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        expected = 16 + 8 * (K * n_q + K)
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
        body = np.frombuffer(raw, dtype="<f8", offset=16).astype(np.float64)
        return cls(body[: K * n_q].reshape(K, n_q), body[K * n_q :].copy())


@dataclass
class FeatureBatch:
    """Flattened (B*h*w, n_q) grid of encoded features."""

    vectors: np.ndarray
    batch: int
    height: int = 1
    width: int = 1

    def __post_init__(self):
        self.vectors = as_matrix(self.vectors, "features")
        if self.vectors.shape[0] != self.batch * self.height * self.width:
            raise ValueError(
                f"feature rows {self.vectors.shape[0]} != B*h*w = "
                f"{self.batch}*{self.height}*{self.width}"
            )

    @classmethod
    def flat(cls, vectors) -> "FeatureBatch":
        v = as_matrix(vectors, "features")
        return cls(v, v.shape[0], 1, 1)

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class QuantizeResult:
    indices: np.ndarray
    quantized: np.ndarray
    counts: np.ndarray
    distances: np.ndarray


def init_codebook(rng: Rng, K: int, n_q: int, init_std: float = 0.02) -> Codebook:
    if K < 1 or n_q < 1:
        raise ValueError("K and n_q must be >= 1")
    if init_std <= 0:
        raise ValueError("init_std must be positive")
    return Codebook(rng.gaussian_matrix(K, n_q, 0.0, init_std))


def distance_matrix(features: np.ndarray, entries: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric == "euclidean":
        return pairwise_sq_dist(features, entries)
    if metric == "cosine":
        return pairwise_cos_dist(features, entries)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def quantize(cb: Codebook, feats: FeatureBatch | np.ndarray, metric: str = "euclidean") -> QuantizeResult:
    vectors = feats.vectors if isinstance(feats, FeatureBatch) else np.asarray(feats, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != cb.n_q:
        raise ValueError(f"dimension mismatch: features {vectors.shape} vs codebook {cb.entries.shape}")
    d = distance_matrix(vectors, cb.entries, metric)
    # np.argmin returns the first minimum, i.e. the lowest entry index on ties
    idx = np.argmin(d, axis=1)
    counts = np.bincount(idx, minlength=cb.K)
    return QuantizeResult(idx, cb.entries[idx].copy(), counts, d)


def usage_fraction(counts) -> float:
    counts = np.asarray(counts)
    if counts.size == 0:
        return 0.0
    return float(np.count_nonzero(counts > 0)) / counts.size


def perplexity(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("perplexity is undefined for all-zero counts")
    used = counts[counts > 0]
    if np.all(used == used[0]):
        # uniform over the used entries: exp(entropy) is exactly their number
        return float(used.size)
    p = used / total
    return float(np.exp(-np.sum(p * np.log(p))))
