"""Codebook update rules.

Every policy runs after the nearest-entry lookup of a training step and
mutates the :class:`~cvq.codebook.Codebook` in place:

* ``vanilla-loss``  gradient step on the codebook term only
* ``vanilla-ema``   exponential moving average of cluster sizes and sums
* ``hvq-reset``     EMA, plus low-usage entries reseeded next to the busiest entry
* ``jukebox-reset`` EMA, plus low-usage entries hard-replaced by batch features
* ``cvq-offline``   anchor reinitialization on the first batch only
* ``cvq-online``    anchor reinitialization on every batch, gated by usage

The clustered variants use a base update (EMA by default) for live entries;
the usage-gated reinitialization is what moves the rarely used ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook, FeatureBatch, QuantizeResult
from .numeric import Rng

log = logging.getLogger(__name__)

KINDS = ("vanilla-loss", "vanilla-ema", "hvq-reset", "jukebox-reset", "cvq-offline", "cvq-online")
SAMPLERS = ("random", "unique", "closest", "probabilistic")
BASES = ("ema", "loss")


@dataclass
class PolicyConfig:
    kind: str = "cvq-online"
    gamma: float = 0.99
    epsilon: float = 1e-3
    sampler: str = "random"
    ema_decay: float = 0.99
    # None means 1/(10K), resolved against the codebook size
    reset_threshold: float | None = None
    metric: str = "euclidean"
    # update for live entries under the cvq-* policies
    base: str = "ema"
    codebook_lr: float = 1.0
    ema_smoothing: float = 1e-5
    # compute the decay from usage updated with this batch (True) or the previous one
    usage_first: bool = True
    # reinitialize before the base update (lookup, reinit, then the optimizer step)
    reinit_first: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown anchor sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.base not in BASES:
            raise ValueError(f"unknown base update {self.base!r}; expected one of {BASES}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.reset_threshold is not None and self.reset_threshold < 0:
            raise ValueError("reset_threshold must be non-negative")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def threshold(self, K: int) -> float:
        return 1.0 / (10.0 * K) if self.reset_threshold is None else self.reset_threshold

    @property
    def update_kind(self) -> str:
        """How live entries move: 'loss' or 'ema'."""
        if self.kind == "vanilla-loss":
            return "loss"
        if self.kind in ("cvq-offline", "cvq-online"):
            return self.base
        return "ema"


@dataclass
class AnchorSet:
    anchors: np.ndarray  # (K, n_q)
    source_rows: np.ndarray  # (K,)
    warning: str | None = None


@dataclass
class StepReport:
    step: int
    kind: str
    sampler: str | None = None
    min_alpha: float = 0.0
    max_alpha: float = 0.0
    n_alpha_over_half: int = 0
    n_reset: int = 0
    warnings: list[str] = field(default_factory=list)


# -- running-average usage and decay ---------------------------------------


def update_usage(cb: Codebook, counts, gamma: float, Bhw: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (cb.K,):
        raise ValueError(f"expected {cb.K} counts, got shape {counts.shape}")
    if counts.sum() != Bhw:
        raise ValueError(f"counts sum to {counts.sum()} but the batch has {Bhw} features")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    cb.avg_usage = cb.avg_usage * gamma + (counts / Bhw) * (1.0 - gamma)
    return cb.avg_usage


def decay_alpha(avg_usage, K: int, gamma: float, epsilon: float) -> np.ndarray:
    """Per-entry mixing weight; close to 1 for unused entries, 0 for busy ones."""
    n = np.asarray(avg_usage, dtype=np.float64)
    if np.any(n < 0):
        raise ValueError("avg_usage must be non-negative")
    # exp underflows to exactly 0 for busy entries, which is the intent
    return np.exp(-n * K * 10.0 / (1.0 - gamma) - epsilon)


def reinit_entries(cb: Codebook, anchors: AnchorSet, alpha) -> None:
    alpha = np.asarray(alpha, dtype=np.float64)
    if anchors.anchors.shape != cb.entries.shape:
        raise ValueError(
            f"need one anchor per entry: anchors {anchors.anchors.shape} vs entries {cb.entries.shape}"
        )
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    moving = alpha > 0
    a = alpha[moving, None]
    cb.entries[moving] = cb.entries[moving] * (1.0 - a) + anchors.anchors[moving] * a


# -- anchor sampling ---------------------------------------------------------


def _column_softmax_neg(d: np.ndarray) -> np.ndarray:
    z = -d
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def sample_anchors(
    rng: Rng,
    feats: FeatureBatch,
    cb: Codebook,
    distances: np.ndarray | None,
    sampler: str = "random",
) -> AnchorSet:
    vectors = feats.vectors
    n, K = vectors.shape[0], cb.K
    if n == 0:
        raise ValueError("cannot sample anchors from an empty batch")
    warning = None
    if sampler == "random":
        rows = rng.uniform_indices(K, n)
    elif sampler == "unique":
        perm = rng.permutation(n)
        if n < K:
            warning = f"unique sampler: batch of {n} features < K={K}, permutation reused cyclically"
        rows = perm[np.arange(K) % n]
    elif sampler in ("closest", "probabilistic"):
        if distances is None or distances.shape != (n, K):
            raise ValueError("closest/probabilistic samplers need the (Bhw, K) distance matrix")
        if sampler == "closest":
            rows = np.argmin(distances, axis=0)
        else:
            cdf = np.cumsum(_column_softmax_neg(distances), axis=0)
            cdf[-1] = 1.0
            u = rng.gen.random(K)
            rows = np.minimum((cdf <= u[None, :]).sum(axis=0), n - 1)
    else:
        raise ValueError(f"unknown anchor sampler {sampler!r}")
    rows = np.asarray(rows, dtype=np.int64)
    return AnchorSet(vectors[rows].copy(), rows, warning)


# -- base updates for live entries ---------------------------------------------


@dataclass
class EmaState:
    size: np.ndarray
    sums: np.ndarray
    hits: np.ndarray  # lifetime assignment counts

    @classmethod
    def zeros(cls, K: int, n_q: int) -> "EmaState":
        return cls(np.zeros(K), np.zeros((K, n_q)), np.zeros(K, dtype=np.int64))

    def sync(self, cb: Codebook, rows, smoothing: float) -> None:
        """Make the accumulators reproduce the current entries for ``rows``."""
        self.sums[rows] = cb.entries[rows] * (self.size[rows] + smoothing)[:, None]


def cluster_sums(vectors: np.ndarray, indices: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((K, vectors.shape[1]))
    np.add.at(out, indices, vectors)
    return out


def ema_step(cb: Codebook, state: EmaState, feats: FeatureBatch, result: QuantizeResult, decay: float, smoothing: float) -> None:
    state.size = decay * state.size + (1.0 - decay) * result.counts
    state.sums = decay * state.sums + (1.0 - decay) * cluster_sums(feats.vectors, result.indices, cb.K)
    state.hits += result.counts
    # entries without assignments this step keep their position
    hit = result.counts > 0
    cb.entries[hit] = state.sums[hit] / (state.size[hit] + smoothing)[:, None]


def codebook_term_grad(cb: Codebook, feats: FeatureBatch, result: QuantizeResult) -> np.ndarray:
    """Gradient of mean ||sg[z] - z_q||^2 with respect to the entries."""
    diff = result.quantized - feats.vectors
    return cluster_sums(2.0 * diff / diff.size, result.indices, cb.K)


# -- the stepper -----------------------------------------------------------


class Quantizer:
    """Owns a codebook plus whatever state its update policy needs."""

    def __init__(self, cb: Codebook, cfg: PolicyConfig, rng: Rng):
        self.cb = cb
        self.cfg = cfg
        self.rng = rng
        self.ema = EmaState.zeros(cb.K, cb.n_q)
        self.t = 0

    def quantize(self, feats: FeatureBatch) -> QuantizeResult:
        from .codebook import quantize

        return quantize(self.cb, feats, self.cfg.metric)

    def step(self, feats: FeatureBatch, result: QuantizeResult, codebook_grad: np.ndarray | None = None) -> StepReport:
        """Apply one update. ``codebook_grad`` is an extra gradient (e.g. from
        the contrastive term, or the full codebook-loss gradient computed by a
        trainer) applied with ``codebook_lr`` before the policy's own rule."""
        self.t += 1
        kind = self.cfg.kind
        if kind == "vanilla-loss":
            return step_vanilla_loss(self, feats, result, codebook_grad)
        if codebook_grad is not None:
            self.cb.entries -= self.cfg.codebook_lr * codebook_grad
            self.ema.sync(self.cb, slice(None), self.cfg.ema_smoothing)
        if kind == "vanilla-ema":
            return step_vanilla_ema(self, feats, result)
        if kind == "hvq-reset":
            return step_hvq_reset(self, feats, result)
        if kind == "jukebox-reset":
            return step_jukebox_reset(self, feats, result)
        if kind == "cvq-online":
            return step_cvq_online(self, feats, result)
        return step_cvq_offline(self, feats, result)


def _base_update(q: Quantizer, feats: FeatureBatch, result: QuantizeResult) -> None:
    if q.cfg.update_kind == "ema":
        ema_step(q.cb, q.ema, feats, result, q.cfg.ema_decay, q.cfg.ema_smoothing)
    else:
        q.cb.entries -= q.cfg.codebook_lr * codebook_term_grad(q.cb, feats, result)
        q.ema.hits += result.counts


def _debiased_usage(q: Quantizer) -> np.ndarray:
    # the running average starts at zero; undo the start-up bias so a fixed
    # threshold means the same thing at step 1 and step 1000
    return q.cb.avg_usage / (1.0 - q.cfg.gamma**q.t)


def step_vanilla_loss(q: Quantizer, feats, result, codebook_grad=None) -> StepReport:
    update_usage(q.cb, result.counts, q.cfg.gamma, len(feats))
    grad = codebook_term_grad(q.cb, feats, result) if codebook_grad is None else codebook_grad
    q.cb.entries -= q.cfg.codebook_lr * grad
    q.ema.hits += result.counts
    return StepReport(q.t, q.cfg.kind)


def step_vanilla_ema(q: Quantizer, feats, result) -> StepReport:
    update_usage(q.cb, result.counts, q.cfg.gamma, len(feats))
    ema_step(q.cb, q.ema, feats, result, q.cfg.ema_decay, q.cfg.ema_smoothing)
    return StepReport(q.t, q.cfg.kind)


def step_hvq_reset(q: Quantizer, feats, result) -> StepReport:
    update_usage(q.cb, result.counts, q.cfg.gamma, len(feats))
    ema_step(q.cb, q.ema, feats, result, q.cfg.ema_decay, q.cfg.ema_smoothing)
    usage = _debiased_usage(q)
    low = np.flatnonzero(usage < q.cfg.threshold(q.cb.K))
    donor = int(np.argmax(q.cb.avg_usage))
    low = low[low != donor]
    if low.size:
        base = q.cb.entries[donor]
        std = 0.01 * (np.linalg.norm(base) + 1e-8)
        q.cb.entries[low] = base + q.rng.gaussian_matrix(low.size, q.cb.n_q, 0.0, std)
        q.ema.sync(q.cb, low, q.cfg.ema_smoothing)
    return StepReport(q.t, q.cfg.kind, n_reset=int(low.size))


def step_jukebox_reset(q: Quantizer, feats, result) -> StepReport:
    update_usage(q.cb, result.counts, q.cfg.gamma, len(feats))
    ema_step(q.cb, q.ema, feats, result, q.cfg.ema_decay, q.cfg.ema_smoothing)
    usage = _debiased_usage(q)
    low = np.flatnonzero(usage < q.cfg.threshold(q.cb.K))
    if low.size:
        rows = q.rng.uniform_indices(low.size, len(feats))
        q.cb.entries[low] = feats.vectors[rows]
        q.ema.sync(q.cb, low, q.cfg.ema_smoothing)
    return StepReport(q.t, q.cfg.kind, n_reset=int(low.size))


def _cvq_reinit(q: Quantizer, feats, result) -> StepReport:
    cfg = q.cfg
    if cfg.usage_first:
        update_usage(q.cb, result.counts, cfg.gamma, len(feats))
    alpha = decay_alpha(q.cb.avg_usage, q.cb.K, cfg.gamma, cfg.epsilon)
    anchors = sample_anchors(q.rng, feats, q.cb, result.distances, cfg.sampler)
    reinit_entries(q.cb, anchors, alpha)
    if not cfg.usage_first:
        update_usage(q.cb, result.counts, cfg.gamma, len(feats))
    moved = np.flatnonzero(alpha > 0)
    q.ema.sync(q.cb, moved, cfg.ema_smoothing)
    report = StepReport(
        q.t,
        cfg.kind,
        sampler=cfg.sampler,
        min_alpha=float(alpha.min()),
        max_alpha=float(alpha.max()),
        n_alpha_over_half=int(np.count_nonzero(alpha > 0.5)),
    )
    if anchors.warning:
        log.warning(anchors.warning)
        report.warnings.append(anchors.warning)
    return report


def step_cvq_online(q: Quantizer, feats, result) -> StepReport:
    if q.cfg.reinit_first:
        report = _cvq_reinit(q, feats, result)
        _base_update(q, feats, result)
        return report
    _base_update(q, feats, result)
    return _cvq_reinit(q, feats, result)


def step_cvq_offline(q: Quantizer, feats, result) -> StepReport:
    if q.t == 1:
        return step_cvq_online(q, feats, result)
    _base_update(q, feats, result)
    update_usage(q.cb, result.counts, q.cfg.gamma, len(feats))
    alpha = decay_alpha(q.cb.avg_usage, q.cb.K, q.cfg.gamma, q.cfg.epsilon)
    return StepReport(
        q.t,
        q.cfg.kind,
        sampler=q.cfg.sampler,
        min_alpha=float(alpha.min()),
        max_alpha=float(alpha.max()),
        n_alpha_over_half=int(np.count_nonzero(alpha > 0.5)),
    )
