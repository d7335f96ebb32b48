"""Stream, train and bench experiment runners plus summary comparison."""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, init_codebook, perplexity, quantize, usage_fraction
from .config import ExperimentConfig, serialize
from .idx import load_idx_images
from .numeric import Rng
from .policies import Quantizer
from .report import MetricsRow, Summary, plot_metrics, write_metrics_csv, write_summary
from .stream import new_stream
from .vqvae import MlpAutoencoder, train

log = logging.getLogger(__name__)

HIGHER_IS_BETTER = {"mse": False, "usage": True, "perplexity": True}


@dataclass
class PolicyRun:
    policy: str
    rows: list[MetricsRow]
    summary: Summary
    codebook: Codebook


@dataclass
class ExperimentResult:
    runs: list[PolicyRun]
    verdicts: list[dict] = field(default_factory=list)
    checks: list[dict] = field(default_factory=list)

    @property
    def summaries(self) -> list[Summary]:
        return [r.summary for r in self.runs]

    @property
    def passed(self) -> bool:
        return all(c["result"] == "pass" for c in self.checks)

    def by_policy(self) -> dict[str, Summary]:
        return {r.policy: r.summary for r in self.runs}


def _evaluate(cb: Codebook, vectors: np.ndarray, metric: str) -> tuple[float, float, float]:
    res = quantize(cb, vectors, metric)
    mse = float(np.mean((vectors - res.quantized) ** 2))
    return mse, usage_fraction(res.counts), perplexity(res.counts)


def stream_policy_run(cfg: ExperimentConfig, kind: str, seed: int | None = None) -> PolicyRun:
    """Run one policy on the seeded stream. Every policy sees the same
    features, the same initial codebook and the same evaluation draws."""
    seed = cfg.seed if seed is None else seed
    state = new_stream(cfg.stream_config(seed))
    cb_rng, policy_rng, eval_rng = Rng(seed).spawn(3)
    cb = init_codebook(cb_rng, cfg.K, cfg.n_q, cfg.resolved_init_std)
    quantizer = Quantizer(cb, cfg.policy(kind), policy_rng)

    rows = []
    last = None

    def log_row(step):
        vectors = state.snapshot(cfg.eval_size, eval_rng)
        mse, usage, ppl = _evaluate(cb, vectors, quantizer.cfg.metric)
        rows.append(MetricsRow(
            step, mse, usage, ppl, kind, seed,
            min_alpha=last.min_alpha if last and last.sampler else float("nan"),
            max_alpha=last.max_alpha if last and last.sampler else float("nan"),
        ))

    log_row(0)
    for step in range(1, cfg.steps + 1):
        feats = state.next_batch(cfg.batch, cfg.height, cfg.width)
        result = quantizer.quantize(feats)
        last = quantizer.step(feats, result)
        if step % cfg.log_every == 0 or step == cfg.steps:
            log_row(step)
    final = rows[-1]
    summary = Summary(kind, str(seed), "stream", cfg.steps, cfg.K, final.mse, final.usage, final.perplexity)
    return PolicyRun(kind, rows, summary, cb)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CVQ_THREADS", "1")))
    except ValueError:
        return 1


def _map_policies(fn, cfg, policies, *args):
    n = min(_threads(), len(policies))
    if n <= 1:
        return [fn(cfg, p, *args) for p in policies]
    with ProcessPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, cfg, p, *args) for p in policies]
        return [f.result() for f in futures]


def _write_outputs(cfg: ExperimentConfig, out_dir, result: ExperimentResult, xlabel: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(serialize(cfg), encoding="utf-8")
    for run in result.runs:
        write_metrics_csv(out_dir / f"metrics-{run.policy}.csv", run.rows)
        run.codebook.save(out_dir / f"codebook-{run.policy}.cvqb")
    write_summary(out_dir / "summary.txt", result.summaries, result.verdicts, result.checks)
    plot_metrics(out_dir, [r for run in result.runs for r in run.rows], xlabel)


def _finish(cfg, runs, out_dir, xlabel) -> ExperimentResult:
    result = ExperimentResult(runs)
    if len(runs) >= 2:
        result.verdicts = pairwise_verdicts(result.summaries)
    if cfg.thresholds:
        result.checks = check_thresholds(result.summaries, load_thresholds(cfg.thresholds))
    if out_dir is not None:
        _write_outputs(cfg, out_dir, result, xlabel)
    return result


def run_stream_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    runs = _map_policies(stream_policy_run, cfg, cfg.policies)
    return _finish(cfg, runs, out_dir, "step")


def train_policy_run(cfg: ExperimentConfig, kind: str) -> PolicyRun:
    data = load_idx_images(cfg.dataset).subset(cfg.n_train)
    tcfg = cfg.train_config(kind)
    model_rng = Rng(cfg.seed).spawn(5)[4]
    model = MlpAutoencoder.init(model_rng, data.images.shape[1], cfg.hidden, cfg.latent_h, cfg.latent_w, cfg.n_q)
    trace = train(model, data, tcfg)
    rows = [
        MetricsRow(r["epoch"], r["mse"], r["usage"], r["perplexity"], kind, cfg.seed,
                   min_alpha=r["min_alpha"], max_alpha=r["max_alpha"], contrastive=r["contrastive"])
        for r in trace.rows
    ]
    final = rows[-1]
    summary = Summary(kind, str(cfg.seed), "train", cfg.epochs, cfg.K, final.mse, final.usage, final.perplexity)
    return PolicyRun(kind, rows, summary, trace.codebook)


def run_train_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    runs = _map_policies(train_policy_run, cfg, cfg.policies)
    return _finish(cfg, runs, out_dir, "epoch")


def run_bench(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Stream experiment repeated over ``cfg.seeds``; the aggregate summary
    holds the per-policy mean over seeds."""
    per_seed = []
    for seed in cfg.seeds:
        sub = cfg.replace(mode="stream", seed=seed, thresholds=None)
        sub_dir = None if out_dir is None else Path(out_dir) / f"seed-{seed}"
        per_seed.append(run_stream_experiment(sub, sub_dir))
    label = ";".join(str(s) for s in cfg.seeds)
    runs = []
    for i, kind in enumerate(cfg.policies):
        finals = [res.runs[i].summary for res in per_seed]
        summary = Summary(
            kind, label, "bench", cfg.steps, cfg.K,
            float(np.mean([s.mse for s in finals])),
            float(np.mean([s.usage for s in finals])),
            float(np.mean([s.perplexity for s in finals])),
        )
        rows = [r for res in per_seed for r in res.runs[i].rows if r.seed == cfg.seeds[0]]
        runs.append(PolicyRun(kind, rows, summary, per_seed[0].runs[i].codebook))
    return _finish(cfg, runs, out_dir, "step")


# -- comparison ----------------------------------------------------------


def compare_summaries(runs: list[Summary], tie_tol: float = 0.0) -> list[dict]:
    """Per metric: the winning policy and the relative gap between the best
    and worst run. A gap of at most ``tie_tol`` is reported as a tie."""
    if len(runs) < 2:
        raise ValueError("need at least two summaries to compare")
    shape = {(r.mode, r.steps, r.K, r.seed) for r in runs}
    if len(shape) != 1:
        raise ValueError(f"summaries are not comparable (mode, steps, K, seed differ): {sorted(shape)}")
    out = []
    for metric, higher in HIGHER_IS_BETTER.items():
        ranked = sorted(runs, key=lambda r: getattr(r, metric), reverse=higher)
        best, worst = getattr(ranked[0], metric), getattr(ranked[-1], metric)
        scale = max(abs(best), abs(worst))
        gap = 0.0 if scale == 0 else abs(best - worst) / scale
        tie = gap <= tie_tol
        out.append({
            "metric": metric,
            "winner": "-" if tie else ranked[0].policy,
            "best": best,
            "worst": worst,
            "relative_gap": gap,
            "verdict": "tie" if tie else ranked[0].policy,
        })
    return out


def pairwise_verdicts(runs: list[Summary]) -> list[dict]:
    out = []
    for i, a in enumerate(runs):
        for b in runs[i + 1 :]:
            for row in compare_summaries([a, b]):
                out.append({"pair": f"{a.policy} vs {b.policy}", **row})
    return out


_THRESHOLD = re.compile(r"^\s*(\S+)\s+(mse|usage|perplexity)\s*(<=|>=|<|>|==)\s*(\S+)\s*$")
_OPS = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "==": lambda a, b: a == b,
}


def parse_thresholds(text: str) -> list[tuple[str, str, str, float]]:
    """Lines of the form ``<policy> <metric> <op> <value>``; ``#`` comments."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _THRESHOLD.match(line)
        if not m:
            raise ValueError(f"thresholds line {lineno}: cannot parse {line.strip()!r}")
        out.append((m.group(1), m.group(2), m.group(3), float(m.group(4))))
    return out


def load_thresholds(path) -> list[tuple[str, str, str, float]]:
    return parse_thresholds(Path(path).read_text(encoding="utf-8"))


def check_thresholds(runs: list[Summary], thresholds) -> list[dict]:
    by_policy = {r.policy: r for r in runs}
    out = []
    for policy, metric, op, value in thresholds:
        if policy not in by_policy:
            observed, ok = float("nan"), False
        else:
            observed = getattr(by_policy[policy], metric)
            ok = _OPS[op](observed, value)
        out.append({"policy": policy, "metric": metric, "op": op, "threshold": value,
                    "observed": observed, "result": "pass" if ok else "fail"})
    return out
