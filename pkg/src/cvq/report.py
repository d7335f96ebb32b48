"""CSV traces, summary tables and figures written by the experiment runners."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Column order is part of the file format; append new columns at the end only.
CSV_COLUMNS = ("step", "mse", "psnr", "usage", "perplexity", "min_alpha", "max_alpha", "contrastive", "policy", "seed")
SUMMARY_COLUMNS = ("policy", "seed", "mode", "steps", "K", "mse", "usage", "perplexity")
PLOTTED = ("mse", "usage", "perplexity")


@dataclass
class MetricsRow:
    step: int
    mse: float
    usage: float
    perplexity: float
    policy: str
    seed: int
    min_alpha: float = float("nan")
    max_alpha: float = float("nan")
    contrastive: float = 0.0

    @property
    def psnr(self) -> float:
        # peak value 1, as for images scaled to [0, 1]
        return math.inf if self.mse == 0 else 10.0 * math.log10(1.0 / self.mse)


def fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".10g")
    return str(value)


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for row in rows:
            out.writerow([fmt(getattr(row, c)) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@dataclass
class Summary:
    policy: str
    seed: str
    mode: str
    steps: int
    K: int
    mse: float
    usage: float
    perplexity: float

    @classmethod
    def from_row(cls, row: dict) -> "Summary":
        return cls(
            policy=row["policy"], seed=str(row["seed"]), mode=row["mode"], steps=int(row["steps"]),
            K=int(row["K"]), mse=float(row["mse"]), usage=float(row["usage"]),
            perplexity=float(row["perplexity"]),
        )


VERDICT_COLUMNS = ("pair", "metric", "winner", "best", "worst", "relative_gap", "verdict")
CHECK_COLUMNS = ("policy", "metric", "op", "threshold", "observed", "result")


def write_summary(path, summaries: list[Summary], verdicts: list[dict], checks: list[dict] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            out.writerow([fmt(v) for v in asdict(s).values()])
        if verdicts:
            f.write("\n# verdicts\n")
            out.writerow(VERDICT_COLUMNS)
            for v in verdicts:
                out.writerow([fmt(v.get(c, "all")) for c in VERDICT_COLUMNS])
        if checks:
            f.write("\n# thresholds\n")
            out.writerow(CHECK_COLUMNS)
            for c in checks:
                out.writerow([fmt(c[k]) for k in CHECK_COLUMNS])


def read_summary(path) -> list[Summary]:
    """Read the per-policy block at the top of a ``summary.txt``."""
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            break
        lines.append(line)
    return [Summary.from_row(r) for r in csv.DictReader(lines)]


assert tuple(f.name for f in fields(Summary)) == SUMMARY_COLUMNS


def plot_metrics(out_dir, rows: list[MetricsRow], xlabel: str = "step") -> list[Path]:
    """One line chart per metric, a line per policy. Returns the files written."""
    out_dir = Path(out_dir)
    by_policy: dict[str, list[MetricsRow]] = {}
    for r in rows:
        by_policy.setdefault(r.policy, []).append(r)
    written = []
    with plt.rc_context({"svg.hashsalt": "cvq", "font.size": 10}):
        for metric in PLOTTED:
            fig, ax = plt.subplots(figsize=(5.5, 3.5))
            for policy, rs in by_policy.items():
                ax.plot([r.step for r in rs], [getattr(r, metric) for r in rs], marker="o", ms=2.5, label=policy)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(metric)
            if metric == "mse":
                ax.set_yscale("log")
            ax.legend(frameon=False, fontsize=8)
            fig.tight_layout()
            path = out_dir / f"{metric}.svg"
            fig.savefig(path, metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
