"""Render figures from run outputs (needs the ``plot`` extra: matplotlib).

    python scripts/plot_traces.py runs/sim          # accuracy curve + alpha trajectories
    python scripts/plot_traces.py runs/theory       # regret traces
"""

from __future__ import annotations

import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_run(run: Path) -> Path:
    summary = json.loads((run / "summary.json").read_text())
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    pts = summary["accuracy_curve"]
    ax1.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
    ax1.set_xlabel("tasks seen")
    ax1.set_ylabel("cumulative accuracy")
    for agent, r in summary["router"].items():
        ax2.plot(range(1, len(r["alpha_history"]) + 1), r["alpha_history"], label=agent)
    ax2.set_xlabel("task")
    ax2.set_ylabel("exploitation probability")
    ax2.legend()
    out = run / "run.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    return out


def plot_regret(run: Path) -> Path:
    series = defaultdict(lambda: ([], []))
    with open(run / "regret.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            xs, ys = series[row["policy"]]
            xs.append(int(row["t"]))
            ys.append(float(row["regret"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xscale("log")
    ax.set_yscale("symlog", linthresh=1e-2)
    ax.set_xlabel("t")
    ax.set_ylabel("cumulative regret")
    ax.legend()
    out = run / "regret.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    return out


def main(argv: list[str]) -> int:
    if len(argv) != 1:
        print(__doc__)
        return 2
    run = Path(argv[0])
    if (run / "summary.json").exists():
        print(plot_run(run))
    if (run / "regret.csv").exists():
        print(plot_regret(run))
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
