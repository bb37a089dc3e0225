"""Static SVG comparison charts for evaluation reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from uvhl.eval import METRICS  # noqa: E402

plt.rcParams["svg.hashsalt"] = "uvhl"


def comparison_chart(names, reports, path):
    """Grouped bars of mean metric per run with std error bars."""
    width = 0.8 / max(len(reports), 1)
    x = np.arange(len(METRICS))
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, (name, report) in enumerate(zip(names, reports)):
        level = "repeats" if len(report.repeats) > 1 else "folds"
        summ = report.summary[level]
        means = [np.nan if summ[m]["mean"] is None else summ[m]["mean"] for m in METRICS]
        stds = [0.0 if summ[m]["std"] is None else summ[m]["std"] for m in METRICS]
        ax.bar(x + (i - (len(reports) - 1) / 2) * width, means, width, yerr=stds,
               capsize=2, label=name)
    ax.set_xticks(x, [m.upper() for m in METRICS])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize="small", loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
