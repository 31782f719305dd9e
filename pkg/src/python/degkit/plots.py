"Standalone SVG report figures."
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import LOOP_LABELS  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_score_scatter(rows, path, error_point=None):
    """Public vs private MCRMSE, one point per model.

    'rows' holds (model, public, private); 'error_point' marks the
    experimental-error MCRMSE on both axes when given.
    """
    fig, ax = plt.subplots(figsize=(5, 5))
    public = [r[1] for r in rows]
    private = [r[2] for r in rows]
    ax.scatter(public, private, color="tab:blue", zorder=2)
    for name, x, y in rows:
        ax.annotate(name, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
    if error_point is not None:
        ax.scatter([error_point], [error_point], marker="*", s=150, color="tab:red", zorder=3)
        ax.annotate("experimental error", (error_point, error_point), textcoords="offset points",
                    xytext=(4, -12), fontsize=8, color="tab:red")
    values = public + private + ([error_point] if error_point is not None else [])
    if values:
        lo = min(values) * 0.95
        hi = max(values) * 1.05
        ax.plot([lo, hi], [lo, hi], color="0.7", linestyle="--", zorder=1)
    ax.set_xlabel("public MCRMSE")
    ax.set_ylabel("private MCRMSE")
    _save(fig, path)


def plot_motif_bars(tables, path, column):
    """Grouped bars of mean value per loop label.

    'tables' maps a series name (truth, model names) to motif_aggregate output.
    """
    labels = [lab for lab in LOOP_LABELS if any(lab in t for t in tables.values())]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(labels)), 4))
    width = 0.8 / max(len(tables), 1)
    x = np.arange(len(labels))
    for i, (name, table) in enumerate(tables.items()):
        means = [table[lab][0] if lab in table else np.nan for lab in labels]
        ax.bar(x + i * width, means, width=width, label=name)
    ax.set_xticks(x + width * (len(tables) - 1) / 2)
    ax.set_xticklabels(labels)
    ax.set_xlabel("loop type")
    ax.set_ylabel(f"mean {column}")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_rate_scatter(table, path, column):
    "Predicted window-summed rate against measured rate, with error bars."
    fig, ax = plt.subplots(figsize=(5, 5))
    predicted = [row["predicted_rate"] for row in table]
    measured = [row["measured_rate"] for row in table]
    stderr = [row["rate_stderr"] for row in table]
    ax.errorbar(predicted, measured, yerr=stderr, fmt="o", markersize=4, capsize=2)
    ax.set_xlabel(f"predicted rate (summed {column})")
    ax.set_ylabel("measured rate")
    _save(fig, path)
