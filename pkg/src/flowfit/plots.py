"""Figure rendering for CLI reports.

Every heavy command writes its delimited output first; these helpers then
render a companion PNG next to it. Matplotlib is imported lazily with the
Agg backend so library users never touch a display.
"""

import numpy as np

__all__ = [
    "save_trace_figure",
    "save_cv_heatmap",
    "save_prediction_figure",
    "save_noisy_study_figure",
    "save_misspec_study_figure",
]


def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def save_trace_figure(trace, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(trace) + 1), trace, marker="o", ms=3)
    ax.set_xlabel("EM iteration")
    ax.set_ylabel("penalized objective")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_cv_heatmap(scores, lambda_alphas, lambda_betas, winner, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 5))
    masked = np.ma.masked_invalid(scores)
    im = ax.imshow(masked, cmap="coolwarm", aspect="auto")
    ax.set_xticks(range(len(lambda_betas)))
    ax.set_xticklabels([f"{v:.2g}" for v in lambda_betas], rotation=45)
    ax.set_yticks(range(len(lambda_alphas)))
    ax.set_yticklabels([f"{v:.2g}" for v in lambda_alphas])
    ax.set_xlabel("lambda_beta")
    ax.set_ylabel("lambda_alpha")
    ax.scatter([winner[1]], [winner[0]], marker="s", s=120,
               facecolors="none", edgecolors="k", linewidths=2)
    fig.colorbar(im, ax=ax, label="CV score")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_prediction_figure(rows, dim, num_clusters, path) -> None:
    """Cluster means over time with probability-scaled line width and a
    +-2 sd band, one panel per cytogram axis."""
    plt = _plt()
    times = sorted({r["time"] for r in rows})
    fig, axes = plt.subplots(dim, 1, figsize=(8, 3 * dim), squeeze=False)
    cmap = plt.get_cmap("tab10")
    for a in range(dim):
        ax = axes[a, 0]
        for k in range(1, num_clusters + 1):
            sub = [r for r in rows if r["cluster"] == k]
            sub.sort(key=lambda r: r["time"])
            t = [r["time"] for r in sub]
            mean = [r[f"mean_y{a + 1}"] for r in sub]
            lo = [r[f"lo_y{a + 1}"] for r in sub]
            hi = [r[f"hi_y{a + 1}"] for r in sub]
            prob = np.array([r["probability"] for r in sub])
            color = cmap((k - 1) % 10)
            ax.fill_between(t, lo, hi, color=color, alpha=0.15, lw=0)
            for i in range(len(t) - 1):
                ax.plot(t[i:i + 2], mean[i:i + 2], color=color,
                        lw=0.5 + 4.0 * prob[i])
            ax.plot([], [], color=color, label=f"cluster {k}")
        ax.set_xlim(min(times), max(times))
        ax.set_xlabel("time")
        ax.set_ylabel(f"y{a + 1}")
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_noisy_study_figure(summary, path) -> None:
    plt = _plt()
    ok = [s for s in summary if "mean_test_nll" in s]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    sig = [s["sigma_add"] for s in ok]
    ax1.errorbar(sig, [s["mean_test_nll"] for s in ok],
                 yerr=[2 * s["se_test_nll"] for s in ok], marker="o")
    ax1.set_xlabel("covariate noise sd")
    ax1.set_ylabel("held-out NLL per unit multiplicity")
    ax2.plot(sig, [s["sunlight_rate_major"] for s in ok], "k-o",
             label="sunlight (major cluster)")
    ax2.plot(sig, [s["sunlight_rate_minor"] for s in ok], "k--o",
             label="sunlight (minor cluster)")
    ax2.plot(sig, [s["spurious_rate_major"] for s in ok], "r-o",
             label="spurious mean (major)")
    ax2.plot(sig, [s["spurious_rate_minor"] for s in ok], "r--o",
             label="spurious mean (minor)")
    ax2.set_xlabel("covariate noise sd")
    ax2.set_ylabel("selection rate")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_misspec_study_figure(summary, path) -> None:
    plt = _plt()
    ok = [s for s in summary if "mean_test_nll" in s]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    Ks = [s["K"] for s in ok]
    ax1.errorbar(Ks, [s["mean_test_nll"] for s in ok],
                 yerr=[2 * s["se_test_nll"] for s in ok], marker="o",
                 label="fitted")
    ax1.plot(Ks, [s["mean_truth_nll"] for s in ok], "k--", label="truth")
    ax1.set_xlabel("number of clusters K")
    ax1.set_ylabel("held-out NLL per unit multiplicity")
    ax1.legend(fontsize=8)
    ax2.bar(Ks, [s["mean_near_zero"] for s in ok], color="tab:gray")
    ax2.set_xlabel("number of clusters K")
    ax2.set_ylabel("mean near-zero clusters")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
