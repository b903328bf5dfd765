"""Figure rendering for report commands.

Every report that writes delimited output also renders a small matplotlib
figure next to it.  Figures are written through the Agg backend with pinned
metadata so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_margin_histogram(report, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    widths = report.hist_edges[1:] - report.hist_edges[:-1]
    ax.bar(report.hist_edges[:-1], report.hist_counts, width=widths,
           align="edge", color="#4878cf", edgecolor="white")
    ax.axvline(report.tau, color="#d65f5f", linestyle="--", label=f"tau = {report.tau:.3g}")
    ax.set_xlabel("adversarial margin")
    ax.set_ylabel("triplets")
    ax.legend(loc="upper right")
    _finish(fig, path)


def save_noise_bench(rows, path: str) -> None:
    """rows: (kind, snr_db, accuracy) tuples."""
    fig, ax = plt.subplots(figsize=(6, 4))
    kinds = sorted({r[0] for r in rows})
    for kind in kinds:
        pts = sorted((r[1], r[2]) for r in rows if r[0] == kind)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("accuracy")
    ax.invert_xaxis()  # noise grows to the right
    ax.legend()
    _finish(fig, path)


def save_trace(trace, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    iters = [row[0] for row in trace.objectives]
    ax.plot(iters, [row[1] for row in trace.objectives], label="J")
    ax.plot(iters, [row[2] for row in trace.objectives], label="J_lmnn", alpha=0.7)
    ax.plot(iters, [row[3] for row in trace.objectives], label="J_p", alpha=0.7)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.legend()
    _finish(fig, path)


def save_search_trials(trials, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([t.tau for t in trials], [t.mean_accuracy for t in trials],
               c="#4878cf", s=28)
    best = max(trials, key=lambda t: t.mean_accuracy)
    ax.scatter([best.tau], [best.mean_accuracy], c="#d65f5f", s=70, marker="*",
               label="best trial")
    ax.set_xlabel("tau")
    ax.set_ylabel("mean CV accuracy")
    ax.legend()
    _finish(fig, path)
