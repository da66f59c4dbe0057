"""Report figures. Everything renders off-screen to PNG files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scoring import ThresholdSelection, recall_by_score  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "fpsnippets",
}


def _figure(width=6.0, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    return fig, ax


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no Software/date metadata so reruns produce identical bytes
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_rank_f1(selection: ThresholdSelection, path: str | Path, curve: str = "all") -> Path:
    """F1 against rank, one line per candidate threshold; the selected one dashed."""
    with plt.rc_context(_RC):
        fig, ax = _figure()
        cmap = plt.get_cmap("viridis", max(2, len(selection.candidates)))
        for i, d in enumerate(selection.candidates):
            rc = selection.curves[d][curve]
            style = "--" if d == selection.best_d else "-"
            ax.plot(rc.ranks, rc.f1, style, color=cmap(i), lw=1.2, label=f"d={d:g}")
        ax.axvline(selection.min_rank, color="0.6", lw=0.6, ls=":")
        ax.set_xscale("log")
        ax.set_xlabel("rank")
        ax.set_ylabel("F1")
        ax.set_ylim(0, 1.02)
        ax.set_title(f"Rank F1 by distance threshold (selected d={selection.best_d:g})")
        ax.legend(ncol=2, frameon=False)
        return _save(fig, path)


def plot_recall_by_score(scores: Mapping[str, int], reference: Iterable[str], path: str | Path,
                         sublists: Mapping[str, Iterable[str]] | None = None, mark: int | None = None) -> Path:
    """Recall of the reference list (and sub-lists) among scripts at or above each score."""
    with plt.rc_context(_RC):
        fig, ax = _figure()
        series = {"all": set(reference), **{k: set(v) for k, v in (sublists or {}).items()}}
        for name, ref in series.items():
            if not ref:
                continue
            levels, recall = recall_by_score(scores, ref)
            ax.step(levels, recall, where="post", lw=1.4 if name == "all" else 1.0, label=name)
        if mark is not None:
            ax.axvline(mark, color="0.4", lw=0.8, ls="--")
        ax.invert_xaxis()
        ax.set_xlabel("script score")
        ax.set_ylabel("recall")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_proximity(shares: Mapping[float, Mapping[int, float]], prune_threshold: float, path: str | Path) -> Path:
    """Distribution of the share of the dataset each label is near, per threshold."""
    with plt.rc_context(_RC):
        ds = sorted(shares)
        fig, ax = _figure()
        bins = np.linspace(0, 1, 41)
        for d in ds:
            vals = np.fromiter(shares[d].values(), dtype=float)
            if len(vals):
                ax.hist(vals, bins=bins, histtype="step", lw=1.0, label=f"d={d:g}")
        ax.axvline(prune_threshold, color="k", lw=0.8, ls="--")
        ax.set_yscale("log")
        ax.set_xlabel("share of snippets within d of label")
        ax.set_ylabel("labels")
        if ds:
            ax.legend(ncol=2, frameon=False)
        return _save(fig, path)


def plot_metric_delta(curves: Sequence, path: str | Path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = _figure()
        for c in curves:
            centers = 0.5 * (c.bin_edges[:-1] + c.bin_edges[1:])
            ax.plot(centers, c.delta, lw=1.2, label=c.metric)
        ax.axhline(0, color="0.5", lw=0.6)
        ax.set_xlabel("distance")
        ax.set_ylabel("same-class minus different-class frequency")
        ax.legend(frameon=False)
        return _save(fig, path)
