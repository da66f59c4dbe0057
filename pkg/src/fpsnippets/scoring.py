"""Neighbour counts, script scores, rank curves and threshold selection.

A snippet's count is the number of labeled snippets within distance ``d``
of it (inclusive).  A script's score is the largest count over its
snippets.  Scripts are ranked by score, ties broken by URL.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distance import DistanceEngine
from .labeling import DEFAULT_PRUNE_THRESHOLD, LabelSet, label_proximity, prune_labels
from .snippets import SnippetMatrix

logger = logging.getLogger(__name__)

DEFAULT_MIN_RANK = 50


def neighbor_counts(matrix: SnippetMatrix, labels: LabelSet, d: float, engine: DistanceEngine | None = None
                    ) -> np.ndarray:
    """c(x) for every row, as an int64 array indexed by row id."""
    return neighbor_counts_multi(matrix, {d: labels.rows}, engine)[d]


def neighbor_counts_multi(matrix: SnippetMatrix, label_rows: Mapping[float, Sequence[int]],
                          engine: DistanceEngine | None = None) -> dict[float, np.ndarray]:
    """Counts for several (threshold, label rows) pairs in one distance pass."""
    engine = engine or DistanceEngine()
    counts = {d: np.zeros(matrix.n, dtype=np.int64) for d in label_rows}
    union = np.array(sorted(set().union(*[set(map(int, r)) for r in label_rows.values()])), dtype=np.int64)
    if matrix.n == 0 or len(union) == 0:
        return counts
    position = {int(r): i for i, r in enumerate(union)}
    masks = {}
    for d, rows in label_rows.items():
        m = np.zeros(len(union), dtype=bool)
        m[[position[int(r)] for r in rows]] = True
        masks[d] = m
    for block in engine.tiles(matrix.data, matrix.data[union]):
        cols = slice(block.cols.start, block.cols.stop)
        for d, m in masks.items():
            near = block.values <= d
            counts[d][block.rows.start:block.rows.stop] += near[:, m[cols]].sum(axis=1)
    return counts


def script_scores(counts: np.ndarray, script_index: Mapping[str, Iterable[int]]) -> dict[str, int]:
    """d(r) = max c(x) over the script's snippets."""
    out = {}
    for url, rows in script_index.items():
        rows = list(rows)
        if rows:
            out[url] = int(np.max(counts[rows]))
    return out


def rank_scripts(scores: Mapping[str, int]) -> list[tuple[str, int, int]]:
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(url, score, i + 1) for i, (url, score) in enumerate(ordered)]


@dataclass(frozen=True)
class RankCurve:
    ranks: np.ndarray
    hits: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    reference_size: int
    missing: tuple[str, ...] = ()

    def best_f1(self, min_rank: int = 1) -> float:
        sel = self.ranks >= min_rank
        return float(self.f1[sel].max()) if sel.any() else 0.0

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("rank\tprecision\trecall\tf1\n")
            for k, p, r, f in zip(self.ranks, self.precision, self.recall, self.f1):
                fh.write(f"{k}\t{p:.17g}\t{r:.17g}\t{f:.17g}\n")


def rank_curve(ranking: Sequence[tuple[str, int, int]], reference: Iterable[str]) -> RankCurve:
    reference = set(reference)
    if not reference:
        raise ValueError("reference list is empty")
    urls = [u for u, _, _ in ranking]
    hits = np.cumsum([u in reference for u in urls], dtype=np.int64)
    ranks = np.arange(1, len(urls) + 1, dtype=np.int64)
    precision = hits / np.maximum(ranks, 1)
    recall = hits / len(reference)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    missing = tuple(sorted(reference - set(urls)))
    return RankCurve(ranks, hits, precision, recall, f1, len(reference), missing)


def recall_by_score(scores: Mapping[str, int], reference: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
    """Recall of ``reference`` among scripts scoring at least s, for each distinct s (descending)."""
    reference = set(reference)
    levels = np.array(sorted(set(scores.values()), reverse=True), dtype=np.int64)
    if not reference:
        return levels, np.zeros(len(levels))
    ref_scores = np.array(sorted((scores[u] for u in reference if u in scores)), dtype=np.int64)
    found = len(ref_scores) - np.searchsorted(ref_scores, levels, side="left")
    return levels, found / len(reference)


def rank_and_curves(scores: Mapping[str, int], reference: Iterable[str],
                    sublists: Mapping[str, Iterable[str]] | None = None) -> dict[str, RankCurve]:
    """Rank curve against the full reference (key ``"all"``) and each sub-list."""
    ranking = rank_scripts(scores)
    curves = {"all": rank_curve(ranking, reference)}
    for name, sub in (sublists or {}).items():
        sub = set(sub)
        if sub:
            curves[name] = rank_curve(ranking, sub)
    if curves["all"].missing:
        logger.info("%d reference scripts were never scored", len(curves["all"].missing))
    return curves


@dataclass
class ScoreTable:
    snippet_counts: np.ndarray
    script_scores: dict[str, int]
    distance_threshold: float
    label_set: LabelSet
    ranking: list[tuple[str, int, int]] = field(init=False)

    def __post_init__(self):
        self.ranking = rank_scripts(self.script_scores)

    def write_scores(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clean_script_url", "score", "rank"])
            w.writerows(self.ranking)


def read_scores(path: str | Path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["clean_script_url"]: int(row["score"]) for row in csv.DictReader(fh)}


def score(matrix: SnippetMatrix, labels: LabelSet, d: float, engine: DistanceEngine | None = None) -> ScoreTable:
    counts = neighbor_counts(matrix, labels, d, engine)
    return ScoreTable(counts, script_scores(counts, matrix.script_index), d, labels)


@dataclass
class ThresholdSelection:
    best_d: float
    candidates: list[float]
    best_f1: dict[float, float]
    curves: dict[float, dict[str, RankCurve]]
    pruned: dict[float, LabelSet]
    proximity: dict[float, dict[int, float]]
    scores: dict[float, dict[str, int]]
    min_rank: int

    def to_json(self) -> dict:
        return {
            "candidates": self.candidates,
            "best_f1": {f"{d:g}": self.best_f1[d] for d in self.candidates},
            "labels_kept": {f"{d:g}": len(self.pruned[d]) for d in self.candidates},
            "labels_pruned": {f"{d:g}": len(self.pruned[d].pruned_rows) for d in self.candidates},
            "min_rank": self.min_rank,
            "selected": self.best_d,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def select_distance_threshold(matrix: SnippetMatrix, labels: LabelSet, candidate_ds: Sequence[float],
                              reference: Iterable[str], prune_threshold: float = DEFAULT_PRUNE_THRESHOLD,
                              engine: DistanceEngine | None = None, min_rank: int = DEFAULT_MIN_RANK,
                              sublists: Mapping[str, Iterable[str]] | None = None) -> ThresholdSelection:
    """Prune, count, score and rank at every candidate; keep the best Rank-F1.

    The selection score of a candidate is its largest F1 at ranks of at
    least ``min(min_rank, |reference|)``, since F1 is unstable at the top of
    the ranking.  Ties go to the smaller threshold.
    """
    if not candidate_ds:
        raise ValueError("need at least one candidate distance threshold")
    candidates = sorted(set(float(d) for d in candidate_ds))
    reference = set(reference)
    engine = engine or DistanceEngine()
    all_rows = sorted(labels.snippet_rows | labels.pruned_rows)
    proximity = label_proximity(matrix, all_rows, candidates, engine)
    pruned, shares = {}, {}
    for d in candidates:
        pruned[d], shares[d] = prune_labels(matrix, labels, d, prune_threshold, engine, proximity=proximity[d])
    counts = neighbor_counts_multi(matrix, {d: pruned[d].rows for d in candidates}, engine)
    cutoff = max(1, min(min_rank, len(reference)))
    curves, best, scores = {}, {}, {}
    for d in candidates:
        scores[d] = script_scores(counts[d], matrix.script_index)
        curves[d] = rank_and_curves(scores[d], reference, sublists)
        best[d] = curves[d]["all"].best_f1(cutoff)
        logger.info("d=%g: %d labels kept, best F1 %.4f", d, len(pruned[d]), best[d])
    best_d = max(candidates, key=lambda d: (best[d], -d))
    return ThresholdSelection(best_d, candidates, best, curves, pruned, shares, scores, cutoff)
