"""Seed label sets: from script lists or keyword search, then pruning.

Labels are chosen at script level and mapped onto the script's snippets.
Generic functions that every script shares end up labeled too, so labels
whose neighbourhood covers a large share of the dataset are pruned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distance import DistanceEngine
from .errors import ConfigError
from .ingest import CallRecord, clean_script_url
from .snippets import GroupingOptions, SnippetMatrix, script_id

logger = logging.getLogger(__name__)

PROVENANCES = ("heuristic_list", "keyword", "external_file")
DEFAULT_PRUNE_THRESHOLD = 0.2


@dataclass(frozen=True)
class LabelSet:
    snippet_rows: frozenset[int]
    provenance: str
    pruned_rows: frozenset[int] = frozenset()
    prune_threshold: float | None = None
    distance_threshold_used: float | None = None
    scripts: frozenset[str] = frozenset()
    missing_scripts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown label provenance {self.provenance!r}")
        if self.snippet_rows & self.pruned_rows:
            raise ValueError("a row cannot be both labeled and pruned")

    @property
    def rows(self) -> np.ndarray:
        return np.array(sorted(self.snippet_rows), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.snippet_rows)


def keyword_label(records: Iterable[CallRecord], keyword: str, options: GroupingOptions | None = None) -> set[str]:
    """Clean URLs of scripts whose script_url or func_name contains ``keyword``
    (case-insensitive)."""
    if not keyword:
        raise ConfigError("keyword must be non-empty")
    options = options or GroupingOptions()
    needle = keyword.lower()
    found: set[str] = set()
    for r in records:
        if needle in r.script_url.lower() or needle in r.func_name.lower():
            url = script_id(r, options)
            if url is not None:
                found.add(url)
    return found


def scripts_to_snippets(scripts: Iterable[str], matrix: SnippetMatrix, provenance: str = "external_file") -> LabelSet:
    scripts = frozenset(scripts)
    rows: set[int] = set()
    missing = []
    for url in sorted(scripts):
        hit = matrix.script_index.get(url)
        if hit is None:
            missing.append(url)
        else:
            rows |= hit
    if missing:
        logger.info("%d labeled scripts have no snippets in the matrix", len(missing))
    return LabelSet(frozenset(rows), provenance, scripts=scripts, missing_scripts=tuple(missing))


def label_proximity(matrix: SnippetMatrix, label_rows: Sequence[int], distance_thresholds: Sequence[float],
                    engine: DistanceEngine | None = None) -> dict[float, np.ndarray]:
    """For each threshold, the share of all snippets within it of each label.

    Arrays follow the order of ``label_rows``.
    """
    engine = engine or DistanceEngine()
    label_rows = np.asarray(label_rows, dtype=np.int64)
    counts = {d: np.zeros(len(label_rows), dtype=np.int64) for d in distance_thresholds}
    if matrix.n == 0 or len(label_rows) == 0:
        return {d: c.astype(np.float64) for d, c in counts.items()}
    for block in engine.tiles(matrix.data, matrix.data[label_rows]):
        sl = slice(block.cols.start, block.cols.stop)
        for d in distance_thresholds:
            counts[d][sl] += (block.values <= d).sum(axis=0)
    return {d: c / matrix.n for d, c in counts.items()}


def prune_labels(matrix: SnippetMatrix, labels: LabelSet, distance_threshold: float,
                 prune_threshold: float = DEFAULT_PRUNE_THRESHOLD, engine: DistanceEngine | None = None,
                 proximity: np.ndarray | None = None) -> tuple[LabelSet, dict[int, float]]:
    """Drop labels within ``distance_threshold`` of at least ``prune_threshold``
    of all snippets.  Returns the pruned set and each label's proportion."""
    if not 0 < prune_threshold <= 1:
        raise ConfigError("prune threshold must lie in (0, 1]")
    rows = sorted(labels.snippet_rows | labels.pruned_rows)
    if not rows:
        logger.warning("pruning an empty label set")
        return replace(labels, prune_threshold=prune_threshold, distance_threshold_used=distance_threshold), {}
    if proximity is None:
        proximity = label_proximity(matrix, rows, [distance_threshold], engine)[distance_threshold]
    share = {r: float(p) for r, p in zip(rows, proximity)}
    pruned = frozenset(r for r in rows if share[r] >= prune_threshold)
    kept = frozenset(rows) - pruned
    logger.info("pruned %d of %d labels at d=%g", len(pruned), len(rows), distance_threshold)
    return replace(labels, snippet_rows=kept, pruned_rows=pruned, prune_threshold=prune_threshold,
                   distance_threshold_used=distance_threshold), share


def read_label_file(path: str | Path) -> set[str]:
    """One script URL per line; blank lines and ``#`` comments ignored."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read label file {path}: {exc}") from exc
    urls = set()
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            urls.add(clean_script_url(line))
    return urls


def write_label_file(path: str | Path, scripts: Iterable[str], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for url in sorted(scripts):
            fh.write(url + "\n")


def write_proximity(path: str | Path, share: dict[int, float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row_id\tproportion\n")
        for r in sorted(share):
            fh.write(f"{r}\t{share[r]:.17g}\n")


def read_proximity(path: str | Path) -> dict[int, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            r, p = line.rstrip("\n").split("\t")
            out[int(r)] = float(p)
    return out
