"""Characterizing scored scripts: reference hits, known collections, review samples."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .heuristics import TECHNIQUES, HeuristicReport
from .ingest import CallRecord
from .snippets import GroupingOptions, SnippetMatrix, script_id

logger = logging.getLogger(__name__)

CRAWL_USER_AGENT = "Mozilla/5.0 (X11; Linux x86_64; rv:52.0) Gecko/20100101 Firefox/52.0"
MODERNIZR_FIXED_VALUES = ('{"modernizr":"modernizr"}', "{}", "")

# highest precedence first
COLLECTIONS = ("akam", "hs", "device_class", "sadbundle", "modernizr", "charting")
UNCHARACTERIZED = "uncharacterized"
FINGERPRINTING_COLLECTIONS = ("akam", "hs", "device_class")
TABLE_ORDER = ("akam", "hs", "device_class", "charting", "modernizr", "sadbundle")

DEVICE_CLASS_WINDOW = 500
_VIBRATE = "vibrate"
_COMPOSITE = "globalCompositeOperation"

REVIEW_COLUMNS = ("fingerprinting", "fingerprinting_type", "tracking", "benign_canvas")


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def modernizr_values(user_agent: str = CRAWL_USER_AGENT) -> frozenset[str]:
    return frozenset((user_agent,) + MODERNIZR_FIXED_VALUES)


def detect_device_class(script_text: str) -> bool:
    """True when some "vibrate" has "globalCompositeOperation" inside the 500
    characters before it."""
    start = script_text.find(_VIBRATE)
    while start != -1:
        window = script_text[max(0, start - DEVICE_CLASS_WINDOW):start]
        if _COMPOSITE in window:
            return True
        start = script_text.find(_VIBRATE, start + 1)
    return False


def _url_tag(url: str) -> str | None:
    if "/akam/" in url:
        return "akam"
    if "hs-analytics" in url:
        return "hs"
    return None


def script_values(records: Iterable[CallRecord], options: GroupingOptions | None = None) -> dict[str, set[str]]:
    options = options or GroupingOptions()
    out: dict[str, set[str]] = defaultdict(set)
    for r in records:
        if r.value is None:
            continue
        url = script_id(r, options)
        if url is not None:
            out[url].add(r.value)
    return out


def tag_collections(scripts: Iterable[str], records: Iterable[CallRecord] | Mapping[str, set[str]],
                    modernizr_value_set: Iterable[str] | None = None,
                    script_texts: Mapping[str, str] | None = None,
                    options: GroupingOptions | None = None) -> dict[str, str]:
    """One collection tag per script, in fixed precedence order."""
    expected = frozenset(modernizr_value_set) if modernizr_value_set is not None else modernizr_values()
    values = records if isinstance(records, Mapping) else script_values(records, options)
    if script_texts is None:
        logger.info("no script text corpus; device_class tagging disabled")
    tags = {}
    for url in sorted(set(scripts)):
        tag = _url_tag(url)
        if tag is None and script_texts is not None and url in script_texts:
            if detect_device_class(script_texts[url]):
                tag = "device_class"
        if tag is None and "tpc.googlesyndication.com/sadbundle/" in url:
            tag = "sadbundle"
        if tag is None and values.get(url) == expected:
            tag = "modernizr"
        if tag is None and ("chart" in url or "jqplot" in url):
            tag = "charting"
        tags[url] = tag or UNCHARACTERIZED
    return tags


def load_script_corpus(directory: str | Path) -> dict[str, str]:
    """Read ``index.tsv`` (clean_script_url, path) and the text files it names."""
    directory = Path(directory)
    corpus = {}
    with open(directory / "index.tsv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            corpus[row["clean_script_url"]] = (directory / row["path"]).read_text(encoding="utf-8", errors="replace")
    return corpus


def write_tags(path: str | Path, tags: Mapping[str, str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clean_script_url", "collection"])
        w.writerows(sorted(tags.items()))


@dataclass
class CharacterizationTable:
    thresholds: list[int]
    dataset_size: int
    reference_size: int
    rows: list[dict]

    def uncharacterized(self, threshold: int) -> list[str]:
        for row in self.rows:
            if row["threshold"] == threshold:
                return row["uncharacterized_scripts"]
        raise KeyError(threshold)

    def to_json(self) -> dict:
        return {
            "dataset_size": self.dataset_size,
            "reference_size": self.reference_size,
            "thresholds": self.thresholds,
            "rows": [{k: v for k, v in row.items() if k != "uncharacterized_scripts"} for row in self.rows],
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def to_markdown(self) -> str:
        def fmt(v, pct=False):
            return f"{100 * v:.1f}%" if pct else f"{v:,}"

        head = "| | Score | " + " | ".join(f"{t:,}" for t in self.thresholds) + " |"
        sep = "|---|---|" + "---:|" * len(self.thresholds)
        lines = [head, sep]

        def line(group, label, key, pct=False):
            cells = " | ".join(fmt(row[key], pct) for row in self.rows)
            lines.append(f"| {group} | {label} | {cells} |")

        line("", "n scripts over score", "n_over")
        line("", "% of dataset", "pct_dataset", pct=True)
        line("pre-characterize", "n in heuristic list", "n_reference")
        line("", "% of heuristic list", "pct_reference", pct=True)
        for name in TABLE_ORDER:
            group = "fingerprinting" if name in FINGERPRINTING_COLLECTIONS else "benign use of canvas"
            line(group, name, name)
        line("remaining uncharacterized", "", "n_uncharacterized")
        return "\n".join(lines) + "\n"

    def write_markdown(self, path: str | Path) -> None:
        Path(path).write_text(self.to_markdown(), encoding="utf-8")


def characterize(scores: Mapping[str, int], reference: Iterable[str], tags: Mapping[str, str],
                 thresholds: Sequence[int], dataset_size: int | None = None) -> CharacterizationTable:
    """Per score threshold: scripts over it, reference hits, collection counts
    among the non-reference scripts, and the uncharacterized remainder."""
    reference = set(reference)
    size = dataset_size if dataset_size is not None else len(scores)
    rows = []
    for t in sorted(thresholds):
        over = {u for u, s in scores.items() if s >= t}
        hits = over & reference
        rest = over - reference
        row = {
            "threshold": t,
            "n_over": len(over),
            "pct_dataset": len(over) / size if size else 0.0,
            "n_reference": len(hits),
            "pct_reference": len(hits) / len(reference) if reference else 0.0,
        }
        characterized = 0
        for name in COLLECTIONS:
            row[name] = sum(1 for u in rest if tags.get(u) == name)
            characterized += row[name]
        remaining = sorted(u for u in rest if tags.get(u, UNCHARACTERIZED) == UNCHARACTERIZED)
        row["n_uncharacterized"] = len(over) - len(hits) - characterized
        row["uncharacterized_scripts"] = remaining
        rows.append(row)
    return CharacterizationTable(sorted(thresholds), size, len(reference), rows)


def sample_for_review(uncharacterized: Sequence[str], n: int, seed: int, scores: Mapping[str, int] | None = None,
                      matrix: SnippetMatrix | None = None) -> list[dict]:
    """Seeded uniform sample without replacement, as blank review rows."""
    population = sorted(set(uncharacterized))
    if n > len(population):
        logger.warning("review sample of %d requested from %d scripts; returning all", n, len(population))
        n = len(population)
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(population), size=n, replace=False).tolist()) if n else []
    rows = []
    for i in picked:
        url = population[i]
        keys = ""
        if matrix is not None:
            keys = ";".join(sorted(matrix.keys[r].render() for r in matrix.script_index.get(url, ())))
        row = {"clean_script_url": url, "score": scores.get(url, "") if scores else "", "snippet_keys": keys}
        row.update(dict.fromkeys(REVIEW_COLUMNS, ""))
        rows.append(row)
    return rows


def write_review_manifest(path: str | Path, rows: Sequence[dict]) -> None:
    columns = ["clean_script_url", "score", "snippet_keys", *REVIEW_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def variant_diff(report: HeuristicReport, clean: bool = False) -> list[dict]:
    """Per technique: script counts for each rule family and their Jaccard."""
    rows = []
    for technique in TECHNIQUES:
        en = report.scripts(technique, "EN2016", clean)
        das = report.scripts(technique, "DAS2018", clean)
        rows.append({
            "technique": technique,
            "en2016": len(en),
            "das2018": len(das),
            "both": len(en & das),
            "either": len(en | das),
            "jaccard": jaccard(en, das),
        })
    return rows


def write_variant_diff(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["technique", "en2016", "das2018", "both", "either", "jaccard"],
                           lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({**row, "jaccard": f"{row['jaccard']:.6f}"})
