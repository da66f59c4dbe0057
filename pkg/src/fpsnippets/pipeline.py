"""Resumable pipeline stages over a single output directory.

Each stage writes into ``<out>/<stage>/``.  Outputs are built in a temporary
sibling directory and renamed into place, so a killed stage never leaves a
partial result.  ``stage.json`` records a fingerprint of the settings and
upstream fingerprints the stage consumed; a rerun with the same fingerprint
is skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import plotting
from .distance import DEFAULT_BLOCK_COLS, DEFAULT_BLOCK_ROWS, DistanceEngine, metric_delta, sample_negatives
from .errors import ConfigError, InvariantError
from .heuristics import (TECHNIQUES, compile_heuristic_list, load_heuristic_config, run_heuristics,
                         write_heuristic_csv)
from .ingest import ParseStats, read_call_records, write_call_records
from .labeling import (DEFAULT_PRUNE_THRESHOLD, keyword_label, prune_labels, read_label_file,
                       scripts_to_snippets, write_label_file, write_proximity)
from .reporting import (CRAWL_USER_AGENT, characterize, load_script_corpus, modernizr_values,
                        sample_for_review, tag_collections, variant_diff, write_review_manifest, write_tags,
                        write_variant_diff)
from .scoring import (DEFAULT_MIN_RANK, ScoreTable, neighbor_counts, rank_and_curves, read_scores, script_scores,
                      select_distance_threshold)
from .snippets import GroupingOptions, SnippetMatrix, build_snippet_matrix, normalize_rows

logger = logging.getLogger(__name__)

STAGES = ("ingest", "snippets", "label", "threshold_select", "prune", "score", "report",
          "metric_delta", "variant_diff")

DEPENDENCIES = {
    "ingest": (),
    "snippets": ("ingest",),
    "label": ("ingest", "snippets"),
    "threshold_select": ("snippets", "label"),
    "prune": ("snippets", "label", "threshold_select"),
    "score": ("snippets", "label", "prune"),
    "report": ("ingest", "snippets", "label", "score"),
    "metric_delta": ("snippets", "label"),
    "variant_diff": ("ingest",),
}

DEFAULT_DISTANCE_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 11))
DELTA_METRICS = ("chebyshev", "euclidean", "cityblock", "cosine")

# settings that change how fast a stage runs, never what it writes
EXECUTION_FIELDS = ("workers", "block_rows", "block_cols", "out")


@dataclass
class PipelineConfig:
    input: str | None = None
    format: str | None = None
    strip_www: bool = True
    inline: str = "skip"
    metric: str = "chebyshev"
    distance_thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_DISTANCE_THRESHOLDS))
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD
    min_rank: int = DEFAULT_MIN_RANK
    labels: str = "heuristic"
    reference: str = "heuristic"
    heuristic_config: str | None = None
    score_thresholds: list[int] = field(default_factory=list)
    review_n: int = 103
    review_threshold: int | None = None
    user_agent: str = CRAWL_USER_AGENT
    script_corpus: str | None = None
    delta_metrics: list[str] = field(default_factory=lambda: list(DELTA_METRICS))
    delta_bins: int = 50
    seed: int = 0
    block_rows: int = DEFAULT_BLOCK_ROWS
    block_cols: int = DEFAULT_BLOCK_COLS
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        self.distance_thresholds = sorted({float(d) for d in self.distance_thresholds})
        self.score_thresholds = sorted({int(t) for t in self.score_thresholds})
        if not self.distance_thresholds or any(d < 0 for d in self.distance_thresholds):
            raise ConfigError("distance thresholds must be a non-empty list of non-negative numbers")
        if not 0 < self.prune_threshold <= 1:
            raise ConfigError("prune threshold must lie in (0, 1]")
        if self.inline not in ("skip", "bucket"):
            raise ConfigError("inline handling must be 'skip' or 'bucket'")
        if self.review_n < 0:
            raise ConfigError("review sample size must be non-negative")
        parse_label_source(self.labels)
        parse_reference_source(self.reference)

    @property
    def grouping(self) -> GroupingOptions:
        return GroupingOptions(strip_www=self.strip_www, inline=self.inline)

    def engine(self, metric: str | None = None) -> DistanceEngine:
        return DistanceEngine(metric or self.metric, self.block_rows, self.block_cols, self.workers)

    def result_settings(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in EXECUTION_FIELDS}

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_label_source(source: str) -> tuple[str, str | None]:
    if source == "heuristic":
        return "heuristic", None
    kind, _, arg = source.partition(":")
    if kind in ("keyword", "file") and arg:
        return kind, arg
    raise ConfigError(f"label source {source!r}: expected heuristic, keyword:<word> or file:<path>")


def parse_reference_source(source: str) -> tuple[str, str | None]:
    if source in ("heuristic", "labels"):
        return source, None
    kind, _, arg = source.partition(":")
    if kind == "file" and arg:
        return kind, arg
    raise ConfigError(f"reference source {source!r}: expected heuristic, labels or file:<path>")


# fingerprints ------------------------------------------------------------

def _digest_file(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _digest_dir(path: str | Path) -> str:
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"script corpus {path} is not a directory")
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(_digest_file(p).encode())
    return h.hexdigest()


def _stage_inputs(stage: str, config: PipelineConfig) -> dict:
    """The settings and external files a stage's outputs depend on."""
    c = config
    if stage == "ingest":
        if not c.input:
            raise ConfigError("no --input given")
        return {"input": _digest_file(c.input), "format": c.format}
    if stage == "snippets":
        return {"strip_www": c.strip_www, "inline": c.inline}
    if stage == "label":
        extra = {"labels": c.labels, "reference": c.reference}
        for source in (parse_label_source(c.labels), parse_reference_source(c.reference)):
            if source[0] == "file":
                extra[f"digest:{source[1]}"] = _digest_file(source[1])
        if c.heuristic_config:
            extra["heuristic_config"] = _digest_file(c.heuristic_config)
        return extra
    if stage == "threshold_select":
        return {"metric": c.metric, "distance_thresholds": c.distance_thresholds,
                "prune_threshold": c.prune_threshold, "min_rank": c.min_rank}
    if stage == "prune":
        return {"metric": c.metric, "prune_threshold": c.prune_threshold}
    if stage == "score":
        return {"metric": c.metric}
    if stage == "report":
        out = {"score_thresholds": c.score_thresholds, "review_n": c.review_n,
               "review_threshold": c.review_threshold, "user_agent": c.user_agent, "seed": c.seed}
        if c.script_corpus:
            out["script_corpus"] = _digest_dir(c.script_corpus)
        return out
    if stage == "metric_delta":
        return {"delta_metrics": c.delta_metrics, "delta_bins": c.delta_bins, "seed": c.seed}
    if stage == "variant_diff":
        return {"heuristic_config": _digest_file(c.heuristic_config) if c.heuristic_config else None}
    raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out)
        self._fingerprints: dict[str, str] = {}
        self._cache: dict[str, object] = {}

    # bookkeeping ---------------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def fingerprint(self, stage: str) -> str:
        if stage not in self._fingerprints:
            upstream = {d: self.fingerprint(d) for d in DEPENDENCIES[stage]}
            self._fingerprints[stage] = _hash({"stage": stage, "inputs": _stage_inputs(stage, self.config),
                                               "upstream": upstream})
        return self._fingerprints[stage]

    def recorded(self, stage: str) -> str | None:
        marker = self.stage_dir(stage) / "stage.json"
        if not marker.exists():
            return None
        return json.loads(marker.read_text(encoding="utf-8")).get("fingerprint")

    def is_current(self, stage: str) -> bool:
        return self.recorded(stage) == self.fingerprint(stage)

    def _require(self, stage: str) -> None:
        for dep in DEPENDENCIES[stage]:
            state = self.recorded(dep)
            if state is None:
                raise ConfigError(f"stage '{stage}' needs stage '{dep}'; run `fpsnippets run {dep}` first")
            if state != self.fingerprint(dep):
                raise ConfigError(f"stage '{dep}' is out of date for this configuration; "
                                  f"run `fpsnippets run {dep}` before '{stage}'")

    def write_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        _atomic_text(self.out / "config.json", json.dumps(self.config.result_settings(), indent=2,
                                                          sort_keys=True) + "\n")
        runtime = {k: getattr(self.config, k) for k in EXECUTION_FIELDS}
        _atomic_text(self.out / "runtime.json", json.dumps(runtime, indent=2, sort_keys=True) + "\n")

    def run(self, stage: str, force: bool = False) -> str:
        """Run one stage. Returns "ran" or "up-to-date"."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        self.write_config()
        self._require(stage)
        if not force and self.is_current(stage):
            logger.info("%s: up to date", stage)
            return "up-to-date"
        started = time.perf_counter()
        logger.info("%s: start", stage)
        tmp = self.out / f".{stage}.tmp-{os.getpid()}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        try:
            summary = _RUNNERS[stage](self, tmp) or {}
            marker = {"stage": stage, "fingerprint": self.fingerprint(stage), "summary": summary}
            (tmp / "stage.json").write_text(json.dumps(marker, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            _swap_into_place(tmp, self.stage_dir(stage))
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        self._cache.pop(stage, None)
        logger.info("%s: done in %.2fs", stage, time.perf_counter() - started)
        return "ran"

    def run_all(self, stages=STAGES, force: bool = False) -> dict[str, str]:
        return {s: self.run(s, force) for s in stages}

    # loaders for persisted outputs ---------------------------------------

    def records(self):
        if "records" not in self._cache:
            self._cache["records"] = read_call_records(self.stage_dir("ingest") / "records.jsonl", "jsonl")
        return self._cache["records"]

    def matrix(self) -> SnippetMatrix:
        if "matrix" not in self._cache:
            m = SnippetMatrix.load(self.stage_dir("snippets") / "matrix")
            if not m.normalized:
                raise InvariantError("persisted snippet matrix is not normalized")
            self._cache["matrix"] = m
        return self._cache["matrix"]

    def label_scripts(self) -> set[str]:
        return read_label_file(self.stage_dir("label") / "labels.txt")

    def reference(self) -> tuple[set[str], dict[str, set[str]]]:
        d = self.stage_dir("label")
        sublists = {}
        for t in TECHNIQUES:
            p = d / f"reference_{t}.txt"
            if p.exists():
                sublists[t] = read_label_file(p)
        return read_label_file(d / "reference.txt"), sublists

    def selected_d(self) -> float:
        data = json.loads((self.stage_dir("threshold_select") / "thresholds.json").read_text(encoding="utf-8"))
        return float(data["selected"])


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _swap_into_place(tmp: Path, final: Path) -> None:
    old = None
    if final.exists():
        old = final.with_name(f".{final.name}.old-{os.getpid()}")
        if old.exists():
            shutil.rmtree(old)
        os.replace(final, old)
    os.replace(tmp, final)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _fmt_d(d: float) -> str:
    return f"{d:g}"


# stage bodies ------------------------------------------------------------

def _run_ingest(p: Pipeline, out: Path) -> dict:
    stats = ParseStats()
    records = read_call_records(p.config.input, p.config.format, stats)
    n = write_call_records(out / "records.jsonl", records)
    (out / "stats.json").write_text(json.dumps(stats.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"records": n, "skipped": stats.skipped}


def _run_snippets(p: Pipeline, out: Path) -> dict:
    raw = build_snippet_matrix(p.records(), p.config.grouping)
    matrix = normalize_rows(raw)
    matrix.save(out / "matrix")
    return {"snippets": matrix.n, "symbols": matrix.s, "scripts": len(matrix.script_index)}


def _heuristics(p: Pipeline):
    config = load_heuristic_config(p.config.heuristic_config)
    return run_heuristics(p.records(), config=config)


def _run_label(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    kind, arg = parse_label_source(cfg.labels)
    ref_kind, ref_arg = parse_reference_source(cfg.reference)
    report = None
    if kind == "heuristic" or ref_kind == "heuristic":
        report = _heuristics(p)
        write_heuristic_csv(out / "heuristics.csv", report.flags)
    if kind == "heuristic":
        scripts = {url for url, _ in compile_heuristic_list(report.flags)}
        provenance = "heuristic_list"
    elif kind == "keyword":
        scripts = keyword_label(p.records(), arg, cfg.grouping)
        provenance = "keyword"
    else:
        scripts = read_label_file(arg)
        provenance = "external_file"
    if ref_kind == "heuristic":
        entries = compile_heuristic_list(report.flags)
        reference = {url for url, _ in entries}
        for t in TECHNIQUES:
            sub = {url for url, techniques in entries if t in techniques}
            write_label_file(out / f"reference_{t}.txt", sub, header=f"heuristic reference, {t}")
    elif ref_kind == "labels":
        reference = set(scripts)
    else:
        reference = read_label_file(ref_arg)
    if not scripts:
        raise ConfigError(f"label source {cfg.labels!r} matched no scripts")
    if not reference:
        raise ConfigError(f"reference source {cfg.reference!r} is empty")
    write_label_file(out / "labels.txt", scripts, header=f"labels ({provenance})")
    write_label_file(out / "reference.txt", reference, header="reference list")
    labels = scripts_to_snippets(scripts, p.matrix(), provenance)
    meta = {"provenance": provenance, "scripts": len(scripts), "snippet_rows": len(labels),
            "missing_scripts": list(labels.missing_scripts), "reference_size": len(reference)}
    (out / "labels.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"label_scripts": len(scripts), "label_rows": len(labels), "reference": len(reference)}


def _label_set(p: Pipeline):
    meta = json.loads((p.stage_dir("label") / "labels.json").read_text(encoding="utf-8"))
    return scripts_to_snippets(p.label_scripts(), p.matrix(), meta["provenance"])


def _run_threshold_select(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    reference, sublists = p.reference()
    sel = select_distance_threshold(p.matrix(), _label_set(p), cfg.distance_thresholds, reference,
                                    cfg.prune_threshold, cfg.engine(), cfg.min_rank, sublists)
    sel.write_json(out / "thresholds.json")
    curves = out / "curves"
    curves.mkdir()
    for d in sel.candidates:
        for name, curve in sel.curves[d].items():
            curve.to_tsv(curves / f"d{_fmt_d(d)}_{name}.tsv")
    plotting.plot_rank_f1(sel, out / "rank_f1.png")
    plotting.plot_proximity(sel.proximity, cfg.prune_threshold, out / "proximity.png")
    return {"selected": sel.best_d, "best_f1": sel.best_f1[sel.best_d]}


def _run_prune(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    d = p.selected_d()
    pruned, share = prune_labels(p.matrix(), _label_set(p), d, cfg.prune_threshold, cfg.engine())
    write_proximity(out / "proximity.tsv", share)
    matrix = p.matrix()
    with open(out / "labels.tsv", "w", encoding="utf-8") as fh:
        fh.write("row_id\tsnippet_key\tstatus\n")
        for r in sorted(pruned.snippet_rows | pruned.pruned_rows):
            status = "pruned" if r in pruned.pruned_rows else "kept"
            fh.write(f"{r}\t{matrix.keys[r].render()}\t{status}\n")
    return {"distance_threshold": d, "kept": len(pruned.snippet_rows), "pruned": len(pruned.pruned_rows)}


def _pruned_label_set(p: Pipeline):
    base = _label_set(p)
    kept, dropped = set(), set()
    with open(p.stage_dir("prune") / "labels.tsv", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            row, _, status = line.rstrip("\n").split("\t")
            (kept if status == "kept" else dropped).add(int(row))
    return replace(base, snippet_rows=frozenset(kept), pruned_rows=frozenset(dropped),
                   prune_threshold=p.config.prune_threshold, distance_threshold_used=p.selected_d())


def _best_rank_score(table: ScoreTable, curve, min_rank: int) -> int:
    """Score at the rank with the highest F1 among ranks >= min_rank."""
    cutoff = max(1, min(min_rank, curve.reference_size))
    sel = np.nonzero(curve.ranks >= cutoff)[0]
    if len(sel) == 0:
        return 0
    k = int(sel[np.argmax(curve.f1[sel])])
    return table.ranking[k][1]


def _run_score(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    matrix = p.matrix()
    labels = _pruned_label_set(p)
    d = p.selected_d()
    counts = neighbor_counts(matrix, labels, d, cfg.engine())
    table = ScoreTable(counts, script_scores(counts, matrix.script_index), d, labels)
    table.write_scores(out / "scores.csv")
    with open(out / "snippet_counts.tsv", "w", encoding="utf-8") as fh:
        fh.write("row_id\tcount\n")
        for r, c in enumerate(counts):
            fh.write(f"{r}\t{int(c)}\n")
    reference, sublists = p.reference()
    curves = rank_and_curves(table.script_scores, reference, sublists)
    for name, curve in curves.items():
        curve.to_tsv(out / f"curves_{name}.tsv")
    best_score = _best_rank_score(table, curves["all"], cfg.min_rank)
    summary = {"distance_threshold": d, "scripts": len(table.script_scores), "best_f1_score": best_score,
               "never_scored": list(curves["all"].missing)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plotting.plot_recall_by_score(table.script_scores, reference, out / "recall_by_score.png", sublists,
                                  mark=best_score)
    return {"scripts": len(table.script_scores), "best_f1_score": best_score}


def _run_report(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    scores = read_scores(p.stage_dir("score") / "scores.csv")
    summary = json.loads((p.stage_dir("score") / "summary.json").read_text(encoding="utf-8"))
    reference, _ = p.reference()
    texts = load_script_corpus(cfg.script_corpus) if cfg.script_corpus else None
    tags = tag_collections(scores, p.records(), modernizr_values(cfg.user_agent), texts, cfg.grouping)
    write_tags(out / "tags.csv", tags)
    thresholds = cfg.score_thresholds or [summary["best_f1_score"]]
    table = characterize(scores, reference, tags, thresholds, len(scores))
    table.write_json(out / "characterization.json")
    table.write_markdown(out / "characterization.md")
    review_at = cfg.review_threshold if cfg.review_threshold is not None else summary["best_f1_score"]
    if review_at not in table.thresholds:
        table_review = characterize(scores, reference, tags, [review_at], len(scores))
    else:
        table_review = table
    rows = sample_for_review(table_review.uncharacterized(review_at), cfg.review_n, cfg.seed, scores, p.matrix())
    write_review_manifest(out / "review_manifest.csv", rows)
    return {"thresholds": table.thresholds, "review_threshold": review_at, "review_rows": len(rows)}


def _run_metric_delta(p: Pipeline, out: Path) -> dict:
    cfg = p.config
    matrix = p.matrix()
    positives = _label_set(p).rows
    negatives = sample_negatives(matrix.n, positives, None, cfg.seed)
    curves = []
    for metric in cfg.delta_metrics:
        curve = metric_delta(positives, negatives, matrix.data, metric, cfg.delta_bins)
        curve.to_tsv(out / f"delta_{metric}.tsv")
        curves.append(curve)
    plotting.plot_metric_delta(curves, out / "metric_delta.png")
    return {"positives": len(positives), "negatives": len(negatives)}


def _run_variant_diff(p: Pipeline, out: Path) -> dict:
    report = _heuristics(p)
    rows = variant_diff(report)
    write_variant_diff(out / "variant_diff.csv", rows)
    write_heuristic_csv(out / "heuristics.csv", report.flags)
    with open(out / "not_evaluable.tsv", "w", encoding="utf-8") as fh:
        fh.write("script_url\ttechnique\tvariant\n")
        for row in sorted(report.not_evaluable):
            fh.write("\t".join(row) + "\n")
    return {r["technique"]: r["jaccard"] for r in rows}


_RUNNERS: dict[str, Callable[[Pipeline, Path], dict]] = {
    "ingest": _run_ingest,
    "snippets": _run_snippets,
    "label": _run_label,
    "threshold_select": _run_threshold_select,
    "prune": _run_prune,
    "score": _run_score,
    "report": _run_report,
    "metric_delta": _run_metric_delta,
    "variant_diff": _run_variant_diff,
}


def run_stage(stage: str, config: PipelineConfig, force: bool = False) -> str:
    return Pipeline(config).run(stage, force)
