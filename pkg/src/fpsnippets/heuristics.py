"""Rule-based fingerprinting detectors used to build seed and reference lists.

Two published rule families are implemented side by side: ``EN2016``
(Englehardt & Narayanan, 2016) and ``DAS2018`` (Das et al., 2018).  They
agree on canvas-font and WebRTC and differ on canvas and audio.  Symbol
names and numeric limits come from a JSON table so they can be audited
and swapped without code changes.
"""

from __future__ import annotations

import csv
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, NotEvaluable
from .ingest import CallRecord, clean_script_url

TECHNIQUES = ("canvas", "canvas_font", "webrtc", "audio")
VARIANTS = ("EN2016", "DAS2018")

_FONT_FAMILY = re.compile(
    r"^\s*(?:(?:italic|oblique|normal|bold|bolder|lighter|small-caps|\d{3})\s+)*"
    r"[\d.]+(?:px|pt|em|rem|ex|ch|vw|vh|%)(?:\s*/\s*\S+)?\s+(?P<family>.+?)\s*$",
    re.IGNORECASE,
)


def load_heuristic_config(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("fpsnippets").joinpath("data").joinpath("heuristics.json").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read heuristic config {path}: {exc}") from exc
    config = json.loads(text)
    missing = [t for t in TECHNIQUES if t not in config]
    if missing:
        raise ConfigError("heuristic config lacks sections: " + ", ".join(missing))
    if len(set(config["audio"]["das2018_symbols"])) != 5:
        raise ConfigError("audio.das2018_symbols must list five distinct symbols")
    return config


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown heuristic variant {variant!r}")


def _written_text(arguments: str) -> str:
    try:
        args = json.loads(arguments)
    except (json.JSONDecodeError, TypeError):
        return arguments
    if isinstance(args, list):
        return str(args[0]) if args else ""
    if isinstance(args, dict):
        # OpenWPM sometimes serializes argument lists as {"0": ..., "1": ...}
        return str(args.get("0", ""))
    return str(args)


def _px(value: str | None) -> float | None:
    if not value:
        return None
    m = re.match(r"\s*(\d+(?:\.\d+)?)", value)
    return float(m.group(1)) if m else None


def heuristic_canvas(records: Sequence[CallRecord], variant: str, config: Mapping | None = None) -> bool:
    _check_variant(variant)
    cfg = (config or load_heuristic_config())["canvas"]
    writes = [r for r in records if r.symbol in cfg["text_symbols"]]
    if any(r.arguments is None for r in writes):
        raise NotEvaluable("canvas text writes lack arguments")
    if not any(r.symbol in cfg["read_symbols"] for r in records):
        return False
    texts = [_written_text(r.arguments) for r in writes]
    if variant == "DAS2018":
        texts = ["".join(ch for ch in t if ord(ch) < 128) for t in texts]
    longest = max((len(t) for t in texts), default=0)
    if variant == "DAS2018":
        return longest >= cfg["min_text_length"]

    styles = [r for r in records if r.symbol in cfg["style_symbols"] and r.operation == "set"]
    if any(r.value is None for r in styles):
        raise NotEvaluable("canvas style writes lack values")
    n_styles = len({r.value for r in styles})
    widths = [_px(r.value) for r in records if r.symbol in cfg["width_symbols"] and r.operation == "set"]
    heights = [_px(r.value) for r in records if r.symbol in cfg["height_symbols"] and r.operation == "set"]
    width = max((w for w in widths if w is not None), default=cfg["default_width"])
    height = max((h for h in heights if h is not None), default=cfg["default_height"])
    if width <= cfg["min_dimension_px"] or height <= cfg["min_dimension_px"]:
        return False
    return longest >= cfg["min_text_length"] or n_styles >= cfg["min_styles"]


def font_family(value: str) -> str:
    m = _FONT_FAMILY.match(value)
    return m.group("family").strip().strip("'\"") if m else value


def heuristic_canvas_font(records: Sequence[CallRecord], variant: str, config: Mapping | None = None) -> bool:
    _check_variant(variant)
    cfg = (config or load_heuristic_config())["canvas_font"]
    fonts = [r for r in records if r.symbol == cfg["font_symbol"] and r.operation == "set"]
    if any(r.value is None for r in fonts):
        raise NotEvaluable("canvas font writes lack values")
    if variant == "EN2016":
        distinct = {font_family(r.value) for r in fonts}
    else:
        distinct = {r.value for r in fonts}
    if len(distinct) < cfg["min_distinct_fonts"]:
        return False
    measures = sum(1 for r in records if r.symbol == cfg["measure_symbol"])
    return measures >= cfg["min_measure_calls"]


def heuristic_webrtc(records: Sequence[CallRecord], config: Mapping | None = None) -> bool:
    cfg = (config or load_heuristic_config())["webrtc"]
    symbols = {r.symbol for r in records}
    return bool(symbols & set(cfg["create_symbols"])) and bool(symbols & set(cfg["access_symbols"]))


def heuristic_audio(records: Sequence[CallRecord], variant: str, config: Mapping | None = None) -> bool:
    _check_variant(variant)
    cfg = (config or load_heuristic_config())["audio"]
    symbols = {r.symbol for r in records}
    if variant == "EN2016":
        return cfg["en2016_symbol"] in symbols
    return set(cfg["das2018_symbols"]) <= symbols


@dataclass(frozen=True, order=True)
class HeuristicFlag:
    script: str  # raw script_url as recorded; cleaned when compiling the list
    technique: str
    variant: str


@dataclass
class HeuristicReport:
    flags: set[HeuristicFlag] = field(default_factory=set)
    not_evaluable: set[tuple[str, str, str]] = field(default_factory=set)
    scripts_seen: int = 0

    def scripts(self, technique: str, variant: str, clean: bool = False) -> set[str]:
        urls = {f.script for f in self.flags if f.technique == technique and f.variant == variant}
        return {clean_script_url(u) for u in urls} if clean else urls


def run_heuristics(records: Iterable[CallRecord], variants: Sequence[str] = VARIANTS,
                   config: Mapping | None = None) -> HeuristicReport:
    """Evaluate every technique and variant per raw script_url."""
    config = config or load_heuristic_config()
    by_script: dict[str, list[CallRecord]] = defaultdict(list)
    for r in records:
        if r.script_url:
            by_script[r.script_url].append(r)
    report = HeuristicReport(scripts_seen=len(by_script))
    for url in sorted(by_script):
        trace = by_script[url]
        for variant in variants:
            checks = {
                "canvas": lambda: heuristic_canvas(trace, variant, config),
                "canvas_font": lambda: heuristic_canvas_font(trace, variant, config),
                "webrtc": lambda: heuristic_webrtc(trace, config),
                "audio": lambda: heuristic_audio(trace, variant, config),
            }
            for technique, check in checks.items():
                try:
                    hit = check()
                except NotEvaluable:
                    report.not_evaluable.add((url, technique, variant))
                    continue
                if hit:
                    report.flags.add(HeuristicFlag(url, technique, variant))
    return report


def compile_heuristic_list(flags: Iterable[HeuristicFlag], variant: str | None = None
                           ) -> list[tuple[str, frozenset[str]]]:
    """Clean and deduplicate flagged URLs: [(clean_url, techniques)] sorted by URL."""
    merged: dict[str, set[str]] = defaultdict(set)
    for f in flags:
        if variant is None or f.variant == variant:
            merged[clean_script_url(f.script)].add(f.technique)
    return [(url, frozenset(merged[url])) for url in sorted(merged)]


def technique_breakdown(entries: Iterable[tuple[str, frozenset[str]]]) -> dict[str, int]:
    counts = dict.fromkeys(TECHNIQUES, 0)
    for _, techniques in entries:
        for t in techniques:
            counts[t] = counts.get(t, 0) + 1
    return counts


def write_heuristic_csv(path: str | Path, flags: Iterable[HeuristicFlag]) -> None:
    rows = sorted({(clean_script_url(f.script), f.technique, f.variant) for f in flags})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["clean_script_url", "technique", "variant"])
        w.writerows(rows)


def read_heuristic_csv(path: str | Path) -> list[tuple[str, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["clean_script_url"], r["technique"], r["variant"]) for r in csv.DictReader(fh)]
