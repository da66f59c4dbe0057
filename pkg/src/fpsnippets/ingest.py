"""Reading JS call logs and deriving the URL pieces used for grouping."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

from .errors import ConfigError, UrlError
from .suffixes import SuffixRules, default_rules

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("script_url", "func_name", "symbol", "operation")
OPTIONAL_COLUMNS = ("location", "value", "arguments", "crawl_id")
OPERATIONS = frozenset({"get", "set", "call"})

_SCHEME = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*://")


@dataclass(frozen=True, slots=True)
class CallRecord:
    script_url: str
    func_name: str
    symbol: str
    operation: str
    location: str = ""
    # None means the column was absent from the source, "" means empty
    value: str | None = None
    arguments: str | None = None
    crawl_id: str | None = None


@dataclass
class ParseStats:
    total: int = 0
    parsed: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] += 1

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "parsed": self.parsed,
            "skipped": self.skipped,
            "reasons": dict(sorted(self.reasons.items())),
        }


@dataclass(frozen=True)
class UrlParts:
    fqdn: str
    etld1: str
    path_end: str


def _text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True) if isinstance(value, (dict, list)) else str(value)


def _optional(row: dict, name: str) -> str | None:
    if name not in row:
        return None
    return _text(row[name])


def _make_record(row: dict, stats: ParseStats) -> CallRecord | None:
    if row.get("symbol") is None or row.get("operation") is None:
        stats.skip("missing_field")
        return None
    symbol = _text(row["symbol"]).strip()
    if not symbol:
        stats.skip("empty_symbol")
        return None
    operation = _text(row["operation"]).strip().lower()
    if operation not in OPERATIONS:
        stats.skip("bad_operation")
        return None
    return CallRecord(
        script_url=_text(row.get("script_url")),
        func_name=_text(row.get("func_name")),
        symbol=symbol,
        operation=operation,
        location=_text(row.get("location")),
        value=_optional(row, "value"),
        arguments=_optional(row, "arguments"),
        crawl_id=_optional(row, "crawl_id"),
    )


def _check_columns(columns) -> None:
    missing = [c for c in REQUIRED_COLUMNS if c not in columns]
    if missing:
        raise ConfigError("input is missing required columns: " + ", ".join(missing))


def _parse_csv(text: io.TextIOBase, stats: ParseStats) -> Iterator[CallRecord]:
    reader = csv.DictReader(text)
    if reader.fieldnames is None:
        raise ConfigError("CSV input has no header row")
    _check_columns(reader.fieldnames)
    present = set(reader.fieldnames)
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error:
            stats.total += 1
            stats.skip("csv_error")
            continue
        stats.total += 1
        if None in row:  # more fields than header
            stats.skip("field_count")
            continue
        # DictReader fills short rows with None; keep absent columns absent
        row = {k: v for k, v in row.items() if k in present}
        record = _make_record(row, stats)
        if record is not None:
            stats.parsed += 1
            yield record


def _parse_jsonl(text: io.TextIOBase, stats: ParseStats) -> Iterator[CallRecord]:
    checked = False
    for line in text:
        if not line.strip():
            continue
        stats.total += 1
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            stats.skip("json_error")
            continue
        if not isinstance(row, dict):
            stats.skip("not_an_object")
            continue
        if not checked:
            # the first object fixes the schema; later gaps are row defects
            _check_columns(row.keys())
            checked = True
        if any(c not in row for c in REQUIRED_COLUMNS):
            stats.skip("missing_field")
            continue
        record = _make_record(row, stats)
        if record is not None:
            stats.parsed += 1
            yield record


def parse_call_records(source: BinaryIO, fmt: str, stats: ParseStats | None = None) -> Iterator[CallRecord]:
    """Stream CallRecords from a UTF-8 byte stream in ``jsonl`` or ``csv``.

    Malformed rows are skipped and tallied in ``stats``; a missing required
    column raises ConfigError.
    """
    stats = stats if stats is not None else ParseStats()
    try:
        text = io.TextIOWrapper(source, encoding="utf-8", errors="strict", newline="")
    except (AttributeError, TypeError) as exc:
        raise ConfigError(f"unreadable source: {exc}") from exc
    try:
        if fmt == "csv":
            yield from _parse_csv(text, stats)
        elif fmt == "jsonl":
            yield from _parse_jsonl(text, stats)
        else:
            raise ConfigError(f"unknown input format {fmt!r}; expected jsonl or csv")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"input is not valid UTF-8: {exc}") from exc
    finally:
        text.detach()
    if stats.skipped:
        logger.info("skipped %d malformed rows of %d", stats.skipped, stats.total)


def guess_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    raise ConfigError(f"cannot infer input format from {path}; pass --format")


def read_call_records(path: str | Path, fmt: str | None = None, stats: ParseStats | None = None) -> list[CallRecord]:
    fmt = fmt or guess_format(path)
    try:
        with open(path, "rb") as fh:
            return list(parse_call_records(fh, fmt, stats))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def clean_script_url(url: str) -> str:
    """Strip scheme, query string and fragment; the rest is kept verbatim."""
    cut = len(url)
    for ch in "?#":
        i = url.find(ch)
        if i != -1:
            cut = min(cut, i)
    url = url[:cut]
    while True:
        m = _SCHEME.match(url)
        if not m:
            return url
        url = url[m.end():]


def url_parts(url: str, suffix_rules: SuffixRules | None = None) -> UrlParts:
    cleaned = clean_script_url(url)
    host, _, path = cleaned.partition("/")
    host = host.rsplit("@", 1)[-1]
    if host.startswith("["):
        host = host[: host.find("]") + 1]
    else:
        host = host.split(":", 1)[0]
    host = host.lower().rstrip(".")
    if not host or any(ch.isspace() for ch in host):
        raise UrlError(f"no host in URL {url!r}")
    rules = suffix_rules or default_rules()
    return UrlParts(fqdn=host, etld1=rules.registrable_domain(host), path_end=path.rsplit("/", 1)[-1])


def strip_www(fqdn: str) -> str:
    if fqdn.startswith("www.") and len(fqdn) > 4:
        return fqdn[4:]
    return fqdn


def write_call_records(path: str | Path, records: Iterable[CallRecord]) -> int:
    """Canonical JSONL: one sorted-key object per record, absent columns omitted."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            row = {"script_url": r.script_url, "func_name": r.func_name, "symbol": r.symbol,
                   "operation": r.operation, "location": r.location}
            for name in ("value", "arguments", "crawl_id"):
                v = getattr(r, name)
                if v is not None:
                    row[name] = v
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n
