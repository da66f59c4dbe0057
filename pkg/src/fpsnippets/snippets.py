"""Snippet grouping and the immutable sparse snippet matrix.

A snippet is the per-symbol call count of one (script domain, script file,
function name) group.  Rows are L1-normalized so every row sums to one.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InvariantError, KeyConflictError, UrlError
from .ingest import CallRecord, UrlParts, clean_script_url, strip_www, url_parts
from .suffixes import SuffixRules, default_rules

logger = logging.getLogger(__name__)

SEP = "||"
INLINE_PREFIX = "inline@"


def _escape(component: str) -> str:
    return component.replace("\\", "\\\\").replace("|", "\\|")


def _unescape_split(rendered: str) -> list[str]:
    parts, buf, i = [], [], 0
    while i < len(rendered):
        ch = rendered[i]
        if ch == "\\" and i + 1 < len(rendered):
            buf.append(rendered[i + 1])
            i += 2
        elif rendered.startswith(SEP, i):
            parts.append("".join(buf))
            buf = []
            i += 2
        else:
            buf.append(ch)
            i += 1
    parts.append("".join(buf))
    return parts


@dataclass(frozen=True, order=True)
class SnippetKey:
    domain: str
    file: str
    func: str

    def render(self) -> str:
        return SEP.join(_escape(c) for c in (self.domain, self.file, self.func))

    @classmethod
    def parse(cls, rendered: str) -> "SnippetKey":
        parts = _unescape_split(rendered)
        if len(parts) != 3:
            raise ValueError(f"not a snippet key: {rendered!r}")
        return cls(*parts)

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class GroupingOptions:
    strip_www: bool = True
    inline: str = "skip"  # "skip" or "bucket"
    suffix_rules: SuffixRules | None = None

    def __post_init__(self):
        if self.inline not in ("skip", "bucket"):
            raise ConfigError(f"inline handling must be 'skip' or 'bucket', not {self.inline!r}")

    @property
    def rules(self) -> SuffixRules:
        return self.suffix_rules or default_rules()

    def as_dict(self) -> dict:
        return {"strip_www": self.strip_www, "inline": self.inline, "suffix_rules": self.rules.version}


def snippet_key(record: CallRecord, parts: UrlParts, strip: bool = True) -> SnippetKey:
    domain = strip_www(parts.fqdn) if strip else parts.fqdn
    return SnippetKey(domain, parts.path_end, record.func_name)


def resolve_script(record: CallRecord, options: GroupingOptions) -> tuple[str, SnippetKey] | None:
    """Clean script URL and snippet key for ``record``.

    Returns None for inline scripts when they are not bucketed.  Raises
    UrlError when no host can be found.
    """
    if record.script_url:
        parts = url_parts(record.script_url, options.rules)
        return clean_script_url(record.script_url), snippet_key(record, parts, options.strip_www)
    if options.inline != "bucket":
        return None
    loc = url_parts(record.location, options.rules)
    domain = INLINE_PREFIX + (strip_www(loc.fqdn) if options.strip_www else loc.fqdn)
    return domain, SnippetKey(domain, "", record.func_name)


def script_id(record: CallRecord, options: GroupingOptions) -> str | None:
    """Clean script URL of a record, or None when it cannot be grouped."""
    try:
        resolved = resolve_script(record, options)
    except UrlError:
        return None
    return resolved[0] if resolved else None


@dataclass
class Tally:
    """Partial key -> symbol counts; shards can be tallied apart and merged."""

    counts: Counter = field(default_factory=Counter)
    scripts: dict = field(default_factory=lambda: defaultdict(set))
    keyed: int = 0
    inline_skipped: int = 0
    bad_url: int = 0

    def add(self, record: CallRecord, options: GroupingOptions) -> None:
        try:
            resolved = resolve_script(record, options)
        except UrlError:
            self.bad_url += 1
            return
        if resolved is None:
            self.inline_skipped += 1
            return
        clean, key = resolved
        self.counts[(key, record.symbol)] += 1
        self.scripts[clean].add(key)
        self.keyed += 1

    def merge(self, other: "Tally") -> "Tally":
        self.counts.update(other.counts)
        for url, keys in other.scripts.items():
            self.scripts[url] |= keys
        self.keyed += other.keyed
        self.inline_skipped += other.inline_skipped
        self.bad_url += other.bad_url
        return self

    def stats(self) -> dict:
        return {"keyed": self.keyed, "inline_skipped": self.inline_skipped, "bad_url": self.bad_url}


def tally_records(records: Iterable[CallRecord], options: GroupingOptions) -> Tally:
    tally = Tally()
    for record in records:
        tally.add(record, options)
    return tally


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class SnippetMatrix:
    vocabulary: tuple[str, ...]
    keys: tuple[SnippetKey, ...]
    data: sp.csr_matrix
    script_index: Mapping[str, frozenset[int]]
    normalized: bool = False
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.data.shape != (len(self.keys), len(self.vocabulary)):
            raise InvariantError(f"matrix shape {self.data.shape} does not match keys/vocabulary")
        _freeze(self.data.data, self.data.indices, self.data.indptr)

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def s(self) -> int:
        return len(self.vocabulary)

    @property
    def scripts(self) -> list[str]:
        return sorted(self.script_index)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.data.indptr[i], self.data.indptr[i + 1]
        return self.data.indices[lo:hi], self.data.data[lo:hi]

    def row_scripts(self) -> list[list[str]]:
        """Inverse of script_index: clean URLs per row id."""
        out: list[list[str]] = [[] for _ in range(self.n)]
        for url in sorted(self.script_index):
            for r in self.script_index[url]:
                out[r].append(url)
        return out

    def key_index(self) -> dict[SnippetKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    # persistence ------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "vocabulary.tsv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["symbol_id", "symbol"])
            w.writerows(enumerate(self.vocabulary))
        row_urls = self.row_scripts()
        with open(d / "keys.tsv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["row_id", "domain", "file", "func", "clean_script_url"])
            for i, key in enumerate(self.keys):
                for url in row_urls[i]:
                    w.writerow([i, key.domain, key.file, key.func, url])
        with open(d / "matrix.tsv", "w", encoding="utf-8") as fh:
            fh.write("row_id\tsymbol_id\tvalue\n")
            fmt = "%d\t%d\t%.17g\n" if self.normalized else "%d\t%d\t%d\n"
            for i in range(self.n):
                cols, vals = self.row(i)
                fh.writelines(fmt % (i, c, v) for c, v in zip(cols.tolist(), vals.tolist()))
        meta = {
            "n": self.n,
            "s": self.s,
            "nnz": int(self.data.nnz),
            "normalized": self.normalized,
            "params": dict(self.params),
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "SnippetMatrix":
        d = Path(directory)
        try:
            meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
            with open(d / "vocabulary.tsv", newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh, delimiter="\t"))[1:]
            vocabulary = tuple(sym for _, sym in rows)
            keys: dict[int, SnippetKey] = {}
            index: dict[str, set[int]] = defaultdict(set)
            with open(d / "keys.tsv", newline="", encoding="utf-8") as fh:
                for row_id, domain, file, func, url in list(csv.reader(fh, delimiter="\t"))[1:]:
                    keys[int(row_id)] = SnippetKey(domain, file, func)
                    index[url].add(int(row_id))
            n, s = meta["n"], meta["s"]
            raw = np.loadtxt(d / "matrix.tsv", delimiter="\t", skiprows=1, ndmin=2,
                             dtype=np.float64 if meta["normalized"] else np.int64)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load snippet matrix from {d}: {exc}") from exc
        if raw.size == 0:
            raw = raw.reshape(0, 3)
        rows_, cols_ = raw[:, 0].astype(np.int64), raw[:, 1].astype(np.int64)
        vals = raw[:, 2]
        data = sp.csr_matrix((vals, (rows_, cols_)), shape=(n, s))
        data.sort_indices()
        return cls(
            vocabulary=vocabulary,
            keys=tuple(keys[i] for i in range(n)),
            data=data,
            script_index={u: frozenset(r) for u, r in sorted(index.items())},
            normalized=bool(meta["normalized"]),
            params=meta.get("params", {}),
        )


def _matrix_from_tally(tally: Tally, vocabulary: list[str], keys: list[SnippetKey], row_offset: int = 0):
    sym_id = {sym: i for i, sym in enumerate(vocabulary)}
    key_id = {k: i for i, k in enumerate(keys)}
    by_row: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for (key, sym), count in tally.counts.items():
        if key in key_id:
            by_row[key_id[key]].append((sym_id[sym], count))
    indptr, indices, values = [0], [], []
    for r in range(len(keys)):
        for c, v in sorted(by_row[r]):
            indices.append(c)
            values.append(v)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(values, dtype=np.int64), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int64)),
        shape=(len(keys), len(vocabulary)),
    )


def build_snippet_matrix(records: Iterable[CallRecord], options: GroupingOptions | None = None,
                         tally: Tally | None = None) -> SnippetMatrix:
    """Raw-count snippet matrix: one row per distinct key, rows in rendered-key order."""
    options = options or GroupingOptions()
    tally = tally if tally is not None else tally_records(records, options)
    keys = sorted({k for k, _ in tally.counts}, key=SnippetKey.render)
    vocabulary = sorted({sym for _, sym in tally.counts})
    data = _matrix_from_tally(tally, vocabulary, keys)
    key_id = {k: i for i, k in enumerate(keys)}
    index = {url: frozenset(key_id[k] for k in ks) for url, ks in sorted(tally.scripts.items())}
    params = {"grouping": options.as_dict(), **tally.stats()}
    return SnippetMatrix(tuple(vocabulary), tuple(keys), data, index, normalized=False, params=params)


def _normalize(data: sp.csr_matrix) -> sp.csr_matrix:
    lengths = np.diff(data.indptr)
    if np.any(lengths == 0):
        raise InvariantError("cannot normalize an empty snippet row")
    sums = np.add.reduceat(data.data, data.indptr[:-1])
    if np.any(sums <= 0):
        raise InvariantError("cannot normalize a snippet row with no positive counts")
    values = data.data.astype(np.float64) / np.repeat(sums.astype(np.float64), lengths)
    return sp.csr_matrix((values, data.indices.copy(), data.indptr.copy()), shape=data.shape)


def normalize_rows(matrix: SnippetMatrix) -> SnippetMatrix:
    if matrix.normalized:
        return matrix
    data = _normalize(matrix.data) if matrix.n else sp.csr_matrix(matrix.data.shape, dtype=np.float64)
    return SnippetMatrix(matrix.vocabulary, matrix.keys, data, matrix.script_index, True, matrix.params)


def append_rows(matrix: SnippetMatrix, new_records: Iterable[CallRecord], options: GroupingOptions | None = None,
                allow_duplicates: bool = False) -> SnippetMatrix:
    """Add snippets for new scripts without touching existing rows.

    A key already present in ``matrix`` raises KeyConflictError unless
    ``allow_duplicates``, in which case the new row gets a suffixed func name.
    """
    if not matrix.normalized:
        raise ConfigError("append_rows needs a normalized matrix")
    options = options or GroupingOptions()
    tally = tally_records(new_records, options)
    if not tally.counts:
        return matrix
    existing = set(matrix.keys)
    renamed: dict[SnippetKey, SnippetKey] = {}
    for key in sorted({k for k, _ in tally.counts}, key=SnippetKey.render):
        if key not in existing:
            renamed[key] = key
            continue
        if not allow_duplicates:
            raise KeyConflictError(f"snippet key {key.render()} already exists in the matrix")
        n = 1
        while SnippetKey(key.domain, key.file, f"{key.func}#dup{n}") in existing:
            n += 1
        renamed[key] = SnippetKey(key.domain, key.file, f"{key.func}#dup{n}")
        existing.add(renamed[key])
    remapped = Tally()
    for (key, sym), count in tally.counts.items():
        remapped.counts[(renamed[key], sym)] += count
    for url, ks in tally.scripts.items():
        remapped.scripts[url] = {renamed[k] for k in ks}

    new_symbols = sorted({sym for _, sym in tally.counts} - set(matrix.vocabulary))
    vocabulary = list(matrix.vocabulary) + new_symbols
    new_keys = [renamed[k] for k in sorted(renamed, key=SnippetKey.render)]
    block = _normalize(_matrix_from_tally(remapped, vocabulary, new_keys))
    old = sp.csr_matrix((matrix.data.data.copy(), matrix.data.indices.copy(), matrix.data.indptr.copy()),
                        shape=(matrix.n, len(vocabulary)))
    data = sp.vstack([old, block], format="csr")
    data.sort_indices()

    index = {u: set(r) for u, r in matrix.script_index.items()}
    for i, key in enumerate(new_keys):
        for url, ks in remapped.scripts.items():
            if key in ks:
                index.setdefault(url, set()).add(matrix.n + i)
    params = dict(matrix.params)
    params["appended_rows"] = params.get("appended_rows", 0) + len(new_keys)
    return SnippetMatrix(
        tuple(vocabulary), matrix.keys + tuple(new_keys), data,
        {u: frozenset(r) for u, r in sorted(index.items())}, True, params,
    )
