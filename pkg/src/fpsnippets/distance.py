"""Blocked pairwise distances between sparse snippet rows.

Chebyshev, euclidean and cityblock run through a compiled kernel that only
visits the two rows' supports.  Cosine and jaccard go through scipy's
``cdist`` on densified tiles and are much slower.

Every distance value depends only on its two rows, so tiles can be
computed in any order, by any number of threads, and the values come out
bit-identical.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numba
import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

FAST_METRICS = ("chebyshev", "euclidean", "cityblock")
SLOW_METRICS = ("cosine", "jaccard")
METRICS = FAST_METRICS + SLOW_METRICS
_CODES = {"chebyshev": 0, "euclidean": 1, "cityblock": 2}

DEFAULT_BLOCK_ROWS = 4096
DEFAULT_BLOCK_COLS = 1024


@numba.njit(nogil=True, cache=True)
def _block_kernel(xp, xi, xd, yp, yi, yd, s, code, out):
    # Y rows are scattered into a dense tile; X support is tracked with a
    # boolean mask so coordinates present only in Y are visited once.
    nx = xp.shape[0] - 1
    ny = yp.shape[0] - 1
    ydense = np.zeros((ny, s))
    for c in range(ny):
        for k in range(yp[c], yp[c + 1]):
            ydense[c, yi[k]] = yd[k]
    xmark = np.zeros(s, dtype=np.bool_)
    for r in range(nx):
        for k in range(xp[r], xp[r + 1]):
            xmark[xi[k]] = True
        for c in range(ny):
            yrow = ydense[c]
            acc = 0.0
            if code == 0:
                for k in range(xp[r], xp[r + 1]):
                    d = abs(xd[k] - yrow[xi[k]])
                    if d > acc:
                        acc = d
                for k in range(yp[c], yp[c + 1]):
                    if not xmark[yi[k]]:
                        d = abs(yd[k])
                        if d > acc:
                            acc = d
            else:
                # common + (x-only + y-only): the same bits whichever row is X
                both = 0.0
                xonly = 0.0
                yonly = 0.0
                for k in range(xp[r], xp[r + 1]):
                    yv = yrow[xi[k]]
                    d = abs(xd[k] - yv)
                    if code == 1:
                        d = d * d
                    if yv != 0.0:
                        both += d
                    else:
                        xonly += d
                for k in range(yp[c], yp[c + 1]):
                    if not xmark[yi[k]]:
                        d = abs(yd[k])
                        if code == 1:
                            d = d * d
                        yonly += d
                acc = both + (xonly + yonly)
                if code == 1:
                    acc = np.sqrt(acc)
            out[r, c] = acc
        for k in range(xp[r], xp[r + 1]):
            xmark[xi[k]] = False


def _as_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    if (m.data == 0).any():
        m = m.copy()
        m.eliminate_zeros()
    if not m.has_sorted_indices:
        m = m.sorted_indices()
    return m


def _check(X: sp.csr_matrix, Y: sp.csr_matrix, metric: str) -> None:
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    if X.shape[1] != Y.shape[1]:
        raise DataError(f"vocabulary mismatch: {X.shape[1]} vs {Y.shape[1]} symbols")
    if np.isnan(X.data).any() or np.isnan(Y.data).any():
        raise DataError("NaN in snippet vectors")


@dataclass(frozen=True)
class DistanceBlock:
    rows: range  # row positions in X
    cols: range  # row positions in Y
    values: np.ndarray
    metric: str


def pairwise_distances(X, Y, metric: str = "chebyshev") -> np.ndarray:
    """Dense |X| x |Y| distance array for two sparse row blocks."""
    X, Y = _as_csr(X), _as_csr(Y)
    _check(X, Y, metric)
    return _compute(X, Y, metric)


def _compute(X: sp.csr_matrix, Y: sp.csr_matrix, metric: str) -> np.ndarray:
    out = np.empty((X.shape[0], Y.shape[0]), dtype=np.float64)
    if out.size == 0:
        return out
    if metric in _CODES:
        _block_kernel(X.indptr.astype(np.int64), X.indices.astype(np.int64), X.data,
                      Y.indptr.astype(np.int64), Y.indices.astype(np.int64), Y.data,
                      X.shape[1], _CODES[metric], out)
        return out
    return cdist(X.toarray(), Y.toarray(), metric=metric)


def chebyshev(x, y) -> float:
    """Largest coordinate difference between two sparse vectors."""
    return float(pairwise_distances(sp.csr_matrix(x), sp.csr_matrix(y), "chebyshev")[0, 0])


# spill format ---------------------------------------------------------

_HEADER = struct.Struct("<8s4q16s")
_MAGIC = b"FPDBLK1\x00"


def write_block(path: str | Path, block: DistanceBlock) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, block.rows.start, block.rows.stop, block.cols.start, block.cols.stop,
                              block.metric.encode("ascii")))
        fh.write(np.ascontiguousarray(block.values, dtype="<f8").tobytes())
    tmp.replace(path)


def read_block(path: str | Path) -> DistanceBlock:
    raw = Path(path).read_bytes()
    magic, r0, r1, c0, c1, metric = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise DataError(f"{path} is not a distance block file")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(r1 - r0, c1 - c0)
    return DistanceBlock(range(r0, r1), range(c0, c1), values.astype(np.float64), metric.rstrip(b"\x00").decode())


@dataclass(frozen=True)
class DistanceEngine:
    """Tiled evaluation of a snippet-by-label distance matrix."""

    metric: str = "chebyshev"
    block_rows: int = DEFAULT_BLOCK_ROWS
    block_cols: int = DEFAULT_BLOCK_COLS
    workers: int = 1
    spill_dir: str | None = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; choose from {', '.join(METRICS)}")
        if self.block_rows < 1 or self.block_cols < 1 or self.workers < 1:
            raise ConfigError("block sizes and worker count must be positive")

    def _tile(self, X, Y, rows: range, cols: range) -> DistanceBlock:
        if self.spill_dir is not None:
            path = Path(self.spill_dir) / f"{self.metric}_{rows.start}_{cols.start}.blk"
            if path.exists():
                block = read_block(path)
                if block.rows == rows and block.cols == cols and block.metric == self.metric:
                    return block
        values = _compute(X[rows.start:rows.stop], Y[cols.start:cols.stop], self.metric)
        block = DistanceBlock(rows, cols, values, self.metric)
        if self.spill_dir is not None:
            Path(self.spill_dir).mkdir(parents=True, exist_ok=True)
            write_block(path, block)
        return block

    def tiles(self, X, Y) -> Iterator[DistanceBlock]:
        """Yield tiles in row-major order; workers compute ahead in threads."""
        X, Y = _as_csr(X), _as_csr(Y)
        _check(X, Y, self.metric)
        ranges = [
            (range(r, min(r + self.block_rows, X.shape[0])), range(c, min(c + self.block_cols, Y.shape[0])))
            for r in range(0, X.shape[0], self.block_rows)
            for c in range(0, Y.shape[0], self.block_cols)
        ]
        if self.workers == 1 or len(ranges) < 2:
            for rows, cols in ranges:
                yield self._tile(X, Y, rows, cols)
            return
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            window = 2 * self.workers
            pending = [pool.submit(self._tile, X, Y, r, c) for r, c in ranges[:window]]
            nxt = window
            while pending:
                block = pending.pop(0).result()
                if nxt < len(ranges):
                    pending.append(pool.submit(self._tile, X, Y, *ranges[nxt]))
                    nxt += 1
                yield block

    def full(self, X, Y) -> np.ndarray:
        """Assemble the whole matrix. Only for small inputs and tests."""
        X, Y = _as_csr(X), _as_csr(Y)
        out = np.empty((X.shape[0], Y.shape[0]), dtype=np.float64)
        for block in self.tiles(X, Y):
            out[block.rows.start:block.rows.stop, block.cols.start:block.cols.stop] = block.values
        return out


# metric comparison harness ----------------------------------------------

@dataclass(frozen=True)
class MetricDeltaCurve:
    metric: str
    bin_edges: np.ndarray
    delta: np.ndarray
    same_freq: np.ndarray
    diff_freq: np.ndarray

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bin_lo\tbin_hi\tdelta\n")
            for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.delta):
                fh.write(f"{lo:.17g}\t{hi:.17g}\t{d:.17g}\n")


def sample_negatives(n_rows: int, positives: Sequence[int], size: int | None, seed: int) -> np.ndarray:
    pos = set(int(p) for p in positives)
    pool = np.array([r for r in range(n_rows) if r not in pos], dtype=np.int64)
    size = len(pos) if size is None else size
    size = min(size, len(pool))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(pool, size=size, replace=False))


def metric_delta(positive_rows, negative_rows, data, metric: str = "chebyshev", bins: int | Sequence[float] = 50
                 ) -> MetricDeltaCurve:
    """Same-class minus different-class distance frequency per bin.

    Same-class pairs are the unordered positive-positive and
    negative-negative pairs; different-class pairs are all
    positive-negative pairs.  Each distribution is normalized to sum to one
    before differencing.
    """
    data = _as_csr(data)
    pos = np.asarray(sorted(positive_rows), dtype=np.int64)
    neg = np.asarray(sorted(negative_rows), dtype=np.int64)
    if len(pos) < 2 or len(neg) < 2:
        raise DataError("metric_delta needs at least two rows in each class")
    P, N = data[pos], data[neg]
    pp = pairwise_distances(P, P, metric)
    nn = pairwise_distances(N, N, metric)
    same = np.concatenate([pp[np.triu_indices(len(pos), k=1)], nn[np.triu_indices(len(neg), k=1)]])
    diff = pairwise_distances(P, N, metric).ravel()
    if np.isscalar(bins) or isinstance(bins, int):
        top = max(same.max(), diff.max())
        edges = np.linspace(0.0, top if top > 0 else 1.0, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    same_h, _ = np.histogram(same, bins=edges)
    diff_h, _ = np.histogram(diff, bins=edges)
    same_f = same_h / same_h.sum() if same_h.sum() else same_h.astype(float)
    diff_f = diff_h / diff_h.sum() if diff_h.sum() else diff_h.astype(float)
    return MetricDeltaCurve(metric, edges, same_f - diff_f, same_f, diff_f)
