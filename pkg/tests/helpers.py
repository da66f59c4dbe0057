"""Builders shared by several test modules."""

import numpy as np
import scipy.sparse as sp

from fpsnippets.ingest import CallRecord
from fpsnippets.snippets import SnippetKey, SnippetMatrix


def make_matrix(rows, scripts=None, normalize=True) -> SnippetMatrix:
    """SnippetMatrix from dense rows; ``scripts`` maps URL -> row ids
    (default: one script per row, ``s{i}.com/s.js``)."""
    dense = np.asarray(rows, dtype=np.float64)
    if normalize:
        dense = dense / dense.sum(axis=1, keepdims=True)
    data = sp.csr_matrix(dense)
    data.eliminate_zeros()
    keys = tuple(SnippetKey(f"s{i}.com", "s.js", "f") for i in range(len(dense)))
    if scripts is None:
        scripts = {f"s{i}.com/s.js": {i} for i in range(len(dense))}
    index = {u: frozenset(r) for u, r in scripts.items()}
    vocab = tuple(f"sym{j}" for j in range(dense.shape[1]))
    return SnippetMatrix(vocab, keys, data, index, normalized=normalize)


def random_matrix(rng, n, s, max_nnz=4, n_scripts=None) -> SnippetMatrix:
    dense = np.zeros((n, s))
    for i in range(n):
        k = int(rng.integers(1, min(max_nnz, s) + 1))
        dense[i, rng.choice(s, size=k, replace=False)] = rng.integers(1, 6, size=k)
    scripts = None
    if n_scripts:
        owner = rng.integers(n_scripts, size=n)
        scripts = {}
        for i, o in enumerate(owner):
            scripts.setdefault(f"u{o:03d}.com/x.js", set()).add(i)
    return make_matrix(dense, scripts)


FIXTURE_CANDIDATES = [0.02, 0.1, 0.3, 0.5]


def fixture_config(fixture_dir, out, **overrides):
    """Pipeline settings for the bundled planted-motif fixture."""
    from fpsnippets.pipeline import PipelineConfig

    settings = dict(input=str(fixture_dir / "calls.jsonl"), labels=f"file:{fixture_dir / 'seeds.txt'}",
                    reference=f"file:{fixture_dir / 'planted.txt'}", distance_thresholds=FIXTURE_CANDIDATES,
                    delta_bins=20, out=str(out))
    settings.update(overrides)
    return PipelineConfig(**settings)


def table1_call_log() -> list:
    """The seven-row example call log (script_url, symbol, func_name)."""
    rows = [
        ("ggl.com/ga.js", "window.navigator", "function1"),
        ("ggl.com/ga.js", "window.document.cookie", "function1"),
        ("ggl.com/ga.js", "window.document.cookie", "function2"),
        ("ggl.com/msc.js", "window.navigator", "functiona"),
        ("ggl.com/ga.js", "window.navigator", "function1"),
        ("ggl.com/ga.js", "window.document.cookie", "function1"),
        ("ddr.com/bo.js", "window.navigator", "dance"),
    ]
    return [CallRecord(url, func, sym, "get") for url, sym, func in rows]
