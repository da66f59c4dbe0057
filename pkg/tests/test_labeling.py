import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpsnippets.errors import ConfigError
from fpsnippets.ingest import CallRecord
from fpsnippets.labeling import (LabelSet, keyword_label, label_proximity, prune_labels, read_label_file,
                                 read_proximity, scripts_to_snippets, write_label_file, write_proximity)
from helpers import make_matrix, random_matrix
from oracles import csr_to_dicts, pair_distance


def _rec(url, func="f"):
    return CallRecord(url, func, "window.name", "get")


def test_keyword_is_a_case_insensitive_substring_of_url_or_function():
    recs = [_rec("https://www.trk.example.com/trk.js?x=1"), _rec("https://a.com/Tracking.js"),
            _rec("https://b.com/b.js", "doTRACKINGnow"), _rec("https://c.com/c.js", "track_ing")]
    assert keyword_label(recs, "tracking") == {"a.com/Tracking.js", "b.com/b.js"}
    assert keyword_label(recs, "trk") == {"www.trk.example.com/trk.js"}
    with pytest.raises(ConfigError):
        keyword_label(recs, "")


def test_keyword_skips_records_without_a_script():
    recs = [CallRecord("", "tracking", "s", "get", "https://page.com/"), _rec("https:///tracking.js")]
    assert keyword_label(recs, "tracking") == set()


_words = st.text(alphabet="abtrk", min_size=1, max_size=4)


@given(st.lists(st.tuples(_words, _words), max_size=15), _words, _words)
def test_longer_keywords_match_a_subset(pairs, kw, extra):
    recs = [_rec(f"https://{u}.com/{u}.js", f) for u, f in pairs]
    assert keyword_label(recs, kw + extra) <= keyword_label(recs, kw)


def test_scripts_to_snippets_maps_and_reports_missing():
    m = make_matrix([[1, 0], [0, 1], [1, 1]], {"a.com/x.js": {0, 2}, "b.com/y.js": {1}})
    labels = scripts_to_snippets(["a.com/x.js", "zz.com/none.js"], m, "heuristic_list")
    assert labels.snippet_rows == {0, 2} and labels.missing_scripts == ("zz.com/none.js",)
    assert labels.provenance == "heuristic_list" and len(labels) == 2
    assert labels.rows.tolist() == [0, 2]


def test_label_set_validation():
    with pytest.raises(ConfigError):
        LabelSet(frozenset(), "guess")
    with pytest.raises(ValueError):
        LabelSet(frozenset({1}), "keyword", pruned_rows=frozenset({1}))


def test_generic_label_is_pruned_and_boundary_is_inclusive():
    # ten rows; row 0 sits at distance 0 from rows 0..1 and row 2 from rows 2..3,
    # everything else is far away
    rows = [[1, 0, 0, 0, 0]] * 2 + [[0, 1, 0, 0, 0]] * 2 + [[0, 0, 1, 0, 0]] * 6
    m = make_matrix(rows)
    labels = LabelSet(frozenset({0, 4}), "keyword")
    pruned, share = prune_labels(m, labels, 0.1, prune_threshold=0.6)
    assert share == {0: 0.2, 4: 0.6}
    assert pruned.snippet_rows == {0} and pruned.pruned_rows == {4}
    assert pruned.prune_threshold == 0.6 and pruned.distance_threshold_used == 0.1
    kept, _ = prune_labels(m, labels, 0.1, prune_threshold=0.61)
    assert kept.snippet_rows == {0, 4}
    # pruning again re-evaluates previously pruned rows at the new setting
    again, _ = prune_labels(m, pruned, 0.1, prune_threshold=0.9)
    assert again.snippet_rows == {0, 4}
    with pytest.raises(ConfigError):
        prune_labels(m, labels, 0.1, prune_threshold=0)


def test_proximity_matches_oracle():
    m = random_matrix(np.random.default_rng(1), 60, 8)
    rows = [3, 10, 42]
    got = label_proximity(m, rows, [0.1, 0.3])
    vecs = csr_to_dicts(m.data)
    for d in (0.1, 0.3):
        want = [sum(pair_distance(x, vecs[y], "chebyshev") <= d for x in vecs) / m.n for y in rows]
        np.testing.assert_array_equal(got[d], want)


def test_empty_label_set_prunes_to_empty():
    m = make_matrix([[1, 0]])
    pruned, share = prune_labels(m, LabelSet(frozenset(), "keyword"), 0.1)
    assert not pruned.snippet_rows and share == {}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.0, 0.6), st.floats(0.0, 0.4), st.floats(0.05, 0.5), st.floats(0, 0.5))
def test_pruning_is_monotone(seed, d, dd, p, dp):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, 40, 5, max_nnz=2)
    labels = LabelSet(frozenset(rng.choice(40, size=8, replace=False).tolist()), "keyword")
    base, _ = prune_labels(m, labels, d, p)
    wider, _ = prune_labels(m, labels, d + dd, p)
    looser, _ = prune_labels(m, labels, d, min(1.0, p + dp))
    assert base.pruned_rows <= wider.pruned_rows
    assert looser.pruned_rows <= base.pruned_rows
    assert base.snippet_rows | base.pruned_rows == labels.snippet_rows


def test_label_file_round_trip(tmp_path):
    write_label_file(tmp_path / "l.txt", {"b.com/y.js", "a.com/x.js"}, header="seed list")
    text = (tmp_path / "l.txt").read_text()
    assert text == "# seed list\na.com/x.js\nb.com/y.js\n"
    (tmp_path / "m.txt").write_text("https://www.a.com/x.js?v=1\n\n  # note\nb.com/y.js#f\n")
    assert read_label_file(tmp_path / "m.txt") == {"www.a.com/x.js", "b.com/y.js"}
    with pytest.raises(ConfigError):
        read_label_file(tmp_path / "absent.txt")


def test_proximity_file_round_trip(tmp_path):
    share = {4: 0.1 + 0.2, 1: 1 / 3}
    write_proximity(tmp_path / "p.tsv", share)
    assert read_proximity(tmp_path / "p.tsv") == share
