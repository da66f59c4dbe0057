"""Find fingerprinting scripts by comparing their API-call snippets to labeled ones.

Typical library use::

    records = read_call_records("calls.jsonl")
    matrix = normalize_rows(build_snippet_matrix(records))
    labels = scripts_to_snippets(seed_urls, matrix)
    selection = select_distance_threshold(matrix, labels, [0.1, 0.25, 0.5], reference_urls)
"""

from .distance import DistanceEngine, chebyshev, metric_delta, pairwise_distances
from .errors import ConfigError, DataError, FPSnippetsError, InvariantError
from .heuristics import compile_heuristic_list, run_heuristics
from .ingest import CallRecord, clean_script_url, parse_call_records, read_call_records, url_parts
from .labeling import LabelSet, keyword_label, label_proximity, prune_labels, scripts_to_snippets
from .pipeline import Pipeline, PipelineConfig, run_stage
from .reporting import characterize, detect_device_class, jaccard, sample_for_review, tag_collections, variant_diff
from .scoring import (neighbor_counts, rank_and_curves, rank_scripts, score, script_scores,
                      select_distance_threshold)
from .snippets import SnippetKey, SnippetMatrix, append_rows, build_snippet_matrix, normalize_rows, snippet_key

__version__ = "0.1.0"

__all__ = [
    "CallRecord", "ConfigError", "DataError", "DistanceEngine", "FPSnippetsError", "InvariantError", "LabelSet",
    "Pipeline", "PipelineConfig", "SnippetKey", "SnippetMatrix", "append_rows", "build_snippet_matrix",
    "characterize", "chebyshev", "clean_script_url", "compile_heuristic_list", "detect_device_class", "jaccard",
    "keyword_label", "label_proximity", "metric_delta", "neighbor_counts", "normalize_rows", "pairwise_distances",
    "parse_call_records", "prune_labels", "rank_and_curves", "rank_scripts", "read_call_records", "run_heuristics",
    "run_stage", "sample_for_review", "score", "script_scores", "scripts_to_snippets", "select_distance_threshold",
    "snippet_key", "tag_collections", "url_parts", "variant_diff",
]
