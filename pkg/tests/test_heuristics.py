import json

import pytest

from fpsnippets.errors import ConfigError
from fpsnippets.heuristics import (HeuristicFlag, compile_heuristic_list, font_family, heuristic_audio,
                                   heuristic_canvas, heuristic_canvas_font, heuristic_webrtc, load_heuristic_config,
                                   read_heuristic_csv, run_heuristics, technique_breakdown, write_heuristic_csv)
from fpsnippets.ingest import CallRecord
from fpsnippets.reporting import jaccard
from trace_fixture import AUDIO_CHAIN, CTX, READ, SCRIPTS, calls, fixture_records, setv, text


def check(technique, trace, variant):
    if technique == "canvas":
        return heuristic_canvas(trace, variant)
    if technique == "canvas_font":
        return heuristic_canvas_font(trace, variant)
    if technique == "audio":
        return heuristic_audio(trace, variant)
    return heuristic_webrtc(trace)


@pytest.mark.parametrize("name, technique, trace, en, das", SCRIPTS, ids=[s[0] for s in SCRIPTS])
def test_twelve_script_fixture(name, technique, trace, en, das):
    assert check(technique, trace, "EN2016") is en
    assert check(technique, trace, "DAS2018") is das


def test_variant_jaccard_on_the_fixture():
    report = run_heuristics(fixture_records())
    assert report.scripts_seen == 12 and not report.not_evaluable
    expected = {"canvas": 0.5, "canvas_font": 0.0, "webrtc": 1.0, "audio": 0.5}
    for technique, j in expected.items():
        en, das = report.scripts(technique, "EN2016"), report.scripts(technique, "DAS2018")
        assert jaccard(en, das) == pytest.approx(j)
    assert report.scripts("canvas", "EN2016", clean=True) == {f"s{i}.com/s{i}.js" for i in (1, 3, 4, 5, 7)}


def test_missing_arguments_or_values_are_not_evaluable():
    records = [CallRecord("https://a.com/a.js", "f", CTX + "fillText", "call"),
               CallRecord("https://a.com/a.js", "f", "HTMLCanvasElement.toDataURL", "call"),
               CallRecord("https://b.com/b.js", "f", CTX + "font", "set")]
    report = run_heuristics(records)
    assert ("https://a.com/a.js", "canvas", "EN2016") in report.not_evaluable
    assert ("https://a.com/a.js", "canvas", "DAS2018") in report.not_evaluable
    assert ("https://b.com/b.js", "canvas_font", "EN2016") in report.not_evaluable
    assert not report.flags


def test_webrtc_needs_both_halves():
    assert not heuristic_webrtc(calls("RTCPeerConnection.createDataChannel"))
    assert not heuristic_webrtc(calls("RTCPeerConnection.localDescription"))
    assert heuristic_webrtc(calls("RTCPeerConnection.createDataChannel", "RTCPeerConnection.localDescription"))


def test_das_audio_needs_all_five():
    for missing in AUDIO_CHAIN:
        assert not heuristic_audio(calls(*[s for s in AUDIO_CHAIN if s != missing]), "DAS2018")


def test_canvas_font_thresholds_are_inclusive():
    fonts = [setv(CTX + "font", f"12px Family{i}") for i in range(50)]
    assert heuristic_canvas_font(fonts + calls(*[CTX + "measureText"] * 50), "EN2016")
    assert not heuristic_canvas_font(fonts + calls(*[CTX + "measureText"] * 49), "EN2016")
    assert not heuristic_canvas_font(fonts[:49] + calls(*[CTX + "measureText"] * 50), "DAS2018")


@pytest.mark.parametrize("value, family", [
    ("12px Arial", "Arial"), ("bold 14pt 'Times New Roman'", "Times New Roman"),
    ("italic 700 10px/1.2 monospace", "monospace"), ("Arial", "Arial"),
])
def test_font_family(value, family):
    assert font_family(value) == family


def test_unknown_variant_and_bad_config(tmp_path):
    with pytest.raises(ConfigError):
        heuristic_canvas([READ], "EN2020")
    cfg = load_heuristic_config()
    cfg["audio"]["das2018_symbols"] = cfg["audio"]["das2018_symbols"][:4]
    (tmp_path / "h.json").write_text(json.dumps(cfg))
    with pytest.raises(ConfigError, match="five"):
        load_heuristic_config(tmp_path / "h.json")
    with pytest.raises(ConfigError):
        load_heuristic_config(tmp_path / "missing.json")


def test_config_override_changes_the_rule():
    cfg = load_heuristic_config()
    cfg["canvas"]["min_text_length"] = 3
    assert heuristic_canvas([text("abc"), READ], "DAS2018", cfg)
    assert not heuristic_canvas([text("abc"), READ], "DAS2018")


def test_compile_list_cleans_and_merges(tmp_path):
    flags = [HeuristicFlag("https://a.com/x.js?v=1", "canvas", "EN2016"),
             HeuristicFlag("http://a.com/x.js?v=2", "audio", "EN2016"),
             HeuristicFlag("https://b.com/y.js", "webrtc", "DAS2018")]
    merged = compile_heuristic_list(flags)
    assert merged == [("a.com/x.js", frozenset({"canvas", "audio"})), ("b.com/y.js", frozenset({"webrtc"}))]
    assert compile_heuristic_list(flags, "DAS2018") == [("b.com/y.js", frozenset({"webrtc"}))]
    assert technique_breakdown(merged) == {"canvas": 1, "canvas_font": 0, "webrtc": 1, "audio": 1}
    write_heuristic_csv(tmp_path / "h.csv", flags)
    assert read_heuristic_csv(tmp_path / "h.csv") == [
        ("a.com/x.js", "audio", "EN2016"), ("a.com/x.js", "canvas", "EN2016"), ("b.com/y.js", "webrtc", "DAS2018"),
    ]
