"""Deterministic synthetic call traces with a planted fingerprinting motif.

Three populations:

* planted: one snippet whose call counts follow a fixed canvas motif with
  multiplicative count noise, plus a generic single-call init snippet;
* near-miss: same symbols in different proportions, plus the init snippet;
* noise: unrelated API usage, some with the init snippet.

The init snippet is identical everywhere, so labels on it cover a large
share of rows and must be pruned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import CallRecord, clean_script_url, write_call_records

MOTIF_SYMBOLS = (
    "CanvasRenderingContext2D.fillStyle",
    "CanvasRenderingContext2D.fillText",
    "CanvasRenderingContext2D.fillRect",
    "HTMLCanvasElement.toDataURL",
)
MOTIF_OPERATIONS = ("set", "call", "call", "call")
PLANTED_COUNTS = (40, 30, 20, 10)
NEAR_MISS_COUNTS = (20, 30, 20, 30)
GENERIC_SYMBOL = "window.navigator.userAgent"
FP_TEXT = '["Cwm fjordbank glyphs vext quiz, \\ud83d\\ude03", 2, 15]'

NOISE_SYMBOLS = (
    "window.navigator.language", "window.navigator.languages", "window.navigator.cookieEnabled",
    "window.navigator.doNotTrack", "window.navigator.onLine", "window.navigator.vendor",
    "window.screen.width", "window.screen.height", "window.screen.colorDepth",
    "window.screen.availWidth", "window.screen.availHeight", "window.document.cookie",
    "window.document.referrer", "window.document.title", "window.localStorage",
    "window.sessionStorage", "window.Storage.getItem", "window.Storage.setItem",
    "window.history.length", "window.location.href", "window.location.hostname",
    "window.innerWidth", "window.innerHeight", "window.devicePixelRatio",
    "window.name", "window.performance.now", "window.Date.now",
    "window.document.readyState", "window.document.visibilityState", "window.document.hidden",
)
_WORDS = ("news", "shop", "blog", "media", "cdn", "static", "metrics", "ads", "video", "social",
          "travel", "bank", "games", "mail", "maps", "store", "learn", "cloud", "sport", "food")
_TLDS = ("com", "net", "org", "co.uk", "de", "io")
DEFAULT_CANDIDATES = (0.02, 0.1, 0.3, 0.5)


@dataclass
class SyntheticCorpus:
    records: list[CallRecord]
    planted: list[str]
    near_miss: list[str]
    noise: list[str]
    seeds: list[str]
    candidate_ds: tuple[float, ...] = DEFAULT_CANDIDATES
    params: dict = field(default_factory=dict)

    def write_jsonl(self, path: str | Path) -> None:
        write_call_records(path, self.records)


def _noisy(base, noise, rng) -> list[int]:
    factors = rng.uniform(1 - noise, 1 + noise, size=len(base))
    return [max(1, int(round(b * f))) for b, f in zip(base, factors)]


def _motif_records(url, func, counts, page, text_args, styles) -> list[CallRecord]:
    out = []
    for symbol, op, n in zip(MOTIF_SYMBOLS, MOTIF_OPERATIONS, counts):
        for k in range(n):
            value = args = ""
            if symbol.endswith("fillStyle"):
                value = styles[k % len(styles)]
            elif symbol.endswith("fillText"):
                args = text_args
            out.append(CallRecord(url, func, symbol, op, page, value, args, "1"))
    return out


def _generic(url, rng, page) -> list[CallRecord]:
    return [CallRecord(url, "init", GENERIC_SYMBOL, "get", page, "", "", "1")
            for _ in range(int(rng.integers(1, 4)))]


def generate_corpus(seed: int = 7, n_planted: int = 30, n_near_miss: int = 20, n_noise: int = 500,
                    n_seeds: int = 5, count_noise: float = 0.10, generic_share: float = 0.4) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    records: list[CallRecord] = []
    planted, near, noise = [], [], []

    for i in range(n_planted):
        url = f"https://fp{i:02d}.{_WORDS[i % len(_WORDS)]}-tag.com/js/fp.js?cb={int(rng.integers(1e6))}"
        page = f"https://www.site{i:03d}.com/"
        counts = _noisy(PLANTED_COUNTS, count_noise, rng)
        records += _motif_records(url, "getFingerprint", counts, page, FP_TEXT, ("#f60", "#069"))
        records += _generic(url, rng, page)
        planted.append(url)

    for j in range(n_near_miss):
        host = "cdn.chartkit.io" if j == 0 else f"widgets{j:02d}.{_WORDS[(j * 3) % len(_WORDS)]}.net"
        url = f"https://{host}/draw/banner{j}.js"
        page = f"https://www.site{100 + j:03d}.com/"
        counts = _noisy(NEAR_MISS_COUNTS, count_noise, rng)
        records += _motif_records(url, "drawBanner", counts, page, '["ab", 0, 0]', ("#fff",))
        records += _generic(url, rng, page)
        near.append(url)

    for k in range(n_noise):
        word = _WORDS[int(rng.integers(len(_WORDS)))]
        tld = _TLDS[int(rng.integers(len(_TLDS)))]
        url = f"http://{word}{k}.{tld}/assets/{word}_{k}.js"
        if k % 25 == 0:
            url += f"#frag{k}"
        page = f"https://www.site{200 + k:03d}.com/"
        width = int(rng.integers(1, 5))
        symbols = rng.choice(len(NOISE_SYMBOLS), size=width, replace=False)
        for s in sorted(symbols.tolist()):
            for _ in range(int(rng.integers(1, 20))):
                records.append(CallRecord(url, f"f{k}", NOISE_SYMBOLS[s], "get", page, "", "", "1"))
        if rng.random() < generic_share:
            records += _generic(url, rng, page)
        noise.append(url)

    # a few audio/webrtc probes so the two rule families disagree somewhere
    extra = [
        (noise[0], ["OscillatorNode.start"]),
        (noise[1], ["OscillatorNode.start"]),
        (noise[2], ["BaseAudioContext.createOscillator", "BaseAudioContext.createDynamicsCompressor",
                    "AudioNode.connect", "OscillatorNode.start", "OfflineAudioContext.startRendering"]),
        (noise[3], ["RTCPeerConnection.createDataChannel", "RTCPeerConnection.onicecandidate"]),
    ]
    for url, symbols in extra:
        for s in symbols:
            records.append(CallRecord(url, "probe", s, "call", "https://www.probe.com/", "", "", "1"))

    seed_idx = sorted(rng.choice(n_planted, size=n_seeds, replace=False).tolist())
    clean = [clean_script_url(u) for u in planted]
    return SyntheticCorpus(
        records=records,
        planted=clean,
        near_miss=[clean_script_url(u) for u in near],
        noise=[clean_script_url(u) for u in noise],
        seeds=[clean[i] for i in seed_idx],
        params={"seed": seed, "n_planted": n_planted, "n_near_miss": n_near_miss, "n_noise": n_noise,
                "n_seeds": n_seeds, "count_noise": count_noise, "generic_share": generic_share},
    )


def write_fixture(directory: str | Path, corpus: SyntheticCorpus | None = None) -> Path:
    """Write ``calls.jsonl``, ``seeds.txt`` and ``planted.txt`` into ``directory``."""
    from .labeling import write_label_file

    corpus = corpus or generate_corpus()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus.write_jsonl(directory / "calls.jsonl")
    write_label_file(directory / "seeds.txt", corpus.seeds, header="seed labels")
    write_label_file(directory / "planted.txt", corpus.planted, header="planted scripts")
    return directory
