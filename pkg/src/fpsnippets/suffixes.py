"""Public suffix rule table and registrable-domain (eTLD+1) lookup.

The bundled rule file is a pinned snapshot of the Mozilla Public Suffix
List so that domain extraction does not drift between runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

SNAPSHOT_FILE = "public_suffix_list.dat"
SNAPSHOT_VERSION = "2019-12-21"


def _to_ascii(label: str) -> str:
    try:
        return label.encode("idna").decode("ascii")
    except UnicodeError:
        return label


@dataclass(frozen=True)
class SuffixRules:
    rules: frozenset[str]
    wildcards: frozenset[str]  # stored without the leading "*."
    exceptions: frozenset[str]  # stored without the leading "!"
    version: str = "custom"

    @classmethod
    def from_lines(cls, lines, version: str = "custom") -> "SuffixRules":
        rules, wildcards, exceptions = set(), set(), set()
        for line in lines:
            line = line.strip()
            if not line or line.startswith("//"):
                continue
            rule = line.split()[0].lower()
            forms = {rule, ".".join(_to_ascii(p) for p in rule.split("."))}
            for form in forms:
                if form.startswith("!"):
                    exceptions.add(form[1:])
                elif form.startswith("*."):
                    wildcards.add(form[2:])
                else:
                    rules.add(form)
        return cls(frozenset(rules), frozenset(wildcards), frozenset(exceptions), version)

    @classmethod
    def from_file(cls, path: str | Path, version: str | None = None) -> "SuffixRules":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            return cls.from_lines(fh, version or path.name)

    def public_suffix(self, host: str) -> str:
        labels = host.lower().strip(".").split(".")
        for i in range(len(labels)):
            candidate = ".".join(labels[i:])
            if candidate in self.exceptions:
                return ".".join(labels[i + 1:])
            if candidate in self.rules:
                return candidate
            if i + 1 < len(labels) and ".".join(labels[i + 1:]) in self.wildcards:
                return candidate
        # implicit "*" rule
        return labels[-1]

    def registrable_domain(self, host: str) -> str:
        """eTLD+1 of ``host``. A host that is itself a public suffix, or an
        IP literal, is returned unchanged."""
        host = host.lower().strip(".")
        if _is_ip_literal(host):
            return host
        suffix = self.public_suffix(host)
        if host == suffix:
            return host
        head = host[: -len(suffix) - 1]
        return head.rsplit(".", 1)[-1] + "." + suffix


def _is_ip_literal(host: str) -> bool:
    if host.startswith("["):
        return True
    parts = host.split(".")
    return len(parts) == 4 and all(p.isdigit() for p in parts)


@lru_cache(maxsize=1)
def default_rules() -> SuffixRules:
    text = resources.files("fpsnippets").joinpath("data").joinpath(SNAPSHOT_FILE).read_text(encoding="utf-8")
    return SuffixRules.from_lines(text.splitlines(), SNAPSHOT_VERSION)
