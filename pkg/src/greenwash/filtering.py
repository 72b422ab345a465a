"""Multilingual keyword lexicons, climate/electoral filters and keyword indicators.

Pattern syntax inside a lexicon config:

* ``*`` is a word-character wildcard (``climat*`` matches "climate", "climatic");
* a run of spaces matches any run of whitespace;
* ``\\`` escapes the next character; a trailing lone backslash is an error;
* everything else is literal and matched case-insensitively.

In languages with word boundaries a pattern must start at a word boundary
and, unless it ends in a wildcard, end at one, so "coal" never matches
"charcoal". Conjunction stems are prefixes: "icecap" also matches "icecaps".
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

import yaml

from .ingest import AdRecord

log = logging.getLogger(__name__)

KINDS = ("literal", "stem_wildcard", "conjunction")
ANY_KEYWORDS = "any_keywords"


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class LexEntry:
    key: str
    kind: str
    patterns: tuple[str, ...] = ()
    clauses: tuple[tuple[str, ...], ...] = ()
    item: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LexiconError(f"term {self.key}: unknown kind {self.kind!r}")
        if self.kind == "conjunction":
            if not self.clauses or any(len(c) < 2 for c in self.clauses):
                raise LexiconError(f"term {self.key}: conjunction needs clauses of at least 2 stems")
        elif not self.patterns:
            raise LexiconError(f"term {self.key}: no patterns")
        if self.kind == "stem_wildcard":
            for p in self.patterns:
                if not p.endswith("*") or p.endswith("\\*"):
                    raise LexiconError(f"term {self.key}: stem pattern {p!r} must end in '*'")


def _translate(pattern: str, key: str, language: str) -> str:
    out = []
    i = 0
    text = pattern.casefold()
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text):
                raise LexiconError(f"term {key} ({language}): unbalanced escape in pattern {pattern!r}")
            out.append(re.escape(text[i + 1]))
            i += 2
            continue
        if ch == "*":
            out.append(r"\w*")
        elif ch.isspace():
            while i + 1 < len(text) and text[i + 1].isspace():
                i += 1
            out.append(r"\s+")
        else:
            out.append(re.escape(ch))
        i += 1
    return "".join(out)


def _compile(pattern: str, key: str, language: str, boundaries: bool, prefix: bool = False) -> re.Pattern:
    body = _translate(pattern, key, language)
    if prefix and not body.endswith(r"\w*"):
        body += r"\w*"
    if boundaries:
        body = r"(?<!\w)" + body + ("" if body.endswith(r"\w*") else r"(?!\w)")
    try:
        return re.compile(body)
    except re.error as exc:
        raise LexiconError(f"term {key} ({language}): bad pattern {pattern!r}: {exc}") from None


@dataclass(frozen=True)
class CompiledTerm:
    entry: LexEntry
    alternatives: tuple[tuple[re.Pattern, ...], ...]

    def matches(self, folded: str) -> bool:
        return any(all(rx.search(folded) for rx in clause) for clause in self.alternatives)


@dataclass(frozen=True)
class Lexicon:
    language: str
    terms: tuple[CompiledTerm, ...] = ()
    word_boundaries: bool = True

    @property
    def item_keys(self) -> list[str]:
        return [t.entry.key for t in self.terms if t.entry.item]

    def matched(self, text: str) -> set[str]:
        folded = (text or "").casefold()
        return {t.entry.key for t in self.terms if t.matches(folded)}


def compile_language(language: str, spec: Mapping) -> Lexicon:
    boundaries = bool(spec.get("word_boundaries", True))
    compiled = []
    seen: set[str] = set()
    for raw in spec.get("terms") or []:
        key = raw.get("key")
        if not key:
            raise LexiconError(f"{language}: term without key")
        if key in seen:
            raise LexiconError(f"{language}: duplicate key {key}")
        seen.add(key)
        entry = LexEntry(
            key=key,
            kind=raw.get("kind", "literal"),
            patterns=tuple(raw.get("patterns") or ()),
            clauses=tuple(tuple(c) for c in raw.get("clauses") or ()),
            item=bool(raw.get("item", True)),
        )
        if entry.kind == "conjunction":
            alts = tuple(
                tuple(_compile(s, key, language, boundaries, prefix=True) for s in clause)
                for clause in entry.clauses
            )
        else:
            alts = tuple((_compile(p, key, language, boundaries),) for p in entry.patterns)
        compiled.append(CompiledTerm(entry, alts))
    return Lexicon(language, tuple(compiled), boundaries)


def _primary(tag: str) -> str:
    return re.split(r"[-_]", (tag or "").strip().lower(), maxsplit=1)[0]


@dataclass
class LexiconSet:
    """Per-language lexicons sharing one set of canonical item keys."""

    lexicons: dict[str, Lexicon] = field(default_factory=dict)
    fallback: str = "en"
    _warned: set = field(default_factory=set, repr=False)

    @property
    def item_keys(self) -> list[str]:
        keys: set[str] = set()
        for lex in self.lexicons.values():
            keys.update(lex.item_keys)
        return sorted(keys)

    def resolve(self, language: str) -> Lexicon | None:
        lang = _primary(language)
        if lang in self.lexicons:
            return self.lexicons[lang]
        if lang not in self._warned:
            self._warned.add(lang)
            log.warning("no lexicon for language %r; using %r", language, self.fallback)
        return self.lexicons.get(self.fallback)

    def matched(self, text: str, language: str = "en") -> set[str]:
        lex = self.resolve(language)
        return lex.matched(text) if lex else set()


def compile_lexicon(config: Mapping | None) -> LexiconSet:
    config = config or {}
    langs = config.get("languages") or {}
    out = LexiconSet(fallback=_primary(config.get("fallback", "en")))
    for lang, spec in langs.items():
        out.lexicons[_primary(lang)] = compile_language(_primary(lang), spec or {})
    return out


def load_lexicon(path=None) -> LexiconSet:
    """Load a lexicon config; with no path, the shipped indicator lexicon."""
    if path is None:
        text = resources.files("greenwash.data").joinpath("lexicon.yaml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return compile_lexicon(yaml.safe_load(text))


def load_electoral(path=None) -> LexiconSet:
    if path is None:
        text = resources.files("greenwash.data").joinpath("electoral.yaml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    config = yaml.safe_load(text) or {}
    candidates = config.pop("candidates", None) or []
    if candidates:
        for spec in (config.get("languages") or {}).values():
            spec.setdefault("terms", []).append(
                {"key": "candidate_name", "kind": "literal", "patterns": list(candidates)}
            )
    return compile_lexicon(config)


@dataclass(frozen=True)
class KeywordVector:
    ad_id: str
    bits: Mapping[str, int]

    @property
    def any(self) -> bool:
        return any(self.bits.values())


def match_keywords(text: str, lexicon: Lexicon | LexiconSet, language: str = "en", ad_id: str = "") -> KeywordVector:
    if isinstance(lexicon, LexiconSet):
        keys = lexicon.item_keys
        hits = lexicon.matched(text, language)
    else:
        keys = sorted(lexicon.item_keys)
        hits = lexicon.matched(text)
    return KeywordVector(ad_id, {k: int(k in hits) for k in keys})


def keyword_vector(ad: AdRecord, lexicons: LexiconSet) -> KeywordVector:
    return match_keywords(ad.text, lexicons, ad.language, ad.ad_id)


def climate_filter(ad: AdRecord, lexicons: LexiconSet) -> bool:
    """True if any lexicon term (indicator or broad-only) occurs in the ad."""
    return bool(lexicons.matched(ad.text, ad.language))


def electoral_filter(ad: AdRecord, exclusion: LexiconSet) -> bool:
    """True if the ad should be excluded as electoral content."""
    return bool(exclusion.matched(ad.text, ad.language))


def keyword_count_table(corpus: Iterable[AdRecord], lexicons: LexiconSet) -> list[tuple[str, int]]:
    keys = lexicons.item_keys
    counts = dict.fromkeys(keys, 0)
    n_any = 0
    for ad in corpus:
        vec = keyword_vector(ad, lexicons)
        for k, v in vec.bits.items():
            counts[k] += v
        n_any += vec.any
    return [(k, counts[k]) for k in keys] + [(ANY_KEYWORDS, n_any)]


def select_ads(
    corpus: Sequence[AdRecord], lexicons: LexiconSet, exclusion: LexiconSet | None = None
) -> tuple[list[AdRecord], dict[str, int]]:
    """Keep climate-relevant, non-electoral ads; returns the kept ads and step counts."""
    kept = []
    stats = {"input": len(corpus), "not_climate": 0, "electoral": 0}
    for ad in corpus:
        if not climate_filter(ad, lexicons):
            stats["not_climate"] += 1
        elif exclusion is not None and electoral_filter(ad, exclusion):
            stats["electoral"] += 1
        else:
            kept.append(ad)
    stats["kept"] = len(kept)
    return kept, stats
