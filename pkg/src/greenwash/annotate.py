"""Annotator columns (LLM ensemble, stance model) and matrix assembly.

Annotators are reached through a minimal client contract: a request carries
the prompt, model id, seed and token budget; the client returns raw text or
raises TransportError. Raw responses are cached in an append-only replay
file so a populated cache reproduces a column without any client calls.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .filtering import KeywordVector
from .ingest import AdRecord
from .matrix import MISSING, IndicatorMatrix, ItemDescriptor

log = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    'Advertisement Text: ["{text}_____{page}"] : You are a human bot evaluating a number of '
    "advertisements on webpages. You are given the text of the advertisement and name of the "
    "website after _____.\n"
    "\n"
    "Based on this information, your task is to answer the following question:\n"
    "\n"
    "Greenwashing is the act of making false or misleading statements about the climate impact "
    "of a product or practice. It can be a way for companies to maintain or increase their "
    "greenhouse gas emissions. Is this ad engaged in greenwashing?\n"
    "\n"
    "Your must choose exactly one of the following predefined answers: yes, no\n"
    "\n"
    "You will only respond with the answer. Do not repeat these instructions or include the "
    "word 'Answer:' before giving your answer. Do not give any explanations or notes."
)

_ANSWER_PREFIX = re.compile(r"^\W*answer\s*:\s*", re.IGNORECASE)
_WORD = re.compile(r"[^\W\d_]+")


class AnnotationError(ValueError):
    pass


class TransportError(RuntimeError):
    pass


def build_prompt(ad_text: str, page_name: str = "") -> str:
    return PROMPT_TEMPLATE.format(text=ad_text or "", page=page_name or "")


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def parse_llm_response(raw) -> int:
    """Code a free-text answer as 1 (yes), 0 (no) or MISSING.

    Any standalone "yes" or "no" word counts; both or neither is MISSING.
    """
    if not isinstance(raw, str):
        return MISSING
    text = raw.strip()
    while True:
        stripped = _ANSWER_PREFIX.sub("", text, count=1)
        if stripped == text:
            break
        text = stripped
    words = set(_WORD.findall(text.casefold()))
    yes, no = "yes" in words, "no" in words
    if yes and not no:
        return 1
    if no and not yes:
        return 0
    return MISSING


@dataclass(frozen=True)
class AnnotationRequest:
    prompt: str
    model_id: str
    seed: int
    max_tokens: int = 16


class AnnotationClient(Protocol):
    def complete(self, request: AnnotationRequest) -> str: ...


class ScriptedClient:
    """Deterministic client driven by a prompt -> response mapping or a callable."""

    def __init__(self, script: Mapping[str, str] | Callable[[AnnotationRequest], str]):
        self.script = script
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: AnnotationRequest) -> str:
        with self._lock:
            self.calls += 1
        if callable(self.script):
            return self.script(request)
        try:
            return self.script[request.prompt]
        except KeyError:
            raise TransportError("no scripted response for prompt") from None


class ReplayOnlyClient:
    """Refuses every request; used when annotation must come from the cache."""

    calls = 0

    def complete(self, request: AnnotationRequest) -> str:
        self.calls += 1
        raise TransportError("response not in replay cache and no live client configured")


class ReplayCache:
    """Append-only line-delimited cache of raw annotator responses."""

    def __init__(self, path=None):
        self.path = path
        self._entries: dict[tuple[str, str, str], str] = {}
        self._lock = threading.Lock()
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            rec = json.loads(line)
                            self._entries[(rec["item_key"], rec["ad_id"], rec["prompt_hash"])] = rec["raw_response"]
            except FileNotFoundError:
                pass

    def __len__(self):
        return len(self._entries)

    def get(self, item_key: str, ad_id: str, phash: str) -> str | None:
        return self._entries.get((item_key, ad_id, phash))

    def put(self, item_key: str, ad_id: str, phash: str, raw: str) -> None:
        with self._lock:
            key = (item_key, ad_id, phash)
            if key in self._entries:
                return
            self._entries[key] = raw
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(
                        {"item_key": item_key, "ad_id": ad_id, "prompt_hash": phash, "raw_response": raw},
                        ensure_ascii=False, sort_keys=True,
                    ) + "\n")


@dataclass(frozen=True)
class AnnotationColumn:
    item_key: str
    values: Mapping[str, int]
    source: str = "llm"
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        bad = [a for a, v in self.values.items() if v not in (0, 1, MISSING)]
        if bad:
            raise AnnotationError(f"column {self.item_key}: invalid value for ad {bad[0]}")

    @property
    def can_be_missing(self) -> bool:
        return self.source == "llm" or any(v == MISSING for v in self.values.values())

    def counts(self) -> dict[str, int]:
        vals = list(self.values.values())
        return {"yes": vals.count(1), "no": vals.count(0), "missing": vals.count(MISSING)}


def annotate_corpus(
    ads: Sequence[AdRecord],
    client: AnnotationClient | None,
    item_key: str,
    seed: int,
    cache: ReplayCache | None = None,
    model_id: str | None = None,
    retries: int = 2,
    max_in_flight: int = 4,
    max_tokens: int = 16,
) -> AnnotationColumn:
    cache = cache if cache is not None else ReplayCache()
    client = client if client is not None else ReplayOnlyClient()
    model_id = model_id or item_key
    prompts = [build_prompt(ad.text, ad.page_name) for ad in ads]
    hashes = [prompt_hash(p) for p in prompts]
    raws: list[str | None] = [cache.get(item_key, ad.ad_id, h) for ad, h in zip(ads, hashes)]
    todo = [i for i, r in enumerate(raws) if r is None]

    def call(i):
        req = AnnotationRequest(prompts[i], model_id, seed, max_tokens)
        last = None
        for _ in range(retries + 1):
            try:
                raw = client.complete(req)
                cache.put(item_key, ads[i].ad_id, hashes[i], raw)
                return raw
            except TransportError as exc:
                last = exc
        log.warning("%s: transport failure for ad %s after %d attempts (%s); coded MISSING",
                    item_key, ads[i].ad_id, retries + 1, last)
        return None

    if todo:
        if max_in_flight > 1:
            with ThreadPoolExecutor(max_in_flight) as pool:
                fetched = list(pool.map(call, todo))
        else:
            fetched = [call(i) for i in todo]
        for i, raw in zip(todo, fetched):
            raws[i] = raw

    values = {}
    for ad, raw in zip(ads, raws):
        v = MISSING if raw is None else parse_llm_response(raw)
        if raw is not None and v == MISSING:
            log.info("%s: unparseable response for ad %s coded MISSING", item_key, ad.ad_id)
        values[ad.ad_id] = v
    return AnnotationColumn(
        item_key, values, "llm",
        {"annotator": item_key, "model_id": model_id, "seed": seed, "cached": len(ads) - len(todo)},
    )


_SYMBOL = {1: "1", 0: "0", MISSING: "."}
_PARSE = {"1": 1, "0": 0, ".": MISSING, "": MISSING, "NA": MISSING}


def write_column(column: AnnotationColumn, fh) -> None:
    fh.write(f"#item\t{column.item_key}\t{column.source}\n")
    fh.write("ad_id\tvalue\n")
    for ad in sorted(column.values):
        fh.write(f"{ad}\t{_SYMBOL[column.values[ad]]}\n")


def read_column(stream, item_key: str | None = None, source: str | None = None) -> AnnotationColumn:
    """Read a two-column (ad_id, value) table; values 1, 0 or missing ('.', '', NA)."""
    text = stream if isinstance(stream, str) else "".join(stream)
    lines = text.splitlines()
    key, src = item_key, source
    if lines and lines[0].startswith("#item"):
        parts = lines[0].split("\t")
        key = key or parts[1]
        src = src or (parts[2] if len(parts) > 2 else None)
        lines = lines[1:]
    if not key:
        raise AnnotationError("column file has no item key")
    delim = "\t" if lines and "\t" in lines[0] else ","
    values = {}
    for row_no, row in enumerate(csv.DictReader(io.StringIO("\n".join(lines)), delimiter=delim), start=1):
        cell = (row.get("value") or "").strip()
        if cell not in _PARSE:
            raise AnnotationError(f"{key}: bad value {cell!r} in row {row_no}")
        values[row["ad_id"].strip()] = _PARSE[cell]
    return AnnotationColumn(key, values, src or "stance", {"annotator": key, "source_file": True})


def load_column(path, item_key: str | None = None, source: str | None = None) -> AnnotationColumn:
    with open(path, encoding="utf-8") as fh:
        return read_column(fh.read(), item_key, source)


def assemble_matrix(
    keyword_vectors: Iterable[KeywordVector], columns: Iterable[AnnotationColumn]
) -> IndicatorMatrix:
    vectors = {v.ad_id: v for v in keyword_vectors}
    columns = list(columns)
    ads = sorted(vectors)
    ad_set = set(ads)
    kw_keys = sorted({k for v in vectors.values() for k in v.bits})
    for v in vectors.values():
        if set(v.bits) != set(kw_keys):
            raise AnnotationError(f"keyword vector for ad {v.ad_id} has a different key set")
    items: dict[str, tuple[ItemDescriptor, dict]] = {}
    for k in kw_keys:
        items[k] = (ItemDescriptor(k, "keyword", False), {a: vectors[a].bits[k] for a in ads})
    for col in columns:
        if col.item_key in items:
            raise AnnotationError(f"duplicate item key {col.item_key}")
        missing = sorted(ad_set - set(col.values))
        if missing:
            raise AnnotationError(f"column {col.item_key} lacks ad(s): {', '.join(missing)}")
        extra = sorted(set(col.values) - ad_set)
        if extra:
            raise AnnotationError(f"column {col.item_key} has ad(s) without keyword vectors: {', '.join(extra)}")
        items[col.item_key] = (ItemDescriptor(col.item_key, col.source, col.can_be_missing), col.values)
    order = sorted(items)
    cells = np.array([[items[k][1][a] for k in order] for a in ads], dtype=np.int8).reshape(len(ads), len(order))
    return IndicatorMatrix(tuple(ads), tuple(items[k][0] for k in order), cells)
