"""Readers for ad, entity-registry and covariate files.

Ad files hold one JSON object per line. Registry and covariate files are
delimited tables with a header row (comma by default, tab if the header has
tabs and no commas).
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

AD_FIELDS = ("ad_id", "page_id", "page_name", "funder", "text", "language", "start_date", "end_date", "impressions")
MANDATORY = ("ad_id", "page_id", "text")
ENTITY_TYPES = ("oil_company", "subsidiary", "think_tank", "trade_association", "interest_group", "other")
MISSING_MARKERS = frozenset({"", "NA"})
SHARE_SLACK = 1e-9


class IngestError(ValueError):
    pass


class DuplicateIdError(IngestError):
    pass


@dataclass(frozen=True)
class ImpressionCell:
    dimension: str
    group_key: str
    value: float
    is_share: bool = True


@dataclass(frozen=True)
class AdRecord:
    ad_id: str
    page_id: str
    text: str
    page_name: str = ""
    funder: str = ""
    language: str = "en"
    start_date: dt.date | None = None
    end_date: dt.date | None = None
    impressions: tuple[ImpressionCell, ...] = ()

    def __post_init__(self):
        if not self.ad_id:
            raise IngestError("ad_id must be nonempty")
        if self.text is None:
            raise IngestError(f"ad {self.ad_id}: text must be present")
        if self.start_date and self.end_date and self.end_date < self.start_date:
            raise IngestError(f"ad {self.ad_id}: end_date before start_date")

    def breakdown(self, dimension: str) -> dict[str, float]:
        return {c.group_key: c.value for c in self.impressions if c.dimension == dimension}

    def shares(self, dimension: str) -> dict[str, float]:
        """Impression breakdown for one dimension as fractions of the ad's total."""
        cells = [c for c in self.impressions if c.dimension == dimension]
        if not cells or cells[0].is_share:
            return {c.group_key: c.value for c in cells}
        total = sum(c.value for c in cells)
        return {c.group_key: (c.value / total if total > 0 else 0.0) for c in cells}

    def to_json(self) -> dict:
        out = {
            "ad_id": self.ad_id,
            "page_id": self.page_id,
            "page_name": self.page_name,
            "funder": self.funder,
            "text": self.text,
            "language": self.language,
        }
        if self.start_date:
            out["start_date"] = self.start_date.isoformat()
        if self.end_date:
            out["end_date"] = self.end_date.isoformat()
        dims: dict[str, list] = {}
        for c in self.impressions:
            dims.setdefault(c.dimension, []).append({"group_key": c.group_key, "value": c.value})
        if dims:
            out["impressions"] = dims
        return out


@dataclass(frozen=True)
class LineError:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list
    errors: list[LineError] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _date(value, name):
    if value in (None, ""):
        return None
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise IngestError(f"bad {name} {value!r}") from None


def _impressions(raw, kind: str) -> tuple[ImpressionCell, ...]:
    if raw in (None, ""):
        return ()
    if not isinstance(raw, Mapping):
        raise IngestError("impressions must map dimension names to lists of {group_key, value}")
    is_share = kind == "share"
    cells = []
    for dim, entries in raw.items():
        total = 0.0
        for e in entries:
            try:
                key, value = str(e["group_key"]), float(e["value"])
            except (KeyError, TypeError, ValueError):
                raise IngestError(f"malformed impression entry in dimension {dim}") from None
            if not math.isfinite(value) or value < 0:
                raise IngestError(f"impression value {value} in {dim}/{key} must be finite and >= 0")
            if is_share and value > 1:
                raise IngestError(f"impression share {value} in {dim}/{key} exceeds 1")
            total += value
            cells.append(ImpressionCell(str(dim), key, value, is_share))
        if is_share and total > 1 + SHARE_SLACK:
            raise IngestError(f"impression shares in dimension {dim} sum to {total:.6g} > 1")
    return tuple(cells)


def parse_ads(
    stream: Iterable[str],
    schema: Mapping[str, str] | None = None,
    impression_kind: str = "share",
) -> ParseResult:
    """Parse line-delimited ad records.

    ``schema`` maps source field names to AdRecord field names; unmapped
    source fields keep their own names. ``impression_kind`` is "share" or
    "count" for the whole file. Malformed lines are reported in
    ``ParseResult.errors``; a repeated ad_id raises DuplicateIdError.
    """
    if impression_kind not in ("share", "count"):
        raise IngestError(f"impression_kind must be 'share' or 'count', not {impression_kind!r}")
    schema = dict(schema or {})
    records: list[AdRecord] = []
    errors: list[LineError] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            errors.append(LineError(lineno, "empty line"))
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise IngestError("record is not an object")
            obj = {schema.get(k, k): v for k, v in obj.items()}
            absent = [f for f in MANDATORY if obj.get(f) is None or (f != "text" and obj.get(f) == "")]
            if absent:
                raise IngestError(f"missing mandatory field {', '.join(absent)}")
            rec = AdRecord(
                ad_id=str(obj["ad_id"]),
                page_id=str(obj["page_id"]),
                text=str(obj["text"]),
                page_name=str(obj.get("page_name") or ""),
                funder=str(obj.get("funder") or ""),
                language=str(obj.get("language") or "en"),
                start_date=_date(obj.get("start_date"), "start_date"),
                end_date=_date(obj.get("end_date"), "end_date"),
                impressions=_impressions(obj.get("impressions"), impression_kind),
            )
        except (json.JSONDecodeError, IngestError) as exc:
            errors.append(LineError(lineno, str(exc)))
            continue
        if rec.ad_id in seen:
            raise DuplicateIdError(f"duplicate ad_id {rec.ad_id}")
        seen.add(rec.ad_id)
        records.append(rec)
    return ParseResult(records, errors)


def write_ads(records: Iterable[AdRecord], fh: TextIO) -> None:
    for r in records:
        fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_ads(path, impression_kind: str = "share", strict: bool = True) -> list[AdRecord]:
    with open(path, encoding="utf-8") as fh:
        result = parse_ads(fh, impression_kind=impression_kind)
    if strict and result.errors:
        first = result.errors[0]
        raise IngestError(f"{path}: {len(result.errors)} malformed line(s); line {first.line}: {first.message}")
    return result.records


# delimited tables


def _reader(stream) -> csv.DictReader:
    text = stream if isinstance(stream, str) else "".join(stream)
    head = text.split("\n", 1)[0]
    delim = "\t" if "\t" in head and "," not in head else ","
    return csv.DictReader(io.StringIO(text), delimiter=delim)


@dataclass(frozen=True)
class RegistryEntry:
    page_id: str
    entity_name: str
    entity_type: str


@dataclass(frozen=True)
class EntityRegistry:
    entries: tuple[RegistryEntry, ...] = ()

    def __post_init__(self):
        ids = [e.page_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise IngestError(f"duplicate page_id {dup} in registry")

    def __len__(self):
        return len(self.entries)

    def __contains__(self, page_id):
        return any(e.page_id == page_id for e in self.entries)

    @property
    def page_ids(self) -> frozenset[str]:
        return frozenset(e.page_id for e in self.entries)

    def get(self, page_id: str) -> RegistryEntry | None:
        return next((e for e in self.entries if e.page_id == page_id), None)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["page_id", "name", "type"])
        for e in self.entries:
            w.writerow([e.page_id, e.entity_name, e.entity_type])
        return buf.getvalue()


def parse_registry(stream) -> EntityRegistry:
    reader = _reader(stream)
    entries = []
    seen: set[str] = set()
    for row_no, row in enumerate(reader, start=1):
        pid = (row.get("page_id") or "").strip()
        name = (row.get("name") or row.get("entity_name") or "").strip()
        etype = (row.get("type") or row.get("entity_type") or "").strip()
        if not pid:
            raise IngestError(f"registry row {row_no}: missing page_id")
        if etype not in ENTITY_TYPES:
            raise IngestError(f"registry row {row_no} ({pid}): unknown entity_type {etype!r}")
        if pid in seen:
            raise IngestError(f"registry row {row_no}: duplicate page_id {pid}")
        seen.add(pid)
        entries.append(RegistryEntry(pid, name, etype))
    return EntityRegistry(tuple(entries))


def load_registry(path) -> EntityRegistry:
    with open(path, encoding="utf-8") as fh:
        return parse_registry(fh.read())


@dataclass(frozen=True, eq=False)
class CovariateTable:
    """Numeric covariates keyed by unit; missing cells are NaN."""

    unit_ids: tuple[str, ...]
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise IngestError("duplicate unit_id in covariate table")
        for name, col in self.columns.items():
            if len(col) != len(self.unit_ids):
                raise IngestError(f"column {name} has {len(col)} values for {len(self.unit_ids)} units")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def missing(self, name: str) -> np.ndarray:
        return np.isnan(self.columns[name])

    @property
    def n_rows(self) -> int:
        return len(self.unit_ids)


def parse_covariates(stream, expected_columns: Sequence[str] = (), id_column: str = "unit_id") -> CovariateTable:
    reader = _reader(stream)
    header = reader.fieldnames or []
    if id_column not in header:
        raise IngestError(f"covariate table has no {id_column} column")
    absent = [c for c in expected_columns if c not in header]
    if absent:
        raise IngestError(f"covariate table lacks expected column(s): {', '.join(absent)}")
    numeric = [c for c in header if c != id_column]
    ids: list[str] = []
    values: dict[str, list[float]] = {c: [] for c in numeric}
    for row_no, row in enumerate(reader, start=1):
        ids.append((row[id_column] or "").strip())
        for c in numeric:
            cell = (row.get(c) or "").strip()
            if cell in MISSING_MARKERS:
                values[c].append(math.nan)
                continue
            try:
                values[c].append(float(cell))
            except ValueError:
                raise IngestError(f"non-numeric value {cell!r} at (row {row_no}, col {c})") from None
    return CovariateTable(tuple(ids), {c: np.array(v, dtype=float) for c, v in values.items()})


def load_covariates(path, expected_columns: Sequence[str] = (), id_column: str = "unit_id") -> CovariateTable:
    with open(path, encoding="utf-8") as fh:
        return parse_covariates(fh.read(), expected_columns, id_column)


def write_covariates(table: CovariateTable, fh: TextIO, id_column: str = "unit_id") -> None:
    w = csv.writer(fh, lineterminator="\n")
    names = list(table.columns)
    w.writerow([id_column, *names])
    for i, uid in enumerate(table.unit_ids):
        w.writerow([uid, *("NA" if math.isnan(table.columns[c][i]) else repr(float(table.columns[c][i])) for c in names)])
