"""Ads x items ternary indicator matrix and its text file format.

Cells hold 1, 0 or MISSING (stored as -1). Keyword items can never be
missing; annotator items may be.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

MISSING = -1
SOURCES = ("keyword", "llm", "stance")

_HEADER = "#greenwash-matrix v1"
_SYMBOL = {1: "1", 0: "0", MISSING: "."}
_VALUE = {"1": 1, "0": 0, ".": MISSING}


class MatrixError(ValueError):
    pass


@dataclass(frozen=True)
class ItemDescriptor:
    key: str
    source: str = "keyword"
    can_be_missing: bool = False

    def __post_init__(self):
        if self.source not in SOURCES:
            raise MatrixError(f"unknown item source {self.source!r} for item {self.key}")


@dataclass(frozen=True, eq=False)
class IndicatorMatrix:
    ads: tuple[str, ...]
    items: tuple[ItemDescriptor, ...]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape != (len(self.ads), len(self.items)):
            raise MatrixError(
                f"cells shape {cells.shape} does not match {len(self.ads)} ads x {len(self.items)} items"
            )
        if not np.isin(cells, (0, 1, MISSING)).all():
            raise MatrixError("cells must be 1, 0 or MISSING")
        if len(set(self.ads)) != len(self.ads):
            raise MatrixError("duplicate ad ids in matrix")
        keys = [it.key for it in self.items]
        if len(set(keys)) != len(keys):
            raise MatrixError("duplicate item keys in matrix")
        for j, it in enumerate(self.items):
            if not it.can_be_missing and (cells[:, j] == MISSING).any():
                raise MatrixError(f"item {it.key} cannot be missing but has MISSING cells")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def keys(self) -> list[str]:
        return [it.key for it in self.items]

    @property
    def missable(self) -> np.ndarray:
        """Column indices of items that carry a missingness stage."""
        return np.array([j for j, it in enumerate(self.items) if it.can_be_missing], dtype=int)

    def column(self, key: str) -> np.ndarray:
        return self.cells[:, self.keys.index(key)]

    def __eq__(self, other):
        if not isinstance(other, IndicatorMatrix):
            return NotImplemented
        return (
            self.ads == other.ads
            and self.items == other.items
            and np.array_equal(self.cells, other.cells)
        )

    def write(self, fh: TextIO) -> None:
        fh.write(_HEADER + "\n")
        for it in self.items:
            fh.write(f"#item\t{it.key}\t{it.source}\t{int(it.can_be_missing)}\n")
        fh.write("\t".join(["ad_id", *self.keys]) + "\n")
        for ad, row in zip(self.ads, self.cells):
            fh.write("\t".join([ad, *(_SYMBOL[int(v)] for v in row)]) + "\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            self.write(fh)


def read_matrix(fh: Iterable[str]) -> IndicatorMatrix:
    lines = iter(fh)
    first = next(lines, "").rstrip("\n")
    if first != _HEADER:
        raise MatrixError(f"not a matrix file (header {first!r})")
    items: list[ItemDescriptor] = []
    ads: list[str] = []
    rows: list[list[int]] = []
    column_line = None
    for lineno, raw in enumerate(lines, start=2):
        line = raw.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if parts[0] == "#item":
            if len(parts) != 4:
                raise MatrixError(f"line {lineno}: malformed item descriptor")
            items.append(ItemDescriptor(parts[1], parts[2], parts[3] == "1"))
            continue
        if column_line is None:
            column_line = parts
            if parts[1:] != [it.key for it in items]:
                raise MatrixError(f"line {lineno}: column header does not match item descriptors")
            continue
        if len(parts) != len(items) + 1:
            raise MatrixError(f"line {lineno}: expected {len(items) + 1} fields, got {len(parts)}")
        try:
            rows.append([_VALUE[s] for s in parts[1:]])
        except KeyError as exc:
            raise MatrixError(f"line {lineno}: bad cell symbol {exc.args[0]!r}") from None
        ads.append(parts[0])
    cells = np.array(rows, dtype=np.int8).reshape(len(ads), len(items))
    return IndicatorMatrix(tuple(ads), tuple(items), cells)


def load_matrix(path) -> IndicatorMatrix:
    with open(path, encoding="utf-8") as fh:
        return read_matrix(fh)


def loads_matrix(text: str) -> IndicatorMatrix:
    return read_matrix(io.StringIO(text))


def from_rows(
    ads: Sequence[str], items: Sequence[ItemDescriptor], rows
) -> IndicatorMatrix:
    """Build a matrix from nested rows where None marks a missing cell."""
    cells = np.array(
        [[MISSING if v is None else int(v) for v in row] for row in rows], dtype=np.int8
    ).reshape(len(ads), len(items))
    return IndicatorMatrix(tuple(ads), tuple(items), cells)
