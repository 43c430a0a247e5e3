"""Readers and writers for corpus artifacts.

All corpus files are UTF-8 TSV; tabs and newlines are forbidden inside
fields and rejected on write. The lexicon file is a JSON object with
"formal" and "informal" keys, each a sorted array of unique phrases.
Parallel corpora are streamed and never fully materialized.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence, TypeVar

from . import textnorm
from .labels import FormalityLabel
from .lexicon import FormalityLexicon, TagError, parse_annotated

T = TypeVar("T")


class CorpusFormatError(ValueError):
    """A line that does not satisfy the file schema."""

    def __init__(self, path: str | Path, line_no: int, reason: str, detail: str):
        super().__init__(f"{path}:{line_no}: {reason}: {detail}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


@dataclass(frozen=True)
class ParallelPair:
    source_text: str
    target_text: str
    id: int


@dataclass(frozen=True)
class ContrastiveRecord:
    source_text: str
    formal_ref_tagged: str
    informal_ref_tagged: str


@dataclass(frozen=True)
class AnnotatedRecord:
    source_text: str
    target_tagged: str
    label: FormalityLabel


@dataclass(frozen=True)
class SplitConfig:
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must be in (0,1), got {self.validation_fraction}"
            )


def _split_line(path: str | Path, line_no: int, line: str, n_cols: int) -> list[str]:
    fields = line.rstrip("\n").rstrip("\r").split("\t")
    if len(fields) != n_cols:
        raise CorpusFormatError(
            path, line_no, "malformed-line", f"expected {n_cols} columns, got {len(fields)}"
        )
    return fields


def _check_field(value: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValueError(f"field may not contain tabs or newlines: {value!r}")
    return value


def read_contrastive(path: str | Path) -> list[ContrastiveRecord]:
    """Read a contrastive reference file (source / formal_ref_tagged /
    informal_ref_tagged). Both tagged references must parse, and each must
    carry only its own register's tags."""
    records: list[ContrastiveRecord] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            source, formal_ref, informal_ref = _split_line(path, line_no, line, 3)
            for tagged, expected in (
                (formal_ref, FormalityLabel.FORMAL),
                (informal_ref, FormalityLabel.INFORMAL),
            ):
                try:
                    sentence = parse_annotated(tagged)
                except TagError as err:
                    raise CorpusFormatError(
                        path, line_no, "tag-parse-error", str(err)
                    ) from err
                wrong = [s for s in sentence.spans if s.label is not expected]
                if wrong:
                    raise CorpusFormatError(
                        path,
                        line_no,
                        "register-mismatch",
                        f"{expected.value} reference carries {wrong[0].label.value} tags",
                    )
            records.append(ContrastiveRecord(source, formal_ref, informal_ref))
    return records


def write_contrastive(records: Iterable[ContrastiveRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(
                "\t".join(
                    (
                        _check_field(rec.source_text),
                        _check_field(rec.formal_ref_tagged),
                        _check_field(rec.informal_ref_tagged),
                    )
                )
                + "\n"
            )


def read_parallel(path: str | Path) -> Iterator[ParallelPair]:
    """Lazily yield source/target pairs with sequential ids. Constant memory
    in corpus size; the file handle closes when the stream is exhausted."""
    handle = open(path, "r", encoding="utf-8")
    return _iter_parallel(handle, path)


def _iter_parallel(handle: IO[str], path: str | Path) -> Iterator[ParallelPair]:
    with handle:
        for line_no, line in enumerate(handle, start=1):
            source, target = _split_line(path, line_no, line, 2)
            if not textnorm.normalize(source) or not textnorm.normalize(target):
                raise CorpusFormatError(
                    path, line_no, "empty-text", "field is empty after normalization"
                )
            yield ParallelPair(source, target, line_no - 1)


def write_parallel(pairs: Iterable[ParallelPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(
                _check_field(pair.source_text) + "\t" + _check_field(pair.target_text) + "\n"
            )


def read_annotated(path: str | Path) -> Iterator[AnnotatedRecord]:
    """Lazily yield rows of an annotated corpus (source / target_tagged /
    label)."""
    handle = open(path, "r", encoding="utf-8")
    return _iter_annotated(handle, path)


def _iter_annotated(handle: IO[str], path: str | Path) -> Iterator[AnnotatedRecord]:
    with handle:
        for line_no, line in enumerate(handle, start=1):
            source, target_tagged, label = _split_line(path, line_no, line, 3)
            try:
                parsed_label = FormalityLabel.from_string(label)
            except ValueError as err:
                raise CorpusFormatError(path, line_no, "malformed-line", str(err)) from err
            try:
                parse_annotated(target_tagged)
            except TagError as err:
                raise CorpusFormatError(path, line_no, "tag-parse-error", str(err)) from err
            yield AnnotatedRecord(source, target_tagged, parsed_label)


def write_annotated(rows: Iterable[AnnotatedRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(
                "\t".join(
                    (
                        _check_field(row.source_text),
                        _check_field(row.target_tagged),
                        row.label.value,
                    )
                )
                + "\n"
            )


def write_lexicon(lexicon: FormalityLexicon, path: str | Path) -> None:
    payload = {
        "formal": sorted(lexicon.formal),
        "informal": sorted(lexicon.informal),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")


def read_lexicon(path: str | Path) -> FormalityLexicon:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return FormalityLexicon.from_phrase_sets(payload["formal"], payload["informal"])


def split(items: Sequence[T], cfg: SplitConfig) -> tuple[list[T], list[T]]:
    """Seeded shuffle then prefix cut. Returns (train, validation) with
    |validation| = round(validation_fraction * n), rounding half up."""
    if not items:
        raise ValueError("empty-input: cannot split an empty corpus")
    rng = random.Random(cfg.seed)
    shuffled = list(items)
    rng.shuffle(shuffled)
    n_val = int(cfg.validation_fraction * len(shuffled) + 0.5)
    return shuffled[n_val:], shuffled[:n_val]
