"""Parsing of [F]/[I] tagged references and formal/informal lexicon extraction.

A tagged reference looks like ``[F]आप[/F] कैसे हैं``. Tags may not nest and
every open tag must be closed by the matching close tag. Parsing yields the
tag-stripped text plus labeled character spans; ``insert_tags`` is its exact
inverse.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

from . import textnorm
from .labels import FormalityLabel

if TYPE_CHECKING:
    from .corpus_io import ContrastiveRecord


class TagError(ValueError):
    """Annotation tag grammar violation."""


class UnbalancedTagError(TagError):
    """An open tag without its close, or a close without an open."""


class NestedTagError(TagError):
    """A tag opened while another tag is still open."""


class MismatchedCloseError(TagError):
    """A close tag whose register differs from the open tag."""


TAG_PATTERN = re.compile(r"\[(/?)([FI])\]")

OPEN_TAGS = {FormalityLabel.FORMAL: "[F]", FormalityLabel.INFORMAL: "[I]"}
CLOSE_TAGS = {FormalityLabel.FORMAL: "[/F]", FormalityLabel.INFORMAL: "[/I]"}
_TAG_LABELS = {"F": FormalityLabel.FORMAL, "I": FormalityLabel.INFORMAL}


@dataclass(frozen=True)
class LabeledSpan:
    """A Formal or Informal phrase at ``char_span`` in the plain text."""

    label: FormalityLabel
    phrase: str
    char_span: tuple[int, int]


@dataclass(frozen=True)
class AnnotatedSentence:
    plain_text: str
    spans: tuple[LabeledSpan, ...]


@dataclass(frozen=True)
class FormalityLexicon:
    """Disjoint formal/informal phrase sets; contested phrases are
    quarantined in ``conflicts`` instead of being kept or dropped silently."""

    formal: frozenset[str]
    informal: frozenset[str]
    conflicts: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        overlap = self.formal & self.informal
        if overlap:
            raise ValueError(
                f"formal and informal sets must be disjoint; overlap: {sorted(overlap)}"
            )

    @classmethod
    def from_phrase_sets(
        cls, formal: Iterable[str], informal: Iterable[str]
    ) -> "FormalityLexicon":
        formal_set = frozenset(formal)
        informal_set = frozenset(informal)
        conflicts = formal_set & informal_set
        return cls(formal_set - conflicts, informal_set - conflicts, conflicts)


def parse_annotated(tagged_text: str) -> AnnotatedSentence:
    """Strip [F]/[I] tags, returning plain text plus labeled spans whose
    offsets index into the plain text.

    Raises UnbalancedTagError, NestedTagError, or MismatchedCloseError on
    malformed input.
    """
    plain_parts: list[str] = []
    spans: list[LabeledSpan] = []
    plain_len = 0
    open_label: FormalityLabel | None = None
    open_start = 0
    pos = 0
    for match in TAG_PATTERN.finditer(tagged_text):
        segment = tagged_text[pos : match.start()]
        plain_parts.append(segment)
        plain_len += len(segment)
        closing, register = match.group(1), match.group(2)
        label = _TAG_LABELS[register]
        if not closing:
            if open_label is not None:
                raise NestedTagError(
                    f"tag {match.group()} opened inside an unclosed "
                    f"{OPEN_TAGS[open_label]} at offset {match.start()}"
                )
            open_label = label
            open_start = plain_len
        else:
            if open_label is None:
                raise UnbalancedTagError(
                    f"close tag {match.group()} without an open tag at offset {match.start()}"
                )
            if label is not open_label:
                raise MismatchedCloseError(
                    f"{OPEN_TAGS[open_label]} closed by {match.group()} at offset {match.start()}"
                )
            phrase = "".join(plain_parts)[open_start:plain_len]
            spans.append(LabeledSpan(label, phrase, (open_start, plain_len)))
            open_label = None
        pos = match.end()
    if open_label is not None:
        raise UnbalancedTagError(f"{OPEN_TAGS[open_label]} was never closed")
    plain_parts.append(tagged_text[pos:])
    return AnnotatedSentence("".join(plain_parts), tuple(spans))


def insert_tags(plain_text: str, spans: Iterable[LabeledSpan]) -> str:
    """Inverse of parse_annotated: wrap each span of ``plain_text`` with its
    register tags. Spans must be in-bounds, sorted, and non-overlapping."""
    ordered = sorted(spans, key=lambda s: s.char_span)
    out: list[str] = []
    cursor = 0
    for span in ordered:
        start, end = span.char_span
        if start < cursor:
            raise ValueError(f"overlapping or unsorted spans at {span.char_span}")
        if end > len(plain_text) or start > end:
            raise ValueError(f"span {span.char_span} outside text of length {len(plain_text)}")
        if span.label is FormalityLabel.NEUTRAL:
            raise ValueError("spans must be Formal or Informal")
        out.append(plain_text[cursor:start])
        out.append(OPEN_TAGS[span.label])
        out.append(plain_text[start:end])
        out.append(CLOSE_TAGS[span.label])
        cursor = end
    out.append(plain_text[cursor:])
    return "".join(out)


def extract_lexicon(
    records: Iterable["ContrastiveRecord"],
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> FormalityLexicon:
    """Collect normalized Formal span phrases and Informal span phrases from
    contrastive records into two sets; phrases appearing in both are moved
    to ``conflicts``.

    Parse errors are re-raised with the offending record index.
    """
    formal: set[str] = set()
    informal: set[str] = set()
    for index, record in enumerate(records):
        for tagged in (record.formal_ref_tagged, record.informal_ref_tagged):
            try:
                sentence = parse_annotated(tagged)
            except TagError as err:
                raise type(err)(f"record {index}: {err}") from err
            for span in sentence.spans:
                phrase = textnorm.normalize(span.phrase, norm_cfg)
                if not phrase:
                    continue
                if span.label is FormalityLabel.FORMAL:
                    formal.add(phrase)
                else:
                    informal.add(phrase)
    return FormalityLexicon.from_phrase_sets(formal, informal)


def lexicon_report(lexicon: FormalityLexicon) -> dict[str, int]:
    return {
        "formal_count": len(lexicon.formal),
        "informal_count": len(lexicon.informal),
        "conflict_count": len(lexicon.conflicts),
    }
