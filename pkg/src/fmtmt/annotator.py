"""Automatic formality labelling of a parallel corpus from a lexicon.

Lexicon phrases are matched as contiguous token subsequences of the
normalized target sentence (leftmost-longest), each match is wrapped in its
register tags, and the sentence is labeled by majority vote over matches.
A tie, including zero matches on either side, is Neutral.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

from . import textnorm
from .corpus_io import ParallelPair
from .labels import FormalityLabel
from .lexicon import FormalityLexicon, LabeledSpan, insert_tags


@dataclass(frozen=True)
class AnnotationResult:
    pair_id: int
    source_text: str
    target_tagged: str
    label: FormalityLabel
    formal_hits: int
    informal_hits: int


@dataclass
class DistributionReport:
    """Label counts over an annotated corpus; filled as the stream is
    consumed."""

    counts: dict[FormalityLabel, int] = field(
        default_factory=lambda: {label: 0 for label in FormalityLabel}
    )

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, label: FormalityLabel) -> None:
        self.counts[label] += 1

    def as_dict(self) -> dict[str, int]:
        out = {label.value: self.counts[label] for label in FormalityLabel}
        out["total"] = self.total
        return out


@lru_cache(maxsize=16)
def _phrase_index(
    formal: frozenset[str], informal: frozenset[str]
) -> tuple[dict[tuple[str, ...], FormalityLabel], int]:
    table: dict[tuple[str, ...], FormalityLabel] = {}
    for phrase in formal:
        table[tuple(phrase.split())] = FormalityLabel.FORMAL
    for phrase in informal:
        table[tuple(phrase.split())] = FormalityLabel.INFORMAL
    max_len = max((len(key) for key in table), default=0)
    return table, max_len


def match_phrases(
    tokens: Sequence[textnorm.Token], lexicon: FormalityLexicon
) -> list[LabeledSpan]:
    """Find all non-overlapping lexicon phrase occurrences in a token
    sequence. Scans left to right; at each position the longest matching
    phrase wins."""
    table, max_len = _phrase_index(lexicon.formal, lexicon.informal)
    if not table:
        return []
    words = textnorm.surfaces(tokens)
    spans: list[LabeledSpan] = []
    i = 0
    n = len(words)
    while i < n:
        matched = False
        for length in range(min(max_len, n - i), 0, -1):
            label = table.get(tuple(words[i : i + length]))
            if label is not None:
                start = tokens[i].span[0]
                end = tokens[i + length - 1].span[1]
                spans.append(LabeledSpan(label, " ".join(words[i : i + length]), (start, end)))
                i += length
                matched = True
                break
        if not matched:
            i += 1
    return spans


def classify(spans: Iterable[LabeledSpan]) -> FormalityLabel:
    """Majority vote over span labels; an exact tie (including zero-zero)
    is Neutral."""
    formal = informal = 0
    for span in spans:
        if span.label is FormalityLabel.FORMAL:
            formal += 1
        elif span.label is FormalityLabel.INFORMAL:
            informal += 1
    if formal > informal:
        return FormalityLabel.FORMAL
    if informal > formal:
        return FormalityLabel.INFORMAL
    return FormalityLabel.NEUTRAL


def tag_sentence(normalized_target: str, spans: Sequence[LabeledSpan]) -> str:
    """Wrap each matched span of the normalized sentence in its register
    tags. Raises ValueError if spans overlap."""
    return insert_tags(normalized_target, spans)


def annotate_pair(
    pair: ParallelPair,
    lexicon: FormalityLexicon,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> AnnotationResult:
    normalized = textnorm.normalize(pair.target_text, norm_cfg)
    tokens = textnorm.tokenize(pair.target_text, norm_cfg)
    spans = match_phrases(tokens, lexicon)
    formal_hits = sum(1 for s in spans if s.label is FormalityLabel.FORMAL)
    informal_hits = len(spans) - formal_hits
    return AnnotationResult(
        pair_id=pair.id,
        source_text=pair.source_text,
        target_tagged=tag_sentence(normalized, spans),
        label=classify(spans),
        formal_hits=formal_hits,
        informal_hits=informal_hits,
    )


def annotate_corpus(
    pairs: Iterable[ParallelPair],
    lexicon: FormalityLexicon,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> tuple[Iterator[AnnotationResult], DistributionReport]:
    """Annotate a (possibly streamed) corpus pair by pair.

    Returns a lazy result stream plus a report that accumulates label
    counts as the stream is consumed; the report is complete only once the
    stream is exhausted.
    """
    report = DistributionReport()

    def generate() -> Iterator[AnnotationResult]:
        for pair in pairs:
            result = annotate_pair(pair, lexicon, norm_cfg)
            report.add(result.label)
            yield result

    return generate(), report
