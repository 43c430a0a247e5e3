"""Formality matched-accuracy over hypotheses and contrastive references.

Each evaluation entry pairs a hypothesis with a formal and an informal
reference whose contrastive phrases are tagged. An entry counts toward
``match_f`` when the formal reference's phrases all occur in the hypothesis
and the informal reference's do not; ``match_i`` is the converse. Entries
matching neither or both are neutral_or_mixed, so
match_f + match_i <= number of entries always holds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import textnorm
from .lexicon import AnnotatedSentence, parse_annotated


class EmptyEvalSetError(ValueError):
    pass


@dataclass(frozen=True)
class EvalEntry:
    hypothesis: str
    formal_ref: AnnotatedSentence
    informal_ref: AnnotatedSentence


@dataclass(frozen=True)
class MetricResult:
    match_f: int
    match_i: int
    acc_f: float | None
    acc_i: float | None
    neutral_or_mixed: int
    n: int

    def as_dict(self) -> dict:
        return {
            "match_f": self.match_f,
            "match_i": self.match_i,
            "acc_f": self.acc_f,
            "acc_i": self.acc_i,
            "neutral_or_mixed": self.neutral_or_mixed,
            "n": self.n,
        }


def phi(ref: AnnotatedSentence) -> frozenset[str]:
    """The normalized contrastive phrases of a reference's labeled spans.
    Phrases that normalize to the empty string are dropped."""
    phrases = set()
    for span in ref.spans:
        normalized = textnorm.normalize(span.phrase)
        if normalized:
            phrases.add(normalized)
    return frozenset(phrases)


def contains(hypothesis: str, phrases: frozenset[str] | set[str], mode: str = "all") -> bool:
    """Whether the phrases occur in the hypothesis as contiguous token
    subsequences (after normalization). ``mode="all"`` requires every
    phrase, ``mode="any"`` at least one. An empty phrase set never matches.
    """
    if mode not in ("all", "any"):
        raise ValueError(f"mode must be 'all' or 'any', got {mode!r}")
    if not phrases:
        return False
    hyp_tokens = textnorm.normalize(hypothesis).split()
    found = (_subsequence_present(hyp_tokens, phrase.split()) for phrase in phrases)
    return all(found) if mode == "all" else any(found)


def _subsequence_present(tokens: list[str], phrase_tokens: list[str]) -> bool:
    if not phrase_tokens:
        return False
    span = len(phrase_tokens)
    return any(
        tokens[i : i + span] == phrase_tokens for i in range(len(tokens) - span + 1)
    )


def matched_accuracy(eval_set: Sequence[EvalEntry], mode: str = "all") -> MetricResult:
    """Count formal-only and informal-only matches over the evaluation set
    and derive the two register accuracies.

    acc_f = match_f / (match_f + match_i), and symmetrically for acc_i;
    both are None when there are no matches at all.
    """
    if not eval_set:
        raise EmptyEvalSetError("matched_accuracy requires at least one entry")
    match_f = match_i = neutral_or_mixed = 0
    for entry in eval_set:
        formal_in = contains(entry.hypothesis, phi(entry.formal_ref), mode)
        informal_in = contains(entry.hypothesis, phi(entry.informal_ref), mode)
        if formal_in and not informal_in:
            match_f += 1
        elif informal_in and not formal_in:
            match_i += 1
        else:
            neutral_or_mixed += 1
    denom = match_f + match_i
    acc_f = match_f / denom if denom else None
    acc_i = match_i / denom if denom else None
    return MetricResult(match_f, match_i, acc_f, acc_i, neutral_or_mixed, len(eval_set))


def build_eval_set(
    records: Sequence, hypotheses: Sequence[str]
) -> list[EvalEntry]:
    """Align hypotheses with contrastive records (one hypothesis per record,
    same order)."""
    if len(records) != len(hypotheses):
        raise ValueError(
            f"got {len(hypotheses)} hypotheses for {len(records)} references"
        )
    entries = []
    for record, hyp in zip(records, hypotheses):
        entries.append(
            EvalEntry(
                hypothesis=hyp,
                formal_ref=parse_annotated(record.formal_ref_tagged),
                informal_ref=parse_annotated(record.informal_ref_tagged),
            )
        )
    return entries
