"""In-tag random masking and masked-token evaluation.

Tokens inside [F]/[I] spans of an annotated sentence are independently
replaced by a mask token with a fixed probability (tags themselves are
preserved byte for byte). A model fills the blanks teacher-forced and is
scored by exact-match accuracy and cross-entropy on the masked positions.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import annotator, textnorm
from .lexicon import TAG_PATTERN, parse_annotated
from .model import START_ID, ModelBundle, _decoder_forward, _encoder_forward, encode_source_text, softmax

_WS_TOKEN_RE = re.compile(r"\S+")


class AlignmentError(ValueError):
    """Predictions do not line up with the masked sentences."""


@dataclass(frozen=True)
class MaskConfig:
    mask_probability: float = 0.15
    seed: int = 0
    mask_token: str = "<mask>"
    guarantee_one: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_probability < 1.0:
            raise ValueError(
                f"mask_probability must be in (0,1), got {self.mask_probability}"
            )


@dataclass(frozen=True)
class MaskedSentence:
    original_tagged: str
    masked_tagged: str
    masked_positions: tuple[int, ...]  # token indices in the plain text
    ground_truth_tokens: tuple[str, ...]


@dataclass(frozen=True)
class MaskedAccuracy:
    acc: float | None  # None when no positions were masked
    correct: int
    total: int


def _plain_tokens(plain_text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in _WS_TOKEN_RE.finditer(plain_text)]


def _segment_offsets(tagged_text: str) -> list[tuple[int, int, int]]:
    """(plain_start, plain_end, tagged_start) for each text segment between
    tag marks."""
    segments = []
    plain_pos = 0
    pos = 0
    for match in TAG_PATTERN.finditer(tagged_text):
        seg_len = match.start() - pos
        segments.append((plain_pos, plain_pos + seg_len, pos))
        plain_pos += seg_len
        pos = match.end()
    segments.append((plain_pos, plain_pos + len(tagged_text) - pos, pos))
    return segments


def _to_tagged_range(segments, start: int, end: int) -> tuple[int, int]:
    """Map a plain-text char range onto the tagged string. The range must
    lie inside a single inter-tag segment (true for any in-span token)."""
    for plain_start, plain_end, tagged_start in segments:
        if plain_start <= start and end <= plain_end:
            return tagged_start + (start - plain_start), tagged_start + (end - plain_start)
    raise ValueError(f"range ({start}, {end}) crosses a tag boundary")


def mask(sentence_tagged: str, cfg: MaskConfig, sentence_index: int = 0) -> MaskedSentence:
    """Randomly mask tokens inside annotation spans.

    Each in-tag token is replaced by ``cfg.mask_token`` with probability
    ``cfg.mask_probability``; when ``guarantee_one`` is set and the draw
    masked nothing, one eligible token is picked uniformly. Sentences
    without in-tag tokens come back unchanged with zero masks. The RNG is
    derived from (seed, sentence_index), so corpus runs are reproducible
    per sentence.
    """
    parsed = parse_annotated(sentence_tagged)
    tokens = _plain_tokens(parsed.plain_text)
    eligible = [
        idx
        for idx, (_, start, end) in enumerate(tokens)
        if any(s.char_span[0] <= start and end <= s.char_span[1] for s in parsed.spans)
    ]
    rng = random.Random(f"{cfg.seed}:{sentence_index}")
    chosen = [idx for idx in eligible if rng.random() < cfg.mask_probability]
    if cfg.guarantee_one and eligible and not chosen:
        chosen = [rng.choice(eligible)]
    if not chosen:
        return MaskedSentence(sentence_tagged, sentence_tagged, (), ())
    segments = _segment_offsets(sentence_tagged)
    masked_text = sentence_tagged
    for idx in sorted(chosen, reverse=True):
        _, start, end = tokens[idx]
        t_start, t_end = _to_tagged_range(segments, start, end)
        masked_text = masked_text[:t_start] + cfg.mask_token + masked_text[t_end:]
    chosen_sorted = tuple(sorted(chosen))
    return MaskedSentence(
        original_tagged=sentence_tagged,
        masked_tagged=masked_text,
        masked_positions=chosen_sorted,
        ground_truth_tokens=tuple(tokens[i][0] for i in chosen_sorted),
    )


def masked_accuracy(
    predictions: Sequence[Sequence[str]], masked: Sequence[MaskedSentence]
) -> MaskedAccuracy:
    """Exact-match rate of predicted tokens against ground truth over all
    masked positions (compared on normalized surfaces)."""
    if len(predictions) != len(masked):
        raise AlignmentError(
            f"{len(predictions)} prediction lists for {len(masked)} sentences"
        )
    correct = 0
    total = 0
    for preds, sentence in zip(predictions, masked):
        if len(preds) != len(sentence.masked_positions):
            raise AlignmentError(
                f"{len(preds)} predictions for {len(sentence.masked_positions)} masked positions"
            )
        for pred, truth in zip(preds, sentence.ground_truth_tokens):
            total += 1
            if textnorm.normalize(pred) == textnorm.normalize(truth):
                correct += 1
    return MaskedAccuracy(correct / total if total else None, correct, total)


def masked_cross_entropy(
    token_distributions: Sequence[Sequence[np.ndarray]],
    masked: Sequence[MaskedSentence],
    vocab,
) -> float | None:
    """Mean negative log-probability of the ground-truth tokens under the
    given per-position distributions. Out-of-vocabulary truths fall back to
    <unk>. Returns None when nothing was masked."""
    if len(token_distributions) != len(masked):
        raise AlignmentError(
            f"{len(token_distributions)} distribution lists for {len(masked)} sentences"
        )
    losses = []
    for rows, sentence in zip(token_distributions, masked):
        if len(rows) != len(sentence.masked_positions):
            raise AlignmentError(
                f"{len(rows)} distributions for {len(sentence.masked_positions)} masked positions"
            )
        for row, truth in zip(rows, sentence.ground_truth_tokens):
            row = np.asarray(row, dtype=float)
            if abs(row.sum() - 1.0) > 1e-6:
                raise ValueError(f"distribution sums to {row.sum()!r}, not 1")
            truth_id = vocab.token_id(textnorm.normalize(truth))
            losses.append(-float(np.log(row[truth_id])))
    return float(np.mean(losses)) if losses else None


def _teacher_forced_rows(
    masked: MaskedSentence, source_text: str, bundle: ModelBundle, cfg: MaskConfig
):
    """Probability rows at the masked positions under teacher forcing on
    the masked target (mask token fed as <unk>)."""
    parsed = parse_annotated(masked.masked_tagged)
    words = [w for w, _, _ in _plain_tokens(parsed.plain_text)]
    formality = annotator.classify(parse_annotated(masked.original_tagged).spans)
    src_ids, control_positions = encode_source_text(
        source_text, formality, bundle.src_vocab, bundle.cfg
    )
    tgt_ids = bundle.tgt_vocab.encode(words)  # mask token is OOV, lands on <unk>
    if len(tgt_ids) + 1 > bundle.cfg.seq_len:
        raise ValueError(
            f"masked sentence of {len(tgt_ids)} tokens exceeds seq_len {bundle.cfg.seq_len}"
        )
    if max(masked.masked_positions) >= len(tgt_ids):
        raise AlignmentError("masked position beyond the tokenized sentence")
    src = np.asarray(src_ids, dtype=int)[None]
    tgt_in = np.asarray([[START_ID, *tgt_ids]], dtype=int)
    enc_out, _ = _encoder_forward(src, bundle.params, bundle.cfg)
    logits, _ = _decoder_forward(
        tgt_in, enc_out, src, [list(control_positions)], bundle.params, bundle.cfg
    )
    # logits at step p predict the token at plain position p
    return [softmax(logits[0, p]) for p in masked.masked_positions]


def fill_mask_with_model(
    masked: MaskedSentence, source_text: str, bundle: ModelBundle,
    cfg: MaskConfig = MaskConfig(),
) -> list[str]:
    """Argmax token for each masked position, teacher-forced on the masked
    target."""
    if not masked.masked_positions:
        return []
    rows = _teacher_forced_rows(masked, source_text, bundle, cfg)
    return [bundle.tgt_vocab.token(int(np.argmax(row))) for row in rows]


def evaluate_corpus(
    rows: Iterable,
    bundle: ModelBundle,
    cfg: MaskConfig = MaskConfig(),
) -> dict:
    """Mask and fill every annotated record; returns accuracy, loss, and
    per-sentence details. Rows need ``source_text`` and ``target_tagged``
    fields; sentences without tags contribute nothing."""
    masked_sentences: list[MaskedSentence] = []
    predictions: list[list[str]] = []
    distributions: list[list[np.ndarray]] = []
    details = []
    for index, row in enumerate(rows):
        masked_sentence = mask(row.target_tagged, cfg, sentence_index=index)
        masked_sentences.append(masked_sentence)
        if masked_sentence.masked_positions:
            prob_rows = _teacher_forced_rows(masked_sentence, row.source_text, bundle, cfg)
            preds = [bundle.tgt_vocab.token(int(np.argmax(r))) for r in prob_rows]
        else:
            prob_rows = []
            preds = []
        predictions.append(preds)
        distributions.append(prob_rows)
        details.append(
            {
                "index": index,
                "masked_tagged": masked_sentence.masked_tagged,
                "predicted": preds,
                "truth": list(masked_sentence.ground_truth_tokens),
            }
        )
    score = masked_accuracy(predictions, masked_sentences)
    loss = masked_cross_entropy(distributions, masked_sentences, bundle.tgt_vocab)
    return {
        "acc": score.acc,
        "correct": score.correct,
        "total": score.total,
        "loss": loss,
        "details": details,
    }
