"""Synthetic formality-marked language for fixtures and end-to-end checks.

A toy grammar maps English-like sentences onto an invented target language
in which register is a deterministic word substitution: the second-person
pronoun is "aap" (formal) vs "tum" (informal), and every verb carries the
suffix "iye" (formal) vs "o" (informal). Because the substitution is exact,
generated corpora double as oracles: the correct register of any rendered
sentence is known by construction.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .corpus_io import ContrastiveRecord, ParallelPair
from .labels import FormalityLabel
from .model import LabeledPair

PRONOUN = {"formal": "aap", "informal": "tum"}
VERB_SUFFIX = {"formal": "iye", "informal": "o"}

SUBJECTS = {
    "you": None,  # register-marked pronoun
    "mother": "mata",
    "teacher": "guru",
    "friend": "mitra",
}
VERBS = {
    "go": "chal",
    "eat": "khaa",
    "drink": "pii",
    "read": "padh",
    "write": "likh",
    "speak": "bol",
}
OBJECTS = {
    "home": "ghar",
    "water": "paani",
    "food": "khana",
    "book": "kitab",
    "tea": "chai",
    "truth": "sach",
    "here": "yahan",
    "now": "ab",
}
# register-free nouns for Neutral sentences
NEUTRAL_NOUNS = {
    "road": "rasta",
    "night": "raat",
    "house": "makan",
    "sky": "aasman",
    "door": "darwaza",
}


@dataclass(frozen=True)
class SynthSentence:
    source: str
    formal_target: str
    informal_target: str
    formal_tagged: str
    informal_tagged: str
    subject: str
    verb: str
    obj: str


def _render(subject: str, verb: str, obj: str, register: str) -> tuple[str, str]:
    """Returns (plain target, tagged target) for one register."""
    stem = VERBS[verb]
    verb_form = stem + VERB_SUFFIX[register]
    tag_open = "[F]" if register == "formal" else "[I]"
    tag_close = "[/F]" if register == "formal" else "[/I]"
    obj_t = OBJECTS[obj]
    if SUBJECTS[subject] is None:
        pronoun = PRONOUN[register]
        plain = f"{pronoun} {obj_t} {verb_form}"
        tagged = f"{tag_open}{pronoun}{tag_close} {obj_t} {tag_open}{verb_form}{tag_close}"
    else:
        subj_t = SUBJECTS[subject]
        plain = f"{subj_t} {obj_t} {verb_form}"
        tagged = f"{subj_t} {obj_t} {tag_open}{verb_form}{tag_close}"
    return plain, tagged


def make_sentence(subject: str, verb: str, obj: str) -> SynthSentence:
    source = f"{subject} {verb} {obj}"
    formal_plain, formal_tagged = _render(subject, verb, obj, "formal")
    informal_plain, informal_tagged = _render(subject, verb, obj, "informal")
    return SynthSentence(
        source, formal_plain, informal_plain, formal_tagged, informal_tagged,
        subject, verb, obj,
    )


def all_sentences() -> list[SynthSentence]:
    """The full cartesian grammar in deterministic order."""
    out = []
    for subject in SUBJECTS:
        for verb in VERBS:
            for obj in OBJECTS:
                out.append(make_sentence(subject, verb, obj))
    return out


def sample_sentences(n: int, seed: int = 0) -> list[SynthSentence]:
    rng = random.Random(seed)
    pool = all_sentences()
    if n > len(pool):
        raise ValueError(f"at most {len(pool)} distinct sentences available")
    return rng.sample(pool, n)


def holdout_split(holdout: int, seed: int = 0) -> tuple[list[SynthSentence], list[SynthSentence]]:
    """Disjoint (train, held-out) sentence lists over the full grammar."""
    rng = random.Random(seed)
    pool = all_sentences()
    rng.shuffle(pool)
    return pool[holdout:], pool[:holdout]


def contrastive_records(sentences: list[SynthSentence]) -> list[ContrastiveRecord]:
    return [
        ContrastiveRecord(s.source, s.formal_tagged, s.informal_tagged) for s in sentences
    ]


def labeled_pairs(
    sentences: list[SynthSentence], registers: tuple[str, ...] = ("formal", "informal")
) -> list[LabeledPair]:
    """One training pair per requested register per sentence."""
    pairs = []
    for s in sentences:
        if "formal" in registers:
            pairs.append(LabeledPair(s.source, s.formal_target, FormalityLabel.FORMAL))
        if "informal" in registers:
            pairs.append(LabeledPair(s.source, s.informal_target, FormalityLabel.INFORMAL))
    return pairs


def majority_register(verb: str) -> str:
    """The register a verb leans toward in the skewed corpus below."""
    return "formal" if sorted(VERBS).index(verb) % 2 == 0 else "informal"


def register_skewed_pairs(sentences: list[SynthSentence]) -> list[LabeledPair]:
    """Both registers per sentence plus one extra rendering of the verb's
    majority register (2:1 per verb, balanced overall).

    Trained on this corpus, a model without register control settles on
    each verb's majority register, so its outputs split roughly evenly
    between formal and informal across the grammar; a control-token model
    still follows the requested register exactly.
    """
    pairs = []
    for s in sentences:
        formal = LabeledPair(s.source, s.formal_target, FormalityLabel.FORMAL)
        informal = LabeledPair(s.source, s.informal_target, FormalityLabel.INFORMAL)
        pairs.extend([formal, informal])
        pairs.append(formal if majority_register(s.verb) == "formal" else informal)
    return pairs


def neutral_pair(index: int, seed: int = 0) -> ParallelPair:
    rng = random.Random(f"{seed}:{index}")
    nouns = sorted(NEUTRAL_NOUNS)
    a, b = rng.sample(nouns, 2)
    return ParallelPair(f"{a} {b}", f"{NEUTRAL_NOUNS[a]} {NEUTRAL_NOUNS[b]}", index)


def mixed_parallel_corpus(n: int, seed: int = 0, neutral_share: float = 0.1) -> list[ParallelPair]:
    """Parallel pairs whose targets alternate registers, with a sprinkle of
    register-free sentences."""
    rng = random.Random(seed)
    pairs: list[ParallelPair] = []
    pool = all_sentences()
    for i in range(n):
        if rng.random() < neutral_share:
            pairs.append(neutral_pair(i, seed))
            continue
        s = rng.choice(pool)
        target = s.formal_target if rng.random() < 0.5 else s.informal_target
        pairs.append(ParallelPair(s.source, target, i))
    return pairs


def composition_corpus(
    n_formal: int, n_informal: int, n_neutral: int, seed: int = 0
) -> list[ParallelPair]:
    """A shuffled corpus with an exactly known register composition, for
    checking the annotator's distribution report against ground truth."""
    rng = random.Random(seed)
    pool = all_sentences()
    rows: list[tuple[str, str]] = []
    for _ in range(n_formal):
        s = rng.choice(pool)
        rows.append((s.source, s.formal_target))
    for _ in range(n_informal):
        s = rng.choice(pool)
        rows.append((s.source, s.informal_target))
    for i in range(n_neutral):
        p = neutral_pair(i, seed)
        rows.append((p.source_text, p.target_text))
    rng.shuffle(rows)
    return [ParallelPair(src, tgt, i) for i, (src, tgt) in enumerate(rows)]


def write_fixture(
    directory: str | Path, n_contrastive: int = 50, n_parallel: int = 200, seed: int = 7
) -> dict[str, Path]:
    """Write the fixture corpus files used by the CLI walkthrough and the
    service demo. Returns the created paths."""
    from . import corpus_io

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    contrastive_path = directory / "contrastive.tsv"
    parallel_path = directory / "parallel.tsv"
    corpus_io.write_contrastive(
        contrastive_records(sample_sentences(n_contrastive, seed)), contrastive_path
    )
    corpus_io.write_parallel(mixed_parallel_corpus(n_parallel, seed), parallel_path)
    return {"contrastive": contrastive_path, "parallel": parallel_path}
