import random

import pytest

from fmtmt.corpus_io import ContrastiveRecord
from fmtmt.labels import FormalityLabel
from fmtmt.lexicon import (
    FormalityLexicon,
    LabeledSpan,
    MismatchedCloseError,
    NestedTagError,
    UnbalancedTagError,
    extract_lexicon,
    insert_tags,
    lexicon_report,
    parse_annotated,
)

F = FormalityLabel.FORMAL
I = FormalityLabel.INFORMAL


def _record(formal_tagged: str, informal_tagged: str, source: str = "src") -> ContrastiveRecord:
    return ContrastiveRecord(source, formal_tagged, informal_tagged)


def test_parse_single_formal_span():
    sent = parse_annotated("[F]आप[/F] कैसे हैं")
    assert sent.plain_text == "आप कैसे हैं"
    assert sent.spans == (LabeledSpan(F, "आप", (0, 2)),)


def test_parse_no_tags():
    sent = parse_annotated("no tags here")
    assert sent.plain_text == "no tags here"
    assert sent.spans == ()


def test_parse_mismatched_close():
    with pytest.raises(MismatchedCloseError):
        parse_annotated("[F]x[/I]")


def test_parse_unbalanced_open():
    with pytest.raises(UnbalancedTagError):
        parse_annotated("[F]x never closed")


def test_parse_unbalanced_close():
    with pytest.raises(UnbalancedTagError):
        parse_annotated("x[/F]")


def test_parse_nested():
    with pytest.raises(NestedTagError):
        parse_annotated("[F]a [I]b[/I][/F]")


def test_parse_multiple_spans_offsets():
    sent = parse_annotated("[I]तुम[/I] कहाँ [I]जाओ[/I]")
    assert sent.plain_text == "तुम कहाँ जाओ"
    assert [s.phrase for s in sent.spans] == ["तुम", "जाओ"]
    for span in sent.spans:
        start, end = span.char_span
        assert sent.plain_text[start:end] == span.phrase


def test_insert_tags_round_trip_simple():
    tagged = "[F]आप[/F] कैसे [I]हो[/I]"
    sent = parse_annotated(tagged)
    assert insert_tags(sent.plain_text, sent.spans) == tagged


def _random_tagged(rng: random.Random) -> str:
    words = ["aap", "tum", "ghar", "paani", "chalo", "खाना", "पीजिये"]
    parts = []
    open_allowed = True
    for _ in range(rng.randrange(1, 10)):
        w = rng.choice(words)
        if open_allowed and rng.random() < 0.4:
            label = rng.choice([F, I])
            open_tag = "[F]" if label is F else "[I]"
            close_tag = "[/F]" if label is F else "[/I]"
            n = rng.randrange(1, 3)
            phrase = " ".join(rng.choice(words) for _ in range(n))
            parts.append(f"{open_tag}{phrase}{close_tag}")
        else:
            parts.append(w)
    return " ".join(parts)


def test_parse_insert_round_trip_randomized():
    rng = random.Random(4242)
    for _ in range(300):
        tagged = _random_tagged(rng)
        sent = parse_annotated(tagged)
        # length bookkeeping: plain text is tagged text minus the tag marks
        tag_chars = sum(len(t) for t in ("[F]", "[/F]")) * sum(
            1 for s in sent.spans if s.label is F
        ) + sum(len(t) for t in ("[I]", "[/I]")) * sum(1 for s in sent.spans if s.label is I)
        assert len(sent.plain_text) == len(tagged) - tag_chars
        assert insert_tags(sent.plain_text, sent.spans) == tagged


def test_insert_tags_rejects_overlap():
    spans = (LabeledSpan(F, "ab", (0, 2)), LabeledSpan(I, "bc", (1, 3)))
    with pytest.raises(ValueError):
        insert_tags("abcd", spans)


def test_extract_lexicon_basic():
    lex = extract_lexicon([_record("[F]आप[/F] कैसे", "[I]तुम[/I] कैसे")])
    assert lex.formal == {"आप"}
    assert lex.informal == {"तुम"}
    assert lex.conflicts == frozenset()


def test_extract_lexicon_conflict_quarantined():
    records = [
        _record("[F]जी[/F] हाँ", "[I]अरे[/I] हाँ"),
        _record("[F]कृपया[/F]", "[I]जी[/I] ठीक"),
    ]
    lex = extract_lexicon(records)
    assert "जी" in lex.conflicts
    assert "जी" not in lex.formal and "जी" not in lex.informal
    assert lex.formal == {"कृपया"}
    assert lex.informal == {"अरे"}


def test_extract_lexicon_empty():
    lex = extract_lexicon([])
    assert lex.formal == frozenset() and lex.informal == frozenset()
    assert lexicon_report(lex) == {
        "formal_count": 0,
        "informal_count": 0,
        "conflict_count": 0,
    }


def test_extract_lexicon_normalizes_phrases():
    lex = extract_lexicon([_record("[F]Aap Ji![/F]", "[I]tum[/I]")])
    assert lex.formal == {"aap ji"}


def test_extract_lexicon_parse_error_carries_record_index():
    records = [_record("[F]ok[/F]", "[I]ok[/I]"), _record("[F]bad", "[I]x[/I]")]
    with pytest.raises(UnbalancedTagError, match="record 1"):
        extract_lexicon(records)


def test_extract_lexicon_counts_match_record_count():
    # N distinct single-tag records -> formal_count + informal_count == N
    rng = random.Random(11)
    records = []
    for i in range(40):
        word = f"w{i}"
        if rng.random() < 0.5:
            records.append(_record(f"[F]{word}[/F]", "plain"))
        else:
            records.append(_record("plain", f"[I]{word}[/I]"))
    report = lexicon_report(extract_lexicon(records))
    assert report["formal_count"] + report["informal_count"] == 40
    assert report["conflict_count"] == 0


def test_lexicon_report_two_record_example():
    records = [
        _record("[F]आप[/F] और [F]जी[/F]", "[I]तुम[/I]"),
        _record("[F]ठीक[/F]", "[I]जी[/I]"),
    ]
    lex = extract_lexicon(records)
    assert lexicon_report(lex) == {
        "formal_count": 2,  # आप, ठीक
        "informal_count": 1,  # तुम
        "conflict_count": 1,  # जी
    }


def test_disjointness_invariant_randomized():
    rng = random.Random(2024)
    vocab = [f"t{i}" for i in range(12)]
    for _ in range(200):
        formal = {rng.choice(vocab) for _ in range(rng.randrange(6))}
        informal = {rng.choice(vocab) for _ in range(rng.randrange(6))}
        lex = FormalityLexicon.from_phrase_sets(formal, informal)
        assert not (lex.formal & lex.informal)
        assert lex.conflicts == frozenset(formal & informal)


def test_direct_construction_rejects_overlap():
    with pytest.raises(ValueError):
        FormalityLexicon(frozenset({"x"}), frozenset({"x"}))
