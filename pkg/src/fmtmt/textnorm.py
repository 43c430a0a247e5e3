"""Shared text normalization, tokenization, and detokenization.

Every other stage (lexicon extraction, annotation, training, evaluation)
sees text through these functions, so they are deliberately small and
deterministic. Normalization lowercases, replaces punctuation with spaces,
and collapses whitespace; it is idempotent.
"""
from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Callable, Sequence

# ASCII punctuation plus the Devanagari danda / double danda sentence marks.
PUNCTUATION_CHARS = frozenset(string.punctuation) | {"।", "॥"}

_PUNCT_RE = re.compile("[" + re.escape(string.punctuation) + "।॥]")
_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"\S+")

# Detokenizer attachment classes: closers glue to the preceding token,
# openers glue to the following one.
_ATTACH_LEFT = frozenset(".,!?:;)]}%") | {"।", "॥"}
_ATTACH_RIGHT = frozenset("([{")


@dataclass(frozen=True)
class NormalizationConfig:
    lowercase: bool = True
    strip_punctuation: bool = True
    max_tokens: int = 100

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


DEFAULT_CONFIG = NormalizationConfig()


@dataclass(frozen=True)
class Token:
    """A whitespace-delimited token and its character span in the
    normalized source string."""

    surface: str
    span: tuple[int, int]


def normalize(
    text: str,
    cfg: NormalizationConfig = DEFAULT_CONFIG,
    custom_rule: Callable[[str], str] | None = None,
) -> str:
    """Lowercase, strip punctuation to spaces, and collapse whitespace.

    ``custom_rule`` is a hook for per-language cleanup. It runs after the
    standard steps and must itself be idempotent for the overall
    normalize(normalize(x)) == normalize(x) guarantee to hold.
    """
    if cfg.lowercase:
        text = text.lower()
    if cfg.strip_punctuation:
        text = _PUNCT_RE.sub(" ", text)
    text = _WS_RE.sub(" ", text).strip()
    if custom_rule is not None:
        text = custom_rule(text)
    return text


def tokenize(text: str, cfg: NormalizationConfig = DEFAULT_CONFIG) -> list[Token]:
    """Normalize then split on whitespace, keeping at most ``cfg.max_tokens``
    tokens. Spans index into the normalized string."""
    normalized = normalize(text, cfg)
    tokens: list[Token] = []
    for match in _TOKEN_RE.finditer(normalized):
        if len(tokens) >= cfg.max_tokens:
            break
        tokens.append(Token(match.group(), (match.start(), match.end())))
    return tokens


def surfaces(tokens: Sequence[Token]) -> list[str]:
    return [t.surface for t in tokens]


def detokenize(tokens: Sequence[str], detruecase: bool = False) -> str:
    """Join tokens with single spaces, re-attaching punctuation.

    Closing punctuation (``. , ! ? : ; ) ] } %`` and the dandas) glues to
    the previous token; opening brackets glue to the next. ``detruecase``
    uppercases the first Latin letter of the result.
    """
    parts: list[str] = []
    glue_next = False
    for tok in tokens:
        if not tok:
            continue
        attach_left = all(c in _ATTACH_LEFT for c in tok)
        if parts and (glue_next or attach_left):
            parts[-1] += tok
        else:
            parts.append(tok)
        glue_next = all(c in _ATTACH_RIGHT for c in tok)
    out = " ".join(parts)
    if detruecase:
        out = _uppercase_first_latin(out)
    return out


def _uppercase_first_latin(text: str) -> str:
    for i, ch in enumerate(text):
        if ch in string.ascii_letters:
            return text[:i] + ch.upper() + text[i + 1 :]
    return text
