"""Three-way formality register label used throughout the pipeline."""
from __future__ import annotations

import enum


class FormalityLabel(enum.Enum):
    FORMAL = "formal"
    INFORMAL = "informal"
    NEUTRAL = "neutral"

    @classmethod
    def from_string(cls, value: str) -> "FormalityLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown formality label {value!r}; expected one of "
                f"{[l.value for l in cls]}"
            ) from None

    def __str__(self) -> str:
        return self.value
