"""HTTP translation service over a loaded checkpoint.

The model is loaded once at startup and never mutated afterwards, so
requests can be handled concurrently without cross-request state. The
optional lexicon marks register-bearing phrases in each translation.
"""
from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import annotator, textnorm
from .labels import FormalityLabel
from .lexicon import FormalityLexicon
from .model import DecodeConfig, ModelBundle, decode

MAX_TEXT_BYTES = 2000


class TranslateRequest(BaseModel):
    text: str
    formality: Literal["formal", "informal", "neutral"]
    beams: int = Field(default=1, ge=1)
    max_length: int = Field(default=100, ge=1)


class SpanOut(BaseModel):
    phrase: str
    label: str


class TranslateResponse(BaseModel):
    translation: str
    applied_formality: str
    spans: list[SpanOut]
    model_id: str


def _mark_spans(translation: str, lexicon: FormalityLexicon | None) -> list[SpanOut]:
    if lexicon is None or not translation:
        return []
    tokens = textnorm.tokenize(translation)
    return [
        SpanOut(phrase=s.phrase, label=s.label.value)
        for s in annotator.match_phrases(tokens, lexicon)
    ]


def create_app(
    bundle: ModelBundle | None = None,
    lexicon: FormalityLexicon | None = None,
    cors_origins: list[str] | None = None,
) -> FastAPI:
    app = FastAPI(title="fmtmt translation service")
    app.state.bundle = bundle
    app.state.lexicon = lexicon

    if cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(RequestValidationError)
    async def invalid_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def _unavailable() -> JSONResponse:
        return JSONResponse(status_code=503, content={"detail": "model not loaded"})

    @app.post("/translate", response_model=TranslateResponse)
    async def translate(request: TranslateRequest):
        current: ModelBundle | None = app.state.bundle
        if current is None:
            return _unavailable()
        if len(request.text.encode("utf-8")) > MAX_TEXT_BYTES:
            return JSONResponse(
                status_code=413,
                content={"detail": f"text exceeds {MAX_TEXT_BYTES} bytes"},
            )
        if not textnorm.normalize(request.text):
            return JSONResponse(
                status_code=400,
                content={"detail": "text is empty after normalization"},
            )
        translation = decode(
            current,
            request.text,
            FormalityLabel.from_string(request.formality),
            DecodeConfig(max_length=request.max_length, num_beams=request.beams),
        )
        return TranslateResponse(
            translation=translation,
            applied_formality=request.formality,
            spans=_mark_spans(translation, app.state.lexicon),
            model_id=current.model_id,
        )

    @app.get("/health")
    async def health():
        current: ModelBundle | None = app.state.bundle
        if current is None:
            return _unavailable()
        return {"status": "ok", "model_id": current.model_id}

    @app.get("/model/info")
    async def model_info():
        current: ModelBundle | None = app.state.bundle
        if current is None:
            return _unavailable()
        return {
            "config": current.cfg.to_dict(),
            "src_vocab_size": current.src_vocab.size,
            "tgt_vocab_size": current.tgt_vocab.size,
            "checksum": current.model_id,
        }

    return app
