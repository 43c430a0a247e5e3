"""Tag-controlled transformer encoder-decoder in plain NumPy (float64).

Forward and backward passes are written out by hand so every gradient can
be verified against central finite differences. The decoder carries three
attention blocks: causal self-attention, cross-attention over the full
encoder output, and a third cross-attention restricted by mask to the
register control token (and any tagged source positions), which is what
lets the decoder condition on the requested formality. Shapes follow the
(B, T, D) convention, with (B, h, T, d) inside attention heads.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import textnorm
from .labels import FormalityLabel
from .lexicon import TagError, parse_annotated

# Reserved vocabulary slots, fixed across every model.
PAD_ID, UNK_ID, START_ID, END_ID = 0, 1, 2, 3
CONTROL_TOKEN_IDS = {
    FormalityLabel.FORMAL: 4,
    FormalityLabel.INFORMAL: 5,
    FormalityLabel.NEUTRAL: 6,
}
RESERVED_TOKENS = ("<pad>", "<unk>", "<start>", "<end>", "<f>", "<i>", "<n>")

NEG_INF = -1e9  # additive mask value; exp() underflows to exactly 0.0
LN_EPS = 1e-6

CHECKPOINT_MAGIC = b"FMTMT1"


class DivergenceError(RuntimeError):
    """Training loss became non-finite. Carries the last finite-state
    parameters and the history up to the failure."""

    def __init__(self, message: str, params: "Parameters | None" = None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


# --------------------------- vocabulary ---------------------------


class Vocabulary:
    """Bijective token <-> id map with the reserved tokens at fixed ids."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self._id_to_token = list(tokens)
        self._token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.token_id(w) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token


def build_vocab(corpus: Iterable[Sequence], min_freq: int = 1) -> Vocabulary:
    """Count token frequencies over a corpus of token sequences (Token
    objects or plain strings) and keep those with frequency >= min_freq.
    Ordering is deterministic: descending frequency, ties lexicographic."""
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts: dict[str, int] = {}
    for sentence in corpus:
        for tok in sentence:
            surface = tok.surface if isinstance(tok, textnorm.Token) else tok
            counts[surface] = counts.get(surface, 0) + 1
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq and tok not in RESERVED_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(list(RESERVED_TOKENS) + kept)


# --------------------------- configuration ---------------------------


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int
    latent_dim: int
    num_heads: int
    src_vocab_size: int
    tgt_vocab_size: int
    seq_len: int = 100
    depth: int = 1
    use_control: bool = True
    control_position: str = "prepend"  # or "append"

    def __post_init__(self) -> None:
        if self.embed_dim < 1 or self.latent_dim < 1 or self.num_heads < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.seq_len < 2:
            raise ValueError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.control_position not in ("prepend", "append"):
            raise ValueError(f"unknown control_position {self.control_position!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


# --------------------------- parameters ---------------------------


def _attention_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {
        prefix + "wq": (d, d),
        prefix + "wk": (d, d),
        prefix + "wv": (d, d),
        prefix + "wo": (d, d),
    }


def _block_shapes(prefix: str, d: int, latent: int, attn_names: Sequence[str]) -> dict:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, attn in enumerate(attn_names, start=1):
        shapes.update(_attention_shapes(f"{prefix}{attn}_", d))
        shapes[f"{prefix}ln{i}_g"] = (d,)
        shapes[f"{prefix}ln{i}_b"] = (d,)
    n_ln = len(attn_names) + 1
    shapes[f"{prefix}ff_w1"] = (d, latent)
    shapes[f"{prefix}ff_b1"] = (latent,)
    shapes[f"{prefix}ff_w2"] = (latent, d)
    shapes[f"{prefix}ff_b2"] = (d,)
    shapes[f"{prefix}ln{n_ln}_g"] = (d,)
    shapes[f"{prefix}ln{n_ln}_b"] = (d,)
    return shapes


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (cfg.src_vocab_size, d),
        "tgt_embed": (cfg.tgt_vocab_size, d),
        "src_pos": (cfg.seq_len, d),
        "tgt_pos": (cfg.seq_len, d),
        "out_w": (d, cfg.tgt_vocab_size),
    }
    dec_attns = ("sa", "ca", "fa") if cfg.use_control else ("sa", "ca")
    for i in range(cfg.depth):
        shapes.update(_block_shapes(f"enc{i}.", d, cfg.latent_dim, ("sa",)))
        shapes.update(_block_shapes(f"dec{i}.", d, cfg.latent_dim, dec_attns))
    return shapes


@dataclass
class Parameters:
    """All weight tensors, keyed by name. Gradients use the same layout."""

    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "Parameters":
        return Parameters({k: np.zeros_like(v) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def init_parameters(cfg: ModelConfig, seed: int = 0) -> Parameters:
    """Uniform(-0.08, 0.08) for weight matrices and embeddings; layer-norm
    gains 1, all biases 0. Deterministic given the seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in sorted(tensor_shapes(cfg).items()):
        kind = name.rsplit("_", 1)[-1]
        if kind == "g":
            tensors[name] = np.ones(shape)
        elif kind in ("b", "b1", "b2"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.uniform(-0.08, 0.08, size=shape)
    return Parameters(tensors)


# --------------------------- low-level ops ---------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def _layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + LN_EPS)
    xhat = (x - mu) / sigma
    return xhat * gain + bias, (xhat, sigma, gain)


def _layer_norm_backward(dy, cache):
    xhat, sigma, gain = cache
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) / sigma
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _ff_forward(x, w1, b1, w2, b2):
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2 + b2, (x, pre, hidden, w1, w2)


def _ff_backward(dy, cache):
    x, pre, hidden, w1, w2 = cache
    d_w2 = _flat(hidden).T @ _flat(dy)
    d_b2 = _flat(dy).sum(axis=0)
    d_hidden = dy @ w2.T
    d_pre = d_hidden * (pre > 0.0)
    d_w1 = _flat(x).T @ _flat(d_pre)
    d_b1 = _flat(d_pre).sum(axis=0)
    dx = d_pre @ w1.T
    return dx, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _mha_forward(q_in, k_in, v_in, mask, wq, wk, wv, wo, num_heads):
    """Scaled dot-product attention over num_heads heads.

    mask is additive, broadcastable to (B, h, Tq, Tk); masked entries hold
    NEG_INF so their softmax weight is exactly zero.
    """
    q = _split_heads(q_in @ wq, num_heads)
    k = _split_heads(k_in @ wk, num_heads)
    v = _split_heads(v_in @ wv, num_heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = scores + mask
    weights = softmax(scores)
    merged = _merge_heads(weights @ v)
    out = merged @ wo
    cache = (q_in, k_in, v_in, q, k, v, weights, merged, wq, wk, wv, wo, scale)
    return out, cache


def _mha_backward(d_out, cache):
    q_in, k_in, v_in, q, k, v, weights, merged, wq, wk, wv, wo, scale = cache
    num_heads = q.shape[1]

    d_wo = _flat(merged).T @ _flat(d_out)
    d_merged = d_out @ wo.T
    d_ctx = _split_heads(d_merged, num_heads)

    d_weights = d_ctx @ v.transpose(0, 1, 3, 2)
    d_v = weights.transpose(0, 1, 3, 2) @ d_ctx
    # softmax backward; the additive mask is constant so it takes no grad
    d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True))
    d_q = (d_scores @ k) * scale
    d_k = (d_scores.transpose(0, 1, 3, 2) @ q) * scale

    dq_full = _merge_heads(d_q)
    dk_full = _merge_heads(d_k)
    dv_full = _merge_heads(d_v)
    d_wq = _flat(q_in).T @ _flat(dq_full)
    d_wk = _flat(k_in).T @ _flat(dk_full)
    d_wv = _flat(v_in).T @ _flat(dv_full)
    dq_in = dq_full @ wq.T
    dk_in = dk_full @ wk.T
    dv_in = dv_full @ wv.T
    grads = {"wq": d_wq, "wk": d_wk, "wv": d_wv, "wo": d_wo}
    return (dq_in, dk_in, dv_in), grads


def multi_head_attention(queries, keys, values, mask, weights, num_heads):
    """Standalone attention layer over 2-D inputs (Tq x D, Tk x D).

    ``mask`` is a boolean (Tq x Tk) array, True = blocked, or None.
    ``weights`` maps "wq"/"wk"/"wv"/"wo" to projection matrices.
    """
    q_in = np.asarray(queries, dtype=float)[None]
    k_in = np.asarray(keys, dtype=float)[None]
    v_in = np.asarray(values, dtype=float)[None]
    if q_in.shape[-1] % num_heads != 0:
        raise ValueError("embed dim not divisible by num_heads")
    if k_in.shape[1] != v_in.shape[1]:
        raise ValueError("keys and values disagree on length")
    additive = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q_in.shape[1], k_in.shape[1]):
            raise ValueError(
                f"mask shape {mask.shape} does not match "
                f"({q_in.shape[1]}, {k_in.shape[1]})"
            )
        additive = np.where(mask, NEG_INF, 0.0)[None, None]
    out, _ = _mha_forward(
        q_in, k_in, v_in, additive,
        weights["wq"], weights["wk"], weights["wv"], weights["wo"], num_heads,
    )
    return out[0]


# --------------------------- masks ---------------------------


def _padding_mask(key_ids: np.ndarray) -> np.ndarray:
    # (B, Tk) -> additive (B, 1, 1, Tk)
    return np.where(key_ids == PAD_ID, NEG_INF, 0.0)[:, None, None, :]


def _causal_mask(t: int) -> np.ndarray:
    idx = np.arange(t)
    return np.where(idx[None, :] > idx[:, None], NEG_INF, 0.0)[None, None]


def _control_mask(control_positions: Sequence[Sequence[int]], src_ids: np.ndarray) -> np.ndarray:
    """Additive mask letting queries attend only the control positions of
    each source row. Empty position lists fall back to attending the
    control-token slot (position 0)."""
    batch, src_len = src_ids.shape
    mask = np.full((batch, 1, 1, src_len), NEG_INF)
    for b, positions in enumerate(control_positions):
        pos = [p for p in positions if 0 <= p < src_len] or [0]
        mask[b, 0, 0, pos] = 0.0
    return mask


# --------------------------- encoder / decoder ---------------------------


def _check_ids(ids: np.ndarray, vocab_size: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"{what} id out of range for vocabulary of size {vocab_size}")


def _embed_batch(ids, table, pos_table, seq_len, what):
    if ids.shape[1] > seq_len:
        raise ValueError(f"{what} length {ids.shape[1]} exceeds seq_len {seq_len}")
    _check_ids(ids, table.shape[0], what)
    return table[ids] + pos_table[: ids.shape[1]]


def embed(ids: Sequence[int], params: Parameters, cfg: ModelConfig, side: str = "src") -> np.ndarray:
    """Token embedding plus positional embedding for one sequence."""
    table = params["src_embed"] if side == "src" else params["tgt_embed"]
    pos = params["src_pos"] if side == "src" else params["tgt_pos"]
    arr = np.asarray(ids, dtype=int)[None]
    return _embed_batch(arr, table, pos, cfg.seq_len, side)[0]


def _mha_params(params: Parameters, prefix: str):
    return (
        params[prefix + "wq"],
        params[prefix + "wk"],
        params[prefix + "wv"],
        params[prefix + "wo"],
    )


def _encoder_forward(src_ids: np.ndarray, params: Parameters, cfg: ModelConfig):
    h = _embed_batch(src_ids, params["src_embed"], params["src_pos"], cfg.seq_len, "source")
    mask = _padding_mask(src_ids)
    block_caches = []
    for i in range(cfg.depth):
        p = f"enc{i}."
        attn, c_attn = _mha_forward(h, h, h, mask, *_mha_params(params, p + "sa_"), cfg.num_heads)
        normed1, c_ln1 = _layer_norm_forward(h + attn, params[p + "ln1_g"], params[p + "ln1_b"])
        ff, c_ff = _ff_forward(
            normed1, params[p + "ff_w1"], params[p + "ff_b1"],
            params[p + "ff_w2"], params[p + "ff_b2"],
        )
        h, c_ln2 = _layer_norm_forward(normed1 + ff, params[p + "ln2_g"], params[p + "ln2_b"])
        block_caches.append((c_attn, c_ln1, c_ff, c_ln2))
    return h, (src_ids, block_caches)


def encoder_forward(src_ids: Sequence[int], params: Parameters, cfg: ModelConfig) -> np.ndarray:
    """Encode one source sequence; returns (len x embed_dim)."""
    out, _ = _encoder_forward(np.asarray(src_ids, dtype=int)[None], params, cfg)
    return out[0]


def _encoder_backward(d_out, cache, params, cfg, grads):
    src_ids, block_caches = cache
    dh = d_out
    for i in reversed(range(cfg.depth)):
        p = f"enc{i}."
        c_attn, c_ln1, c_ff, c_ln2 = block_caches[i]
        d_res2, dg, db = _layer_norm_backward(dh, c_ln2)
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        dx_ff, ff_grads = _ff_backward(d_res2, c_ff)
        for key, val in ff_grads.items():
            grads[f"{p}ff_{key}"] += val
        d_normed1 = d_res2 + dx_ff
        d_res1, dg, db = _layer_norm_backward(d_normed1, c_ln1)
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        (dq, dk, dv), mha_grads = _mha_backward(d_res1, c_attn)
        for key, val in mha_grads.items():
            grads[f"{p}sa_{key}"] += val
        dh = d_res1 + dq + dk + dv
    np.add.at(grads["src_embed"], src_ids, dh)
    grads["src_pos"][: src_ids.shape[1]] += dh.sum(axis=0)


def _decoder_forward(tgt_in_ids, enc_out, src_ids, control_positions, params, cfg):
    g = _embed_batch(tgt_in_ids, params["tgt_embed"], params["tgt_pos"], cfg.seq_len, "target")
    t = tgt_in_ids.shape[1]
    self_mask = _causal_mask(t) + _padding_mask(tgt_in_ids)
    cross_mask = _padding_mask(src_ids)
    ctrl_mask = _control_mask(control_positions, src_ids) if cfg.use_control else None
    block_caches = []
    for i in range(cfg.depth):
        p = f"dec{i}."
        attn1, c_sa = _mha_forward(g, g, g, self_mask, *_mha_params(params, p + "sa_"), cfg.num_heads)
        g1, c_ln1 = _layer_norm_forward(g + attn1, params[p + "ln1_g"], params[p + "ln1_b"])
        attn2, c_ca = _mha_forward(
            g1, enc_out, enc_out, cross_mask, *_mha_params(params, p + "ca_"), cfg.num_heads
        )
        g2, c_ln2 = _layer_norm_forward(g1 + attn2, params[p + "ln2_g"], params[p + "ln2_b"])
        if cfg.use_control:
            attn3, c_fa = _mha_forward(
                g2, enc_out, enc_out, ctrl_mask, *_mha_params(params, p + "fa_"), cfg.num_heads
            )
            g3, c_ln3 = _layer_norm_forward(g2 + attn3, params[p + "ln3_g"], params[p + "ln3_b"])
        else:
            c_fa = c_ln3 = None
            g3 = g2
        ff, c_ff = _ff_forward(
            g3, params[p + "ff_w1"], params[p + "ff_b1"],
            params[p + "ff_w2"], params[p + "ff_b2"],
        )
        ln_out = "ln4" if cfg.use_control else "ln3"
        g, c_ln_out = _layer_norm_forward(g3 + ff, params[p + ln_out + "_g"], params[p + ln_out + "_b"])
        block_caches.append((c_sa, c_ln1, c_ca, c_ln2, c_fa, c_ln3, c_ff, c_ln_out))
    logits = g @ params["out_w"]
    cache = (tgt_in_ids, block_caches, g)
    return logits, cache


def decoder_forward(
    tgt_ids: Sequence[int],
    encoder_out: np.ndarray,
    control_positions: Sequence[int],
    params: Parameters,
    cfg: ModelConfig,
    src_ids: Sequence[int] | None = None,
) -> np.ndarray:
    """Decode one teacher-forced sequence; returns (len x tgt_vocab) logits.

    ``src_ids`` supplies the source padding layout; when omitted, every
    encoder position is treated as real (non-pad).
    """
    if src_ids is None:
        src_arr = np.full((1, encoder_out.shape[0]), UNK_ID, dtype=int)
    else:
        src_arr = np.asarray(src_ids, dtype=int)[None]
    logits, _ = _decoder_forward(
        np.asarray(tgt_ids, dtype=int)[None],
        encoder_out[None] if encoder_out.ndim == 2 else encoder_out,
        src_arr,
        [list(control_positions)],
        params,
        cfg,
    )
    return logits[0]


def _decoder_backward(d_logits, cache, params, cfg, grads):
    tgt_in_ids, block_caches, g_final = cache
    grads["out_w"] += _flat(g_final).T @ _flat(d_logits)
    dg = d_logits @ params["out_w"].T
    d_enc = None
    for i in reversed(range(cfg.depth)):
        p = f"dec{i}."
        c_sa, c_ln1, c_ca, c_ln2, c_fa, c_ln3, c_ff, c_ln_out = block_caches[i]
        ln_out = "ln4" if cfg.use_control else "ln3"
        d_res, dgain, dbias = _layer_norm_backward(dg, c_ln_out)
        grads[p + ln_out + "_g"] += dgain
        grads[p + ln_out + "_b"] += dbias
        dx_ff, ff_grads = _ff_backward(d_res, c_ff)
        for key, val in ff_grads.items():
            grads[f"{p}ff_{key}"] += val
        d_g3 = d_res + dx_ff
        if cfg.use_control:
            d_res3, dgain, dbias = _layer_norm_backward(d_g3, c_ln3)
            grads[p + "ln3_g"] += dgain
            grads[p + "ln3_b"] += dbias
            (dq3, dk3, dv3), fa_grads = _mha_backward(d_res3, c_fa)
            for key, val in fa_grads.items():
                grads[f"{p}fa_{key}"] += val
            d_enc = dk3 + dv3 if d_enc is None else d_enc + dk3 + dv3
            d_g2 = d_res3 + dq3
        else:
            d_g2 = d_g3
        d_res2, dgain, dbias = _layer_norm_backward(d_g2, c_ln2)
        grads[p + "ln2_g"] += dgain
        grads[p + "ln2_b"] += dbias
        (dq2, dk2, dv2), ca_grads = _mha_backward(d_res2, c_ca)
        for key, val in ca_grads.items():
            grads[f"{p}ca_{key}"] += val
        d_enc = dk2 + dv2 if d_enc is None else d_enc + dk2 + dv2
        d_g1 = d_res2 + dq2
        d_res1, dgain, dbias = _layer_norm_backward(d_g1, c_ln1)
        grads[p + "ln1_g"] += dgain
        grads[p + "ln1_b"] += dbias
        (dq1, dk1, dv1), sa_grads = _mha_backward(d_res1, c_sa)
        for key, val in sa_grads.items():
            grads[f"{p}sa_{key}"] += val
        dg = d_res1 + dq1 + dk1 + dv1
    np.add.at(grads["tgt_embed"], tgt_in_ids, dg)
    grads["tgt_pos"][: tgt_in_ids.shape[1]] += dg.sum(axis=0)
    return d_enc


# --------------------------- loss ---------------------------


@dataclass
class Batch:
    src: np.ndarray  # (B, Ts) int ids
    tgt_in: np.ndarray  # (B, Tt) decoder input, starts with <start>
    tgt_out: np.ndarray  # (B, Tt) shifted targets, <pad> ignored by the loss
    control_positions: list[list[int]]

    @property
    def target_tokens(self) -> int:
        return int((self.tgt_out != PAD_ID).sum())


def _cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over non-pad target positions; also returns the
    logits gradient."""
    mask = targets != PAD_ID
    n = int(mask.sum())
    if n == 0:
        raise ValueError("batch contains no non-pad target tokens")
    logp = log_softmax(logits)
    b_idx, t_idx = np.nonzero(mask)
    loss = -logp[b_idx, t_idx, targets[b_idx, t_idx]].sum() / n
    d_logits = np.exp(logp)
    d_logits[b_idx, t_idx, targets[b_idx, t_idx]] -= 1.0
    d_logits *= mask[..., None] / n
    return loss, d_logits


def loss_and_grads(batch: Batch, params: Parameters, cfg: ModelConfig):
    """Forward pass plus analytic gradients for every parameter tensor."""
    enc_out, enc_cache = _encoder_forward(batch.src, params, cfg)
    logits, dec_cache = _decoder_forward(
        batch.tgt_in, enc_out, batch.src, batch.control_positions, params, cfg
    )
    loss, d_logits = _cross_entropy(logits, batch.tgt_out)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss!r}")
    grads = params.zeros_like()
    d_enc = _decoder_backward(d_logits, dec_cache, params, cfg, grads.tensors)
    _encoder_backward(d_enc, enc_cache, params, cfg, grads.tensors)
    return float(loss), grads


# --------------------------- data preparation ---------------------------


@dataclass(frozen=True)
class LabeledPair:
    """One training sentence pair with its formality register."""

    source: str
    target: str
    label: FormalityLabel = FormalityLabel.NEUTRAL


@dataclass(frozen=True)
class EncodedExample:
    src_ids: tuple[int, ...]
    tgt_ids: tuple[int, ...]
    control_positions: tuple[int, ...]


def _has_tags(text: str) -> bool:
    return "[F]" in text or "[I]" in text or "[/F]" in text or "[/I]" in text


def encode_source_text(
    text: str,
    formality: FormalityLabel,
    src_vocab: Vocabulary,
    cfg: ModelConfig,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> tuple[list[int], list[int]]:
    """Tokenize a source sentence and prepend (or append) the register
    control token.

    If the text carries [F]/[I] tags they are stripped and the tagged token
    positions join the control positions; this assumes tagged text is
    already normalized, which holds for everything this pipeline produces.
    Returns (source ids, control positions).
    """
    tagged_positions: list[int] = []
    plain = text
    if _has_tags(text):
        try:
            sentence = parse_annotated(text)
        except TagError:
            sentence = None
        if sentence is not None:
            plain = sentence.plain_text
            tokens = textnorm.tokenize(plain, norm_cfg)
            for idx, tok in enumerate(tokens):
                for span in sentence.spans:
                    if span.char_span[0] <= tok.span[0] and tok.span[1] <= span.char_span[1]:
                        tagged_positions.append(idx)
                        break
    words = textnorm.surfaces(textnorm.tokenize(plain, norm_cfg))
    ids = src_vocab.encode(words)
    if not cfg.use_control:
        return ids[: cfg.seq_len], []
    ids = ids[: cfg.seq_len - 1]
    control_id = CONTROL_TOKEN_IDS[formality]
    if cfg.control_position == "prepend":
        src_ids = [control_id] + ids
        positions = [0] + [i + 1 for i in tagged_positions if i + 1 < len(src_ids)]
    else:
        src_ids = ids + [control_id]
        positions = [i for i in tagged_positions if i < len(ids)] + [len(ids)]
    return src_ids, positions


def encode_pair(
    pair: LabeledPair,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    cfg: ModelConfig,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> EncodedExample:
    src_ids, positions = encode_source_text(pair.source, pair.label, src_vocab, cfg, norm_cfg)
    words = textnorm.surfaces(textnorm.tokenize(pair.target, norm_cfg))
    tgt_ids = tgt_vocab.encode(words)[: cfg.seq_len - 1]
    return EncodedExample(tuple(src_ids), tuple(tgt_ids), tuple(positions))


def make_batch(examples: Sequence[EncodedExample]) -> Batch:
    """Pad a group of encoded examples into one teacher-forced batch.
    Decoder input is the target shifted right behind <start>; the final
    token is dropped so input and output lengths match."""
    n = len(examples)
    src_len = max(len(ex.src_ids) for ex in examples)
    tgt_len = max(len(ex.tgt_ids) for ex in examples) + 1  # room for <start>/<end>
    src = np.full((n, src_len), PAD_ID, dtype=int)
    tgt_in = np.full((n, tgt_len), PAD_ID, dtype=int)
    tgt_out = np.full((n, tgt_len), PAD_ID, dtype=int)
    control = []
    for row, ex in enumerate(examples):
        src[row, : len(ex.src_ids)] = ex.src_ids
        full = [START_ID, *ex.tgt_ids, END_ID]
        tgt_in[row, : len(full) - 1] = full[:-1]
        tgt_out[row, : len(full) - 1] = full[1:]
        control.append(list(ex.control_positions))
    return Batch(src, tgt_in, tgt_out, control)


# --------------------------- optimizers ---------------------------


class _Rmsprop:
    RHO = 0.9
    EPS = 1e-8

    def __init__(self, params: Parameters, lr: float):
        self.lr = lr
        self.sq = params.zeros_like()

    def step(self, params: Parameters, grads: Parameters) -> None:
        for name, g in grads.tensors.items():
            acc = self.sq.tensors[name]
            acc *= self.RHO
            acc += (1.0 - self.RHO) * g * g
            params.tensors[name] -= self.lr * g / (np.sqrt(acc) + self.EPS)


class _AdamWarmup:
    B1 = 0.9
    B2 = 0.999
    EPS = 1e-8

    def __init__(self, params: Parameters, lr: float, warmup_steps: int, total_steps: int):
        self.lr = lr
        self.warmup = max(0, warmup_steps)
        self.total = max(total_steps, self.warmup + 1)
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def _lr_at(self, t: int) -> float:
        # linear warmup to lr, then linear decay to zero
        if self.warmup and t < self.warmup:
            return self.lr * (t + 1) / self.warmup
        frac = (self.total - t) / max(1, self.total - self.warmup)
        return self.lr * max(0.0, frac)

    def step(self, params: Parameters, grads: Parameters) -> None:
        lr = self._lr_at(self.t)
        self.t += 1
        c1 = 1.0 - self.B1**self.t
        c2 = 1.0 - self.B2**self.t
        for name, g in grads.tensors.items():
            m = self.m.tensors[name]
            v = self.v.tensors[name]
            m *= self.B1
            m += (1.0 - self.B1) * g
            v *= self.B2
            v += (1.0 - self.B2) * g * g
            params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


# --------------------------- training ---------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "rmsprop"  # or "adam_warmup"
    learning_rate: float = 1e-3
    seed: int = 0
    warmup_steps: int = 0
    refresh_every: int = 0  # call the refresh hook every N epochs (0 = never)

    def __post_init__(self) -> None:
        if self.optimizer not in ("rmsprop", "adam_warmup"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    diverged: bool = False

    def final_loss(self) -> float:
        return self.records[-1].train_loss

    def final_accuracy(self) -> float:
        return self.records[-1].val_accuracy

    def csv_rows(self) -> list[str]:
        rows = ["epoch,train_loss,val_accuracy"]
        rows += [f"{r.epoch},{r.train_loss!r},{r.val_accuracy!r}" for r in self.records]
        return rows


def token_accuracy(
    examples: Sequence[EncodedExample],
    params: Parameters,
    cfg: ModelConfig,
    batch_size: int = 64,
) -> float:
    """Fraction of non-pad target positions whose argmax logit equals the
    reference token (teacher-forced)."""
    correct = 0
    total = 0
    for start in range(0, len(examples), batch_size):
        batch = make_batch(examples[start : start + batch_size])
        enc_out, _ = _encoder_forward(batch.src, params, cfg)
        logits, _ = _decoder_forward(
            batch.tgt_in, enc_out, batch.src, batch.control_positions, params, cfg
        )
        mask = batch.tgt_out != PAD_ID
        pred = logits.argmax(axis=-1)
        correct += int(((pred == batch.tgt_out) & mask).sum())
        total += int(mask.sum())
    return correct / total if total else 0.0


def train(
    train_pairs: Sequence[LabeledPair],
    val_pairs: Sequence[LabeledPair],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
    refresh_fn: Callable[[int], Sequence[LabeledPair] | None] | None = None,
) -> tuple[Parameters, TrainingHistory]:
    """Mini-batch training loop. Deterministic given train_cfg.seed.

    ``refresh_fn`` supports training on rolling data segments: every
    ``refresh_every`` epochs it may return a fresh list of pairs that
    replaces the current training set.

    Raises DivergenceError (carrying the last finite parameters and partial
    history) if the loss becomes non-finite.
    """
    if not train_pairs or not val_pairs:
        raise ValueError("train and validation sets must be non-empty")
    params = init_parameters(cfg, train_cfg.seed)
    encoded_train = [encode_pair(p, src_vocab, tgt_vocab, cfg, norm_cfg) for p in train_pairs]
    encoded_val = [encode_pair(p, src_vocab, tgt_vocab, cfg, norm_cfg) for p in val_pairs]
    steps_per_epoch = math.ceil(len(encoded_train) / train_cfg.batch_size)
    if train_cfg.optimizer == "rmsprop":
        optimizer = _Rmsprop(params, train_cfg.learning_rate)
    else:
        optimizer = _AdamWarmup(
            params,
            train_cfg.learning_rate,
            train_cfg.warmup_steps,
            train_cfg.epochs * steps_per_epoch,
        )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x5E11]))
    history = TrainingHistory()
    last_good = params.copy()
    for epoch in range(train_cfg.epochs):
        if (
            refresh_fn is not None
            and train_cfg.refresh_every > 0
            and epoch > 0
            and epoch % train_cfg.refresh_every == 0
        ):
            fresh = refresh_fn(epoch)
            if fresh:
                encoded_train = [
                    encode_pair(p, src_vocab, tgt_vocab, cfg, norm_cfg) for p in fresh
                ]
        order = shuffle_rng.permutation(len(encoded_train))
        loss_sum = 0.0
        token_sum = 0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                chunk = [encoded_train[j] for j in order[start : start + train_cfg.batch_size]]
                batch = make_batch(chunk)
                loss, grads = loss_and_grads(batch, params, cfg)
                optimizer.step(params, grads)
                n_tokens = batch.target_tokens
                loss_sum += loss * n_tokens
                token_sum += n_tokens
            if not params.all_finite():
                raise DivergenceError("non-finite parameters after update")
        except DivergenceError as err:
            history.diverged = True
            raise DivergenceError(
                f"training diverged at epoch {epoch}: {err}", last_good, history
            ) from None
        val_acc = token_accuracy(encoded_val, params, cfg, train_cfg.batch_size)
        history.records.append(EpochRecord(epoch, loss_sum / token_sum, val_acc))
        last_good = params.copy()
    return params, history


# --------------------------- decoding ---------------------------


@dataclass(frozen=True)
class DecodeConfig:
    max_length: int = 100
    num_beams: int = 1
    early_stopping: bool = True

    def __post_init__(self) -> None:
        if self.max_length < 1 or self.num_beams < 1:
            raise ValueError("max_length and num_beams must be >= 1")


@dataclass
class ModelBundle:
    """Everything needed to run the model: config, weights, vocabularies."""

    cfg: ModelConfig
    params: Parameters
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    model_id: str = ""


def _beam_search(bundle: ModelBundle, src_ids, control_positions, decode_cfg: DecodeConfig):
    """Length-normalized beam search; num_beams=1 is greedy decoding.
    Returns (token ids, normalized log-prob score)."""
    cfg = bundle.cfg
    params = bundle.params
    src = np.asarray(src_ids, dtype=int)[None]
    enc_out, _ = _encoder_forward(src, params, cfg)
    limit = min(decode_cfg.max_length, cfg.seq_len - 1)
    beams: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []

    def normalized(ids: list[int], logp: float) -> float:
        return logp / max(1, len(ids) + 1)  # +1 counts the <end> step

    for _ in range(limit):
        candidates: list[tuple[float, list[int]]] = []
        for ids, logp in beams:
            tgt_in = np.asarray([[START_ID, *ids]], dtype=int)
            logits, _ = _decoder_forward(
                tgt_in, enc_out, src, [list(control_positions)], params, cfg
            )
            step_logp = log_softmax(logits[0, -1])
            top = np.argsort(-step_logp, kind="stable")[: decode_cfg.num_beams]
            for tok in top:
                candidates.append((logp + float(step_logp[tok]), ids + [int(tok)]))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = []
        for logp, ids in candidates[: decode_cfg.num_beams]:
            if ids[-1] == END_ID:
                finished.append((ids[:-1], logp))
            else:
                beams.append((ids, logp))
        if not beams:
            break
        if decode_cfg.early_stopping and len(finished) >= decode_cfg.num_beams:
            break
    pool = [(ids, normalized(ids, logp)) for ids, logp in finished]
    pool += [(ids, normalized(ids, logp)) for ids, logp in beams]
    pool.sort(key=lambda c: (-c[1], c[0]))
    return pool[0]


def decode_scored(
    bundle: ModelBundle,
    src_text: str,
    formality: FormalityLabel,
    decode_cfg: DecodeConfig = DecodeConfig(),
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> tuple[str, float]:
    """Translate one sentence, returning the detokenized hypothesis and its
    length-normalized log-probability."""
    if not bundle.params.all_finite():
        raise ValueError("model parameters contain non-finite values")
    src_ids, positions = encode_source_text(
        src_text, formality, bundle.src_vocab, bundle.cfg, norm_cfg
    )
    if not src_ids:
        return "", 0.0
    ids, score = _beam_search(bundle, src_ids, positions, decode_cfg)
    return textnorm.detokenize(bundle.tgt_vocab.decode(ids)), score


def decode(
    bundle: ModelBundle,
    src_text: str,
    formality: FormalityLabel,
    decode_cfg: DecodeConfig = DecodeConfig(),
    norm_cfg: textnorm.NormalizationConfig = textnorm.DEFAULT_CONFIG,
) -> str:
    return decode_scored(bundle, src_text, formality, decode_cfg, norm_cfg)[0]


# --------------------------- checkpoint io ---------------------------


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> str:
    """Write config, vocabularies, and tensors; returns the checksum hex
    (also stored as the bundle's model_id). Byte-identical for identical
    bundles."""
    manifest = [[name, list(bundle.params[name].shape)] for name in bundle.params.names()]
    header = {
        "version": 1,
        "config": bundle.cfg.to_dict(),
        "src_vocab": bundle.src_vocab.tokens(),
        "tgt_vocab": bundle.tgt_vocab.tokens(),
        "manifest": manifest,
    }
    header_bytes = json.dumps(
        header, sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for name, _ in manifest:
        blob += np.ascontiguousarray(bundle.params[name], dtype="<f8").tobytes()
    checksum = zlib.crc32(bytes(blob)) & 0xFFFFFFFF
    blob += struct.pack("<I", checksum)
    Path(path).write_bytes(bytes(blob))
    bundle.model_id = f"{checksum:08x}"
    return bundle.model_id


def load_checkpoint(path: str | Path) -> ModelBundle:
    data = Path(path).read_bytes()
    magic_len = len(CHECKPOINT_MAGIC)
    if len(data) < magic_len + 12:
        raise CheckpointCorruptError(f"{path}: file too short to be a checkpoint")
    magic = data[:magic_len]
    if magic != CHECKPOINT_MAGIC:
        if magic[:5] == CHECKPOINT_MAGIC[:5]:
            raise CheckpointVersionError(
                f"{path}: unsupported checkpoint version {magic!r}"
            )
        raise CheckpointCorruptError(f"{path}: bad magic {magic!r}")
    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise CheckpointCorruptError(
            f"{path}: checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )
    header_len = struct.unpack("<Q", data[magic_len : magic_len + 8])[0]
    header_start = magic_len + 8
    try:
        header = json.loads(data[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointCorruptError(f"{path}: unreadable header: {err}") from err
    if header.get("version") != 1:
        raise CheckpointVersionError(f"{path}: header version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["config"])
    tensors: dict[str, np.ndarray] = {}
    offset = header_start + header_len
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        raw = data[offset : offset + count * 8]
        if len(raw) != count * 8:
            raise CheckpointCorruptError(f"{path}: tensor {name} truncated")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += count * 8
    if offset != len(data) - 4:
        raise CheckpointCorruptError(f"{path}: trailing bytes after tensor data")
    expected = set(tensor_shapes(cfg))
    if set(tensors) != expected:
        raise CheckpointCorruptError(f"{path}: manifest does not match config")
    return ModelBundle(
        cfg=cfg,
        params=Parameters(tensors),
        src_vocab=Vocabulary(header["src_vocab"]),
        tgt_vocab=Vocabulary(header["tgt_vocab"]),
        model_id=f"{actual:08x}",
    )


def checkpoint_checksum(path: str | Path) -> str:
    """The stored checksum of a checkpoint file, as hex."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise CheckpointCorruptError(f"{path}: file too short")
    return f"{struct.unpack('<I', data[-4:])[0]:08x}"
