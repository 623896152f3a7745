"""Semantic capsules: BiLSTM encoder plus multi-head self-attention.

An utterance of T word vectors becomes a T x 2D_H hidden-state matrix H
(forward and backward LSTM states concatenated per position), and each
of R attention heads turns H into one semantic vector:

    A = row_softmax(w_s2 @ tanh(w_s1 @ H^T))        # R x T
    M = A @ H                                       # R x 2D_H

with an orthogonality penalty ||A A^T - I||_F^2 pushing heads apart.
All functions accept a single utterance (no batch axis) or a padded
batch (leading batch axis); the recurrence only ever advances over each
utterance's true length, so trailing pads never leak into H or M.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, Tensor, concat, row_softmax, stack
from .data import EmbeddingTable


@dataclass
class LstmParams:
    """Fused gate parameters, gate order (input, forget, output, candidate)."""

    w_x: Tensor  # D_W x 4D_H
    w_h: Tensor  # D_H x 4D_H
    b: Tensor    # 1   x 4D_H

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    def trainable(self, prefix: str):
        return [(f"{prefix}.w_x", self.w_x), (f"{prefix}.w_h", self.w_h), (f"{prefix}.b", self.b)]


@dataclass
class SemanticCapsParams:
    lstm_fw: LstmParams
    lstm_bw: LstmParams
    w_s1: Tensor  # D_A x 2D_H
    w_s2: Tensor  # R   x D_A

    @property
    def heads(self) -> int:
        return self.w_s2.shape[0]

    def trainable(self):
        return (
            self.lstm_fw.trainable("lstm_fw")
            + self.lstm_bw.trainable("lstm_bw")
            + [("w_s1", self.w_s1), ("w_s2", self.w_s2)]
        )


@dataclass
class SemanticOutput:
    """One utterance's encoder products."""

    H: Tensor        # T x 2D_H
    A: Tensor        # R x T
    M: Tensor        # R x 2D_H
    penalty: Tensor  # scalar ||AA^T - I||_F^2


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_lstm_params(rng, word_dim: int, hidden_dim: int, dtype=np.float32) -> LstmParams:
    w_x = np.hstack([glorot(rng, (word_dim, hidden_dim), word_dim, hidden_dim, dtype) for _ in range(4)])
    w_h = np.hstack([glorot(rng, (hidden_dim, hidden_dim), hidden_dim, hidden_dim, dtype) for _ in range(4)])
    b = np.zeros((1, 4 * hidden_dim), dtype=dtype)
    b[0, hidden_dim : 2 * hidden_dim] = 1.0  # open forget gates at the start
    return LstmParams(
        w_x=Tensor(w_x, requires_grad=True),
        w_h=Tensor(w_h, requires_grad=True),
        b=Tensor(b, requires_grad=True),
    )


def init_semantic_params(
    rng, word_dim: int, hidden_dim: int, attn_dim: int, heads: int, dtype=np.float32
) -> SemanticCapsParams:
    return SemanticCapsParams(
        lstm_fw=init_lstm_params(rng, word_dim, hidden_dim, dtype),
        lstm_bw=init_lstm_params(rng, word_dim, hidden_dim, dtype),
        w_s1=Tensor(glorot(rng, (attn_dim, 2 * hidden_dim), 2 * hidden_dim, attn_dim, dtype), requires_grad=True),
        w_s2=Tensor(glorot(rng, (heads, attn_dim), attn_dim, heads, dtype), requires_grad=True),
    )


# ----------------------------------------------------------------------
# recurrence


def _lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    dh = p.hidden_dim
    z = x_t @ p.w_x + h_prev @ p.w_h + p.b  # B x 4D_H
    i = z[..., 0:dh].sigmoid()
    f = z[..., dh : 2 * dh].sigmoid()
    o = z[..., 2 * dh : 3 * dh].sigmoid()
    g = z[..., 3 * dh : 4 * dh].tanh()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


def _run_direction(xs, p: LstmParams, mask: np.ndarray, reverse: bool):
    """States per original time index; masked steps carry the previous
    state through, so the backward pass effectively starts at each
    utterance's true last token."""
    n, steps = mask.shape
    dh = p.hidden_dim
    dtype = p.w_x.dtype
    h = Tensor(np.zeros((n, dh), dtype=dtype))
    c = Tensor(np.zeros((n, dh), dtype=dtype))
    out: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h_new, c_new = _lstm_step(xs[t], h, c, p)
        col = mask[:, t]
        if col.all():
            h, c = h_new, c_new
        else:
            keep = Tensor(col.astype(dtype)[:, None])
            hold = Tensor((~col).astype(dtype)[:, None])
            h = h_new * keep + h * hold
            c = c_new * keep + c * hold
        out[t] = h
    return out


def encode_tokens(
    token_batch,
    embedding: Tensor,
    params: SemanticCapsParams,
    *,
    lengths=None,
    pad_id: int | None = None,
    training: bool = False,
    dropout_keep: float = 1.0,
    rng: np.random.Generator | None = None,
):
    """Encode a batch of token-id sequences.

    `token_batch` is either a list of id sequences (padded here with
    `pad_id`) or an already padded 2-D integer array with explicit
    `lengths`. Returns (H, mask) with H of shape B x T x 2D_H and a
    boolean mask marking real positions.
    """
    if isinstance(token_batch, np.ndarray) and token_batch.ndim == 2:
        ids = token_batch.astype(np.int64, copy=False)
        if lengths is None:
            raise ContractError("padded id arrays need explicit lengths")
        lengths = np.asarray(lengths, dtype=np.int64)
    else:
        seqs = [list(s) for s in token_batch]
        if not seqs or any(len(s) == 0 for s in seqs):
            raise ContractError("every utterance must have at least one token")
        lengths = np.asarray([len(s) for s in seqs], dtype=np.int64)
        t_max = int(lengths.max())
        if pad_id is None:
            if (lengths != t_max).any():
                raise ContractError("ragged batches need a pad_id")
            pad_id = 0
        ids = np.full((len(seqs), t_max), pad_id, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s

    n, t_max = ids.shape
    if (lengths < 1).any() or (lengths > t_max).any():
        raise ContractError("lengths must be in [1, T]")
    mask = np.arange(t_max)[None, :] < lengths[:, None]  # B x T

    x = embedding.take_rows(ids)  # B x T x D_W
    if training and dropout_keep < 1.0:
        if rng is None:
            raise ContractError("dropout needs an rng")
        keep = (rng.random(x.shape) < dropout_keep).astype(x.values.dtype) / dropout_keep
        x = x * Tensor(keep)  # inverted dropout; identity at evaluation

    xs = [x[:, t, :] for t in range(t_max)]
    h_fw = _run_direction(xs, params.lstm_fw, mask, reverse=False)
    h_bw = _run_direction(xs, params.lstm_bw, mask, reverse=True)
    h_cat = [concat(h_fw[t], h_bw[t], axis=-1) for t in range(t_max)]
    big_h = stack(h_cat, axis=1)  # B x T x 2D_H
    return big_h, mask


def bilstm_encode(tokens, table, params: SemanticCapsParams) -> Tensor:
    """Single-utterance hidden-state matrix H (T x 2D_H)."""
    if isinstance(table, EmbeddingTable):
        emb = Tensor(np.asarray(table.vectors))
    else:
        emb = table
    big_h, _ = encode_tokens([list(tokens)], emb, params)
    return big_h[0]


# ----------------------------------------------------------------------
# attention


def orthogonality_penalty(attn: Tensor) -> Tensor:
    """||A A^T - I||_F^2 per utterance (scalar, or a batch vector)."""
    heads = attn.shape[-2]
    eye = Tensor(np.eye(heads, dtype=attn.values.dtype))
    dev = attn @ attn.swapaxes(-1, -2) - eye
    return dev.square().sum(axis=(-1, -2))


def attend(H: Tensor, params: SemanticCapsParams, pad_mask=None):
    """Attention matrix A (R x T, rows sum to 1 over real tokens) and the
    head-orthogonality penalty."""
    ht = H.swapaxes(-1, -2)                  # ... x 2D_H x T
    hidden = (params.w_s1 @ ht).tanh()       # ... x D_A x T
    logits = params.w_s2 @ hidden            # ... x R x T
    mask = None
    if pad_mask is not None:
        mask = np.expand_dims(np.asarray(pad_mask, dtype=bool), -2)  # broadcast over heads
    attn = row_softmax(logits, mask=mask)
    return attn, orthogonality_penalty(attn)


def semantic_vectors(attn: Tensor, H: Tensor) -> Tensor:
    """M = A @ H; row r is the r-th semantic vector."""
    return attn @ H


def extract_semantics(H: Tensor, params: SemanticCapsParams, pad_mask=None) -> SemanticOutput:
    attn, penalty = attend(H, params, pad_mask)
    return SemanticOutput(H=H, A=attn, M=semantic_vectors(attn, H), penalty=penalty)
