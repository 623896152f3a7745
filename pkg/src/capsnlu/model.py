"""Whole-model parameter bundle, forward pass, and persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ContractError, Tensor
from .config import RunConfig
from .data import EmbeddingTable
from .detection import (
    DetectionCapsParams,
    RoutingTrace,
    dynamic_routing,
    init_detection_params,
    prediction_vectors,
)
from .semantic import (
    SemanticCapsParams,
    attend,
    encode_tokens,
    init_semantic_params,
    semantic_vectors,
)


@dataclass
class ModelParams:
    """Every trainable weight: embedding matrix, both LSTM directions,
    attention matrices, and the per-(intent, head) transforms."""

    embedding: Tensor  # |V| x D_W, PAD row frozen at zero
    semantic: SemanticCapsParams
    detection: DetectionCapsParams
    pad_id: int

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [("embedding", self.embedding)] + self.semantic.trainable() + self.detection.trainable()

    def zero_grads(self) -> None:
        for _, t in self.trainable():
            t.reset_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.trainable()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self.trainable():
            t.values[...] = values[name]


@dataclass
class ForwardPass:
    """Products of one batched forward run."""

    H: Tensor              # B x T x 2D_H
    mask: np.ndarray       # B x T real-token mask
    A: Tensor              # B x R x T
    M: Tensor              # B x R x 2D_H
    penalty: Tensor        # B orthogonality penalties
    P: Tensor              # B x K x R x D_P
    trace: RoutingTrace


def init_model(table: EmbeddingTable, cfg: RunConfig, rng=None, dtype=np.float32) -> ModelParams:
    if table.dim != cfg.word_dim:
        raise ContractError(f"embedding dim {table.dim} does not match word_dim {cfg.word_dim}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    emb = table.vectors.astype(dtype).copy()
    emb[table.pad_id] = 0.0
    return ModelParams(
        embedding=Tensor(emb, requires_grad=True),
        semantic=init_semantic_params(rng, cfg.word_dim, cfg.hidden_dim, cfg.attn_dim, cfg.heads, dtype),
        detection=init_detection_params(
            rng, len(cfg.existing_labels), cfg.heads, 2 * cfg.hidden_dim, cfg.caps_dim, dtype
        ),
        pad_id=table.pad_id,
    )


def forward_batch(
    model: ModelParams,
    token_batch,
    cfg: RunConfig,
    *,
    training: bool = False,
    rng=None,
) -> ForwardPass:
    big_h, mask = encode_tokens(
        token_batch,
        model.embedding,
        model.semantic,
        pad_id=model.pad_id,
        training=training,
        dropout_keep=cfg.dropout_keep,
        rng=rng,
    )
    attn, penalty = attend(big_h, model.semantic, pad_mask=mask)
    m = semantic_vectors(attn, big_h)
    p = prediction_vectors(m, model.detection)
    trace = dynamic_routing(p, cfg.routing_iterations)
    return ForwardPass(H=big_h, mask=mask, A=attn, M=m, penalty=penalty, P=p, trace=trace)


# ----------------------------------------------------------------------
# persistence


@dataclass
class ModelBundle:
    """A reloaded model plus everything needed to run it on new text."""

    model: ModelParams
    table: EmbeddingTable  # vocab + the tuned embedding matrix
    intent_vectors: np.ndarray  # (K+L) x D_W from the pretrained vectors
    config: RunConfig


def save_model(model: ModelParams, table: EmbeddingTable, cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if table.intent_vectors is None:
        raise ContractError("table has no intent vectors; build them before saving")
    arrays = {name.replace(".", "__"): t.values for name, t in model.trainable()}
    arrays["intent_vectors"] = table.intent_vectors
    np.savez(out_dir / "params.npz", **arrays)
    words = [None] * len(table.vocab)
    for w, i in table.vocab.items():
        words[i] = w
    meta = {
        "vocab": words,
        "oov_id": table.oov_id,
        "pad_id": table.pad_id,
        "config": cfg.as_dict(),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return out_dir


def load_model(model_dir) -> ModelBundle:
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "meta.json").read_text(encoding="utf-8"))
    arrays = np.load(model_dir / "params.npz")
    cfg_dict = meta["config"]
    cfg = RunConfig(**{
        k: tuple(v) if isinstance(v, list) else v for k, v in cfg_dict.items()
    })
    table = EmbeddingTable(
        vocab={w: i for i, w in enumerate(meta["vocab"])},
        vectors=arrays["embedding"],
        oov_id=meta["oov_id"],
        pad_id=meta["pad_id"],
        intent_vectors=arrays["intent_vectors"],
    )
    rng = np.random.default_rng(cfg.seed)
    model = init_model(table, cfg, rng=rng, dtype=arrays["embedding"].dtype)
    model.restore({name: arrays[name.replace(".", "__")] for name, _ in model.trainable()})
    return ModelBundle(model=model, table=table, intent_vectors=arrays["intent_vectors"], config=cfg)
