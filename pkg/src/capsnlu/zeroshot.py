"""Zero-shot detection capsules for emerging intents.

No emerging-intent utterance is ever trained on. At inference time the
trained network's own routing products are transferred: the final-round
coupling coefficients and prediction vectors of the existing intents
give vote vectors

    g[k][r] = c[k][r] * p[k][r]

which are mixed by label-embedding similarity

    q[l][k] = softmax_k( -||e_z[l] - e_y[k]||^2 / sigma^2 )
    u[l][r] = sum_k q[l][k] * g[k][r]

and routed once more (same agreement loop, L target capsules) into
emerging activation vectors n[l]; the largest norm wins. Everything here
is pure evaluation over a frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, Tensor, no_grad
from .detection import RoutingTrace, dynamic_routing


@dataclass
class SimilarityMatrix:
    """Row-stochastic emerging-to-existing similarities."""

    q: np.ndarray  # L x K, rows sum to 1, entries in (0, 1]
    sigma: float


@dataclass
class ZslOutput:
    """Products of one utterance's zero-shot pass."""

    g: np.ndarray         # K x R x D_P vote vectors
    u: np.ndarray         # L x R x D_P emerging prediction vectors
    n: np.ndarray         # L x D_P emerging activation vectors
    variance: np.ndarray  # per-emerging-intent var(q_l)


def vote_vectors(trace: RoutingTrace, p) -> np.ndarray:
    """g[k][r] = c[k][r] (final iteration) * p[k][r]."""
    if trace.c_final is None:
        raise ContractError("routing trace holds no coupling coefficients")
    c = trace.c_final.values if isinstance(trace.c_final, Tensor) else np.asarray(trace.c_final)
    pv = p.values if isinstance(p, Tensor) else np.asarray(p)
    if pv.shape[:-1] != c.shape:
        raise ContractError(f"predictions {pv.shape} do not match couplings {c.shape}")
    return c[..., None] * pv


def intent_similarity(emerging_vecs, existing_vecs, sigma: float) -> SimilarityMatrix:
    """Softmax over existing intents of the scaled squared embedding
    distance; `sigma` flattens the distribution as it grows."""
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    ez = np.asarray(emerging_vecs, dtype=np.float64)
    ey = np.asarray(existing_vecs, dtype=np.float64)
    if ez.ndim != 2 or ey.ndim != 2 or ez.shape[1] != ey.shape[1]:
        raise ContractError(f"embedding shapes do not conform: {ez.shape} vs {ey.shape}")
    diff = ez[:, None, :] - ey[None, :, :]            # L x K x D_I
    dist = (diff * diff).sum(axis=-1) / (sigma * sigma)
    neg = -dist
    neg -= neg.max(axis=-1, keepdims=True)
    e = np.exp(neg)
    q = e / e.sum(axis=-1, keepdims=True)
    return SimilarityMatrix(q=q, sigma=float(sigma))


def zero_shot_prediction_vectors(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """u[l][r] = sum_k q[l][k] * g[k][r]; batched g gets a leading axis."""
    q = np.asarray(q)
    g = np.asarray(g)
    if q.ndim != 2 or q.shape[1] != g.shape[-3]:
        raise ContractError(f"similarity {q.shape} does not match votes {g.shape}")
    if g.ndim == 3:
        return np.einsum("lk,krd->lrd", q, g)
    if g.ndim == 4:
        return np.einsum("lk,bkrd->blrd", q, g)
    raise ContractError(f"vote vectors must be K x R x D_P (optionally batched), got {g.shape}")


def emerging_activations(u, iterations: int) -> np.ndarray:
    """Route emerging prediction vectors into activation vectors n."""
    with no_grad():
        trace = dynamic_routing(Tensor(np.asarray(u)), iterations)
    return trace.v_final.values


def classify_emerging(u, iterations: int):
    """Winning emerging intent and all activation vectors for one
    utterance (ties go to the lowest id)."""
    n = emerging_activations(np.asarray(u), iterations)
    norms = np.linalg.norm(n, axis=-1)
    return int(np.argmax(norms)), n


def classify_emerging_batch(u, iterations: int):
    """Batched variant: (winner ids, n of shape B x L x D_P)."""
    n = emerging_activations(np.asarray(u), iterations)
    norms = np.linalg.norm(n, axis=-1)
    return norms.argmax(axis=-1), n


def similarity_variance(q: np.ndarray) -> np.ndarray:
    """Population variance of each emerging intent's similarity row."""
    q = np.asarray(q)
    return q.var(axis=-1)


def zero_shot_pass(trace: RoutingTrace, p, sim: SimilarityMatrix, iterations: int) -> ZslOutput:
    """Full transfer for one utterance's routing products."""
    g = vote_vectors(trace, p)
    u = zero_shot_prediction_vectors(sim.q, g)
    n = emerging_activations(u, iterations)
    return ZslOutput(g=g, u=u, n=n, variance=similarity_variance(sim.q))
