"""Exact single-device attention: forward, backward, and block merging.

This is the ground truth every distributed path is checked against.  All
math runs at the dtype of the inputs; tests use float64.  Rows whose causal
mask admits no key produce zero output and a -inf log-sum-exp, never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DenseTensor:
    """A (heads, tokens, head_dim) tensor carrying original token positions."""

    values: np.ndarray
    positions: np.ndarray  # (tokens,) original sequence indices

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"expected (H, T, d) values, got {self.values.shape}")
        if self.positions.shape != (self.values.shape[1],):
            raise ValueError("positions must have one entry per token")

    @property
    def heads(self) -> int:
        return self.values.shape[0]

    @property
    def tokens(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BlockResult:
    """Partial attention output plus its per-(head, query) log-sum-exp."""

    out: np.ndarray  # (H, Tq, d)
    lse: np.ndarray  # (H, Tq)


def _expand_kv(k: np.ndarray, n_q_heads: int) -> np.ndarray:
    """Repeat KV heads contiguously so head h reads kv head h // G."""
    n_kv = k.shape[0]
    if n_q_heads % n_kv != 0:
        raise ValueError(f"{n_q_heads} query heads not divisible by {n_kv} kv heads")
    return np.repeat(k, n_q_heads // n_kv, axis=0)


def _softmax_with_lse(scores: np.ndarray):
    """Row softmax of possibly fully-masked (-inf) score rows.

    Returns (probs, lse); fully masked rows give zero probs and -inf lse.
    """
    m = np.max(scores, axis=-1)
    safe_m = np.where(np.isneginf(m), 0.0, m)
    p = np.exp(scores - safe_m[..., None])
    p = np.where(np.isneginf(scores), 0.0, p)
    denom = p.sum(axis=-1)
    alive = denom > 0
    lse = np.where(alive, safe_m + np.log(np.where(alive, denom, 1.0)), -np.inf)
    probs = p / np.where(alive, denom, 1.0)[..., None]
    return probs, lse


def _scores(q: DenseTensor, k: DenseTensor, causal: bool) -> np.ndarray:
    kk = _expand_kv(k.values, q.heads)
    scale = 1.0 / np.sqrt(q.values.shape[-1])
    s = np.einsum("htd,hsd->hts", q.values, kk) * scale
    if causal:
        admitted = k.positions[None, :] <= q.positions[:, None]
        s = np.where(admitted[None, :, :], s, -np.inf)
    return s


def full_attention(q: DenseTensor, k: DenseTensor, v: DenseTensor,
                   causal: bool = False) -> tuple[DenseTensor, np.ndarray]:
    """Scaled-dot-product attention with GQA head grouping.

    The causal mask compares carried token positions, so it stays exact
    under any sequence reordering.  Returns the output tensor and the
    log-sum-exp of scaled scores per (head, query token).
    """
    if k.values.shape != v.values.shape:
        raise ValueError("K and V shapes differ")
    if not np.array_equal(k.positions, v.positions):
        raise ValueError("K and V positions differ")
    probs, lse = _softmax_with_lse(_scores(q, k, causal))
    vv = _expand_kv(v.values, q.heads)
    out = np.einsum("hts,hsd->htd", probs, vv)
    return DenseTensor(out, q.positions.copy()), lse


def attention_block(q: DenseTensor, k: DenseTensor, v: DenseTensor,
                    causal: bool = False) -> BlockResult:
    """Partial attention of a query block against one key/value block."""
    out, lse = full_attention(q, k, v, causal)
    return BlockResult(out.values, lse)


def empty_block(n_heads: int, n_tokens: int, head_dim: int,
                dtype=np.float64) -> BlockResult:
    """Identity element for block_update: zero output, -inf lse."""
    return BlockResult(np.zeros((n_heads, n_tokens, head_dim), dtype=dtype),
                       np.full((n_heads, n_tokens), -np.inf))


def block_update(acc: BlockResult, blk: BlockResult) -> BlockResult:
    """Fold one partial result into the accumulator (online softmax merge)."""
    if acc.out.shape != blk.out.shape:
        raise ValueError("block shapes differ")
    new_lse = np.logaddexp(acc.lse, blk.lse)
    safe = np.where(np.isneginf(new_lse), 0.0, new_lse)

    def weight(lse):
        w = np.exp(lse - safe)
        return np.where(np.isneginf(lse), 0.0, w)

    out = (acc.out * weight(acc.lse)[..., None]
           + blk.out * weight(blk.lse)[..., None])
    return BlockResult(out, new_lse)


def attention_backward(q: DenseTensor, k: DenseTensor, v: DenseTensor,
                       d_out: np.ndarray, causal: bool = False):
    """Analytic gradients (dQ, dK, dV) of full_attention's output.

    KV-head gradients sum over the query heads sharing each KV head.
    """
    if d_out.shape != q.values.shape:
        raise ValueError("d_out must match Q's shape")
    n_q, n_kv = q.heads, k.values.shape[0]
    groups = n_q // n_kv
    scale = 1.0 / np.sqrt(q.values.shape[-1])
    probs, _ = _softmax_with_lse(_scores(q, k, causal))
    kk = _expand_kv(k.values, n_q)
    vv = _expand_kv(v.values, n_q)

    dv_rep = np.einsum("hts,htd->hsd", probs, d_out)
    dp = np.einsum("htd,hsd->hts", d_out, vv)
    row = np.einsum("hts,hts->ht", dp, probs)
    ds = probs * (dp - row[..., None])
    dq = np.einsum("hts,hsd->htd", ds, kk) * scale
    dk_rep = np.einsum("hts,htd->hsd", ds, q.values) * scale

    shape = (n_kv, groups) + dk_rep.shape[1:]
    dk = dk_rep.reshape(shape).sum(axis=1)
    dv = dv_rep.reshape(shape).sum(axis=1)
    return dq, dk, dv
