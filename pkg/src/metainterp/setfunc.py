"""Permutation-invariant set functions used to fuse hidden representations.

Three families:

* `SimpleSetParams` — the two-layer single-head attention form whose pair
  output has the closed form W(h + a(h' - h)) + b; this is the variant the
  theory checks run against.
* `FullSetTransformerParams` — the 4-head attention encoder/pooling stack
  with layer norm, skip connections and two dropout sites.
* `DeepSetsParams` — affine stacks around a mean pool.

All forwards take a list of (1, d) rows and return a (1, d) row. Vectors
carried as rows throughout; the classic column-convention output is the
transpose of ours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue


class CardinalityError(ValueError):
    pass


def _stack(elems) -> DiffValue:
    if len(elems) == 0:
        raise CardinalityError("set function needs at least one element")
    rows = [ad._lift(e) for e in elems]
    out = rows[0]
    for r in rows[1:]:
        out = ad.concat_rows(out, r)
    return out


# ---------------------------------------------------------------------------
# simplified two-layer attention form


@dataclass
class SimpleSetParams:
    """Single-head, two-attention-layer set function on width d.

    Weight naming: w1* / b1* are the first (self-attention) layer, w2* /
    b2* the pooling layer queried by the learnable seed row.
    """

    w1q: np.ndarray
    w1k: np.ndarray
    w1v: np.ndarray
    w2q: np.ndarray
    w2k: np.ndarray
    w2v: np.ndarray
    b1q: np.ndarray
    b1k: np.ndarray
    b1v: np.ndarray
    b2q: np.ndarray
    b2k: np.ndarray
    b2v: np.ndarray
    seed: np.ndarray  # (1, d) pooling query

    @property
    def dim(self) -> int:
        arr = self.w1q.data if isinstance(self.w1q, DiffValue) else self.w1q
        return arr.shape[0]


def init_simple(d: int, rng: np.random.Generator, qk_scale: float = 0.5) -> SimpleSetParams:
    """Random init; value path starts near the identity so the singleton
    pass begins close to an identity feature map."""
    s = qk_scale / math.sqrt(d)

    def mat():
        return rng.standard_normal((d, d)) * s

    def row():
        return np.zeros((1, d))

    eye = np.eye(d)
    return SimpleSetParams(
        w1q=mat(), w1k=mat(), w1v=eye + 0.1 * mat(),
        w2q=mat(), w2k=mat(), w2v=eye + 0.1 * mat(),
        b1q=row(), b1k=row(), b1v=row(),
        b2q=row(), b2k=row(), b2v=row(),
        seed=rng.standard_normal((1, d)) * s,
    )


def effective_affine(p: SimpleSetParams):
    """Row-convention affine (M, b) with singleton output h @ M + b.

    M is the transpose of the column-convention combined value matrix; b
    likewise. Recomputed from the fields, never stored.
    """
    w1v = p.w1v.data if isinstance(p.w1v, DiffValue) else p.w1v
    w2v = p.w2v.data if isinstance(p.w2v, DiffValue) else p.w2v
    b1v = p.b1v.data if isinstance(p.b1v, DiffValue) else p.b1v
    b2v = p.b2v.data if isinstance(p.b2v, DiffValue) else p.b2v
    return w1v @ w2v, b1v @ w2v + b2v


def simple_forward(p: SimpleSetParams, elems) -> DiffValue:
    """Two attention applications: self-attention over the set, then
    pooling attention queried by the seed row."""
    h1 = _stack(elems)
    d = h1.shape[1]
    inv_sqrt_d = 1.0 / math.sqrt(d)

    q1 = ad.add(ad.matmul(h1, p.w1q), p.b1q)
    k1 = ad.add(ad.matmul(h1, p.w1k), p.b1k)
    v1 = ad.add(ad.matmul(h1, p.w1v), p.b1v)
    att1 = ad.softmax_rows(ad.scale(ad.matmul(q1, ad.transpose(k1)), inv_sqrt_d))
    h2 = ad.matmul(att1, v1)

    q2 = ad.add(ad.matmul(ad._lift(p.seed), p.w2q), p.b2q)
    k2 = ad.add(ad.matmul(h2, p.w2k), p.b2k)
    v2 = ad.add(ad.matmul(h2, p.w2v), p.b2v)
    att2 = ad.softmax_rows(ad.scale(ad.matmul(q2, ad.transpose(k2)), inv_sqrt_d))
    return ad.matmul(att2, v2)


def alpha_pair(p: SimpleSetParams, h, h_prime):
    """Attention probabilities and the induced pair coefficient.

    Returns (alpha, p1, p1_tilde, p2) where p1/p1_tilde are the first
    column of the 2x2 self-attention softmax, p2 the first entry of the
    pooling softmax, and alpha = p2(1-p1) + (1-p2)(1-p1_tilde).
    """
    def arr(x):
        return x.data if isinstance(x, DiffValue) else np.asarray(x, dtype=np.float64).reshape(1, -1)

    H = np.vstack([arr(h), arr(h_prime)])
    d = H.shape[1]

    def val(x):
        return x.data if isinstance(x, DiffValue) else x

    def soft(z):
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    q1 = H @ val(p.w1q) + val(p.b1q)
    k1 = H @ val(p.w1k) + val(p.b1k)
    s1 = soft(q1 @ k1.T / math.sqrt(d))
    h2 = s1 @ (H @ val(p.w1v) + val(p.b1v))
    q2 = val(p.seed) @ val(p.w2q) + val(p.b2q)
    k2 = h2 @ val(p.w2k) + val(p.b2k)
    s2 = soft(q2 @ k2.T / math.sqrt(d))
    p1, p1t, p2 = s1[0, 0], s1[1, 0], s2[0, 0]
    alpha = p2 * (1.0 - p1) + (1.0 - p2) * (1.0 - p1t)
    return alpha, p1, p1t, p2


# ---------------------------------------------------------------------------
# full 4-head set transformer


N_HEADS = 4


@dataclass
class AttnHead:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray


@dataclass
class AttnBlock:
    heads: list
    w: np.ndarray        # (d_h, d_h) post-attention affine
    b: np.ndarray        # (1, d_h)
    ln_gain: np.ndarray  # (1, d_h)
    ln_bias: np.ndarray


@dataclass
class FullSetTransformerParams:
    """Two self-attention encoder blocks, one attention-pooling block with a
    learnable seed, and an output affine back to the element width."""

    block1: AttnBlock
    block2: AttnBlock
    block3: AttnBlock  # pooling block; query built from `seed`
    seed: np.ndarray   # (1, d_h)
    w4: np.ndarray     # (d_h, d)
    b4: np.ndarray     # (1, d)
    dropout_rate: float = 0.1

    @property
    def dim(self) -> int:
        arr = self.w4.data if isinstance(self.w4, DiffValue) else self.w4
        return arr.shape[1]

    @property
    def hidden(self) -> int:
        arr = self.w4.data if isinstance(self.w4, DiffValue) else self.w4
        return arr.shape[0]


def _init_head(d_in: int, d_k: int, rng) -> AttnHead:
    s = 1.0 / math.sqrt(d_in)
    return AttnHead(
        wq=rng.standard_normal((d_in, d_k)) * s,
        wk=rng.standard_normal((d_in, d_k)) * s,
        wv=rng.standard_normal((d_in, d_k)) * s,
        bq=np.zeros((1, d_k)),
        bk=np.zeros((1, d_k)),
        bv=np.zeros((1, d_k)),
        ln_gain=np.ones((1, d_k)),
        ln_bias=np.zeros((1, d_k)),
    )


def _init_block(d_in: int, d_h: int, rng) -> AttnBlock:
    d_k = d_h // N_HEADS
    return AttnBlock(
        heads=[_init_head(d_in, d_k, rng) for _ in range(N_HEADS)],
        w=rng.standard_normal((d_h, d_h)) / math.sqrt(d_h),
        b=np.zeros((1, d_h)),
        ln_gain=np.ones((1, d_h)),
        ln_bias=np.zeros((1, d_h)),
    )


def init_full(d: int, d_h: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              dropout_rate: float = 0.1) -> FullSetTransformerParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    if d_h is None:
        d_h = N_HEADS * max(2, (d + 1) // 2)
    if d_h % N_HEADS != 0:
        raise ValueError(f"hidden width {d_h} must be a multiple of {N_HEADS}")
    return FullSetTransformerParams(
        block1=_init_block(d, d_h, rng),
        block2=_init_block(d_h, d_h, rng),
        block3=_init_block(d_h, d_h, rng),
        seed=rng.standard_normal((1, d_h)) / math.sqrt(d_h),
        w4=rng.standard_normal((d_h, d)) / math.sqrt(d_h),
        b4=np.zeros((1, d)),
        dropout_rate=dropout_rate,
    )


def _attend(block: AttnBlock, queries, keys_values) -> DiffValue:
    """Multi-head attention with per-head layer norm on Q + softmax(QK/s)V."""
    outs = None
    for head in block.heads:
        q = ad.add(ad.matmul(queries, head.wq), head.bq)
        k = ad.add(ad.matmul(keys_values, head.wk), head.bk)
        v = ad.add(ad.matmul(keys_values, head.wv), head.bv)
        d_k = q.shape[1]
        att = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_k)))
        a = ad.layer_norm(ad.add(q, ad.matmul(att, v)), head.ln_gain, head.ln_bias)
        outs = a if outs is None else ad.concat_cols(outs, a)
    return outs


def _block_mix(block: AttnBlock, o, first_block: bool) -> DiffValue:
    ff = ad.relu(ad.add(ad.matmul(o, block.w), block.b))
    if first_block:
        # encoder block 1: norm the attention output, then add the ff branch
        return ad.add(ad.layer_norm(o, block.ln_gain, block.ln_bias), ff)
    return ad.layer_norm(ad.add(o, ff), block.ln_gain, block.ln_bias)


def make_full_masks(p: FullSetTransformerParams, n: int, rng: np.random.Generator):
    """Binary keep-masks for the two dropout sites of one forward pass."""
    keep = 1.0 - p.dropout_rate
    d_h = p.hidden
    m2 = (rng.random((n, d_h)) < keep).astype(np.float64)
    m3 = (rng.random((1, d_h)) < keep).astype(np.float64)
    return m2, m3


def full_forward(p: FullSetTransformerParams, elems, masks=None) -> DiffValue:
    """Encoder blocks, attention pooling from the seed, output affine.

    masks is the (site-2, site-3) pair from `make_full_masks`; omit it for
    the deterministic eval path.
    """
    x = _stack(elems)
    g1 = _block_mix(p.block1, _attend(p.block1, x, x), first_block=True)
    h2 = _block_mix(p.block2, _attend(p.block2, g1, g1), first_block=False)
    if masks is not None:
        m2, m3 = masks
        h2 = ad.dropout(h2, p.dropout_rate, m2)
    pooled = _attend(p.block3, ad._lift(p.seed), h2)
    h3 = _block_mix(p.block3, pooled, first_block=False)
    if masks is not None:
        h3 = ad.dropout(h3, p.dropout_rate, m3)
    return ad.add(ad.matmul(h3, p.w4), p.b4)


# ---------------------------------------------------------------------------
# deep sets


@dataclass
class DeepSetsParams:
    """Affine stacks around a mean pool; empty stacks mean identity."""

    pre: list = field(default_factory=list)   # list of (w, b)
    post: list = field(default_factory=list)  # list of (w, b); last is affine-only
    slope: float = 0.01


def init_deepsets(d: int, widths=(32,), rng: Optional[np.random.Generator] = None) -> DeepSetsParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [d, *widths]

    def affine(din, dout):
        return [rng.standard_normal((din, dout)) * math.sqrt(1.0 / din), np.zeros((1, dout))]

    pre = [affine(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
    post_dims = [dims[-1], *reversed(widths[:-1]), d] if widths else [d, d]
    post = [affine(post_dims[i], post_dims[i + 1]) for i in range(len(post_dims) - 1)]
    return DeepSetsParams(pre=pre, post=post)


def _run_stack(stack, x, slope, activate_last: bool) -> DiffValue:
    n = len(stack)
    for i, (w, b) in enumerate(stack):
        x = ad.add(ad.matmul(x, w), b)
        if activate_last or i < n - 1:
            x = ad.leaky_relu(x, slope)
    return x


def deepsets_forward(p: DeepSetsParams, elems) -> DiffValue:
    x = _stack(elems)
    x = _run_stack(p.pre, x, p.slope, activate_last=True)
    pooled = ad.scale(ad.col_sum(x), 1.0 / x.shape[0])
    return _run_stack(p.post, pooled, p.slope, activate_last=False)


# ---------------------------------------------------------------------------
# identity (vanilla baseline; singleton passes only)


@dataclass
class IdentitySet:
    """Placeholder for the identity feature map of the vanilla baseline."""


# ---------------------------------------------------------------------------
# dispatch surface used by the loss paths


@singledispatch
def set_forward(params, elems, masks=None) -> DiffValue:
    raise TypeError(f"unknown set function parameters: {type(params).__name__}")


@set_forward.register
def _(params: SimpleSetParams, elems, masks=None):
    return simple_forward(params, elems)


@set_forward.register
def _(params: FullSetTransformerParams, elems, masks=None):
    return full_forward(params, elems, masks)


@set_forward.register
def _(params: DeepSetsParams, elems, masks=None):
    return deepsets_forward(params, elems)


@set_forward.register
def _(params: IdentitySet, elems, masks=None):
    if len(elems) != 1:
        raise CardinalityError("identity set function only accepts singletons")
    return ad._lift(elems[0])


@singledispatch
def singleton_batch(params, rows, masks=None) -> DiffValue:
    """Apply the set function to every row of `rows` as a singleton set.

    Semantically identical to calling set_forward per row; attention over a
    one-element set reduces to weight 1, which lets singletons share one
    batched pass.
    """
    raise TypeError(f"unknown set function parameters: {type(params).__name__}")


@singleton_batch.register
def _(params: SimpleSetParams, rows, masks=None):
    rows = ad._lift(rows)
    v1 = ad.add(ad.matmul(rows, params.w1v), params.b1v)
    return ad.add(ad.matmul(v1, params.w2v), params.b2v)


@singleton_batch.register
def _(params: FullSetTransformerParams, rows, masks=None):
    rows = ad._lift(rows)
    n = rows.shape[0]

    def attend_single(block, queries, values_src):
        outs = None
        for head in block.heads:
            q = ad.add(ad.matmul(queries, head.wq), head.bq)
            v = ad.add(ad.matmul(values_src, head.wv), head.bv)
            a = ad.layer_norm(ad.add(q, v), head.ln_gain, head.ln_bias)
            outs = a if outs is None else ad.concat_cols(outs, a)
        return outs

    g1 = _block_mix(params.block1, attend_single(params.block1, rows, rows), True)
    h2 = _block_mix(params.block2, attend_single(params.block2, g1, g1), False)
    if masks is not None:
        h2 = ad.dropout(h2, params.dropout_rate, masks[0])
    seed_rows = ad.tile_rows(ad._lift(params.seed), n)
    h3 = _block_mix(params.block3, attend_single(params.block3, seed_rows, h2), False)
    if masks is not None:
        h3 = ad.dropout(h3, params.dropout_rate, masks[1])
    return ad.add(ad.matmul(h3, params.w4), params.b4)


@singleton_batch.register
def _(params: DeepSetsParams, rows, masks=None):
    rows = ad._lift(rows)
    x = _run_stack(params.pre, rows, params.slope, activate_last=True)
    return _run_stack(params.post, x, params.slope, activate_last=False)


@singleton_batch.register
def _(params: IdentitySet, rows, masks=None):
    return ad._lift(rows)


def make_masks(params, n: int, rng: Optional[np.random.Generator]):
    """Dropout masks for one set_forward call, or None for mask-free kinds."""
    if isinstance(params, FullSetTransformerParams) and rng is not None:
        return make_full_masks(params, n, rng)
    return None


def make_singleton_masks(params, n_rows: int, rng: Optional[np.random.Generator]):
    """Dropout masks for a singleton_batch call over n_rows rows."""
    if isinstance(params, FullSetTransformerParams) and rng is not None:
        keep = 1.0 - params.dropout_rate
        d_h = params.hidden
        m2 = (rng.random((n_rows, d_h)) < keep).astype(np.float64)
        m3 = (rng.random((n_rows, d_h)) < keep).astype(np.float64)
        return m2, m3
    return None
