"""Patch-token transformer: one token per tangent patch.

Deep patch features are channel-reduced by a 1x1 convolution, flattened
row-major into tokens, offset by a learned positional embedding and passed
through post-norm transformer blocks. The result is unflattened, expanded
back by another 1x1 convolution and added onto the encoder output.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag


def tokenize(deep: ag.Tensor, reduce_w: ag.Tensor, reduce_b: ag.Tensor, pos: ag.Tensor) -> ag.Tensor:
    """(B*N, C, h, w) features -> (B, N, d) tokens with positional embedding."""
    n, d = pos.shape
    x = ag.conv2d(ag.as_tensor(deep), reduce_w, reduce_b)
    bn = x.shape[0]
    if bn % n or int(np.prod(x.shape[1:])) != d:
        raise ValueError(f"token size {x.shape[1:]} (x{bn}) does not match positional embedding {pos.shape}")
    return x.reshape(bn // n, n, d) + pos


def attention_weights(z: ag.Tensor, wq: ag.Tensor, wk: ag.Tensor, heads: int) -> ag.Tensor:
    b, n, d = z.shape
    dh = d // heads
    q = (z @ wq).reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
    k = (z @ wk).reshape(b, n, heads, dh).transpose(0, 2, 3, 1)
    return ag.softmax((q @ k) * (1.0 / math.sqrt(dh)), axis=-1)


def mhsa(z: ag.Tensor, p: dict, heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the N tokens.

    ``p`` holds ``wq, wk, wv, wo`` as (d, d) matrices; head h uses columns
    h*d_h:(h+1)*d_h of the Q/K/V projections.
    """
    b, n, d = z.shape
    if d % heads:
        raise ValueError(f"token width {d} is not divisible by {heads} heads")
    dh = d // heads
    attn = attention_weights(z, p["wq"], p["wk"], heads)
    v = (z @ p["wv"]).reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d) @ p["wo"]
    return (out, attn) if return_weights else out


def ffn(z: ag.Tensor, p: dict) -> ag.Tensor:
    return ag.linear(ag.silu(ag.linear(z, p["ffn.w1"], p["ffn.b1"])), p["ffn.w2"], p["ffn.b2"])


def transformer_block(z: ag.Tensor, p: dict, heads: int) -> ag.Tensor:
    """Post-norm block: Norm(MSA(z) + z), then Norm(FFN(.) + .)."""
    z1 = ag.layer_norm(mhsa(z, p, heads) + z, p["ln1.g"], p["ln1.b"])
    return ag.layer_norm(ffn(z1, p) + z1, p["ln2.g"], p["ln2.b"])


def detokenize(z: ag.Tensor, expand_w: ag.Tensor, expand_b: ag.Tensor, deep: ag.Tensor, reduced_shape) -> ag.Tensor:
    """(B, N, d) tokens -> (B*N, C, h, w), expanded and added onto ``deep``."""
    b, n, _ = z.shape
    x = z.reshape(b * n, *reduced_shape)
    return ag.conv2d(x, expand_w, expand_b) + deep


def block_params(params: dict, index: int) -> dict:
    prefix = f"attn.block{index}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def attention_stack(deep: ag.Tensor, params: dict, depth: int, heads: int) -> ag.Tensor:
    deep = ag.as_tensor(deep)
    z = tokenize(deep, params["attn.reduce.w"], params["attn.reduce.b"], params["attn.pos"])
    for layer in range(depth):
        z = transformer_block(z, block_params(params, layer), heads)
    reduced = (params["attn.reduce.w"].shape[0],) + deep.shape[2:]
    return detokenize(z, params["attn.expand.w"], params["attn.expand.b"], deep, reduced)
