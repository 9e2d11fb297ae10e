"""Patch encoder-decoder with geometric fusion, patch attention and two heads.

Layout (all convolutions 3x3 unless noted)::

    stem    stride 2 -> enc[0] ch            (R/2)
    stage1  stride 2 -> enc[1] ch  + geometric embedding   (R/4)
    stage2  stride 2 -> enc[2] ch            (R/8)
    attention over the N patch tokens, residual onto stage2
    dec1    up x2, concat stage1 -> dec[0]   (R/4)
    dec2    up x2, concat stem   -> dec[1]   (R/2)
    dec3    up x2                -> dec[2]   (R)
    depth head -> softplus,  confidence head -> sigmoid
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .attention import attention_stack
from .embedding import N_ATTRS, GeomAttrs, embed, fuse


# RGB patches are standardized before the stem
INPUT_MEAN = 0.5
INPUT_STD = 0.25


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_patches: int = 18
    patch_res: int = 64
    in_channels: int = 3
    enc_channels: tuple[int, int, int] = (8, 32, 64)
    dec_channels: tuple[int, int, int] = (32, 16, 8)
    embed_hidden: int = 32
    reduce_channels: int = 4
    depth: int = 6
    heads: int = 4
    ffn_mult: int = 4
    pos_std: float = 0.02
    depth_init: float = 2.0
    use_geometry: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.patch_res % 8:
            raise ConfigError(f"patch_res must be a multiple of 8, got {self.patch_res}")
        if self.token_dim % self.heads:
            raise ConfigError(f"token dim {self.token_dim} is not divisible by {self.heads} heads")
        if self.depth < 0 or self.heads < 1 or self.n_patches < 1:
            raise ConfigError("depth, heads and n_patches must be positive")
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        object.__setattr__(self, "dec_channels", tuple(int(c) for c in self.dec_channels))

    @property
    def feat_res(self) -> int:
        return self.patch_res // 4

    @property
    def deep_res(self) -> int:
        return self.patch_res // 8

    @property
    def token_dim(self) -> int:
        return self.reduce_channels * self.deep_res**2

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **kw) -> "ModelConfig":
        d = asdict(self)
        d.update(kw)
        return ModelConfig(**d)


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) in serialization order; derivable from cfg alone."""
    c0, c1, c2 = cfg.enc_channels
    d0, d1, d2 = cfg.dec_channels
    cr, d = cfg.reduce_channels, cfg.token_dim
    specs = [
        ("embed.w1", (N_ATTRS, cfg.embed_hidden), "fan_in"),
        ("embed.b1", (cfg.embed_hidden,), "zeros"),
        ("embed.w2", (cfg.embed_hidden, c1), "fan_in"),
        ("embed.b2", (c1,), "zeros"),
        ("stem.w", (c0, cfg.in_channels, 3, 3), "fan_in"),
        ("stem.b", (c0,), "zeros"),
        ("stage1.w", (c1, c0, 3, 3), "fan_in"),
        ("stage1.b", (c1,), "zeros"),
        ("stage2.w", (c2, c1, 3, 3), "fan_in"),
        ("stage2.b", (c2,), "zeros"),
        ("attn.reduce.w", (cr, c2, 1, 1), "fan_in"),
        ("attn.reduce.b", (cr,), "zeros"),
        ("attn.pos", (cfg.n_patches, d), "pos"),
    ]
    h = cfg.ffn_mult * d
    for layer in range(cfg.depth):
        p = f"attn.block{layer}."
        specs += [
            (p + "wq", (d, d), "fan_in"),
            (p + "wk", (d, d), "fan_in"),
            (p + "wv", (d, d), "fan_in"),
            (p + "wo", (d, d), "fan_in"),
            (p + "ln1.g", (d,), "ones"),
            (p + "ln1.b", (d,), "zeros"),
            (p + "ffn.w1", (d, h), "fan_in"),
            (p + "ffn.b1", (h,), "zeros"),
            (p + "ffn.w2", (h, d), "fan_in"),
            (p + "ffn.b2", (d,), "zeros"),
            (p + "ln2.g", (d,), "ones"),
            (p + "ln2.b", (d,), "zeros"),
        ]
    specs += [
        ("attn.expand.w", (c2, cr, 1, 1), "fan_in"),
        ("attn.expand.b", (c2,), "zeros"),
        ("dec1.w", (d0, c2 + c1, 3, 3), "fan_in"),
        ("dec1.b", (d0,), "zeros"),
        ("dec2.w", (d1, d0 + c0, 3, 3), "fan_in"),
        ("dec2.b", (d1,), "zeros"),
        ("dec3.w", (d2, d1, 3, 3), "fan_in"),
        ("dec3.b", (d2,), "zeros"),
        ("depth_head.w", (1, d2, 3, 3), "fan_in"),
        ("depth_head.b", (1,), "depth_bias"),
        ("conf_head.w", (1, d2, 3, 3), "fan_in"),
        ("conf_head.b", (1,), "zeros"),
    ]
    return specs


def _fan_in(shape) -> int:
    # (in, out) matrices and (out, in, k, k) kernels
    return shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, ag.Tensor]:
    """Fan-in scaled uniform weights, drawn in serialization order."""
    rng = np.random.default_rng(seed)
    dtype = cfg.np_dtype
    params = {}
    for name, shape, kind in param_specs(cfg):
        if kind == "fan_in":
            bound = math.sqrt(3.0 / _fan_in(shape))
            arr = rng.uniform(-bound, bound, size=shape)
        elif kind == "pos":
            arr = rng.normal(0.0, cfg.pos_std, size=shape)
        elif kind == "ones":
            arr = np.ones(shape)
        elif kind == "depth_bias":
            # inverse softplus, so the untrained head predicts depth_init
            arr = np.full(shape, math.log(math.expm1(cfg.depth_init)))
        else:
            arr = np.zeros(shape)
        params[name] = ag.Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


def geometric_features(attrs, params: dict, cfg: ModelConfig) -> ag.Tensor | None:
    if not cfg.use_geometry:
        return None
    if isinstance(attrs, GeomAttrs):
        attrs = attrs.data
    if isinstance(attrs, np.ndarray):
        attrs = ag.Tensor(attrs.astype(cfg.np_dtype, copy=False))
    return embed(attrs, params)


def encode(patches, geo_feats, params: dict):
    x = (ag.as_tensor(patches) - INPUT_MEAN) * (1.0 / INPUT_STD)
    s0 = ag.silu(ag.conv2d(x, params["stem.w"], params["stem.b"], stride=2, pad=1))
    s1 = ag.silu(ag.conv2d(s0, params["stage1.w"], params["stage1.b"], stride=2, pad=1))
    if geo_feats is not None:
        s1 = fuse(s1, geo_feats)
    s2 = ag.silu(ag.conv2d(s1, params["stage2.w"], params["stage2.b"], stride=2, pad=1))
    return s0, s1, s2


def forward_model(patches, attrs, params: dict, cfg: ModelConfig, geo_feats=None):
    """Per-patch depth and confidence, both shaped (B*N, 1, R, R).

    ``attrs`` are geometric attributes at feature resolution; pass
    precomputed ``geo_feats`` instead to reuse first-pass embeddings.
    """
    patches = ag.as_tensor(patches)
    if patches.ndim != 4 or patches.shape[1:] != (cfg.in_channels, cfg.patch_res, cfg.patch_res):
        raise ConfigError(f"patch stack {patches.shape} does not match config")
    if patches.shape[0] % cfg.n_patches:
        raise ConfigError(f"{patches.shape[0]} patches is not a multiple of {cfg.n_patches}")
    if geo_feats is None and attrs is not None:
        geo_feats = geometric_features(attrs, params, cfg)
    s0, s1, s2 = encode(patches, geo_feats, params)
    deep = attention_stack(s2, params, cfg.depth, cfg.heads)

    u = ag.concat([ag.bilinear_up(deep, 2), s1], axis=1)
    u = ag.silu(ag.conv2d(u, params["dec1.w"], params["dec1.b"], pad=1))
    u = ag.concat([ag.bilinear_up(u, 2), s0], axis=1)
    u = ag.silu(ag.conv2d(u, params["dec2.w"], params["dec2.b"], pad=1))
    u = ag.silu(ag.conv2d(ag.bilinear_up(u, 2), params["dec3.w"], params["dec3.b"], pad=1))
    # both heads read the same features: one convolution, split after
    w = ag.concat([params["depth_head.w"], params["conf_head.w"]], axis=0)
    b = ag.concat([params["depth_head.b"], params["conf_head.b"]], axis=0)
    heads = ag.conv2d(u, w, b, pad=1)
    depth = ag.softplus(heads[:, 0:1])
    conf = ag.sigmoid(heads[:, 1:2])
    return depth, conf


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def grads_of(params: dict) -> dict[str, np.ndarray]:
    """Gradients by name; parameters untouched by the last backward get zeros."""
    return {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in params.items()}


def cosine_lr(step: int, total: int, lr0: float, warmup: int = 0) -> float:
    """Linear warmup over ``warmup`` steps, then cosine decay to zero at ``total``."""
    if total <= 0:
        return lr0
    if step < warmup:
        return lr0 * (step + 1) / warmup
    t = min(max(step, 0), total)
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


class Adam:
    """Adam with bias correction; state lives alongside, keyed by name."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def param_count(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def config_fields() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
