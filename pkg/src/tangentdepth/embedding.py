"""Geometric attributes per patch pixel and their pointwise MLP embedding.

Each feature-resolution pixel of a patch carries (lambda, phi, rho,
lambda_c, phi_c): its direction on the sphere, a radial distance, and the
patch center. On the first pass rho is 1; later passes sample rho from the
previous merged ERP depth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import autograd as ag
from . import kernels
from .geometry import PatchLayout, sphere_to_erp, tangent_grid
from .patches import ErpImage, bilinear_plan

DEPTH_FLOOR = 1e-3
N_ATTRS = 5


@dataclass(frozen=True, eq=False)
class GeomAttrs:
    """Attributes for every patch, shape (B*N, 5, F, F) (B = 1 unless batched)."""

    data: np.ndarray | ag.Tensor
    layout: PatchLayout
    feat_res: int

    @property
    def rho(self):
        return self.data[:, 2]


@lru_cache(maxsize=32)
def _static_attrs(layout: PatchLayout, feat_res: int) -> np.ndarray:
    n = len(layout)
    out = np.empty((n, N_ATTRS, feat_res, feat_res))
    for i, pose in enumerate(layout.poses):
        pts = tangent_grid(pose, layout.fov, feat_res)
        out[i, 0] = pts.lam
        out[i, 1] = pts.phi
        out[i, 2] = 1.0
        out[i, 3] = pose.lam_c
        out[i, 4] = pose.phi_c
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _rho_plan(layout: PatchLayout, feat_res: int, width: int, height: int):
    base = _static_attrs(layout, feat_res)
    cols, rows = sphere_to_erp(base[:, 0], base[:, 1], width, height)
    return bilinear_plan(cols, rows, width, height, wrap=True)


def sample_rho(layout: PatchLayout, feat_res: int, depth, valid: np.ndarray):
    """Sample rho for every attribute pixel from (B, H, W) ERP depth.

    ``depth`` may be a Tensor, in which case gradients flow back into it.
    Pixels touching an invalid ERP sample fall back to 1; valid samples are
    floored at DEPTH_FLOOR. Returns shape (B, N*F*F).
    """
    depth = ag.as_tensor(depth)
    b, h, w = depth.shape
    idx, wts = _rho_plan(layout, feat_res, w, h)
    valid = np.broadcast_to(valid, (h, w))
    clean = depth
    if not valid.all() or not np.all(np.isfinite(depth.data)):
        clean = ag.where(valid & np.isfinite(depth.data), depth, 0.0)
    rho = ag.sample(clean.reshape(b, h * w), idx, wts)
    support = kernels.gather4(valid.reshape(1, -1).astype(np.float64), idx, wts)[0]
    ok = support > 1.0 - 1e-9
    return ag.where(ok, ag.maximum(rho, DEPTH_FLOOR), 1.0)


def build_attrs(layout: PatchLayout, feat_res: int, prev_depth: ErpImage | None = None) -> GeomAttrs:
    """Attributes computed directly on a feat_res tangent grid per patch."""
    base = np.array(_static_attrs(layout, feat_res))
    if prev_depth is not None:
        rho = sample_rho(layout, feat_res, prev_depth.data[:1], prev_depth.valid).data
        base[:, 2] = rho.reshape(len(layout), feat_res, feat_res)
    return GeomAttrs(base, layout, feat_res)


def update_rho(attrs: GeomAttrs, merged_depth: ErpImage) -> GeomAttrs:
    """Replace rho by samples of ``merged_depth``; angles stay untouched."""
    data = np.array(ag.as_tensor(attrs.data).data)
    n = len(attrs.layout)
    f = attrs.feat_res
    rho = sample_rho(attrs.layout, f, merged_depth.data[:1], merged_depth.valid).data
    data[:, 2] = np.tile(rho.reshape(n, f, f), (data.shape[0] // n, 1, 1))
    return replace(attrs, data=data)


def attrs_with_rho(layout: PatchLayout, feat_res: int, rho: ag.Tensor) -> ag.Tensor:
    """Assemble a (B*N, 5, F, F) attribute tensor around a differentiable rho."""
    n = len(layout)
    b = rho.shape[0]
    base = _static_attrs(layout, feat_res).astype(rho.dtype)
    fixed = np.broadcast_to(base[None], (b,) + base.shape)
    rho = rho.reshape(b, n, 1, feat_res, feat_res)
    parts = [
        ag.Tensor(np.ascontiguousarray(fixed[:, :, :2])),
        rho,
        ag.Tensor(np.ascontiguousarray(fixed[:, :, 3:])),
    ]
    return ag.concat(parts, axis=2).reshape(b * n, N_ATTRS, feat_res, feat_res)


def embed(attrs, params: dict) -> ag.Tensor:
    """Two-layer pointwise MLP: 5 -> hidden (SiLU) -> out channels.

    Works on any (..., 5, F, F) layout; the MLP is shared by every pixel of
    every patch, so identical attribute tuples embed identically.
    """
    a = ag.as_tensor(attrs.data if isinstance(attrs, GeomAttrs) else attrs)
    lead = a.shape[:-3]
    f1, f2 = a.shape[-2:]
    x = a.reshape(-1, N_ATTRS, f1 * f2).transpose(0, 2, 1)
    h = ag.silu(ag.linear(x, params["embed.w1"], params["embed.b1"]))
    y = ag.linear(h, params["embed.w2"], params["embed.b2"])
    c = y.shape[-1]
    return y.transpose(0, 2, 1).reshape(*lead, c, f1, f2)


def fuse(image_feats: ag.Tensor, geom_feats) -> ag.Tensor:
    """Elementwise sum. ``geom_feats`` of shape (N, C, F, F) is broadcast over
    a batch of scenes stacked as (B*N, C, F, F)."""
    image_feats = ag.as_tensor(image_feats)
    geom_feats = ag.as_tensor(geom_feats)
    if image_feats.shape == geom_feats.shape:
        return image_feats + geom_feats
    bn = image_feats.shape[0]
    n = geom_feats.shape[0]
    if image_feats.shape[1:] != geom_feats.shape[1:] or bn % n:
        raise ValueError(f"cannot fuse {geom_feats.shape} into {image_feats.shape}")
    x = image_feats.reshape(bn // n, *geom_feats.shape)
    return (x + geom_feats).reshape(image_feats.shape)
