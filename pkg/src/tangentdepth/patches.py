"""ERP <-> tangent-patch resampling.

:class:`ProjectionTables` precomputes, for a layout and ERP size, the
bilinear taps needed in both directions. Extraction gathers ERP samples
for every patch pixel (longitude wraps, latitude clamps at the poles);
merging gathers patch samples for every ERP pixel from each patch whose
square footprint contains it, and forms a confidence-weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .geometry import (
    PatchLayout,
    erp_grid,
    gnomonic_forward,
    sphere_to_erp,
    tangent_grid,
    tangent_to_patch_pixel,
)

MERGE_EPS = 1e-8
INVERSE_CAPACITY = 8


class ShapeError(ValueError):
    pass


@dataclass
class ErpImage:
    """Channels-first ERP raster with an optional per-pixel validity mask."""

    data: np.ndarray  # (C, H, W)
    mask: np.ndarray | None = None  # (H, W) bool

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[None]
        c, h, w = self.data.shape
        if w != 2 * h:
            raise ShapeError(f"ERP width must be twice the height, got {w}x{h}")
        if self.mask is not None and self.mask.shape != (h, w):
            raise ShapeError("mask shape does not match image")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def valid(self) -> np.ndarray:
        finite = np.all(np.isfinite(self.data), axis=0)
        return finite if self.mask is None else finite & self.mask


def bilinear_plan(cols, rows, width: int, height: int, wrap: bool = False, base: int | np.ndarray = 0):
    """Four-tap indices/weights into a flattened (height, width) grid.

    ``wrap`` makes columns periodic; otherwise columns clamp to the edge.
    Rows always clamp. ``base`` offsets the flat index (e.g. patch stride).
    """
    cols = np.asarray(cols, dtype=np.float64).ravel()
    rows = np.clip(np.asarray(rows, dtype=np.float64).ravel(), 0.0, height - 1)
    if wrap:
        x0f = np.floor(cols)
        fx = cols - x0f
        x0 = np.mod(x0f.astype(np.int64), width)
        x1 = np.mod(x0 + 1, width)
    else:
        cols = np.clip(cols, 0.0, width - 1)
        x0 = np.floor(cols).astype(np.int64)
        fx = cols - x0
        x1 = np.minimum(x0 + 1, width - 1)
    y0 = np.floor(rows).astype(np.int64)
    fy = rows - y0
    y1 = np.minimum(y0 + 1, height - 1)
    base = np.asarray(base, dtype=np.int64).ravel() if np.ndim(base) else base
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1) + (
        base[:, None] if np.ndim(base) else base
    )
    w = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1)
    return np.ascontiguousarray(idx), np.ascontiguousarray(w)


@dataclass(frozen=True, eq=False)
class ProjectionTables:
    layout: PatchLayout
    width: int
    height: int
    forward_x: np.ndarray  # (N, R, R) ERP column of each patch pixel
    forward_y: np.ndarray  # (N, R, R) ERP row
    forward_idx: np.ndarray  # (N*R*R, 4)
    forward_w: np.ndarray
    inv_patch: np.ndarray  # (H*W, K) patch index, -1 when empty
    inv_col: np.ndarray  # (H*W, K) continuous patch column
    inv_row: np.ndarray
    inv_valid: np.ndarray  # (H*W, K) bool
    merge_idx: np.ndarray  # (H*W*K, 4) into flattened (N*R*R)
    merge_w: np.ndarray

    @property
    def n_patches(self) -> int:
        return len(self.layout)

    @property
    def res(self) -> int:
        return self.layout.patch_res

    @property
    def coverage(self) -> np.ndarray:
        """Number of patches covering each ERP pixel, shape (H, W)."""
        return self.inv_valid.sum(axis=1).reshape(self.height, self.width)


def build_tables(layout: PatchLayout, width: int, height: int, capacity: int = INVERSE_CAPACITY) -> ProjectionTables:
    if width != 2 * height:
        raise ShapeError(f"ERP width must be twice the height, got {width}x{height}")
    n, res = len(layout), layout.patch_res

    fx = np.empty((n, res, res))
    fy = np.empty((n, res, res))
    for i, pose in enumerate(layout.poses):
        pts = tangent_grid(pose, layout.fov, res)
        fx[i], fy[i] = sphere_to_erp(pts.lam, pts.phi, width, height)
    f_idx, f_w = bilinear_plan(fx, fy, width, height, wrap=True)

    sph = erp_grid(width, height)
    lam, phi = sph.lam.ravel(), sph.phi.ravel()
    half = layout.half_extent
    p = lam.size
    inside = np.empty((n, p), dtype=bool)
    cols = np.empty((n, p))
    rows = np.empty((n, p))
    for i, pose in enumerate(layout.poses):
        x_t, y_t, ok = gnomonic_forward(lam, phi, pose.lam_c, pose.phi_c)
        inside[i] = ok & (np.maximum(np.abs(x_t), np.abs(y_t)) <= half)
        cols[i], rows[i] = tangent_to_patch_pixel(x_t, y_t, layout.fov, res)

    counts = inside.sum(axis=0)
    if counts.max(initial=0) > capacity:
        raise ShapeError(f"an ERP pixel is covered by {counts.max()} patches; capacity is {capacity}")
    slot = np.cumsum(inside, axis=0) - 1
    inv_patch = np.full((p, capacity), -1, dtype=np.int64)
    inv_col = np.zeros((p, capacity))
    inv_row = np.zeros((p, capacity))
    pix = np.arange(p)
    for i in range(n):
        sel = inside[i]
        inv_patch[pix[sel], slot[i, sel]] = i
        inv_col[pix[sel], slot[i, sel]] = cols[i, sel]
        inv_row[pix[sel], slot[i, sel]] = rows[i, sel]
    inv_valid = inv_patch >= 0

    m_idx, m_w = bilinear_plan(
        inv_col, inv_row, res, res, wrap=False, base=np.maximum(inv_patch, 0) * (res * res)
    )
    m_w[~inv_valid.ravel()] = 0.0
    return ProjectionTables(
        layout, width, height, fx, fy, f_idx, f_w, inv_patch, inv_col, inv_row, inv_valid, m_idx, m_w
    )


def extract_patches(erp: ErpImage | np.ndarray, tables: ProjectionTables) -> np.ndarray:
    """Sample every patch from an ERP image. Returns (N, C, R, R)."""
    data = erp.data if isinstance(erp, ErpImage) else np.asarray(erp)
    if data.ndim == 2:
        data = data[None]
    c, h, w = data.shape
    if (h, w) != (tables.height, tables.width):
        raise ShapeError(f"ERP is {w}x{h}, tables were built for {tables.width}x{tables.height}")
    out = kernels.gather4(data.reshape(c, h * w), tables.forward_idx, tables.forward_w)
    n, r = tables.n_patches, tables.res
    return np.ascontiguousarray(out.reshape(c, n, r, r).transpose(1, 0, 2, 3))


def _as_batched_flat(x: ag.Tensor, tables: ProjectionTables) -> ag.Tensor:
    n, r = tables.n_patches, tables.res
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (r, r) or x.shape[0] % n:
        raise ShapeError(f"patch stack of shape {x.shape} does not align with {n} patches of {r}x{r}")
    return x.reshape(x.shape[0] // n, n * r * r)


def merge_tensor(depth: ag.Tensor, conf: ag.Tensor | None, tables: ProjectionTables):
    """Differentiable confidence-weighted merge.

    ``depth``/``conf`` are (B*N, 1, R, R) tensors; ``conf=None`` means unit
    weights. Returns ``(merged, valid)`` with merged of shape (B, H, W) and
    pixels without any covering patch set to 0 and flagged invalid.
    """
    d = _as_batched_flat(depth, tables)
    b = d.shape[0]
    k = tables.inv_valid.shape[1]
    p = tables.height * tables.width
    v = tables.inv_valid.astype(depth.dtype)
    count = v.sum(axis=1)
    ds = ag.sample(d, tables.merge_idx, tables.merge_w).reshape(b, p, k)
    dv = ds * v
    if conf is None:
        merged = dv.sum(axis=2) * (1.0 / np.maximum(count, 1.0)).astype(depth.dtype)
    else:
        c = _as_batched_flat(conf, tables)
        if c.shape != d.shape:
            raise ShapeError("confidence stack does not match depth stack")
        ws = ag.sample(c, tables.merge_idx, tables.merge_w).reshape(b, p, k) * v
        num = (ws * ds).sum(axis=2)
        den = ws.sum(axis=2)
        weighted = num / (den + depth.dtype.type(MERGE_EPS))
        fallback = dv.sum(axis=2) * (1.0 / np.maximum(count, 1.0)).astype(depth.dtype)
        merged = ag.where(den.data >= MERGE_EPS, weighted, fallback)
    return merged.reshape(b, tables.height, tables.width), (count > 0).reshape(tables.height, tables.width)


def merge_to_erp(depths: np.ndarray, conf: np.ndarray | None, tables: ProjectionTables) -> ErpImage:
    """Merge a (N, 1, R, R) depth stack into a single-channel ERP image."""
    depths = np.asarray(depths)
    conf_t = None if conf is None else ag.Tensor(np.asarray(conf, dtype=depths.dtype))
    merged, valid = merge_tensor(ag.Tensor(depths), conf_t, tables)
    data = merged.data.copy()
    data[:, ~valid] = np.nan
    return ErpImage(data, valid)


def mean_merge(depths: np.ndarray, tables: ProjectionTables) -> ErpImage:
    """Unweighted average of all covering patches."""
    depths = np.asarray(depths)
    return merge_to_erp(depths, None, tables)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)
