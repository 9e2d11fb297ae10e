"""Analytic box-room panoramas with exact depth.

The camera sits at the origin inside an axis-aligned box centered on it.
Depth along a ray is the slab-method exit distance; color is a per-face
albedo times Lambert shading from a point light at the camera (with
distance attenuation) times a procedural texture, supersampled per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import erp_grid, to_unit_vector
from .patches import ErpImage

TEXTURES = ("checker", "stripes", "plain")
ATTENUATION = 0.25
# world-space texture scale, shared by all rooms so texture size is a depth cue
TEXTURE_PERIOD = 0.5
SUPERSAMPLE = 4

# base albedo per face: -x, +x, -y, +y, -z (floor), +z (ceiling)
_FACE_ALBEDO = np.array(
    [
        [0.85, 0.55, 0.45],
        [0.45, 0.70, 0.85],
        [0.60, 0.85, 0.50],
        [0.90, 0.80, 0.45],
        [0.55, 0.45, 0.40],
        [0.92, 0.92, 0.90],
    ]
)


@dataclass(frozen=True)
class SceneSpec:
    half_extents: tuple[float, float, float]
    texture: str = "checker"
    seed: int = 0

    def __post_init__(self):
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise ValueError(f"half extents must be three positive numbers, got {self.half_extents}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}; choose from {TEXTURES}")

    @property
    def max_depth(self) -> float:
        return float(np.linalg.norm(self.half_extents))


def ray_box_exit(dirs: np.ndarray, half_extents, origin=(0.0, 0.0, 0.0)):
    """Exit distance and axis/face index of rays leaving a centered box.

    ``dirs`` has shape (..., 3); unit directions give metric depth.
    Returns ``(t, face)`` with face in 0..5 as (-x, +x, -y, +y, -z, +z).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    ext = np.asarray(half_extents, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_hi = (ext - o) / dirs
        t_lo = (-ext - o) / dirs
    t_exit_axis = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    axis = np.argmin(t_exit_axis, axis=-1)
    t = np.take_along_axis(t_exit_axis, axis[..., None], axis=-1)[..., 0]
    positive = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
    return t, 2 * axis + positive.astype(np.int64)


def _texture(kind: str, u: np.ndarray, v: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if kind == "plain":
        return np.ones_like(u)
    if kind == "checker":
        cell = np.floor(u / TEXTURE_PERIOD) + np.floor(v / TEXTURE_PERIOD)
        return 0.7 + 0.3 * (np.mod(cell, 2.0))
    phase = rng.uniform(0, 2 * np.pi)
    return 0.8 + 0.2 * np.sin(2 * np.pi * u / TEXTURE_PERIOD + phase)


def _shade(spec: SceneSpec, d: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    t, face = ray_box_exit(d, spec.half_extents)
    point = d * t[..., None]
    axis = face // 2

    cos_incidence = np.abs(np.take_along_axis(d, axis[..., None], axis=-1)[..., 0])
    shading = cos_incidence / (1.0 + ATTENUATION * t * t)

    # in-face coordinates: the two axes other than the face normal
    u = np.take_along_axis(point, ((axis + 1) % 3)[..., None], axis=-1)[..., 0]
    v = np.take_along_axis(point, ((axis + 2) % 3)[..., None], axis=-1)[..., 0]
    tex = _texture(spec.texture, u, v, rng)
    rgb = _FACE_ALBEDO[face] * (shading * tex)[..., None]
    return np.clip(0.15 + 0.85 * rgb, 0.0, 1.0)


def render_scene(spec: SceneSpec, width: int, height: int, supersample: int = SUPERSAMPLE) -> tuple[ErpImage, ErpImage]:
    """RGB in [0, 1] (3, H, W) and metric depth (1, H, W).

    Color is the box-filtered average of ``supersample``^2 sub-pixel rays so
    that textures do not alias; depth is exact along each pixel-center ray.
    """
    sph = erp_grid(width, height)
    t, _ = ray_box_exit(to_unit_vector(sph.lam, sph.phi), spec.half_extents)

    k = supersample
    fine = erp_grid(k * width, k * height)
    rgb = _shade(spec, to_unit_vector(fine.lam, fine.phi), np.random.default_rng(spec.seed))
    rgb = rgb.reshape(height, k, width, k, 3).mean(axis=(1, 3))
    return ErpImage(rgb.transpose(2, 0, 1).copy()), ErpImage(t[None].copy())


def default_scenes(n: int = 8, seed: int = 0) -> list[SceneSpec]:
    """Seeded rooms: horizontal half extents in [1.5, 4], vertical in [1, 2]."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        ext = (
            float(rng.uniform(1.5, 4.0)),
            float(rng.uniform(1.5, 4.0)),
            float(rng.uniform(1.0, 2.0)),
        )
        out.append(SceneSpec(ext, TEXTURES[i % len(TEXTURES)], seed * 1000 + i))
    return out
