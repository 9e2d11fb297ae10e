"""Spherical geometry: ERP pixel <-> sphere conversion, gnomonic projection,
and tangent-patch layouts.

Angles are radians throughout, except the layout FoV and ring latitudes,
which are degrees at the configuration surface. Longitude lives in
[-pi, pi), latitude in [-pi/2, pi/2] with +pi/2 at ERP row 0.

All functions accept numpy arrays and broadcast; everything is computed in
float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

HEMISPHERE_EPS = 1e-9

DEFAULT_RINGS: tuple[tuple[float, int], ...] = (
    (-67.5, 3),
    (-22.5, 6),
    (22.5, 6),
    (67.5, 3),
)
DEFAULT_FOV = 80.0
DEFAULT_PATCH_RES = 256


class GeometryError(ValueError):
    """Raised on out-of-domain coordinates or invalid layout configuration."""


def wrap_longitude(lam):
    """Wrap longitude into [-pi, pi)."""
    lam = np.asarray(lam, dtype=np.float64)
    out = np.mod(lam + np.pi, 2.0 * np.pi) - np.pi
    # mod can round up to exactly 2*pi for tiny negative inputs
    out = np.where(out >= np.pi, out - 2.0 * np.pi, out)
    # in-range values pass through untouched (mod would perturb the last bit)
    return np.where((lam >= -np.pi) & (lam < np.pi), lam, out)


def clamp_latitude(phi):
    return np.clip(np.asarray(phi, dtype=np.float64), -np.pi / 2, np.pi / 2)


class SphericalPoint(NamedTuple):
    lam: np.ndarray | float
    phi: np.ndarray | float
    rho: np.ndarray | float = 1.0

    @classmethod
    def make(cls, lam, phi, rho=1.0) -> "SphericalPoint":
        rho = np.asarray(rho, dtype=np.float64)
        if np.any(rho < 0):
            raise GeometryError("rho must be nonnegative")
        return cls(wrap_longitude(lam), clamp_latitude(phi), rho)


class TangentPose(NamedTuple):
    lam_c: float
    phi_c: float

    @classmethod
    def from_degrees(cls, lam_deg: float, phi_deg: float) -> "TangentPose":
        lam = float(wrap_longitude(math.radians(lam_deg)))
        phi = float(clamp_latitude(math.radians(phi_deg)))
        return cls(lam, phi)


def erp_to_sphere(x_e, y_e, width: int, height: int) -> SphericalPoint:
    """Pixel indices (column, row) to the sphere, sampling pixel centers."""
    x_e = np.asarray(x_e, dtype=np.float64)
    y_e = np.asarray(y_e, dtype=np.float64)
    if np.any((x_e < 0) | (x_e >= width)) or np.any((y_e < 0) | (y_e >= height)):
        raise GeometryError(f"pixel index outside a {width}x{height} ERP image")
    lam = 2.0 * np.pi * (x_e + 0.5) / width - np.pi
    phi = np.pi / 2 - np.pi * (y_e + 0.5) / height
    return SphericalPoint(lam, phi, np.ones_like(lam))


def sphere_to_erp(lam, phi, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (column, row) coordinates; exact inverse of :func:`erp_to_sphere`."""
    lam = wrap_longitude(lam)
    phi = np.asarray(phi, dtype=np.float64)
    x = (lam + np.pi) * width / (2.0 * np.pi) - 0.5
    y = (np.pi / 2 - phi) * height / np.pi - 0.5
    return x, y


def erp_grid(width: int, height: int) -> SphericalPoint:
    """Spherical coordinates of every ERP pixel center, shape (H, W)."""
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return erp_to_sphere(xs, ys, width, height)


def gnomonic_forward(lam, phi, lam_c, phi_c):
    """Project sphere points onto the plane tangent at (lam_c, phi_c).

    Returns ``(x_t, y_t, valid)``. Points on or behind the horizon
    (cos c <= HEMISPHERE_EPS) are flagged invalid and given coordinates 0.
    """
    lam = np.asarray(lam, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    dlam = lam - lam_c
    sin_phi, cos_phi = np.sin(phi), np.cos(phi)
    sin_pc, cos_pc = np.sin(phi_c), np.cos(phi_c)
    cos_dlam = np.cos(dlam)
    cos_c = sin_pc * sin_phi + cos_pc * cos_phi * cos_dlam
    valid = cos_c > HEMISPHERE_EPS
    safe = np.where(valid, cos_c, 1.0)
    x_t = np.where(valid, cos_phi * np.sin(dlam) / safe, 0.0)
    y_t = np.where(valid, (cos_pc * sin_phi - sin_pc * cos_phi * cos_dlam) / safe, 0.0)
    return x_t, y_t, valid


def gnomonic_inverse(x_t, y_t, lam_c, phi_c) -> SphericalPoint:
    """Map tangent-plane coordinates back to the unit sphere.

    Latitude uses atan2 on the same sine/cosine terms as the arcsine form so
    that accuracy does not collapse near the poles.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64)
    gamma = np.hypot(x_t, y_t)
    c = np.arctan(gamma)
    sin_c, cos_c = np.sin(c), np.cos(c)
    # sin(c)/gamma -> 1 as gamma -> 0
    at_center = gamma == 0.0
    k = np.where(at_center, 1.0, sin_c / np.where(at_center, 1.0, gamma))
    sin_pc, cos_pc = np.sin(phi_c), np.cos(phi_c)

    num = x_t * k
    den = cos_pc * cos_c - y_t * sin_pc * k
    sin_phi = cos_c * sin_pc + y_t * k * cos_pc
    lam = lam_c + np.arctan2(num, den)
    phi = np.arctan2(sin_phi, np.hypot(num, den))
    lam = np.where(at_center, lam_c, lam)
    phi = np.where(at_center, phi_c, phi)
    return SphericalPoint(wrap_longitude(lam), clamp_latitude(phi), np.ones_like(lam))


def to_unit_vector(lam, phi) -> np.ndarray:
    """Direction vectors, last axis (x, y, z); z points to latitude +pi/2."""
    lam = np.asarray(lam, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    cos_phi = np.cos(phi)
    return np.stack([cos_phi * np.cos(lam), cos_phi * np.sin(lam), np.sin(phi)], axis=-1)


def angular_distance(lam1, phi1, lam2, phi2):
    """Great-circle distance, stable for both tiny and near-antipodal angles."""
    a = to_unit_vector(lam1, phi1)
    b = to_unit_vector(lam2, phi2)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True)
class PatchLayout:
    poses: tuple[TangentPose, ...]
    fov: float = DEFAULT_FOV
    patch_res: int = DEFAULT_PATCH_RES
    rings: tuple[tuple[float, int], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise GeometryError(f"fov must lie in (0, 180) degrees, got {self.fov}")
        if self.patch_res < 2:
            raise GeometryError(f"patch_res must be >= 2, got {self.patch_res}")
        if not self.poses:
            raise GeometryError("layout needs at least one pose")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def half_extent(self) -> float:
        """Tangent-plane half width: coordinates inside the patch satisfy
        max(|x_t|, |y_t|) <= tan(fov / 2)."""
        return math.tan(math.radians(self.fov) / 2.0)

    @property
    def centers(self) -> np.ndarray:
        return np.array(self.poses, dtype=np.float64).reshape(-1, 2)

    def rotated(self, dlam: float) -> "PatchLayout":
        poses = tuple(
            TangentPose(float(wrap_longitude(p.lam_c + dlam)), p.phi_c) for p in self.poses
        )
        return PatchLayout(poses, self.fov, self.patch_res, self.rings)

    def subset(self, indices: Sequence[int]) -> "PatchLayout":
        return PatchLayout(tuple(self.poses[i] for i in indices), self.fov, self.patch_res)


def build_patch_layout(
    rings: Sequence[tuple[float, int]] = DEFAULT_RINGS,
    fov: float = DEFAULT_FOV,
    patch_res: int = DEFAULT_PATCH_RES,
) -> PatchLayout:
    """Rings of equally spaced tangent poses, ordered bottom ring first and
    by ascending longitude offset within a ring. Every ring starts at 0."""
    poses = []
    for lat, count in sorted(rings, key=lambda r: r[0]):
        if count < 1:
            raise GeometryError(f"ring at {lat} deg needs at least one pose")
        if not -90.0 < lat < 90.0:
            raise GeometryError(f"ring latitude {lat} must lie strictly inside (-90, 90)")
        for k in range(count):
            poses.append(TangentPose.from_degrees(k * 360.0 / count, lat))
    return PatchLayout(tuple(poses), float(fov), int(patch_res), tuple(rings))


def tangent_coords(fov: float, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Tangent-plane coordinates of a res x res patch, indexed [row, col].
    Row 0 is the top of the patch (largest y_t)."""
    t = math.tan(math.radians(fov) / 2.0)
    u = (2.0 * (np.arange(res) + 0.5) / res - 1.0) * t
    x_t = np.broadcast_to(u[None, :], (res, res))
    y_t = np.broadcast_to(-u[:, None], (res, res))
    return x_t, y_t


def tangent_grid(pose: TangentPose, fov: float, res: int) -> SphericalPoint:
    x_t, y_t = tangent_coords(fov, res)
    return gnomonic_inverse(x_t, y_t, pose.lam_c, pose.phi_c)


def tangent_to_patch_pixel(x_t, y_t, fov: float, res: int):
    """Continuous (col, row) patch pixel coordinates; inverse of :func:`tangent_coords`."""
    t = math.tan(math.radians(fov) / 2.0)
    col = (np.asarray(x_t) / t + 1.0) * res / 2.0 - 0.5
    row = (1.0 - np.asarray(y_t) / t) * res / 2.0 - 0.5
    return col, row
