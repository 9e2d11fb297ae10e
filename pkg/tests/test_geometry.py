import math

import numpy as np
import pytest

from tangentdepth.geometry import (
    DEFAULT_RINGS,
    GeometryError,
    PatchLayout,
    TangentPose,
    angular_distance,
    build_patch_layout,
    clamp_latitude,
    erp_grid,
    erp_to_sphere,
    gnomonic_forward,
    gnomonic_inverse,
    sphere_to_erp,
    tangent_coords,
    tangent_grid,
    tangent_to_patch_pixel,
    to_unit_vector,
    wrap_longitude,
)


def test_erp_pixel_centers():
    p = erp_to_sphere(0, 0, 8, 4)
    assert p.lam == pytest.approx(-math.pi + math.pi / 8)
    assert p.phi == pytest.approx(math.pi / 2 - math.pi / 8)
    # the centre of the image sits just off the equator/prime meridian
    p = erp_to_sphere(3.5, 1.5, 8, 4)
    assert p.lam == pytest.approx(0.0, abs=1e-15)
    assert p.phi == pytest.approx(0.0, abs=1e-15)


def test_erp_rejects_out_of_range():
    with pytest.raises(GeometryError):
        erp_to_sphere(8, 0, 8, 4)
    with pytest.raises(GeometryError):
        erp_to_sphere(0, -1, 8, 4)


def test_erp_roundtrip(rng):
    x = rng.integers(0, 64, 200)
    y = rng.integers(0, 32, 200)
    p = erp_to_sphere(x, y, 64, 32)
    xe, ye = sphere_to_erp(p.lam, p.phi, 64, 32)
    np.testing.assert_allclose(xe, x, atol=1e-9)
    np.testing.assert_allclose(ye, y, atol=1e-9)


def test_wrap_and_clamp():
    assert wrap_longitude(math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    assert wrap_longitude(-3 * math.pi) == pytest.approx(-math.pi)
    assert clamp_latitude(2.0) == pytest.approx(math.pi / 2)


def test_forward_at_center_is_origin():
    x, y, ok = gnomonic_forward(0.3, -0.2, 0.3, -0.2)
    assert ok and x == 0 and y == 0


def test_forward_invalid_behind_horizon():
    x, y, ok = gnomonic_forward(math.pi, 0.0, 0.0, 0.0)
    assert not ok and x == 0 and y == 0
    _, _, ok = gnomonic_forward(math.pi / 2, 0.0, 0.0, 0.0)
    assert not ok


def test_forward_closed_forms():
    s = np.linspace(-1.4, 1.4, 1000)
    x, y, _ = gnomonic_forward(s, 0.0, 0.0, 0.0)
    np.testing.assert_allclose(x, np.tan(s), atol=1e-12)
    np.testing.assert_allclose(y, 0.0, atol=1e-12)
    x, y, _ = gnomonic_forward(0.0, s, 0.0, 0.0)
    np.testing.assert_allclose(y, np.tan(s), atol=1e-12)


def test_inverse_at_origin_returns_pose():
    p = gnomonic_inverse(0.0, 0.0, 1.1, 0.4)
    assert p.lam == 1.1 and p.phi == 0.4


def test_inverse_near_pole_is_accurate():
    lc, pc = 0.5, math.radians(89.9)
    lam = np.array([0.1, 2.0, -2.5])
    phi = np.array([1.55, 1.5, 1.565])
    x, y, ok = gnomonic_forward(lam, phi, lc, pc)
    assert ok.all()
    back = gnomonic_inverse(x, y, lc, pc)
    assert angular_distance(lam, phi, back.lam, back.phi).max() < 1e-12


def test_inverse_accepts_per_point_poses(rng):
    lam = rng.uniform(-1, 1, 50)
    phi = rng.uniform(-0.5, 0.5, 50)
    lc = lam + rng.uniform(-0.3, 0.3, 50)
    pc = phi + rng.uniform(-0.3, 0.3, 50)
    x, y, _ = gnomonic_forward(lam, phi, lc, pc)
    back = gnomonic_inverse(x, y, lc, pc)
    assert angular_distance(lam, phi, back.lam, back.phi).max() < 1e-12


def test_unit_vectors_and_distance():
    v = to_unit_vector(np.array([0.0, math.pi / 2]), np.array([0.0, 0.0]))
    np.testing.assert_allclose(v, [[1, 0, 0], [0, 1, 0]], atol=1e-15)
    assert angular_distance(0, 0, math.pi / 2, 0) == pytest.approx(math.pi / 2)
    assert angular_distance(0.2, 0.1, 0.2, 0.1) == 0.0


def test_default_layout_shape():
    layout = build_patch_layout()
    assert len(layout) == 18 == sum(c for _, c in DEFAULT_RINGS)
    lats = [round(math.degrees(p.phi_c), 6) for p in layout.poses]
    assert lats == [-67.5] * 3 + [-22.5] * 6 + [22.5] * 6 + [67.5] * 3
    assert math.degrees(layout.poses[3].lam_c) == pytest.approx(0.0)
    assert math.degrees(layout.poses[4].lam_c) == pytest.approx(60.0)
    assert layout.half_extent == pytest.approx(math.tan(math.radians(40)))


@pytest.mark.parametrize(
    "rings, fov",
    [(((0.0, 0),), 80.0), (((95.0, 2),), 80.0), (DEFAULT_RINGS, 0.0), (DEFAULT_RINGS, 180.0)],
)
def test_layout_validation(rings, fov):
    with pytest.raises(GeometryError):
        build_patch_layout(rings, fov)


def test_layout_helpers(default_layout):
    rot = default_layout.rotated(math.pi / 3)
    assert rot.poses[0].lam_c == pytest.approx(math.pi / 3)
    sub = default_layout.subset([0, 5])
    assert len(sub) == 2 and sub.poses[1] == default_layout.poses[5]
    assert default_layout.centers.shape == (18, 2)
    with pytest.raises(GeometryError):
        PatchLayout((), 80.0, 8)


def test_tangent_grid_orientation():
    x, y = tangent_coords(90.0, 4)
    # row 0 is the top of the patch, column 0 the left edge
    assert y[0, 0] > 0 > y[-1, 0]
    assert x[0, 0] < 0 < x[0, -1]
    col, row = tangent_to_patch_pixel(x, y, 90.0, 4)
    np.testing.assert_allclose(col, np.arange(4)[None].repeat(4, 0), atol=1e-12)
    np.testing.assert_allclose(row, np.arange(4)[:, None].repeat(4, 1), atol=1e-12)


def test_tangent_grid_points_up_and_east():
    pose = TangentPose.from_degrees(30.0, 20.0)
    g = tangent_grid(pose, 60.0, 8)
    assert g.phi[0].mean() > g.phi[-1].mean()
    assert g.lam[:, -1].mean() > g.lam[:, 0].mean()


def test_erp_grid_shape():
    g = erp_grid(16, 8)
    assert g.lam.shape == (8, 16)
    assert g.phi[0, 0] > 0 > g.phi[-1, 0]
