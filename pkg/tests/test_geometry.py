import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igasolid.geometry import (BoundaryTag, DeadLoad, GeometryError, Patch, make_annulus_disk,
                               make_cube, make_quarter_cylinder, map_geometry, refine_patch)
from igasolid.spaces import gauss_points
from igasolid.splines import TensorSpace, UnivariateSpace


def patch_volume(patch: Patch, nq: int = 5) -> float:
    """Tensor Gauss quadrature of ``det dX/dxi`` over every element."""
    x, w = gauss_points(nq)
    vol = 0.0
    brk = [s.knot_vector.breaks for s in patch.space.spaces]
    for k in range(brk[2].size - 1):
        for j in range(brk[1].size - 1):
            for i in range(brk[0].size - 1):
                lo = np.array([brk[0][i], brk[1][j], brk[2][k]])
                h = np.array([brk[0][i + 1], brk[1][j + 1], brk[2][k + 1]]) - lo
                for a, wa in zip(x, w):
                    for b, wb in zip(x, w):
                        for c, wc in zip(x, w):
                            xi = lo + h * np.array([a, b, c])
                            vol += wa * wb * wc * np.prod(h) * map_geometry(patch, xi)[2]
    return vol


class TestCube:
    def test_corner_control_points(self):
        cube = make_cube()
        assert cube.control_points.shape == (8, 3)
        assert {tuple(r) for r in cube.control_points} == {
            (i, j, k) for i in (0., 1.) for j in (0., 1.) for k in (0., 1.)}

    @given(st.integers(1, 3), st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3)))
    def test_affine_exactness(self, p, nel):
        L = np.array([2.0, 0.5, 3.0])
        cube = make_cube(L, p, nel)
        rng = np.random.default_rng(p)
        for xi in rng.random((100, 3)):
            X, jac, det = map_geometry(cube, xi)
            np.testing.assert_allclose(X, L * xi, atol=1e-12)
            np.testing.assert_allclose(jac, np.diag(L), atol=1e-12)
            assert abs(det - L.prod()) < 1e-12

    def test_volume(self):
        assert abs(patch_volume(make_cube((1.0, 2.0, 3.0), 2, (2, 1, 1)), 3) - 6.0) < 1e-12


class TestQuarterCylinder:
    def test_exact_circle(self, rng):
        Ri, Ro = 0.5, 1.5
        cyl = make_quarter_cylinder(Ri, Ro, 1.0, (2, 2, 1))
        for xi in rng.random((1000, 3)):
            X, _, det = map_geometry(cyl, xi)
            assert det > 0
            r = np.hypot(X[0], X[1])
            assert abs(r - (Ri + (Ro - Ri) * xi[1])) < 1e-12

    def test_arc_midpoint(self):
        X = map_geometry(make_quarter_cylinder(), (0.5, 0.0, 0.0))[0]
        np.testing.assert_allclose(X[:2], 0.5 * np.array([np.sqrt(0.5), np.sqrt(0.5)]), atol=1e-12)

    def test_unit_weights_negative_control(self):
        cyl = make_quarter_cylinder()
        sp = cyl.space.spaces
        flat = TensorSpace((UnivariateSpace(sp[0].knot_vector), sp[1], sp[2]))
        X = map_geometry(Patch(flat, cyl.control_points), (0.5, 0.0, 0.0))[0]
        assert abs(np.hypot(X[0], X[1]) - 0.5) > 1e-3

    def test_volume(self):
        vol = patch_volume(make_quarter_cylinder(0.5, 1.5, 1.0, (2, 1, 1)), 6)
        assert abs(vol - np.pi / 4 * (1.5**2 - 0.5**2)) < 1e-10 * vol

    def test_invalid_radii(self):
        with pytest.raises(GeometryError):
            make_quarter_cylinder(1.5, 0.5)


class TestAnnulus:
    def test_volume_two_pi(self):
        disk = make_annulus_disk(0.5, 1.5, 1.0, (8, 1, 1))
        assert abs(patch_volume(disk, 8) - 2 * np.pi) < 1e-10

    def test_exact_radius(self, rng):
        disk = make_annulus_disk(0.5, 1.5, 1.0, (8, 2, 1))
        for xi in rng.random((1000, 3)):
            X = map_geometry(disk, xi)[0]
            assert abs(np.hypot(X[0], X[1]) - (0.5 + xi[1])) < 1e-12

    def test_seam_continuity(self, rng):
        disk = make_annulus_disk()
        assert disk.seam
        for eta in rng.random((10, 2)):
            a = map_geometry(disk, (0.0, *eta))[0]
            b = map_geometry(disk, (1.0, *eta))[0]
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_c0_junctions_recorded(self):
        disk = make_annulus_disk(nel=(8, 1, 1))
        breaks = disk.space.spaces[0].knot_vector.breaks[1:-1]
        reg = dict(zip(breaks.tolist(), disk.break_regularity[0].tolist()))
        assert reg[0.25] == reg[0.5] == reg[0.75] == 0

    def test_requires_multiple_of_four(self):
        with pytest.raises(GeometryError):
            make_annulus_disk(nel=(6, 1, 1))


def test_refine_patch_preserves_map(rng):
    cyl = make_quarter_cylinder(nel=(1, 1, 1))
    fine = refine_patch(cyl, (4, 2, 3))
    assert fine.nel == (4, 2, 3)
    for xi in rng.random((20, 3)):
        np.testing.assert_allclose(map_geometry(fine, xi)[0], map_geometry(cyl, xi)[0], atol=1e-12)
    with pytest.raises(GeometryError):
        refine_patch(make_cube(nel=(2, 2, 2)), (3, 2, 2))


def test_boundary_tag_validation():
    with pytest.raises(GeometryError):
        BoundaryTag("top")
    with pytest.raises(GeometryError):
        BoundaryTag("xi1_min", (True, True, True), traction=DeadLoad((1.0, 0.0, 0.0)))
