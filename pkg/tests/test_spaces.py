import numpy as np
import pytest

from igasolid.geometry import clamp, make_annulus_disk, make_cube
from igasolid.spaces import build_mixed_pair, gauss_points, l2_project, mass_matrix
from igasolid.splines import SplineError, basis_matrix


def _l2_error(table, coef, field, which="pressure"):
    err = 0.0
    for blk in table.blocks():
        N = blk["Np"] if which == "pressure" else blk["Nv"]
        idx = blk["pidx"] if which == "pressure" else blk["vidx"]
        uh = np.einsum("eqa,ea->eq", N, coef[idx])
        err += np.sum((uh - field(blk["X"])) ** 2 * blk["wdet"])
    return np.sqrt(err)


def test_gauss_rule_exactness():
    x, w = gauss_points(3)
    for k in range(6):
        assert abs(np.dot(w, x**k) - 1.0 / (k + 1)) < 1e-14


class TestMixedPair:
    def test_dimensions_q2q1(self):
        pair, dm, _ = build_mixed_pair(make_cube(), 1, 1, 0, nel=(2, 2, 2))
        assert pair.velocity.shape == (5, 5, 5)
        assert pair.pressure.shape == (3, 3, 3)
        assert dm.n_vel == 125 and dm.n_pre == 27 and dm.n_vel_eq == 375

    def test_dirichlet_keeps_pressure_count(self):
        faces = ["xi1_min", "xi1_max", "xi2_min", "xi2_max", "xi3_min", "xi3_max"]
        _, free, _ = build_mixed_pair(make_cube(), 1, 1, 0, nel=(2, 2, 2))
        _, clamped, _ = build_mixed_pair(make_cube(), 1, 1, 0, nel=(2, 2, 2),
                                         bcs=[clamp(f) for f in faces])
        assert clamped.n_pre == free.n_pre
        assert clamped.n_vel_eq == 3 * 3**3

    def test_k_refined_pair_allowed(self):
        pair, _, _ = build_mixed_pair(make_cube(p=2), 2, 2, 2, nel=(2, 2, 2))
        assert pair.velocity.degrees == (4, 4, 4)
        assert pair.velocity.spaces[0].knot_vector.regularity[1:-1].tolist() == [3]

    def test_invalid_parameters(self):
        with pytest.raises(SplineError):
            build_mixed_pair(make_cube(), 1, 1, 2, nel=(2, 2, 2))
        with pytest.raises(SplineError):
            build_mixed_pair(make_cube(), 1, 0, 0, nel=(2, 2, 2))

    def test_seam_merges_one_column(self):
        pair, dm, _ = build_mixed_pair(make_annulus_disk(nel=(8, 2, 2)), 2, 1, 0)
        n1, n2, n3 = pair.velocity.shape
        assert n1 * n2 * n3 - dm.n_vel == n2 * n3
        assert dm.seam_pairs.shape == (n2 * n3, 2)

    def test_annulus_caps_regularity_at_c0_junctions(self):
        pair, _, _ = build_mixed_pair(make_annulus_disk(nel=(8, 2, 2)), 2, 1, 1)
        kv = pair.velocity.spaces[0].knot_vector
        reg = dict(zip(kv.breaks[1:-1].tolist(), kv.regularity[1:-1].tolist()))
        assert reg[0.25] == reg[0.5] == reg[0.75] == 0
        assert reg[0.125] == 2


@pytest.mark.parametrize("p,a,b", [(1, 1, 0), (2, 1, 0), (2, 2, 0)])
def test_pressure_space_in_velocity_space(p, a, b, rng):
    pair, _, _ = build_mixed_pair(make_cube(p=p), p, a, b, nel=(3, 3, 3))
    for ps, vs in zip(pair.pressure.spaces, pair.velocity.spaces):
        x = rng.random(40)
        Bp, Bv = basis_matrix(ps, x), basis_matrix(vs, x)
        coef, *_ = np.linalg.lstsq(Bv, Bp, rcond=None)
        assert np.max(np.abs(Bv @ coef - Bp)) < 1e-10


def test_raised_regularity_excludes_pressure_space(rng):
    pair, _, _ = build_mixed_pair(make_cube(p=2), 2, 1, 1, nel=(3, 3, 3))
    ps, vs = pair.pressure.spaces[0], pair.velocity.spaces[0]
    x = rng.random(40)
    Bp, Bv = basis_matrix(ps, x), basis_matrix(vs, x)
    coef, *_ = np.linalg.lstsq(Bv, Bp, rcond=None)
    assert np.max(np.abs(Bv @ coef - Bp)) > 1e-6


class TestProjection:
    def test_constant_field(self):
        _, _, table = build_mixed_pair(make_cube(), 1, 1, 0, nel=(2, 2, 2))
        c = l2_project(lambda X: np.full(X.shape[:-1], 2.5), table, "pressure")
        np.testing.assert_allclose(c, 2.5, atol=1e-12)

    def test_in_space_recovery(self):
        _, _, table = build_mixed_pair(make_cube(), 2, 1, 0, nel=(2, 2, 2))
        f = lambda X: X[..., 0] ** 2 * X[..., 1] - 3 * X[..., 2] ** 2 + 1.0
        c = l2_project(f, table, "pressure")
        assert _l2_error(table, c, f) < 1e-10

    def test_vector_projection_shape(self):
        _, dm, table = build_mixed_pair(make_cube(), 1, 1, 0, nel=(2, 2, 2))
        c = l2_project(lambda X: X * 2.0, table, "velocity")
        assert c.shape == (dm.n_vel, 3)
        assert _l2_error(table, c[:, 1], lambda X: 2 * X[..., 1], "velocity") < 1e-12

    def test_optimal_rate(self):
        f = lambda X: np.sin(np.pi * X[..., 0]) * np.sin(np.pi * X[..., 1]) * np.cos(X[..., 2])
        errs = []
        for n in (4, 8):
            _, _, table = build_mixed_pair(make_cube(p=2), 2, 1, 0, nel=(n, n, n))
            errs.append(_l2_error(table, l2_project(f, table, "pressure"), f))
        assert np.log2(errs[0] / errs[1]) > 2.8


def test_mass_matrix_integrates_volume():
    _, dm, table = build_mixed_pair(make_annulus_disk(nel=(8, 1, 1)), 2, 1, 0)
    M = mass_matrix(table, "velocity", density=3.0)
    one = np.ones(dm.n_vel)
    # Gauss quadrature is inexact for the rational basis.
    assert abs(one @ M @ one - 3.0 * 2 * np.pi) < 1e-7 * 6 * np.pi
    assert abs(M - M.T).max() < 1e-14
