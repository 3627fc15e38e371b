import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from igasolid import timesolver as ts_mod
from igasolid.assembly import Problem
from igasolid.geometry import BoundaryTag, DeadLoad, clamp, make_cube
from igasolid.materials import NeoHookean
from igasolid.timesolver import (BlockSolver, LinearSolverError, NewtonOptions, NonConvergenceError,
                                 TimeIntegrator, TimeState, block_solve, gen_alpha, initial_state,
                                 load_checkpoint, predict, run, save_checkpoint)


def _amplification(params, inv_lam_dt):
    """Amplification matrix of ``y' = lam y`` acting on ``(y, dt ydot)``, built independently.

    ``inv_lam_dt = 1 / (lam dt)``; zero gives the infinite-stiffness limit.
    """
    am, af, g = params.alpha_m, params.alpha_f, params.gamma
    # Unknowns (y1, yd1), time scaled by dt:
    #   (am*yd1 + (1-am)*yd0) / (lam dt) = af*y1 + (1-af)*y0
    #   y1 = y0 + (1-g)*yd0 + g*yd1
    lhs = np.array([[-af, am * inv_lam_dt], [1.0, -g]])
    rhs = np.array([[1 - af, -(1 - am) * inv_lam_dt], [1.0, 1 - g]])
    return np.linalg.solve(lhs, rhs)


class TestGenAlpha:
    def test_default_parameters(self):
        pr = gen_alpha(0.5)
        assert pr.alpha_m == pytest.approx(5 / 6) and pr.alpha_f == pytest.approx(2 / 3)
        assert pr.gamma == pr.alpha_f

    def test_limits(self):
        assert gen_alpha(1.0).alpha_m == pytest.approx(0.5) and gen_alpha(1.0).alpha_f == 0.5
        assert gen_alpha(0.0).alpha_m == pytest.approx(1.5) and gen_alpha(0.0).alpha_f == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            gen_alpha(1.5)

    @given(st.floats(0.0, 1.0))
    def test_high_frequency_spectral_radius(self, rho):
        G = _amplification(gen_alpha(rho), 0.0)
        assert max(abs(np.linalg.eigvals(G))) == pytest.approx(rho, abs=1e-6)

    @given(st.floats(0.0, 1.0), st.floats(1e-3, 1e3))
    def test_unconditional_stability(self, rho, h):
        assert max(abs(np.linalg.eigvals(_amplification(gen_alpha(rho), -1.0 / h)))) <= 1.0 + 1e-12

    @given(st.floats(0.0, 1.0))
    def test_second_order_accuracy(self, rho):
        pr = gen_alpha(rho)
        errs = []
        for h in (1e-2, 5e-3):
            G = _amplification(pr, -1.0 / h)
            # Principal root; the spurious one sits near the high-frequency radius.
            errs.append(np.min(np.abs(np.linalg.eigvals(G) - np.exp(-h))))
        assert np.log2(errs[0] / errs[1]) > 2.8


def test_predictor_keeps_state_and_scales_rates(rng):
    from igasolid.assembly import StateVector
    s = StateVector(*(rng.standard_normal((4, 3)) for _ in range(2)), rng.standard_normal(2),
                    *(rng.standard_normal((4, 3)) for _ in range(2)), rng.standard_normal(2))
    y = predict(TimeState(0.0, s), gen_alpha(0.5))
    for a, b in ((y.u, s.u), (y.v, s.v), (y.p, s.p)):
        np.testing.assert_array_equal(a, b)
    for a, b in ((y.du, s.du), (y.dv, s.dv), (y.dp, s.dp)):
        np.testing.assert_allclose(a, -0.5 * b)


class TestBlockSolve:
    def test_scalar_example(self):
        dv, dp = block_solve([[2.0]], [[1.0]], [[1.0]], [-1.0], [3.0])
        np.testing.assert_allclose(dv, [-3.0])
        np.testing.assert_allclose(dp, [7.0])

    @pytest.mark.parametrize("backend", ["default", "superlu"])
    def test_random_substitution(self, backend, rng, monkeypatch):
        if backend == "superlu":
            monkeypatch.setattr(ts_mod, "_PARDISO", None)
        nv, npr = 60, 12
        A = sp.random(nv, nv, 0.1, random_state=1) + 10 * sp.eye(nv)
        B = sp.random(nv, npr, 0.3, random_state=2) + sp.eye(nv, npr)
        C = -B.T + 0.01 * sp.random(npr, nv, 0.2, random_state=3)
        rm, rp = rng.standard_normal(nv), rng.standard_normal(npr)
        dv, dp = BlockSolver(A.tocsr(), B.tocsr(), C.tocsr()).solve(rm, rp)
        np.testing.assert_allclose(A @ dv + B @ dp, -rm, atol=1e-12 * np.abs(rm).max() * 10)
        np.testing.assert_allclose(C @ dv, -rp, atol=1e-12 * np.abs(rp).max() * 10)

    @pytest.mark.parametrize("backend", ["default", "superlu"])
    def test_empty_coupling_raises(self, backend, monkeypatch):
        if backend == "superlu":
            monkeypatch.setattr(ts_mod, "_PARDISO", None)
        with pytest.raises(LinearSolverError):
            block_solve(np.eye(3), np.zeros((3, 2)), np.zeros((2, 3)), np.ones(3), np.ones(2))


def _loaded_problem(load=(0.05, 0.0, 0.0), nel=(2, 2, 2)):
    bcs = [clamp("xi3_min"), BoundaryTag("xi3_max", traction=DeadLoad(load))]
    return Problem.build(make_cube(), 1, 1, 0, NeoHookean(1.0, 1.0), bcs, nel=nel)


def test_unloaded_reference_needs_no_iterations():
    pb = Problem.build(make_cube(), 1, 1, 0, NeoHookean(1.0, 1.0), [clamp("xi3_min")], nel=(2, 2, 2))
    ts0 = initial_state(pb)
    ts1, log = TimeIntegrator(pb, gen_alpha(0.5), 0.1).step(ts0)
    assert log.iterations == 0 and ts1.t == pytest.approx(0.1)
    assert not np.any(ts1.state.u)


def test_initial_acceleration_is_consistent():
    pb = _loaded_problem()
    ts0 = initial_state(pb)
    s = ts0.state
    R = pb.residual(s.u, s.v, s.p, s.dv, 0.0)
    assert np.abs(R.Rm).max() < 1e-10 * np.abs(pb.external_load(0.0)).max()
    lin = pb.linearize(s.u, s.v, s.p)
    assert np.abs(lin.coupling_t(s.dv[pb.dofmap.free])).max() < 1e-10


def test_start_up_offset():
    pb = _loaded_problem()
    pr, dt = gen_alpha(0.5), 0.1
    a = initial_state(pb).state
    b = initial_state(pb, params=pr, dt=dt).state
    np.testing.assert_allclose(b.du - a.du, dt * (pr.alpha_f - pr.alpha_m) * a.dv, atol=1e-15)


def test_newton_converges_quadratically():
    pb = _loaded_problem(load=(0.3, 0.0, 0.1))
    pr = gen_alpha(0.5)
    ts, log = TimeIntegrator(pb, pr, 0.2, NewtonOptions(tol_r=1e-12, tol_a=1e-14)).step(
        initial_state(pb, params=pr, dt=0.2))
    r = np.array(log.residuals)
    assert log.iterations <= 6
    r = r[r > 1e-13 * r[0]]
    ratios = r[1:] / r[:-1]
    assert np.all(np.diff(ratios[1:]) < 0)


def test_nonconvergence_reports_history():
    pb = _loaded_problem(load=(0.3, 0.0, 0.0))
    pr = gen_alpha(0.5)
    with pytest.raises(NonConvergenceError) as err:
        TimeIntegrator(pb, pr, 0.2, NewtonOptions(tol_r=1e-14, tol_a=0.0, l_max=1)).step(
            initial_state(pb, params=pr, dt=0.2))
    assert len(err.value.history) == 1


# Mass/Schur mode is an inexact Newton method with linear contraction, so it gets more iterations.
@pytest.mark.parametrize("opts", [dict(linear="gmres"), dict(linear="mass-schur", l_max=80),
                                  dict(policy="modified"), dict(linear="gmres", precond="lu")],
                         ids=["gmres", "mass-schur", "modified", "gmres-lu"])
def test_linear_modes_agree(opts):
    pb = _loaded_problem()
    pr, dt = gen_alpha(0.5), 0.05
    ref = run(TimeIntegrator(pb, pr, dt, NewtonOptions(tol_r=1e-12, tol_a=1e-14)),
              initial_state(pb, params=pr, dt=dt), 3)
    pb2 = _loaded_problem()
    alt = run(TimeIntegrator(pb2, pr, dt, NewtonOptions(tol_r=1e-12, tol_a=1e-14, **opts)),
              initial_state(pb2, params=pr, dt=dt), 3)
    scale = np.abs(ref.state.u).max()
    np.testing.assert_allclose(alt.state.u, ref.state.u, atol=1e-9 * scale)
    np.testing.assert_allclose(alt.state.p, ref.state.p, atol=1e-9 * np.abs(ref.state.p).max())


def test_checkpoint_restart_is_bit_identical(tmp_path):
    pr, dt = gen_alpha(0.5), 0.05
    pb = _loaded_problem()
    integ = TimeIntegrator(pb, pr, dt)
    full = run(integ, initial_state(pb, params=pr, dt=dt), 4)
    pb2 = _loaded_problem()
    half = run(TimeIntegrator(pb2, pr, dt), initial_state(pb2, params=pr, dt=dt), 2)
    save_checkpoint(tmp_path / "c.npz", half, {"case": "test"})
    back, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta == {"format_version": 1, "case": "test"} and back.step == 2
    pb3 = _loaded_problem()
    rest = run(TimeIntegrator(pb3, pr, dt), back, 2)
    assert rest.t == full.t and rest.step == 4
    for a, b in zip(rest.state.arrays(), full.state.arrays()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_version_checked(tmp_path):
    pb = _loaded_problem()
    save_checkpoint(tmp_path / "c.npz", initial_state(pb), {"format_version": 99})
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.npz")


def test_invalid_options():
    for kw in (dict(linear="cg"), dict(schur="x"), dict(policy="lazy"), dict(precond="ilu")):
        with pytest.raises(ValueError):
            NewtonOptions(**kw)
