"""Generalized-alpha time stepping with a segregated predictor multi-corrector."""

from __future__ import annotations

import glob
import io
import json
import os
import sys
import sysconfig
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssemblyError, Linearization, Problem, StateVector, TangentBlocks
from .spaces import KroneckerSchur

CHECKPOINT_VERSION = 1


class NonConvergenceError(RuntimeError):
    """Newton iteration did not meet the stopping criteria within ``l_max``."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class LinearSolverError(RuntimeError):
    """Singular or inaccurate saddle-point solve."""


@dataclass(frozen=True)
class GenAlphaParams:
    rho_inf: float
    alpha_m: float
    alpha_f: float
    gamma: float


def gen_alpha(rho_inf: float = 0.5) -> GenAlphaParams:
    """Parameters of the first-order generalized-alpha family for spectral radius ``rho_inf``."""
    if not 0.0 <= rho_inf <= 1.0:
        raise ValueError("rho_inf must lie in [0, 1]")
    am = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    af = 1.0 / (1.0 + rho_inf)
    return GenAlphaParams(rho_inf, am, af, af)


@dataclass
class TimeState:
    t: float
    state: StateVector
    step: int = 0


@dataclass
class StepLog:
    iterations: int
    residuals: list[float]
    res0: float
    resk: float
    refactorizations: int = 0
    seconds: float = 0.0


def predict(ts: TimeState, params: GenAlphaParams, dt: float | None = None,
            problem: Problem | None = None) -> StateVector:
    """Same-y predictor: ``y(0) = y_n`` and ``ydot(0) = (gamma - 1)/gamma ydot_n``.

    With a problem carrying inhomogeneous Dirichlet data, fixed components are
    set to their values at ``t + dt`` and their rates follow from the update
    formula.
    """
    if params.gamma <= 0:
        raise ValueError("gamma must be positive")
    s = ts.state
    f = (params.gamma - 1.0) / params.gamma
    new = StateVector(s.u.copy(), s.v.copy(), s.p.copy(), f * s.du, f * s.dv, f * s.dp)
    if problem is not None and dt is not None and problem.dofmap.has_inhomogeneous:
        fx = problem.dofmap.fixed
        uD, vD = problem.dofmap.prescribed(ts.t + dt)
        g = params.gamma
        for y, yd, yn, ydn in ((new.u, new.du, s.u, s.du), (new.v, new.dv, s.v, s.dv)):
            target = uD if y is new.u else vD
            y[fx] = target[fx]
            yd[fx] = ydn[fx] + (target[fx] - yn[fx] - dt * ydn[fx]) / (g * dt)
    return new


def _find_pardiso():
    """Return ``pypardiso`` if it and an MKL runtime load, else ``None``.

    Set ``IGASOLID_SPARSE=superlu`` to force the SciPy fallback.
    """
    if os.environ.get("IGASOLID_SPARSE", "").lower() == "superlu":
        return None
    if "PYPARDISO_MKL_RT" not in os.environ:
        dirs = {sysconfig.get_config_var("LIBDIR") or "", os.path.join(sys.prefix, "lib"),
                os.path.join(sys.base_prefix, "lib"), "/usr/local/lib"}
        hits = sorted(p for d in dirs if d for p in glob.glob(os.path.join(d, "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
    try:
        import pypardiso
    except (ImportError, OSError):
        return None
    return pypardiso


_PARDISO = _find_pardiso()


def sparse_backend() -> str:
    """Name of the sparse direct solver in use (``"pardiso"`` or ``"superlu"``)."""
    return "superlu" if _PARDISO is None else "pardiso"


class BlockSolver:
    """Sparse LU of ``[[A, B], [C, 0]]`` with iterative refinement.

    Uses MKL PARDISO through ``pypardiso`` when available and SuperLU
    (threshold partial pivoting) otherwise.
    """

    def __init__(self, A: sp.spmatrix, B: sp.spmatrix, C: sp.spmatrix):
        self.nv = A.shape[0]
        self._pardiso = None
        if _PARDISO is not None:
            self.K = sp.bmat([[A, B], [C, None]], format="csr")
            self.K.sort_indices()
            solver = _PARDISO.PyPardisoSolver(mtype=11)
            try:
                solver.factorize(self.K)
            except Exception as exc:  # PyPardisoError has no stable import path
                solver.free_memory(everything=True)
                raise LinearSolverError(
                    "zero pivot in the saddle-point factorization (pressure block is empty or "
                    f"velocity-pressure coupling is rank deficient): {exc}") from None
            self._pardiso = solver
            return
        self.K = sp.bmat([[A, B], [C, None]], format="csc")
        try:
            self.lu = spla.splu(self.K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LinearSolverError(
                "zero pivot in the saddle-point factorization (pressure block is empty or "
                f"velocity-pressure coupling is rank deficient): {exc}") from None

    def __del__(self):
        if getattr(self, "_pardiso", None) is not None:
            self._pardiso.free_memory(everything=True)

    def apply(self, b: np.ndarray) -> np.ndarray:
        """One forward/backward substitution, ``K^-1 b``."""
        b = np.asarray(b, dtype=float)
        if self._pardiso is None:
            return self.lu.solve(b)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return self._pardiso.solve(self.K, b)

    def solve(self, rm: np.ndarray, rp: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dv, dp)`` solving ``K [dv; dp] = -[rm; rp]``."""
        b = -np.concatenate([rm, rp])
        x = self.apply(b)
        bn = np.linalg.norm(b)
        for _ in range(3):
            r = b - self.K @ x
            if not np.all(np.isfinite(x)):
                break
            if np.linalg.norm(r) <= tol * max(bn, 1e-300):
                return x[: self.nv], x[self.nv:]
            x = x + self.apply(r)
        r = b - self.K @ x
        if bn == 0.0 or np.linalg.norm(r) <= tol * bn:
            return x[: self.nv], x[self.nv:]
        raise LinearSolverError(f"saddle-point solve inaccurate: relative residual "
                                f"{np.linalg.norm(r) / bn:.3e}")


class PressureSchur:
    """Factorized ``H = Bd^T M^-1 Bd`` for the mass-dominated pressure Schur complement.

    ``kind`` selects the factorization:

    * ``"kron"``: exact inverse at the undeformed state by fast diagonalization
      on axis-aligned boxes (:class:`~igasolid.spaces.KroneckerSchur`);
    * ``"dense"``: ``H`` formed and Cholesky-factorized at the given state;
    * ``"lumped"``: sparse ``Bd^T diag(M_L)^-1 Bd`` with the row-sum lumped mass;
    * ``"auto"``: ``"kron"`` when available, else ``"dense"`` up to
      ``dense_limit`` pressure functions, else ``"lumped"``.
    """

    def __init__(self, problem: Problem, u: np.ndarray, dense_limit: int = 3000,
                 kind: str = "auto"):
        n_p = problem.dofmap.n_pre
        if kind not in SCHUR_KINDS:
            raise ValueError(f"schur kind must be one of {SCHUR_KINDS}")
        if kind in ("auto", "kron"):
            ks = KroneckerSchur.from_table(problem.table, problem.dofmap, problem.rho0)
            if ks is not None:
                self.kind = "kron"
                self._fac = ("kron", ks)
                return
            if kind == "kron":
                raise ValueError("Kronecker Schur inverse needs an axis-aligned box with "
                                 "component-independent Dirichlet sets")
            kind = "dense" if n_p <= dense_limit else "lumped"
        self.kind = kind
        Bd = problem.coupling_matrix(u).tocsc()
        if self.kind == "dense":
            mass = problem.mass_operator()
            H = np.empty((n_p, n_p))
            for s in range(0, n_p, 256):
                cols = Bd[:, s:s + 256].toarray()
                H[:, s:s + 256] = Bd.T @ mass.solve(cols)
            H = 0.5 * (H + H.T)
            try:
                self._fac = ("chol", sla.cho_factor(H))
            except np.linalg.LinAlgError:
                self._fac = ("lu", sla.lu_factor(H))
        else:
            free = problem.dofmap.free
            ml = np.repeat(problem.lumped[:, None], 3, axis=1)[free]
            H = (Bd.T @ sp.diags(1.0 / ml) @ Bd).tocsc()
            try:
                self._fac = ("splu", spla.splu(H))
            except RuntimeError as exc:
                raise LinearSolverError(f"singular pressure Schur complement: {exc}") from None

    def solve(self, r: np.ndarray) -> np.ndarray:
        kind, fac = self._fac
        if kind == "chol":
            return sla.cho_solve(fac, r)
        if kind == "lu":
            return sla.lu_solve(fac, r)
        return fac.solve(r)  # sparse LU or Kronecker inverse


class MassSchurPreconditioner:
    """Exact block solve of ``[[alpha_m M, c Bd], [-c Bd^T, 0]]``.

    This is the stage-1 operator with the stiffness and pressure-rate terms
    dropped, which dominate only when ``dt`` resolves the elastic waves
    poorly. The pressure Schur complement ``(c^2 / alpha_m) H`` is inverted
    with ``schur``.
    """

    def __init__(self, problem: Problem, lin: Linearization, schur: PressureSchur,
                 alpha_m: float, c: float):
        self.mass = problem.mass_operator()
        self.lin, self.schur, self.am, self.c = lin, schur, alpha_m, c
        self.nv = problem.dofmap.n_vel_eq

    def solve(self, f: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        am, c = self.am, self.c
        Mf = self.mass.solve(f)
        y = self.schur.solve((am / c**2) * g + self.lin.coupling_t(Mf) / c)
        x = (Mf - c * self.mass.solve(self.lin.coupling(y))) / am
        return x, y

    def as_operator(self) -> spla.LinearOperator:
        nv = self.nv
        n = nv + self.lin.problem.dofmap.n_pre

        def mv(b):
            x, y = self.solve(b[:nv], b[nv:])
            return np.concatenate([x, y])
        return spla.LinearOperator((n, n), matvec=mv, dtype=float)


def block_solve(A, B, C, rhs_m, rhs_p) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[[A, B], [C, 0]] [dv; dp] = -[rhs_m; rhs_p]``."""
    A, B, C = (sp.csr_matrix(np.atleast_2d(M)) if not sp.issparse(M) else M for M in (A, B, C))
    return BlockSolver(A, B, C).solve(np.atleast_1d(rhs_m).astype(float),
                                      np.atleast_1d(rhs_p).astype(float))


LINEAR_MODES = ("direct", "gmres", "mass-schur")
SCHUR_KINDS = ("auto", "kron", "dense", "lumped")


@dataclass
class NewtonOptions:
    """Stopping criteria and linear-solver strategy of the multi-corrector.

    ``linear`` selects how the stage-1 system is solved:

    * ``"direct"``: sparse LU of the assembled blocks. ``policy="modified"``
      reuses the factorization until the residual contraction is slower than
      ``refresh_ratio``.
    * ``"gmres"``: GMRES on the exact operator applied without assembly,
      preconditioned by ``precond`` (``"mass-schur"`` or a possibly stale
      ``"lu"`` of the assembled blocks, refreshed when GMRES needs more than
      ``refresh_iters`` iterations).
    * ``"mass-schur"``: the mass/Schur block solve used directly as an
      approximate inverse (inexact Newton). The Schur factorization is rebuilt
      when the contraction is slower than ``refresh_ratio``.
    """

    tol_r: float = 1e-8
    tol_a: float = 1e-10
    l_max: int = 20
    policy: str = "full"
    refresh_ratio: float = 0.2
    linear: str = "direct"
    precond: str = "mass-schur"
    gmres_rtol: float = 1e-9
    gmres_maxiter: int = 300
    refresh_iters: int = 40
    dense_schur_limit: int = 3000
    schur: str = "auto"

    def __post_init__(self) -> None:
        if self.schur not in SCHUR_KINDS:
            raise ValueError(f"schur must be one of {SCHUR_KINDS}")
        if self.linear not in LINEAR_MODES:
            raise ValueError(f"linear must be one of {LINEAR_MODES}")
        if self.precond not in ("mass-schur", "lu"):
            raise ValueError("precond must be 'mass-schur' or 'lu'")
        if self.policy not in ("full", "modified"):
            raise ValueError("policy must be 'full' or 'modified'")


@dataclass
class _Factor:
    tangent: TangentBlocks
    solver: BlockSolver


class TimeIntegrator:
    """Marches a :class:`Problem` with the generalized-alpha method.

    Attributes
    ----------
    krylov_iterations : list of int
        GMRES iteration count of every linear solve (``linear="gmres"``).
    """

    def __init__(self, problem: Problem, params: GenAlphaParams, dt: float,
                 options: NewtonOptions | None = None):
        self.problem = problem
        self.params = params
        self.dt = float(dt)
        self.options = options or NewtonOptions()
        self._factor: _Factor | None = None
        self._schur: PressureSchur | None = None
        self.krylov_iterations: list[int] = []

    @property
    def _c(self) -> float:
        return self.params.alpha_f * self.params.gamma * self.dt

    def _refactor(self, u, v, p) -> _Factor:
        pr = self.params
        T = self.problem.tangent(u, v, p, self.dt, pr.alpha_m, pr.alpha_f, pr.gamma)
        self._factor = _Factor(T, BlockSolver(T.A, T.B, T.C))
        return self._factor

    def _solve_direct(self, stage, rm, rp, Rk, refresh: bool):
        nref = 0
        if refresh or self._factor is None:
            self._refactor(*stage)
            nref = 1
        fac = self._factor
        if np.any(Rk):
            k = self._c / self.params.alpha_m
            rm = rm - k * (fac.tangent.K @ Rk)
            rp = rp - k * (fac.tangent.Du @ Rk)
        return (*fac.solver.solve(rm, rp), nref)

    def _solve_gmres(self, stage, rm, rp, Rk):
        opt, prob = self.options, self.problem
        am = self.params.alpha_m
        c = self._c
        k = c / am
        nv = prob.dofmap.n_vel_eq
        n = nv + prob.dofmap.n_pre
        lin = prob.linearize(*stage)
        if np.any(Rk):
            rm = rm - k * lin.stiffness(Rk)
            rp = rp - k * lin.pressure_rate(Rk)
        b = -np.concatenate([rm, rp])

        def mv(x):
            top, bot = lin.apply(x[:nv], x[nv:], c, k, am)
            return np.concatenate([top, bot])
        A = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        refreshed = 0
        for attempt in range(2):
            if opt.precond == "lu":
                if self._factor is None:
                    self._refactor(*stage)
                    refreshed += 1
                lu = self._factor.solver
                M = spla.LinearOperator((n, n), matvec=lu.apply, dtype=float)
            else:
                if self._schur is None:
                    self._schur = PressureSchur(prob, stage[0], opt.dense_schur_limit, opt.schur)
                    refreshed += 1
                M = MassSchurPreconditioner(prob, lin, self._schur, am, c).as_operator()
            count = [0]

            def cb(_):
                count[0] += 1
            restart = min(opt.gmres_maxiter, 150)
            x, info = spla.gmres(A, b, rtol=opt.gmres_rtol, atol=0.0, restart=restart,
                                 maxiter=-(-opt.gmres_maxiter // restart), M=M,
                                 callback=cb, callback_type="pr_norm")
            self.krylov_iterations.append(count[0])
            bn = np.linalg.norm(b)
            res = np.linalg.norm(b - A @ x) / bn if bn > 0 else 0.0
            ok = info == 0 or res <= 10 * opt.gmres_rtol
            stale = count[0] > opt.refresh_iters or not ok
            if stale:
                self._factor = None
                self._schur = None
            if ok:
                return x[:nv], x[nv:], refreshed
            if refreshed and attempt == 0 and res <= 1e-3:
                return x[:nv], x[nv:], refreshed
        raise LinearSolverError(f"GMRES did not converge (relative residual {res:.3e}, "
                                f"{count[0]} iterations)")

    def _solve_mass_schur(self, stage, rm, rp, refresh: bool):
        prob = self.problem
        rebuilt = 0
        if refresh or self._schur is None:
            self._schur = PressureSchur(prob, stage[0], self.options.dense_schur_limit,
                                        self.options.schur)
            rebuilt = 1
        lin = prob.linearize(*stage, moduli=False)
        P = MassSchurPreconditioner(prob, lin, self._schur, self.params.alpha_m, self._c)
        x, y = P.solve(-rm, -rp)
        return x, y, rebuilt

    def step(self, ts: TimeState) -> tuple[TimeState, StepLog]:
        """Advance one step; raises :class:`NonConvergenceError` on failure."""
        t0 = time.perf_counter()
        pr, dt, opt, prob = self.params, self.dt, self.options, self.problem
        dm = prob.dofmap
        free = dm.free
        am, af, g = pr.alpha_m, pr.alpha_f, pr.gamma
        k = af * g * dt / am
        yn = ts.state
        y = predict(ts, pr, dt, prob)
        history: list[float] = []
        refactors = 0
        r0 = None
        last = None
        for l in range(1, opt.l_max + 1):
            u_af = yn.u + af * (y.u - yn.u)
            v_af = yn.v + af * (y.v - yn.v)
            p_af = yn.p + af * (y.p - yn.p)
            du_am = yn.du + am * (y.du - yn.du)
            dv_am = yn.dv + am * (y.dv - yn.dv)
            try:
                R = prob.residual(u_af, v_af, p_af, dv_am, ts.t + af * dt)
            except AssemblyError as exc:
                raise AssemblyError(f"{exc} at time step {ts.step + 1}", exc.element) from None
            Rk = (du_am - v_af)[free]
            r = R.norm
            history.append(r)
            if r0 is None:
                r0 = r
            kin_ok = l >= 2 or not np.any(Rk)
            if kin_ok and (r <= opt.tol_a or (r0 > 0 and r / r0 <= opt.tol_r)):
                log = StepLog(l - 1, history, r0, r, refactors, time.perf_counter() - t0)
                return TimeState(ts.t + dt, y, ts.step + 1), log
            if not np.all(np.isfinite(R.Rm)) or not np.isfinite(r):
                break
            slow = last is not None and r > opt.refresh_ratio * last
            stage = (u_af, v_af, p_af)
            try:
                if opt.linear == "direct":
                    refresh = opt.policy == "full" or self._factor is None or slow
                    ddv, ddp, nref = self._solve_direct(stage, R.Rm, R.Rp, Rk, refresh)
                elif opt.linear == "gmres":
                    ddv, ddp, nref = self._solve_gmres(stage, R.Rm, R.Rp, Rk)
                else:
                    ddv, ddp, nref = self._solve_mass_schur(stage, R.Rm, R.Rp, slow)
            except AssemblyError as exc:
                raise AssemblyError(f"{exc} at time step {ts.step + 1}", exc.element) from None
            refactors += nref
            last = r
            ddv3 = dm.scatter_free(ddv)
            ddu3 = np.zeros_like(ddv3)
            ddu3[free] = k * ddv - Rk / am
            y.du += ddu3
            y.dv += ddv3
            y.dp += ddp
            y.u += g * dt * ddu3
            y.v += g * dt * ddv3
            y.p += g * dt * ddp
        raise NonConvergenceError(
            f"Newton did not converge in {opt.l_max} iterations at step {ts.step + 1} "
            f"(t = {ts.t + dt:g}); residual history {['%.3e' % h for h in history]}", history)


def solve_step(problem: Problem, ts: TimeState, params: GenAlphaParams, dt: float,
               tol_r: float = 1e-8, tol_a: float = 1e-10, l_max: int = 20
               ) -> tuple[TimeState, StepLog]:
    """One full-Newton generalized-alpha step."""
    return TimeIntegrator(problem, params, dt, NewtonOptions(tol_r, tol_a, l_max)).step(ts)


def saddle_solve(problem: Problem, lin: Linearization, rm: np.ndarray, rp: np.ndarray,
                 alpha_m: float, c: float, dense_limit: int = 3000, rtol: float = 1e-12
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[[alpha_m M, c Bd], [-c Bd^T, 0]] [x; y] = -[rm; rp]``.

    GMRES preconditioned by :class:`MassSchurPreconditioner`; with a dense
    Schur factorization the preconditioner is exact and one iteration suffices.
    """
    nv = problem.dofmap.n_vel_eq
    n = nv + problem.dofmap.n_pre
    P = MassSchurPreconditioner(problem, lin, PressureSchur(problem, lin.u, dense_limit),
                                alpha_m, c)

    def mv(x):
        top, bot = lin.apply(x[:nv], x[nv:], c, 0.0, alpha_m)
        return np.concatenate([top, bot])
    b = -np.concatenate([rm, rp])
    x, info = spla.gmres(spla.LinearOperator((n, n), matvec=mv, dtype=float), b, rtol=rtol,
                         atol=0.0, restart=100, maxiter=5, M=P.as_operator())
    if info != 0:
        res = np.linalg.norm(b - mv(x)) / max(np.linalg.norm(b), 1e-300)
        if res > 1e3 * rtol:
            raise LinearSolverError(f"saddle-point GMRES stalled at relative residual {res:.3e}")
    return x[:nv], x[nv:]


def initial_state(problem: Problem, u0: np.ndarray | None = None, v0: np.ndarray | None = None,
                  p0: np.ndarray | None = None, t0: float = 0.0,
                  params: GenAlphaParams | None = None, dt: float | None = None,
                  dense_limit: int = 3000) -> TimeState:
    """Initial coefficients with consistent rates.

    ``dv0`` and a pressure correction solve the momentum balance together with
    the time derivative of the discrete incompressibility constraint, so the
    initial acceleration is discretely divergence free; ``dp0 = 0``.
    ``du0 = v0``, or, when ``params`` and ``dt`` are given,
    ``du0 = v0 + dt (alpha_f - alpha_m) dv0`` (the fixed point of the discrete
    kinematic relation under constant acceleration).
    """
    dm = problem.dofmap
    s = StateVector.zeros(dm.n_vel, dm.n_pre)
    if u0 is not None:
        s.u[:] = u0
    if v0 is not None:
        s.v[:] = v0
    if p0 is not None:
        s.p[:] = p0
    if dm.has_inhomogeneous:
        uD, vD = dm.prescribed(t0)
        s.u[dm.fixed] = uD[dm.fixed]
        s.v[dm.fixed] = vD[dm.fixed]
    s.du[:] = s.v
    R = problem.residual(s.u, s.v, s.p, np.zeros_like(s.v), t0)
    lin = problem.linearize(s.u, s.v, s.p)
    rp = lin.pressure_rate(s.v)
    if np.any(R.Rm) or np.any(rp):
        dv, dp = saddle_solve(problem, lin, R.Rm, rp, 1.0, 1.0, dense_limit)
        s.dv[dm.free] = dv
        s.p += dp
    if params is not None and dt is not None:
        s.du[dm.free] += dt * (params.alpha_f - params.alpha_m) * s.dv[dm.free]
    return TimeState(t0, s, 0)


def run(integrator: TimeIntegrator, ts: TimeState, n_steps: int,
        callback: Callable[[TimeState, StepLog | None], None] | None = None) -> TimeState:
    """March ``n_steps`` fixed steps, calling ``callback`` after the initial state and each step."""
    if callback is not None:
        callback(ts, None)
    for _ in range(n_steps):
        ts, log = integrator.step(ts)
        if callback is not None:
            callback(ts, log)
    return ts


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, ts: TimeState, meta: dict | None = None) -> None:
    """Write ``(t, y, ydot)`` and metadata as an uncompressed ``.npz`` archive.

    Layout: arrays ``u, v, p, du, dv, dp`` (float64), scalar arrays ``t`` and
    ``step``, and ``meta`` holding a JSON string with ``format_version``.
    """
    info = {"format_version": CHECKPOINT_VERSION}
    info.update(meta or {})
    s = ts.state
    with open(path, "wb") as fh:
        np.savez(fh, u=s.u, v=s.v, p=s.p, du=s.du, dv=s.dv, dp=s.dp,
                 t=np.float64(ts.t), step=np.int64(ts.step), meta=np.array(json.dumps(info)))


def load_checkpoint(path) -> tuple[TimeState, dict]:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        s = StateVector(*(data[k].copy() for k in ("u", "v", "p", "du", "dv", "dp")))
        return TimeState(float(data["t"]), s, int(data["step"])), meta
