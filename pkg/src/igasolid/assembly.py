"""Material-frame residuals, tangent blocks, external loads and manufactured forcing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import FACES, AnalyticTraction, BoundaryTag, DeadLoad, GeometryError, Patch
from .materials import (ElementInversionError, MaterialModel, cofactor, first_piola,
                        stress_and_moduli)
from .spaces import (DofMap, ElementTable, KroneckerMass, MixedSpacePair, build_mixed_pair,
                     gauss_points, mass_matrix)


class AssemblyError(RuntimeError):
    """Failure during element evaluation (e.g. element inversion)."""

    def __init__(self, message: str, element: int | None = None):
        super().__init__(message)
        self.element = element


@dataclass
class StateVector:
    """Coefficients ``y = (u, v, p)`` and rates on compact control-point indices."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    dp: np.ndarray

    @classmethod
    def zeros(cls, n_vel: int, n_pre: int) -> "StateVector":
        z3 = lambda: np.zeros((n_vel, 3))
        return cls(z3(), z3(), np.zeros(n_pre), z3(), z3(), np.zeros(n_pre))

    def copy(self) -> "StateVector":
        return StateVector(*(np.array(a, copy=True) for a in self.arrays()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.u, self.v, self.p, self.du, self.dv, self.dp


@dataclass
class ResidualBlocks:
    Rm: np.ndarray   # free momentum equations
    Rp: np.ndarray   # pressure equations
    Rm_full: np.ndarray  # (n_vel, 3) including fixed rows

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.Rm @ self.Rm + self.Rp @ self.Rp))


@dataclass
class TangentBlocks:
    """``[[A, B], [C, 0]]`` plus the pieces needed for the kinematic correction."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    K: sp.csr_matrix      # d(internal force)/du on free equations
    Du: sp.csr_matrix     # d(pressure residual)/du


class Problem:
    """Discrete problem: spaces, DOFs, material, loads and precomputed patterns.

    Parameters
    ----------
    body_force : callable, optional
        Body force per unit mass ``B(X, t)`` with ``X`` of shape (..., 3).
    """

    def __init__(self, patch: Patch, pair: MixedSpacePair, dofmap: DofMap, table: ElementTable,
                 material: MaterialModel, body_force: Callable | None = None,
                 face_nq: int | None = None):
        self.patch = patch
        self.pair = pair
        self.dofmap = dofmap
        self.table = table
        self.material = material
        self.rho0 = float(material.rho0)
        self.body_force = body_force
        self.M = mass_matrix(table, "velocity", self.rho0)
        self.lumped = np.asarray(self.M.sum(axis=1)).ravel()
        nq = face_nq if face_nq is not None else table.nq_dir[0]
        self.faces = [FaceQuadrature(pair, dofmap, tag, nq) for tag in dofmap.tags
                      if tag.traction is not None]
        self._dead = None
        self._body_cache: tuple | None = None
        self._pattern = None
        self._mass_op = None
        self._cof_cache = None

    @classmethod
    def build(cls, patch: Patch, p: int, a: int, b: int, material: MaterialModel,
              bcs: Sequence[BoundaryTag] = (), nel: Sequence[int] | None = None,
              body_force: Callable | None = None, nq: int | None = None) -> "Problem":
        pair, dofmap, table = build_mixed_pair(patch, p, a, b, nel, bcs, nq=nq)
        return cls(patch, pair, dofmap, table, material, body_force)

    # ------------------------------------------------------------------ loads
    def external_load(self, t: float) -> np.ndarray:
        """Body force plus tractions at time ``t`` as a ``(n_vel, 3)`` array."""
        f = np.zeros((self.dofmap.n_vel, 3))
        if self.body_force is not None:
            f += self._body(t)
        for face in self.faces:
            f += face.load(t)
        return f

    def _body(self, t: float) -> np.ndarray:
        if self._body_cache is not None and self._body_cache[0] == t:
            return self._body_cache[1]
        f = np.zeros((self.dofmap.n_vel, 3))
        for blk in self.table.blocks():
            Bq = np.asarray(self.body_force(blk["X"], t)) * (self.rho0 * blk["wdet"])[..., None]
            fe = np.matmul(np.swapaxes(blk["Nv"], 1, 2), Bq)
            _scatter3(f, blk["vidx"], fe)
        self._body_cache = (t, f)
        return f

    # --------------------------------------------------------------- residual
    def internal(self, u: np.ndarray, v: np.ndarray, p: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
        """Internal force ``int grad W : (P_dev - p cof F)`` and pressure residual."""
        fint = np.zeros((self.dofmap.n_vel, 3))
        rp = np.zeros(self.dofmap.n_pre)
        cofs = []
        for blk in self.table.blocks():
            F, gV, pq = self._fields(blk, u, v, p)
            P, cof = self._stress(blk, F, pq, False)
            W = blk["wdet"]
            cofs.append(cof * W[..., None, None])
            dNt = _dNt(blk)
            nE, nq = W.shape
            PW = np.swapaxes(P * W[..., None, None], 2, 3).reshape(nE, nq * 3, 3)
            fe = np.matmul(dNt, PW)
            _scatter3(fint, blk["vidx"], fe)
            div = np.einsum("eqij,eqij->eq", gV, cof) * W
            re = np.einsum("eqa,eq->ea", blk["Np"], div)
            rp += np.bincount(blk["pidx"].ravel(), re.ravel(), minlength=rp.size)
        # weighted cofactors depend on u only; reused by moduli-free linearizations
        self._cof_cache = (np.array(u, copy=True), cofs)
        return fint, rp

    def weighted_cofactors(self, u: np.ndarray) -> list[np.ndarray]:
        """``cof F * wdet`` at quadrature points, per element block."""
        if self._cof_cache is not None and np.array_equal(self._cof_cache[0], u):
            return self._cof_cache[1]
        out = []
        for blk in self.table.blocks():
            F = self._fields(blk, u, u, np.zeros(self.dofmap.n_pre))[0]
            out.append(cofactor(F) * blk["wdet"][..., None, None])
        return out

    def residual(self, u: np.ndarray, v: np.ndarray, p: np.ndarray, dv: np.ndarray,
                 t: float) -> ResidualBlocks:
        """Momentum and pressure residuals at the given stage values."""
        fint, rp = self.internal(u, v, p)
        Rm = self.M @ dv + fint - self.external_load(t)
        return ResidualBlocks(Rm[self.dofmap.free], rp, Rm)

    def _fields(self, blk: dict, u, v, p):
        dNt = _dNt(blk)
        nE, nb, _ = dNt.shape
        nq = blk["wdet"].shape[1]
        uv = np.concatenate([u, v], axis=1)[blk["vidx"]]
        G = np.matmul(np.swapaxes(uv, 1, 2), dNt).reshape(nE, 6, nq, 3).transpose(0, 2, 1, 3)
        pq = np.einsum("eqa,ea->eq", blk["Np"], p[blk["pidx"]])
        return G[:, :, :3] + np.eye(3), G[:, :, 3:], pq

    def _stress(self, blk, F, pq, moduli):
        try:
            if not moduli:
                return first_piola(self.material, F, pq)
            return stress_and_moduli(self.material, F, pq, moduli)
        except ElementInversionError:
            J = np.linalg.det(F)
            bad = int(blk["elements"][np.nonzero((J <= 0).any(axis=1))[0][0]])
            raise AssemblyError(f"element {bad} inverted (det F <= 0)", bad) from None

    # ---------------------------------------------------------------- tangent
    def _build_pattern(self, name: str = "K") -> None:
        """Sparsity of ``K`` (with the expanded mass data) or of the coupling ``B``."""
        self._pattern = self._pattern or {}
        if name in self._pattern:
            return
        dm, tab = self.dofmap, self.table
        leq = dm.vel_eq[tab.vidx].reshape(tab.n_elements, -1)  # (nE, 3 nbv)
        nl = leq.shape[1]
        n = dm.n_vel_eq
        if name == "B":
            # Velocity-pressure coupling, stored as (n_vel_eq x n_pre).
            pid = tab.pidx
            nbp = pid.shape[1]
            r = np.repeat(leq, nbp, axis=1)
            c = np.tile(pid, (1, nl))
            ok = r >= 0
            kB = np.unique(r[ok] * dm.n_pre + c[ok])
            posB = np.searchsorted(kB, r * dm.n_pre + c)
            posB[~ok] = kB.size
            self._pattern["B"] = (kB // dm.n_pre, kB % dm.n_pre, posB, (n, dm.n_pre))
            return
        keys = []
        for s in range(0, tab.n_elements, 128):
            L = leq[s:s + 128]
            r = np.repeat(L, nl, axis=1)
            c = np.tile(L, (1, nl))
            ok = (r >= 0) & (c >= 0)
            keys.append(np.unique(r[ok] * n + c[ok]))
        kK = np.unique(np.concatenate(keys))
        posK = np.empty((tab.n_elements, nl * nl), dtype=np.int64)
        for s in range(0, tab.n_elements, 128):
            L = leq[s:s + 128]
            r = np.repeat(L, nl, axis=1)
            c = np.tile(L, (1, nl))
            pos = np.searchsorted(kK, r * n + c)
            pos[(r < 0) | (c < 0)] = kK.size
            posK[s:s + 128] = pos
        self._pattern["K"] = (kK // n, kK % n, posK, (n, n))
        # Mass matrix expanded to the free velocity components on the K pattern.
        mdat = np.zeros(kK.size + 1)
        for blk in tab.blocks():
            W = blk["wdet"] * self.rho0
            Me = np.einsum("eqa,eqb,eq->eab", blk["Nv"], blk["Nv"], W)
            nE, nb, _ = Me.shape
            Me3 = np.einsum("eab,ik->eaibk", Me, np.eye(3)).reshape(nE, -1)
            mdat += np.bincount(posK[blk["elements"]].ravel(), Me3.ravel(), minlength=kK.size + 1)
        self._mass_data = mdat[:-1]

    def _csr(self, name: str, data: np.ndarray) -> sp.csr_matrix:
        rows, cols, _, shape = self._pattern[name]
        return sp.csr_matrix((data, (rows, cols)), shape=shape)

    def tangent_pieces(self, u: np.ndarray, v: np.ndarray, p: np.ndarray,
                       parts: Sequence[str] = ("K", "B", "D")):
        """Raw derivatives: stiffness ``K``, ``Bd = dRm/dp`` and ``Du^T = (dRp/du)^T`` data arrays.

        Pieces not listed in ``parts`` are returned as ``None``.
        """
        if "K" in parts:
            self._build_pattern("K")
        if "B" in parts or "D" in parts:
            self._build_pattern("B")
        tab = self.table
        Kd = np.zeros(self._pattern["K"][0].size + 1) if "K" in parts else None
        nB = self._pattern["B"][0].size if "B" in self._pattern else 0
        Bd = np.zeros(nB + 1) if "B" in parts else None
        Dd = np.zeros(nB + 1) if "D" in parts else None
        nK = 0 if Kd is None else Kd.size - 1
        for blk in tab.blocks():
            F, gV, pq = self._fields(blk, u, v, p)
            W = blk["wdet"]
            dN = blk["dNv"]
            nE, nq, nb, _ = dN.shape
            els = blk["elements"]
            if Kd is not None or Dd is not None:
                _, A, cof, Finv = self._stress(blk, F, pq, True)
            else:
                _, cof = self._stress(blk, F, pq, False)
            if Kd is not None:
                dNt = _dNt(blk)
                for s in range(0, nE, 64):
                    sl = slice(s, s + 64)
                    m = min(nE - s, 64)
                    Aw = np.transpose(A[sl] * W[sl, :, None, None, None, None], (0, 1, 3, 2, 4, 5))
                    T = np.matmul(Aw.reshape(m, nq, 27, 3), np.swapaxes(dN[sl], 2, 3))
                    Ke = np.matmul(dNt[sl], T.reshape(m, nq * 3, 9 * nb))
                    Ke = Ke.reshape(m, nb, 3, 3, nb).transpose(0, 1, 2, 4, 3)
                    Kd += np.bincount(self._pattern["K"][2][els[sl]].ravel(), Ke.ravel(), minlength=nK + 1)
            if Bd is not None:
                # Bd[(b,i), a] = -int dN_bJ cof_iJ M_a
                G = np.matmul(dN, np.swapaxes(cof, 2, 3))  # (e,q,b,i)
                Be = -np.matmul((G * W[..., None, None]).reshape(nE, nq, nb * 3).transpose(0, 2, 1), blk["Np"])
                Bd += np.bincount(self._pattern["B"][2][els].ravel(), Be.ravel(), minlength=nB + 1)
            if Dd is not None:
                # Du^T[(c,k), a] = int M_a dN_cL Z_kL
                Z = _pressure_rate_derivative(F, Finv, gV)
                G2 = np.matmul(dN, np.swapaxes(Z, 2, 3))
                De = np.matmul((G2 * W[..., None, None]).reshape(nE, nq, nb * 3).transpose(0, 2, 1), blk["Np"])
                Dd += np.bincount(self._pattern["B"][2][els].ravel(), De.ravel(), minlength=nB + 1)
        return tuple(None if d is None else d[:-1] for d in (Kd, Bd, Dd))

    def coupling_matrix(self, u: np.ndarray) -> sp.csr_matrix:
        """``Bd = dRm/dp`` on free equations (depends on ``u`` only)."""
        z = np.zeros(self.dofmap.n_pre)
        _, Bd, _ = self.tangent_pieces(u, np.zeros_like(u), z, parts=("B",))
        return self._csr("B", Bd)

    def mass_operator(self) -> "KroneckerMass | SparseMass":
        """Solver and product for the free-equation mass matrix (Kronecker form when separable)."""
        if self._mass_op is None:
            km = KroneckerMass.from_table(self.table, self.dofmap, self.rho0)
            self._mass_op = km if km is not None else SparseMass(self.mass_free())
        return self._mass_op

    def linearize(self, u: np.ndarray, v: np.ndarray, p: np.ndarray,
                  moduli: bool = True) -> "Linearization":
        return Linearization(self, u, v, p, moduli)

    def tangent(self, u: np.ndarray, v: np.ndarray, p: np.ndarray, dt: float,
                alpha_m: float, alpha_f: float, gamma: float) -> TangentBlocks:
        """Block matrices of the stage-1 system in equation numbering."""
        Kd, Bd, Dd = self.tangent_pieces(u, v, p)
        c = alpha_f * gamma * dt
        k = c / alpha_m
        A = self._csr("K", alpha_m * self._mass_data + c * k * Kd)
        B = self._csr("B", c * Bd)
        C = self._csr("B", c * (k * Dd - Bd)).T.tocsr()
        return TangentBlocks(A, B, C, self._csr("K", Kd), self._csr("B", Dd).T.tocsr())

    def mass_free(self) -> sp.csr_matrix:
        self._build_pattern("K")
        return self._csr("K", self._mass_data)


def _pressure_rate_derivative(F: np.ndarray, Finv: np.ndarray, gV: np.ndarray) -> np.ndarray:
    """``Z_kL = d(grad V : cof F)/dF_kL = J (tr(F^-1 grad V) F^-T - (F^-1 grad V F^-1)^T)``."""
    FiG = np.matmul(Finv, gV)
    tr = np.trace(FiG, axis1=-2, axis2=-1)[..., None, None]
    J = np.linalg.det(F)[..., None, None]
    return J * (tr * np.swapaxes(Finv, -1, -2) - np.swapaxes(np.matmul(FiG, Finv), -1, -2))


class SparseMass:
    """Free-equation mass matrix with a sparse LU, same interface as :class:`KroneckerMass`."""

    def __init__(self, M: sp.spmatrix):
        self.M = M.tocsr()
        self._lu = spla.splu(self.M.tocsc())

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.M @ x

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(x, dtype=float))


class Linearization:
    """Consistent derivative of the stage residual at a fixed state, applied without assembly.

    Stores weighted moduli ``dP/dF``, cofactors and the pressure-rate
    derivative ``Z`` at quadrature points. With ``moduli=False`` only the
    velocity-pressure coupling is available.
    """

    def __init__(self, problem: Problem, u: np.ndarray, v: np.ndarray, p: np.ndarray,
                 moduli: bool = True):
        self.problem = problem
        self.u = u
        self.moduli = moduli
        if not moduli:
            self._data = [(None, cw, None) for cw in problem.weighted_cofactors(u)]
            return
        self._data = []
        for blk in problem.table.blocks():
            F, gV, pq = problem._fields(blk, u, v, p)
            W = blk["wdet"][..., None, None]
            _, A, cof, Finv = problem._stress(blk, F, pq, True)
            nE, nq = F.shape[:2]
            AW = (A * W[..., None, None]).reshape(nE, nq, 9, 9)
            ZW = _pressure_rate_derivative(F, Finv, gV) * W
            self._data.append((AW, cof * W, ZW))

    def _full(self, x: np.ndarray) -> np.ndarray:
        return x if x.ndim == 2 else self.problem.dofmap.scatter_free(x)

    def _grad(self, blk: dict, x3: np.ndarray) -> np.ndarray:
        dNt = _dNt(blk)
        nE, nb, _ = dNt.shape
        nq = blk["wdet"].shape[1]
        xe = x3[blk["vidx"]]
        return np.matmul(np.swapaxes(xe, 1, 2), dNt).reshape(nE, 3, nq, 3).transpose(0, 2, 1, 3)

    def _forces(self, blk: dict, Q: np.ndarray, out: np.ndarray) -> None:
        nE, nq = Q.shape[:2]
        fe = np.matmul(_dNt(blk), np.swapaxes(Q, 2, 3).reshape(nE, nq * 3, 3))
        _scatter3(out, blk["vidx"], fe)

    def _project(self, blk: dict, s: np.ndarray, out: np.ndarray) -> None:
        re = np.einsum("eqa,eq->ea", blk["Np"], s)
        out += np.bincount(blk["pidx"].ravel(), re.ravel(), minlength=out.size)

    def apply(self, xv: np.ndarray, xp: np.ndarray, c: float, k: float,
              alpha_m: float) -> tuple[np.ndarray, np.ndarray]:
        """Stage-1 block operator ``[[A, B], [C, 0]] [xv; xp]`` with ``c = alpha_f gamma dt``, ``k = c / alpha_m``."""
        pr = self.problem
        dm = pr.dofmap
        x3 = dm.scatter_free(xv)
        f = np.zeros((dm.n_vel, 3))
        g = np.zeros(dm.n_pre)
        for blk, (AW, cofW, ZW) in zip(pr.table.blocks(), self._data):
            gX = self._grad(blk, x3)
            pq = np.einsum("eqa,ea->eq", blk["Np"], xp[blk["pidx"]])
            Q = -c * cofW * pq[..., None, None]
            if AW is not None and k != 0.0:
                nE, nq = gX.shape[:2]
                Q += (c * k) * np.matmul(AW, gX.reshape(nE, nq, 9, 1)).reshape(nE, nq, 3, 3)
            self._forces(blk, Q, f)
            H = cofW if ZW is None or k == 0.0 else cofW + k * ZW
            self._project(blk, c * np.einsum("eqij,eqij->eq", H, gX), g)
        top = alpha_m * pr.mass_operator().matvec(xv) + f[dm.free]
        return top, g

    def stiffness(self, xv: np.ndarray) -> np.ndarray:
        """``K xv`` with ``K = d(internal force)/du`` on free equations."""
        if not self.moduli:
            raise ValueError("linearization built without moduli")
        pr = self.problem
        x3 = pr.dofmap.scatter_free(xv)
        f = np.zeros_like(x3)
        for blk, (AW, _, _) in zip(pr.table.blocks(), self._data):
            gX = self._grad(blk, x3)
            nE, nq = gX.shape[:2]
            self._forces(blk, np.matmul(AW, gX.reshape(nE, nq, 9, 1)).reshape(nE, nq, 3, 3), f)
        return f[pr.dofmap.free]

    def pressure_rate(self, xv: np.ndarray) -> np.ndarray:
        """``Du xv``, the derivative of the pressure residual with respect to ``u``.

        ``xv`` is a free-equation vector or a full ``(n_vel, 3)`` array.
        """
        if not self.moduli:
            raise ValueError("linearization built without moduli")
        pr = self.problem
        x3 = self._full(xv)
        g = np.zeros(pr.dofmap.n_pre)
        for blk, (_, _, ZW) in zip(pr.table.blocks(), self._data):
            self._project(blk, np.einsum("eqij,eqij->eq", ZW, self._grad(blk, x3)), g)
        return g

    def coupling(self, xp: np.ndarray) -> np.ndarray:
        """``Bd xp`` on free equations."""
        pr = self.problem
        f = np.zeros((pr.dofmap.n_vel, 3))
        for blk, (_, cofW, _) in zip(pr.table.blocks(), self._data):
            pq = np.einsum("eqa,ea->eq", blk["Np"], xp[blk["pidx"]])
            self._forces(blk, -cofW * pq[..., None, None], f)
        return f[pr.dofmap.free]

    def coupling_t(self, xv: np.ndarray) -> np.ndarray:
        """``Bd^T xv``."""
        pr = self.problem
        x3 = pr.dofmap.scatter_free(xv)
        g = np.zeros(pr.dofmap.n_pre)
        for blk, (_, cofW, _) in zip(pr.table.blocks(), self._data):
            self._project(blk, -np.einsum("eqij,eqij->eq", cofW, self._grad(blk, x3)), g)
        return g


def _dNt(blk: dict) -> np.ndarray:
    """Gradients laid out as (element, basis, quad*3)."""
    if "dNt" not in blk:
        dN = blk["dNv"]
        nE, nq, nb, _ = dN.shape
        blk["dNt"] = np.ascontiguousarray(dN.transpose(0, 2, 1, 3)).reshape(nE, nb, nq * 3)
    return blk["dNt"]


def _scatter3(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    flat = idx.ravel()
    for i in range(3):
        out[:, i] += np.bincount(flat, vals[..., i].ravel(), minlength=out.shape[0])


class FaceQuadrature:
    """Gauss quadrature on one parametric face for traction integrals."""

    def __init__(self, pair: MixedSpacePair, dofmap: DofMap, tag: BoundaryTag, nq: int):
        self.tag = tag
        d, side = FACES[tag.face]
        others = [k for k in range(3) if k != d]
        x, w = gauss_points(nq)
        space = pair.velocity
        pts, wts, inside = [], [], []
        br = pair.breaks
        box = tag.traction.box if isinstance(tag.traction, DeadLoad) else None
        for j in range(br[others[1]].size - 1):
            for i in range(br[others[0]].size - 1):
                a0, a1 = br[others[0]][i], br[others[0]][i + 1]
                b0, b1 = br[others[1]][j], br[others[1]][j + 1]
                mid = (0.5 * (a0 + a1), 0.5 * (b0 + b1))
                ok = box is None or (box[0][0] <= mid[0] <= box[0][1] and box[1][0] <= mid[1] <= box[1][1])
                for qb, wb in zip(x, w):
                    for qa, wa in zip(x, w):
                        xi = np.empty(3)
                        xi[d] = float(side)
                        xi[others[0]] = a0 + (a1 - a0) * qa
                        xi[others[1]] = b0 + (b1 - b0) * qb
                        pts.append(xi)
                        wts.append(wa * wb * (a1 - a0) * (b1 - b0))
                        inside.append(ok)
        sel = np.nonzero(inside)[0]
        idx, N, X, dA, normal = [], [], [], [], []
        for k in sel:
            ind, R = space.evaluate(pts[k], 1)
            P = pair.geometry_cp[ind]
            jac = (R[1:] @ P).T
            n = np.cross(jac[:, others[0]], jac[:, others[1]])
            area = np.linalg.norm(n)
            # Outward normal: sign from the orientation of the parametric face.
            sgn = 1.0 if ((side == 1) ^ (d == 1)) else -1.0
            idx.append(dofmap.vel_map[ind])
            N.append(R[0])
            X.append(R[0] @ P)
            dA.append(wts[k] * area)
            normal.append(sgn * n / area)
        self.idx = np.array(idx, dtype=np.int64)
        self.N = np.array(N)
        self.X = np.array(X)
        self.dA = np.array(dA)
        self.normal = np.array(normal)
        self.n_vel = dofmap.n_vel
        self._cache: tuple | None = None

    def load(self, t: float) -> np.ndarray:
        tr = self.tag.traction
        f = np.zeros((self.n_vel, 3))
        if self.idx.size == 0:
            return f
        if isinstance(tr, DeadLoad):
            if self._cache is None:
                H = np.broadcast_to(np.asarray(tr.vector, float), self.X.shape)
                self._cache = (None, self._integrate(H))
            scale = 1.0 if self.tag.ramp is None else min(t / self.tag.ramp, 1.0)
            return scale * self._cache[1]
        if isinstance(tr, AnalyticTraction):
            if self._cache is not None and self._cache[0] == t:
                return self._cache[1]
            H = np.asarray(tr.func(self.X, t, self.normal))
            out = self._integrate(H)
            self._cache = (t, out)
            return out
        raise GeometryError(f"unsupported traction {tr!r}")

    def _integrate(self, H: np.ndarray) -> np.ndarray:
        f = np.zeros((self.n_vel, 3))
        fe = self.N[:, :, None] * (H * self.dA[:, None])[:, None, :]
        _scatter3(f, self.idx, fe)
        return f


# ------------------------------------------------------------------ functional API

def assemble_residual(problem: Problem, u, v, p, dv, t: float) -> ResidualBlocks:
    return problem.residual(u, v, p, dv, t)


def assemble_tangent(problem: Problem, u, v, p, dt: float, alpha_m: float, alpha_f: float,
                     gamma: float) -> TangentBlocks:
    return problem.tangent(u, v, p, dt, alpha_m, alpha_f, gamma)


def external_load(problem: Problem, t: float) -> np.ndarray:
    return problem.external_load(t)


# ------------------------------------------------------------- manufactured solution

@dataclass(frozen=True)
class ManufacturedSolution:
    """Isochoric shear displacement and smooth pressure on the unit cube.

    ``U = c t^2 (sin(gY) sin(gZ), 0, 0)`` and
    ``P = d t^2 sin(bX) sin(bY) sin(bZ)`` with the incompressible Neo-Hookean
    model; the body force and boundary tractions follow from the strong form.
    """

    c: float = 0.2
    d: float = 0.2
    g: float = 2.0 * np.pi
    b: float = 2.0 * np.pi
    c1: float = 1.0
    rho0: float = 1.0

    def U(self, X, t):
        X = np.asarray(X)
        out = np.zeros(X.shape)
        out[..., 0] = self.c * t**2 * np.sin(self.g * X[..., 1]) * np.sin(self.g * X[..., 2])
        return out

    def V(self, X, t):
        return self.U(X, t) * (2.0 / t) if t != 0 else np.zeros(np.shape(X))

    def dVdt(self, X, t):
        X = np.asarray(X)
        out = np.zeros(X.shape)
        out[..., 0] = 2 * self.c * np.sin(self.g * X[..., 1]) * np.sin(self.g * X[..., 2])
        return out

    def P(self, X, t):
        X = np.asarray(X)
        s = np.sin(self.b * X)
        return self.d * t**2 * s[..., 0] * s[..., 1] * s[..., 2]

    def gradP(self, X, t):
        X = np.asarray(X)
        s, c = np.sin(self.b * X), np.cos(self.b * X)
        k = self.d * t**2 * self.b
        return np.stack([k * c[..., 0] * s[..., 1] * s[..., 2],
                         k * s[..., 0] * c[..., 1] * s[..., 2],
                         k * s[..., 0] * s[..., 1] * c[..., 2]], -1)

    def gradU(self, X, t):
        X = np.asarray(X)
        sy, cy = np.sin(self.g * X[..., 1]), np.cos(self.g * X[..., 1])
        sz, cz = np.sin(self.g * X[..., 2]), np.cos(self.g * X[..., 2])
        k = self.c * t**2 * self.g
        out = np.zeros(X.shape + (3,))
        out[..., 0, 1] = k * cy * sz
        out[..., 0, 2] = k * sy * cz
        return out

    def first_piola(self, X, t):
        """Total first Piola stress ``c1 (F - I1/3 F^-T) - P F^-T`` (J = 1)."""
        F = np.eye(3) + self.gradU(X, t)
        FinvT = np.swapaxes(np.linalg.inv(F), -1, -2)
        I1 = np.einsum("...ij,...ij->...", F, F)
        q = self.c1 * I1 / 3.0 + self.P(X, t)
        return self.c1 * F - q[..., None, None] * FinvT

    def body_force(self, X, t):
        """Body force per unit mass."""
        X = np.asarray(X)
        sy, cy = np.sin(self.g * X[..., 1]), np.cos(self.g * X[..., 1])
        sz, cz = np.sin(self.g * X[..., 2]), np.cos(self.g * X[..., 2])
        k = self.c * t**2
        g2 = k * self.g * cy * sz
        g3 = k * self.g * sy * cz
        kk = k * self.g**2
        grad_g2 = np.stack([0 * g2, -kk * sy * sz, kk * cy * cz], -1)
        grad_g3 = np.stack([0 * g2, kk * cy * cz, -kk * sy * sz], -1)
        grad_q = self.c1 / 3.0 * (2 * g2[..., None] * grad_g2 + 2 * g3[..., None] * grad_g3) + self.gradP(X, t)
        gvec = np.stack([0 * g2, g2, g3], -1)
        FinvT_gq = grad_q - gvec * grad_q[..., :1]
        div = -FinvT_gq
        div[..., 0] += self.c1 * (-2 * self.g**2) * self.U(X, t)[..., 0]
        return self.dVdt(X, t) - div / self.rho0

    def traction(self, X, t, normal):
        return np.einsum("...ij,...j->...i", self.first_piola(X, t), normal)


def manufactured_forcing(t: float, X: np.ndarray, normal: np.ndarray | None = None,
                         ms: ManufacturedSolution | None = None) -> dict:
    """Body force, traction (if ``normal`` given) and analytic fields at ``(X, t)``."""
    ms = ms or ManufacturedSolution()
    out = {"B": ms.body_force(X, t), "U": ms.U(X, t), "P": ms.P(X, t), "V": ms.V(X, t)}
    if normal is not None:
        out["H"] = ms.traction(X, t, normal)
    return out
