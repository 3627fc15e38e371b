"""Mixed velocity/pressure spline pair, DOF numbering and element tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import FACES, BoundaryTag, GeometryError, Patch, refine_patch
from .splines import (KnotVector, SplineError, TensorSpace, basis_matrix, element_tables,
                      refine_space)


def gauss_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True, eq=False)
class MixedSpacePair:
    """Velocity space (degree p+a, regularity alpha+b) and pressure space (degree p)."""

    velocity: TensorSpace
    pressure: TensorSpace
    p: int
    a: int
    b: int
    geometry_cp: np.ndarray  # geometry expressed in the velocity space
    pressure_geometry_cp: np.ndarray

    @property
    def nel(self) -> tuple[int, int, int]:
        return tuple(s.knot_vector.nspans for s in self.velocity.spaces)

    @property
    def breaks(self) -> tuple[np.ndarray, ...]:
        return tuple(s.knot_vector.breaks for s in self.velocity.spaces)


def _face_indices(shape: tuple[int, int, int], face: str) -> np.ndarray:
    d, side = FACES[face]
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    sel = grids[d] == (0 if side == 0 else shape[d] - 1)
    i1, i2, i3 = (g[sel] for g in grids)
    return np.sort(i1 + shape[0] * (i2 + shape[1] * i3))


def _seam_map(shape: tuple[int, int, int], seam: bool) -> tuple[np.ndarray, int]:
    """Map full tensor indices to compact indices, merging the last xi1 column into the first."""
    n1, n2, n3 = shape
    full = np.arange(n1 * n2 * n3)
    if not seam:
        return full, full.size
    i1 = full % n1
    rest = full // n1
    i1c = np.where(i1 == n1 - 1, 0, i1)
    return i1c + (n1 - 1) * rest, (n1 - 1) * n2 * n3


@dataclass(eq=False)
class DofMap:
    """Equation numbering for the free velocity components and the pressure.

    Coefficient arrays live on compact indices (seam slaves merged):
    velocity-like arrays have shape ``(n_vel, 3)`` and pressure ``(n_pre,)``.
    """

    vel_map: np.ndarray       # full velocity index -> compact index
    pre_map: np.ndarray
    n_vel: int
    n_pre: int
    fixed: np.ndarray         # (n_vel, 3) bool
    vel_eq: np.ndarray        # (n_vel, 3) equation number or -1
    n_vel_eq: int
    greville_X: np.ndarray    # (n_vel, 3) physical Greville points
    tags: tuple[BoundaryTag, ...]
    seam_pairs: np.ndarray    # (k, 2) full (slave, master) velocity indices
    tag_nodes: tuple = ()

    @property
    def n_eq(self) -> int:
        return self.n_vel_eq + self.n_pre

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed

    def prescribed(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Prescribed displacement and velocity on fixed components (zeros elsewhere)."""
        u = np.zeros((self.n_vel, 3))
        v = np.zeros((self.n_vel, 3))
        for tag, idx in zip(self.tags, self.tag_nodes):
            if not any(tag.fixed):
                continue
            X = self.greville_X[idx]
            mask = np.asarray(tag.fixed)
            if tag.g is not None:
                u[np.ix_(idx, mask)] = np.asarray(tag.g(X, t))[:, mask]
            if tag.dgdt is not None:
                v[np.ix_(idx, mask)] = np.asarray(tag.dgdt(X, t))[:, mask]
        return u, v

    @property
    def has_inhomogeneous(self) -> bool:
        return any(t.g is not None or t.dgdt is not None for t in self.tags if any(t.fixed))

    def scatter_free(self, x: np.ndarray) -> np.ndarray:
        """Equation vector (velocity part) to a ``(n_vel, 3)`` array, zeros on fixed entries."""
        out = np.zeros((self.n_vel, 3))
        out[self.free] = x[: self.n_vel_eq]
        return out

    def gather_free(self, a: np.ndarray) -> np.ndarray:
        return a[self.free]


class ElementTable:
    """Quadrature data per element on the reference configuration.

    Element ``e = e1 + nel1 * (e2 + nel2 * e3)``. Basis data for a set of
    elements is produced by :meth:`block`; small meshes keep everything cached.
    """

    def __init__(self, pair: MixedSpacePair, dofmap: DofMap, nq: int | Sequence[int],
                 cache_bytes: float = 1.2e9):
        self.pair = pair
        self.dofmap = dofmap
        nq = (nq,) * 3 if np.isscalar(nq) else tuple(nq)
        self.nq_dir = nq
        rules = [gauss_points(n) for n in nq]
        self.nel = pair.nel
        self.n_elements = int(np.prod(self.nel))
        self._vtab, self._ptab, self._h = [], [], []
        for d in range(3):
            x, _ = rules[d]
            fv, tv = element_tables(pair.velocity.spaces[d], x, 1)
            fp, tp = element_tables(pair.pressure.spaces[d], x, 1)
            br = pair.velocity.spaces[d].knot_vector.breaks
            self._vtab.append((fv, tv))
            self._ptab.append((fp, tp))
            self._h.append(np.diff(br))
        w = [r[1] for r in rules]
        self.qweights = np.einsum("k,j,i->kji", w[2], w[1], w[0]).ravel()
        self.nq = self.qweights.size
        self.nbv = int(np.prod([p + 1 for p in pair.velocity.degrees]))
        self.nbp = int(np.prod([p + 1 for p in pair.pressure.degrees]))
        self.vidx_full = self._connectivity(self._vtab, pair.velocity.shape)
        self.pidx_full = self._connectivity(self._ptab, pair.pressure.shape)
        self.vidx = dofmap.vel_map[self.vidx_full]
        self.pidx = dofmap.pre_map[self.pidx_full]
        per_el = 8.0 * self.nq * (4 * self.nbv + 4 * self.nbp + 4)
        self._cache = None
        if per_el * self.n_elements <= cache_bytes:
            self._cache = self._compute(np.arange(self.n_elements))

    def _split(self, elements: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n1, n2, _ = self.nel
        return elements % n1, (elements // n1) % n2, elements // (n1 * n2)

    def _connectivity(self, tabs, shape) -> np.ndarray:
        e = np.arange(self.n_elements)
        e1, e2, e3 = self._split(e)
        (f1, t1), (f2, t2), (f3, t3) = tabs
        b1 = f1[e1][:, None] + np.arange(t1.shape[-1])
        b2 = f2[e2][:, None] + np.arange(t2.shape[-1])
        b3 = f3[e3][:, None] + np.arange(t3.shape[-1])
        n1, n2, _ = shape
        idx = b1[:, None, None, :] + n1 * (b2[:, None, :, None] + n2 * b3[:, :, None, None])
        return idx.reshape(self.n_elements, -1)

    def _tensor(self, tabs, e1, e2, e3):
        (_, t1), (_, t2), (_, t3) = tabs
        A, B, C = t1[e1], t2[e2], t3[e3]  # (nE, nq, 2, nb)
        nE = e1.size

        def prod(a, b, c):
            return np.einsum("ekz,ejy,eix->ekjizyx", c, b, a).reshape(nE, self.nq, -1)

        N = prod(A[:, :, 0], B[:, :, 0], C[:, :, 0])
        d1 = prod(A[:, :, 1], B[:, :, 0], C[:, :, 0])
        d2 = prod(A[:, :, 0], B[:, :, 1], C[:, :, 0])
        d3 = prod(A[:, :, 0], B[:, :, 0], C[:, :, 1])
        return N, np.stack([d1, d2, d3], axis=-1)

    def _compute(self, elements: np.ndarray) -> dict:
        e1, e2, e3 = self._split(elements)
        Nv, dNv = self._tensor(self._vtab, e1, e2, e3)
        Np, dNp = self._tensor(self._ptab, e1, e2, e3)
        P = self.pair.geometry_cp[self.vidx_full[elements]]  # (nE, nbv, 3)
        X = np.matmul(Nv, P)
        jac = np.einsum("eqbj,ebi->eqij", dNv, P, optimize=True)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            bad = elements[np.nonzero((det <= 0).any(axis=1))[0][0]]
            raise GeometryError(f"nonpositive mapping Jacobian in element {bad}")
        jinv = np.linalg.inv(jac)
        hvol = (self._h[0][e1] * self._h[1][e2] * self._h[2][e3])[:, None]
        wdet = self.qweights[None, :] * det * hvol
        return {
            "elements": elements,
            "vidx": self.vidx[elements],
            "pidx": self.pidx[elements],
            "Nv": Nv,
            "dNv": np.matmul(dNv, jinv),
            "Np": Np,
            "dNp": np.matmul(dNp, jinv),
            "wdet": wdet,
            "X": X,
        }

    def blocks(self, chunk: int = 256):
        """Iterate over element blocks (dicts of arrays)."""
        if self._cache is not None:
            yield self._cache
            return
        for s in range(0, self.n_elements, chunk):
            yield self._compute(np.arange(s, min(s + chunk, self.n_elements)))


def build_mixed_pair(patch: Patch, p: int, a: int, b: int,
                     nel: Sequence[int] | None = None,
                     bcs: Sequence[BoundaryTag] = (), infsup_mode: bool = False,
                     nq: int | None = None) -> tuple[MixedSpacePair, DofMap, ElementTable]:
    """Construct the mixed pair, its DOF map and element tables on ``patch``.

    Pressure: degree ``p`` with maximal regularity capped by the geometric
    regularity at each break. Velocity: degree ``p + a`` with regularity
    raised by ``b`` (capped likewise so the geometry stays representable).
    """
    if a < 1 or b < 0 or b > a:
        raise SplineError("require 1 <= a and 0 <= b <= a")
    if p < 1:
        raise SplineError("pressure degree must be >= 1")
    if nel is not None and tuple(nel) != patch.nel:
        patch = refine_patch(patch, nel)
    for d, s in enumerate(patch.space.spaces):
        if s.degree > p:
            raise GeometryError(f"geometry degree {s.degree} exceeds pressure degree {p} in direction {d}")
    pkv, vkv = [], []
    for d, s in enumerate(patch.space.spaces):
        kv = s.knot_vector
        greg = np.asarray(patch.break_regularity[d], dtype=np.int64)
        reg = np.minimum(p - 1, greg)
        kp = KnotVector.from_breaks(p, kv.breaks, reg)
        pkv.append(kp)
        vkv.append(refine_space(kp, a, b, cap=greg))
    vspace, vcp = patch.represent_in(vkv)
    pspace, pcp = patch.represent_in(pkv)
    pair = MixedSpacePair(vspace, pspace, p, a, b, vcp, pcp)
    dofmap = _build_dofmap(pair, patch, tuple(bcs))
    if nq is None:
        nq = p + a + (2 if infsup_mode else 1)
    table = ElementTable(pair, dofmap, nq)
    return pair, dofmap, table


def _build_dofmap(pair: MixedSpacePair, patch: Patch, tags: tuple[BoundaryTag, ...]) -> DofMap:
    vmap, nv = _seam_map(pair.velocity.shape, patch.seam)
    pmap, npre = _seam_map(pair.pressure.shape, patch.seam)
    fixed = np.zeros((nv, 3), dtype=bool)
    tag_nodes = []
    for tag in tags:
        idx = np.unique(vmap[_face_indices(pair.velocity.shape, tag.face)])
        tag_nodes.append(idx)
        fixed[idx] |= np.asarray(tag.fixed, dtype=bool)
    vel_eq = -np.ones((nv, 3), dtype=np.int64)
    vel_eq[~fixed] = np.arange(int((~fixed).sum()))
    # Greville points of the compact velocity functions.
    R = [basis_matrix(s, s.knot_vector.greville()) for s in pair.velocity.spaces]
    n1, n2, n3 = pair.velocity.shape
    cp = pair.geometry_cp.reshape(n3, n2, n1, 3)
    Xg_full = np.einsum("ck,bj,ai,kjid->cbad", R[2], R[1], R[0], cp, optimize=True).reshape(-1, 3)
    Xg = np.zeros((nv, 3))
    Xg[vmap] = Xg_full
    seam = np.zeros((0, 2), dtype=np.int64)
    if patch.seam:
        full = np.arange(vmap.size)
        n1 = pair.velocity.shape[0]
        slaves = full[full % n1 == n1 - 1]
        seam = np.stack([slaves, slaves - (n1 - 1)], axis=1)
    return DofMap(vmap, pmap, nv, npre, fixed, vel_eq, int((~fixed).sum()), Xg, tags, seam,
                  tuple(tag_nodes))


def mass_matrix(table: ElementTable, which: str = "velocity", density: float = 1.0) -> sp.csr_matrix:
    """Scalar mass matrix on compact indices."""
    rows, cols, vals = [], [], []
    for blk in table.blocks():
        N = blk["Nv"] if which == "velocity" else blk["Np"]
        idx = blk["vidx"] if which == "velocity" else blk["pidx"]
        Me = np.matmul(np.swapaxes(N, 1, 2), N * (blk["wdet"] * density)[..., None])
        nb = idx.shape[1]
        rows.append(np.repeat(idx, nb, axis=1).ravel())
        cols.append(np.tile(idx, (1, nb)).ravel())
        vals.append(Me.ravel())
    n = table.dofmap.n_vel if which == "velocity" else table.dofmap.n_pre
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def l2_project(field: Callable[[np.ndarray], np.ndarray], table: ElementTable,
               which: str = "velocity") -> np.ndarray:
    """L2 projection of ``field(X)`` onto the (compact) velocity or pressure space.

    Returns coefficients of shape ``(n, k)`` for vector fields or ``(n,)`` for scalars.
    """
    M = mass_matrix(table, which)
    rhs = None
    for blk in table.blocks():
        N = blk["Nv"] if which == "velocity" else blk["Np"]
        idx = blk["vidx"] if which == "velocity" else blk["pidx"]
        f = np.asarray(field(blk["X"]), dtype=float)
        scalar = f.ndim == 2
        f = f[..., None] if scalar else f
        fe = np.einsum("eqa,eqk,eq->eak", N, f, blk["wdet"])
        if rhs is None:
            rhs = np.zeros((M.shape[0], f.shape[-1]))
        for k in range(f.shape[-1]):
            rhs[:, k] += np.bincount(idx.ravel(), fe[..., k].ravel(), minlength=M.shape[0])
    try:
        lu = spla.splu(M.tocsc())
    except RuntimeError as exc:
        raise np.linalg.LinAlgError("singular mass matrix") from exc
    c = lu.solve(rhs)
    return c[:, 0] if scalar else c


class KroneckerMass:
    """Velocity mass matrix ``M = M3 (x) M2 (x) M1`` on free equations, for separable geometry.

    When the quadrature weights times the mapping Jacobian factor as
    ``w(xi) = g1(xi1) g2(xi2) g3(xi3)`` the tensor-product rule makes the
    assembled mass matrix a Kronecker product of weighted univariate mass
    matrices. Solves then cost three small dense contractions.
    """

    def __init__(self, factors: list[np.ndarray], scale: float, dofmap: DofMap,
                 shape: tuple[int, int, int]):
        self.scale = scale
        self.n = dofmap.n_vel_eq
        self._comp = []
        n1, n2, n3 = shape
        for i in range(3):
            free = ~dofmap.fixed[:, i].reshape(n3, n2, n1)
            f1, f2, f3 = free.any(axis=(0, 1)), free.any(axis=(0, 2)), free.any(axis=(1, 2))
            if not np.array_equal(free, f3[:, None, None] & f2[None, :, None] & f1[None, None, :]):
                raise ValueError("free set is not a tensor product")
            if not free.any():
                continue
            eq = dofmap.vel_eq[:, i].reshape(n3, n2, n1)[np.ix_(f3, f2, f1)]
            mats = [factors[0][np.ix_(f1, f1)], factors[1][np.ix_(f2, f2)], factors[2][np.ix_(f3, f3)]]
            self._comp.append((eq, mats, [np.linalg.inv(m) for m in mats]))

    @classmethod
    def from_table(cls, table: ElementTable, dofmap: DofMap, density: float = 1.0,
                   rtol: float = 1e-12) -> "KroneckerMass | None":
        """Build from element tables; ``None`` when the weights do not factor."""
        n1e, n2e, n3e = table.nel
        q1, q2, q3 = table.nq_dir
        G = np.empty((table.n_elements, table.nq))
        for blk in table.blocks():
            G[blk["elements"]] = blk["wdet"]
        G = G.reshape(n3e, n2e, n1e, q3, q2, q1).transpose(0, 3, 1, 4, 2, 5)
        G = G.reshape(n3e * q3, n2e * q2, n1e * q1)
        k, j, i = np.unravel_index(np.argmax(np.abs(G)), G.shape)
        G0 = G[k, j, i]
        g = [G[k, j, :], G[k, :, i], G[:, j, i]]
        approx = np.einsum("k,j,i->kji", g[2], g[1], g[0]) / G0**2
        if np.max(np.abs(G - approx)) > rtol * abs(G0):
            return None
        factors = []
        for d in range(3):
            first, tab = table._vtab[d]
            ne, nq, _, nb = tab.shape
            N = tab[:, :, 0, :]
            w = g[d].reshape(ne, nq)
            Me = np.einsum("eqa,eqb,eq->eab", N, N, w)
            idx = first[:, None] + np.arange(nb)
            n = table.pair.velocity.shape[d]
            M = np.zeros((n, n))
            np.add.at(M, (idx[:, :, None], idx[:, None, :]), Me)
            factors.append(M)
        shape = list(table.pair.velocity.shape)
        n1c = dofmap.n_vel // (shape[1] * shape[2])
        if n1c != shape[0]:
            P = np.zeros((n1c, shape[0]))
            P[np.arange(shape[0]) % n1c, np.arange(shape[0])] = 1.0
            factors[0] = P @ factors[0] @ P.T
            shape[0] = n1c
        try:
            return cls(factors, density / G0**2, dofmap, tuple(shape))
        except ValueError:
            return None

    def _apply(self, x: np.ndarray, which: int, scale: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vec = x.ndim == 1
        X = x[:, None] if vec else x
        out = np.zeros_like(X)
        for comp in self._comp:
            eq, mats = comp[0], comp[which]
            Y = np.tensordot(X[eq], mats[0], axes=([2], [1]))  # (m3, m2, r, m1)
            Y = np.tensordot(Y, mats[1], axes=([1], [1]))       # (m3, r, m1, m2)
            Y = np.tensordot(Y, mats[2], axes=([0], [1]))       # (r, m1, m2, m3)
            out[eq] = Y.transpose(3, 2, 1, 0)
        out *= scale
        return out[:, 0] if vec else out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._apply(x, 1, self.scale)

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self._apply(x, 2, 1.0 / self.scale)


class KroneckerSchur:
    """Inverse of ``H = sum_i D_i^T M^-1 D_i`` on an axis-aligned box in the reference state.

    Here ``D_i[A, b] = int dN_A/dX_i M_b``. On a box whose map acts on each
    coordinate separately every term is a Kronecker product of univariate
    matrices, ``H = (L3 P2 P1 + P3 L2 P1 + P3 P2 L1) / rho0``, which is inverted
    by fast diagonalization with the generalized eigenpairs ``L_d V = P_d V Lambda``.
    """

    def __init__(self, V: list[np.ndarray], lam: np.ndarray, density: float):
        self.V = V
        with np.errstate(divide="ignore"):
            inv = np.where(lam > 1e-14 * lam.max(), 1.0 / lam, 0.0)
        self.inv = inv * density

    @classmethod
    def from_table(cls, table: ElementTable, dofmap: DofMap, density: float = 1.0
                   ) -> "KroneckerSchur | None":
        pair = table.pair
        n1, n2, n3 = pair.velocity.shape
        if dofmap.n_vel != n1 * n2 * n3:
            return None
        cp = pair.geometry_cp.reshape(n3, n2, n1, 3)
        lines = [cp[0, 0, :, 0], cp[0, :, 0, 1], cp[:, 0, 0, 2]]
        ref = [lines[0][None, None, :], lines[1][None, :, None], lines[2][:, None, None]]
        scale = np.abs(cp).max()
        for d in range(3):
            if np.abs(cp[..., d] - ref[d]).max() > 1e-12 * scale:
                return None
        free = ~dofmap.fixed.reshape(n3, n2, n1, 3)
        if not (np.array_equal(free[..., 0], free[..., 1]) and np.array_equal(free[..., 0], free[..., 2])):
            return None
        free = free[..., 0]
        fs = [free.any(axis=(0, 1)), free.any(axis=(0, 2)), free.any(axis=(1, 2))]
        if not np.array_equal(free, fs[2][:, None, None] & fs[1][None, :, None] & fs[0][None, None, :]):
            return None
        V, lams = [], []
        for d in range(3):
            fv, tv = table._vtab[d]
            fp, tp = table._ptab[d]
            h = table._h[d]
            ne, nq = tv.shape[:2]
            wq = np.asarray(gauss_points(nq)[1])[None, :] * h[:, None]
            xd = np.einsum("eqb,eb->eq", tv[:, :, 1, :], lines[d][fv[:, None] + np.arange(tv.shape[-1])])
            nv, npd = pair.velocity.shape[d], pair.pressure.shape[d]
            Mm = np.zeros((nv, nv))
            E = np.zeros((nv, npd))
            G = np.zeros((nv, npd))
            iv = fv[:, None] + np.arange(tv.shape[-1])
            ip = fp[:, None] + np.arange(tp.shape[-1])
            N, dN, Mp = tv[:, :, 0, :], tv[:, :, 1, :], tp[:, :, 0, :]
            np.add.at(Mm, (iv[:, :, None], iv[:, None, :]), np.einsum("eqa,eqb,eq->eab", N, N, wq * xd))
            np.add.at(E, (iv[:, :, None], ip[:, None, :]), np.einsum("eqa,eqb,eq->eab", N, Mp, wq * xd))
            np.add.at(G, (iv[:, :, None], ip[:, None, :]), np.einsum("eqa,eqb,eq->eab", dN, Mp, wq))
            f = fs[d]
            Mi = np.linalg.inv(Mm[np.ix_(f, f)])
            Ef, Gf = E[f], G[f]
            P = Ef.T @ Mi @ Ef
            L = Gf.T @ Mi @ Gf
            lam, Vd = sla.eigh(0.5 * (L + L.T), 0.5 * (P + P.T))
            V.append(Vd)
            lams.append(lam)
        total = lams[2][:, None, None] + lams[1][None, :, None] + lams[0][None, None, :]
        return cls(V, total, density)

    def solve(self, r: np.ndarray) -> np.ndarray:
        V1, V2, V3 = self.V
        n1, n2, n3 = V1.shape[0], V2.shape[0], V3.shape[0]
        X = np.asarray(r, dtype=float).reshape(n3, n2, n1)
        X = np.einsum("ck,bj,ai,kji->cba", V3.T, V2.T, V1.T, X, optimize=True)
        X *= self.inv
        X = np.einsum("ck,bj,ai,kji->cba", V3, V2, V1, X, optimize=True)
        return X.ravel()

