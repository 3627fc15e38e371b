"""Numerical inf-sup test for the mixed velocity/pressure pairs."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import FACES, Patch, clamp, make_cube, make_quarter_cylinder
from .spaces import build_mixed_pair

INFSUP_COLUMNS = ("geometry", "p", "a", "b", "nel", "n_v", "n_p", "beta_h", "status", "seconds")


class DegenerateSpaceError(RuntimeError):
    """Every eigenvalue of the inf-sup pencil is classified as zero."""


@dataclass(frozen=True)
class InfSupProblem:
    """One cell of an inf-sup study on ``geometry`` ("cube", "cylinder" or a :class:`Patch`).

    The velocity space is unconstrained unless ``clamped`` is set, in which
    case every boundary face is fixed and constant pressures form the kernel.
    """

    geometry: object
    p: int
    a: int
    b: int
    nel: int
    zero_tol: float = 1e-10
    clamped: bool = False

    def patch(self) -> Patch:
        if isinstance(self.geometry, Patch):
            return self.geometry
        if self.geometry == "cube":
            return make_cube((1.0, 1.0, 1.0), p=1)
        if self.geometry == "cylinder":
            return make_quarter_cylinder()
        raise ValueError(f"unknown geometry {self.geometry!r}")

    @property
    def name(self) -> str:
        return self.geometry if isinstance(self.geometry, str) else "patch"


@dataclass
class InfSupMatrices:
    D: tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]  # n_v x n_p per direction
    W: sp.csr_matrix  # pressure mass, n_p x n_p
    V: sp.csr_matrix  # scalar H1 Gram on interior velocity functions

    @property
    def n_v(self) -> int:
        return 3 * self.V.shape[0]

    @property
    def n_p(self) -> int:
        return self.W.shape[0]


def assemble_infsup(problem: InfSupProblem) -> InfSupMatrices:
    """Assemble ``D^i_AB = int dN_A/dx_i M_B``, ``W`` and ``V``.

    Integration uses ``p + a + 2`` Gauss points per direction on the
    undeformed configuration.
    """
    pr = problem
    patch = pr.patch()
    pair, dm, table = build_mixed_pair(patch, pr.p, pr.a, pr.b, (pr.nel,) * 3,
                                       [clamp(f) for f in FACES] if pr.clamped else [],
                                       infsup_mode=True)
    interior = np.full(dm.n_vel, -1, dtype=np.int64)
    free = ~dm.fixed[:, 0]
    interior[free] = np.arange(int(free.sum()))
    nv, npre = int(free.sum()), dm.n_pre
    Vr, Vc, Vd = [], [], []
    Dr, Dc, Dd = [], [], [[], [], []]
    Wr, Wc, Wd = [], [], []
    for blk in table.blocks():
        Nv, dN, Np, w = blk["Nv"], blk["dNv"], blk["Np"], blk["wdet"]
        li = interior[blk["vidx"]]
        pidx = blk["pidx"]
        nbv, nbp = li.shape[1], pidx.shape[1]
        Ve = np.einsum("eqa,eqb,eq->eab", Nv, Nv, w) + np.einsum("eqai,eqbi,eq->eab", dN, dN, w)
        Vr.append(np.repeat(li, nbv, axis=1).ravel())
        Vc.append(np.tile(li, (1, nbv)).ravel())
        Vd.append(Ve.ravel())
        De = np.einsum("eqai,eqb,eq->ieab", dN, Np, w)
        Dr.append(np.repeat(li, nbp, axis=1).ravel())
        Dc.append(np.tile(pidx, (1, nbv)).ravel())
        for i in range(3):
            Dd[i].append(De[i].ravel())
        We = np.einsum("eqa,eqb,eq->eab", Np, Np, w)
        Wr.append(np.repeat(pidx, nbp, axis=1).ravel())
        Wc.append(np.tile(pidx, (1, nbp)).ravel())
        Wd.append(We.ravel())

    def build(r, c, d, shape, drop_rows=False):
        r, c, d = np.concatenate(r), np.concatenate(c), np.concatenate(d)
        keep = r >= 0
        if not drop_rows:
            keep &= c >= 0
        return sp.csr_matrix((d[keep], (r[keep], c[keep])), shape=shape)

    V = build(Vr, Vc, Vd, (nv, nv))
    D = tuple(build(Dr, Dc, Dd[i], (nv, npre), drop_rows=True) for i in range(3))
    W = build(Wr, Wc, Wd, (npre, npre))
    return InfSupMatrices(D, W, V)


def infsup_eigenvalues(mats: InfSupMatrices) -> np.ndarray:
    """Eigenvalues of ``sum_i D_i^T V^-1 D_i psi = gamma W psi`` in ascending order."""
    lu = spla.splu(mats.V.tocsc())
    S = np.zeros((mats.n_p, mats.n_p))
    for Di in mats.D:
        Dd = Di.toarray()
        S += Dd.T @ lu.solve(Dd)
    S = 0.5 * (S + S.T)
    return sla.eigh(S, mats.W.toarray(), eigvals_only=True)


def beta_h(problem: InfSupProblem | InfSupMatrices, zero_tol: float | None = None) -> float:
    """Square root of the smallest eigenvalue above ``zero_tol * max eigenvalue``."""
    if isinstance(problem, InfSupProblem):
        zero_tol = problem.zero_tol if zero_tol is None else zero_tol
        mats = assemble_infsup(problem)
    else:
        mats = problem
    zero_tol = 1e-10 if zero_tol is None else zero_tol
    lam = infsup_eigenvalues(mats)
    top = lam[-1]
    if top <= 0:
        raise DegenerateSpaceError("all inf-sup eigenvalues are zero")
    kept = lam[lam > zero_tol * top]
    return float(np.sqrt(kept[0]))


def sweep(cells: Iterable[InfSupProblem], path=None) -> list[dict]:
    """Evaluate every cell; failures are recorded in the ``status`` column."""
    rows = []
    fh = open(path, "w", newline="") if path is not None else None
    try:
        writer = csv.writer(fh) if fh else None
        if writer:
            writer.writerow(INFSUP_COLUMNS)
        for cell in cells:
            t0 = time.perf_counter()
            row = {"geometry": cell.name, "p": cell.p, "a": cell.a, "b": cell.b, "nel": cell.nel,
                   "n_v": 0, "n_p": 0, "beta_h": float("nan"), "status": "ok"}
            try:
                mats = assemble_infsup(cell)
                row["n_v"], row["n_p"] = mats.n_v, mats.n_p
                row["beta_h"] = beta_h(mats, cell.zero_tol)
            except Exception as exc:  # noqa: BLE001 - per-cell failures are data
                row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
            row["seconds"] = time.perf_counter() - t0
            rows.append(row)
            if writer:
                writer.writerow([row[c] if c != "beta_h" else repr(row[c]) for c in INFSUP_COLUMNS])
                fh.flush()
    finally:
        if fh:
            fh.close()
    return rows


def grid(geometry: str, ps: Sequence[int], ab: Sequence[tuple[int, int]],
         nels: Sequence[int] = (2, 4, 8), clamped: bool = False) -> list[InfSupProblem]:
    return [InfSupProblem(geometry, p, a, b, n, clamped=clamped)
            for p in ps for a, b in ab for n in nels]


def classify(rows: Sequence[dict]) -> dict:
    """Stability verdict per (geometry, p, a, b) family from its mesh sequence.

    A family with ``b < a`` is stable when ``min beta_h >= 0.5 beta_h(coarsest)``;
    a family with ``b = a`` is unstable when ``beta_h`` strictly decreases.
    """
    fam: dict = {}
    for r in rows:
        fam.setdefault((r["geometry"], r["p"], r["a"], r["b"]), []).append((r["nel"], r["beta_h"]))
    out = {}
    for key, vals in fam.items():
        vals.sort()
        beta = np.array([v for _, v in vals])
        decreasing = bool(np.all(np.diff(beta) < 0))
        bounded = bool(np.min(beta) >= 0.5 * beta[0])
        out[key] = {"nel": [n for n, _ in vals], "beta_h": beta.tolist(),
                    "bounded": bounded, "decreasing": decreasing,
                    "pass": bounded if key[3] < key[2] else decreasing}
    return out
