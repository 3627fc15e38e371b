"""Energies, momenta and error norms of discrete states, plus CSV emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .assembly import Problem, StateVector
from .materials import isochoric_energy, kinematics

DIAG_COLUMNS = ("t", "ke", "pe", "te", "lx", "ly", "lz", "ax", "ay", "az", "iters", "res0", "resk")


@dataclass
class DiagnosticsRow:
    t: float
    ke: float
    pe: float
    te: float
    lx: float
    ly: float
    lz: float
    ax: float
    ay: float
    az: float
    iters: int = 0
    res0: float = 0.0
    resk: float = 0.0

    @property
    def linear(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz])

    @property
    def angular(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.az])


def kinetic_energy(problem: Problem, v: np.ndarray) -> float:
    """``int rho0 |V|^2 / 2`` with the consistent mass matrix."""
    return 0.5 * float(np.sum(v * (problem.M @ v)))


def potential_energy(problem: Problem, u: np.ndarray) -> float:
    """``int rho0 G_ich(C~)`` by element quadrature."""
    total = 0.0
    for blk in problem.table.blocks():
        ue = u[blk["vidx"]]
        F = np.eye(3) + np.einsum("ebi,eqbj->eqij", ue, blk["dNv"])
        total += float(np.sum(isochoric_energy(problem.material, kinematics(F)) * blk["wdet"]))
    return total


def energies(problem: Problem, state: StateVector) -> tuple[float, float]:
    """Kinetic and potential (isochoric stored) energy in joules."""
    return kinetic_energy(problem, state.v), potential_energy(problem, state.u)


def control_positions(problem: Problem) -> np.ndarray:
    """Referential control points on compact velocity indices."""
    X = np.zeros((problem.dofmap.n_vel, 3))
    X[problem.dofmap.vel_map] = problem.pair.geometry_cp
    return X


def point_displacement(problem: Problem, u: np.ndarray, xi) -> np.ndarray:
    """Displacement at the parametric point ``xi`` of the patch."""
    idx, R = problem.pair.velocity.evaluate(xi, 0)
    return R @ u[problem.dofmap.vel_map[idx]]


def momenta(problem: Problem, state: StateVector) -> tuple[np.ndarray, np.ndarray]:
    """Linear ``int rho0 V`` and angular ``int rho0 phi x V`` momentum, ``phi = X + U``."""
    linear = problem.lumped @ state.v
    Mv = problem.M @ state.v
    phi = control_positions(problem) + state.u
    angular = np.cross(phi, Mv).sum(axis=0)
    return linear, angular


def diagnostics_row(problem: Problem, t: float, state: StateVector, iters: int = 0,
                    res0: float = 0.0, resk: float = 0.0) -> DiagnosticsRow:
    ke, pe = energies(problem, state)
    lin, ang = momenta(problem, state)
    return DiagnosticsRow(t, ke, pe, ke + pe, *lin, *ang, iters, res0, resk)


@dataclass
class ErrorNorms:
    """Displacement and pressure errors; relative unless ``absolute`` is set.

    The pressure seminorm uses referential gradients.
    """

    u_l2: float
    u_h1: float
    p_l2: float
    p_h1: float
    absolute: bool = False


def error_norms(problem: Problem, state: StateVector, t: float,
                U: Callable, gradU: Callable, P: Callable, gradP: Callable,
                relative: bool = True) -> ErrorNorms:
    """Quadrature norms of ``u_h - U`` and ``p_h - P`` on the reference domain.

    When any analytic norm vanishes the absolute norms are returned with
    ``absolute=True``.
    """
    err = np.zeros(4)
    ref = np.zeros(4)
    for blk in problem.table.blocks():
        X, W = blk["X"], blk["wdet"]
        ue = state.u[blk["vidx"]]
        uh = np.einsum("eqb,ebi->eqi", blk["Nv"], ue)
        guh = np.einsum("ebi,eqbj->eqij", ue, blk["dNv"])
        pe_ = state.p[blk["pidx"]]
        ph = np.einsum("eqb,eb->eq", blk["Np"], pe_)
        gph = np.einsum("eb,eqbj->eqj", pe_, blk["dNp"])
        Ua, gUa, Pa, gPa = U(X, t), gradU(X, t), P(X, t), gradP(X, t)
        for k, (h, a) in enumerate(((uh, Ua), (guh, gUa), (ph, Pa), (gph, gPa))):
            ax = tuple(range(2, np.ndim(a)))
            err[k] += np.sum(np.sum((h - a) ** 2, axis=ax) * W)
            ref[k] += np.sum(np.sum(np.asarray(a) ** 2, axis=ax) * W)
    err, ref = np.sqrt(err), np.sqrt(ref)
    if not relative or np.any(ref == 0.0):
        return ErrorNorms(*err, absolute=True)
    return ErrorNorms(*(err / ref), absolute=False)


class DiagnosticsWriter:
    """Streams :class:`DiagnosticsRow` records to a CSV file."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(DIAG_COLUMNS)
        self.rows: list[DiagnosticsRow] = []

    def write(self, row: DiagnosticsRow) -> None:
        self.rows.append(row)
        self._w.writerow([repr(float(getattr(row, f.name))) if f.name != "iters" else row.iters
                          for f in fields(row)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> list[DiagnosticsRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [DiagnosticsRow(**{k: (int(r[k]) if k == "iters" else float(r[k])) for k in DIAG_COLUMNS})
            for r in rows]
