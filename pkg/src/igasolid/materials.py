"""Isochoric hyperelastic models, deviatoric stresses and consistent tangents.

All functions broadcast over leading axes: a deformation gradient array of
shape ``(..., 3, 3)`` yields stresses of the same shape and fourth-order
tensors of shape ``(..., 3, 3, 3, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

_I = np.eye(3)
# Symmetric fourth-order identity.
_II = 0.5 * (np.einsum("ik,jl->ijkl", _I, _I) + np.einsum("il,jk->ijkl", _I, _I))


class ElementInversionError(ArithmeticError):
    """Nonpositive Jacobian determinant of the deformation gradient."""


def _ddot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ij->...", A, B)


def _outer(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...kl->...ijkl", A, B)


def _odot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Symmetrized product ``(A . B)_ijkl = (A_ik B_jl + A_il B_jk) / 2``."""
    return 0.5 * (np.einsum("...ik,...jl->...ijkl", A, B) + np.einsum("...il,...jk->...ijkl", A, B))


@dataclass(frozen=True)
class DeformationState:
    """Kinematic quantities derived from ``F`` (see :func:`kinematics`)."""

    F: np.ndarray
    J: np.ndarray
    C: np.ndarray
    Cinv: np.ndarray
    C_bar: np.ndarray
    F_bar: np.ndarray
    I1_bar: np.ndarray
    I2_bar: np.ndarray


def kinematics(F: np.ndarray) -> DeformationState:
    """Distortional kinematics ``C~ = J^(-2/3) C``, ``F~ = J^(-1/3) F`` and invariants."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise ElementInversionError(f"det F <= 0 (min {np.min(J):g})")
    C = np.einsum("...ki,...kj->...ij", F, F)
    Cinv = np.linalg.inv(C)
    s = J[..., None, None] ** (-2.0 / 3.0)
    Cb = s * C
    I1 = np.trace(Cb, axis1=-2, axis2=-1)
    I2 = 0.5 * (I1**2 - _ddot(Cb, Cb))
    return DeformationState(F, J, C, Cinv, Cb, J[..., None, None] ** (-1.0 / 3.0) * F, I1, I2)


@dataclass(frozen=True)
class NeoHookean:
    c1: float
    rho0: float = 1.0

    def energy(self, Cb: np.ndarray) -> np.ndarray:
        return 0.5 * self.c1 * (np.trace(Cb, axis1=-2, axis2=-1) - 3.0)

    def stress(self, Cb: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.c1 * _I, Cb.shape).copy()

    def tangent(self, Cb: np.ndarray) -> np.ndarray:
        return np.zeros(Cb.shape[:-2] + (3, 3, 3, 3))


@dataclass(frozen=True)
class MooneyRivlin:
    c1: float
    c2: float
    rho0: float = 1.0

    def energy(self, Cb: np.ndarray) -> np.ndarray:
        I1 = np.trace(Cb, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1**2 - _ddot(Cb, Cb))
        return 0.5 * self.c1 * (I1 - 3.0) + 0.5 * self.c2 * (I2 - 3.0)

    def stress(self, Cb: np.ndarray) -> np.ndarray:
        I1 = np.trace(Cb, axis1=-2, axis2=-1)
        return self.c1 * _I + self.c2 * (I1[..., None, None] * _I - Cb)

    def tangent(self, Cb: np.ndarray) -> np.ndarray:
        t = 2.0 * self.c2 * (np.einsum("ij,kl->ijkl", _I, _I) - _II)
        return np.broadcast_to(t, Cb.shape[:-2] + (3, 3, 3, 3)).copy()


@dataclass(frozen=True)
class GOH:
    """Neo-Hookean ground matrix plus two dispersed exponential fiber families.

    Fibers contribute only in tension (``E_i > 0``) unless ``tension_only`` is False.
    """

    c1: float
    k1: float
    k2: float
    kd: float
    fibers: tuple = ((1.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    rho0: float = 1.0
    tension_only: bool = True
    _H: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.kd <= 1.0 / 3.0:
            raise ValueError("kd must lie in [0, 1/3]")
        H = []
        for a in self.fibers:
            a = np.asarray(a, dtype=float)
            if abs(np.linalg.norm(a) - 1.0) > 1e-12:
                raise ValueError("fiber directions must be unit vectors")
            H.append(self.kd * _I + (1.0 - 3.0 * self.kd) * np.outer(a, a))
        object.__setattr__(self, "_H", np.array(H))

    @property
    def structure_tensors(self) -> np.ndarray:
        return self._H.copy()

    def _E(self, Cb: np.ndarray) -> np.ndarray:
        E = np.einsum("fij,...ij->...f", self._H, Cb) - 1.0
        active = (E > 0) if self.tension_only else np.ones_like(E, dtype=bool)
        return E, active

    def energy(self, Cb: np.ndarray) -> np.ndarray:
        E, on = self._E(Cb)
        fib = np.where(on, self.k1 / (2.0 * self.k2) * np.expm1(self.k2 * E**2), 0.0)
        return 0.5 * self.c1 * (np.trace(Cb, axis1=-2, axis2=-1) - 3.0) + fib.sum(-1)

    def stress(self, Cb: np.ndarray) -> np.ndarray:
        E, on = self._E(Cb)
        coef = np.where(on, 2.0 * self.k1 * E * np.exp(self.k2 * E**2), 0.0)
        return self.c1 * _I + np.einsum("...f,fij->...ij", coef, self._H)

    def tangent(self, Cb: np.ndarray) -> np.ndarray:
        E, on = self._E(Cb)
        coef = np.where(on, 4.0 * self.k1 * np.exp(self.k2 * E**2) * (1.0 + 2.0 * self.k2 * E**2), 0.0)
        HH = np.einsum("fij,fkl->fijkl", self._H, self._H)
        return np.einsum("...f,fijkl->...ijkl", coef, HH)


MaterialModel = Union[NeoHookean, MooneyRivlin, GOH]


@dataclass(frozen=True)
class Incompressible:
    pass


@dataclass(frozen=True)
class ExponentialBulk:
    kappa: float

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ValueError("bulk modulus must be positive")


VolumetricModel = Union[Incompressible, ExponentialBulk]


def isochoric_energy(m: MaterialModel, s: DeformationState) -> np.ndarray:
    """Stored energy ``rho0 G_ich`` per reference volume (Pa)."""
    return m.energy(s.C_bar)


def fictitious_stress(m: MaterialModel, s: DeformationState) -> np.ndarray:
    """``S~ = 2 d(rho0 G_ich)/dC~``."""
    return m.stress(s.C_bar)


def pk2_deviatoric(m: MaterialModel, s: DeformationState) -> np.ndarray:
    """Deviatoric second Piola-Kirchhoff stress ``J^(-2/3) (S~ - (S~:C) C^-1 / 3)``."""
    St = m.stress(s.C_bar)
    tr = _ddot(St, s.C)[..., None, None]
    return s.J[..., None, None] ** (-2.0 / 3.0) * (St - tr / 3.0 * s.Cinv)


def deviatoric_cauchy(m: MaterialModel, s: DeformationState) -> np.ndarray:
    """``sigma_dev = J^-1 F S_dev F^T`` (trace free)."""
    S = pk2_deviatoric(m, s)
    return np.einsum("...ik,...kl,...jl->...ij", s.F, S, s.F) / s.J[..., None, None]


def material_tangent(m: MaterialModel, s: DeformationState) -> np.ndarray:
    """``2 dS_dev/dC`` with minor and major symmetries."""
    St = m.stress(s.C_bar)
    Ct = m.tangent(s.C_bar)
    Ci = s.Cinv
    trS = _ddot(St, s.C)[..., None, None, None, None]
    j23 = s.J[..., None, None, None, None] ** (-2.0 / 3.0)
    left = _II - _outer(Ci, s.C) / 3.0
    right = _II - _outer(s.C, Ci) / 3.0
    iso = np.einsum("...ijab,...abcd,...cdkl->...ijkl", left, Ct, right)
    geo = (-(_outer(St, Ci) + _outer(Ci, St)) / 3.0
           + trS / 9.0 * _outer(Ci, Ci) + trS / 3.0 * _odot(Ci, Ci))
    return 2.0 * j23 * geo + j23**2 * iso


def density_and_beta(v: VolumetricModel, p: float | np.ndarray, rho0: float):
    """Density ``rho(p)`` and isothermal compressibility ``beta(p)``."""
    if isinstance(v, ExponentialBulk):
        return rho0 * np.exp(np.asarray(p) / v.kappa), np.full_like(np.asarray(p, float), 1.0 / v.kappa)
    return np.full_like(np.asarray(p, float), rho0), np.zeros_like(np.asarray(p, float))


def density_from_J(J: np.ndarray, rho0: float) -> np.ndarray:
    """Mass conservation ``rho = rho0 / J``."""
    return rho0 / np.asarray(J)


def first_piola_deviatoric(m: MaterialModel, F: np.ndarray) -> np.ndarray:
    """``P_dev = J sigma_dev F^-T = F S_dev``."""
    s = kinematics(F)
    return np.einsum("...ik,...kj->...ij", s.F, pk2_deviatoric(m, s))


def stress_and_moduli(m: MaterialModel, F: np.ndarray, p: np.ndarray, want_moduli: bool = True):
    """Total first Piola stress ``F S_dev - p cof F`` and its derivative ``dP/dF``.

    Returns
    -------
    P : ndarray (..., 3, 3)
    A : ndarray (..., 3, 3, 3, 3) or None
        ``A[i, J, k, L] = dP_iJ / dF_kL``.
    cof : ndarray (..., 3, 3)
        ``J F^-T``.
    Finv : ndarray (..., 3, 3)
    """
    if isinstance(m, NeoHookean):
        return _neo_hookean_moduli(m, np.asarray(F, dtype=float), np.asarray(p), want_moduli)
    s = kinematics(F)
    S = pk2_deviatoric(m, s)
    Finv = np.linalg.inv(s.F)
    J = s.J[..., None, None]
    cof = J * np.swapaxes(Finv, -1, -2)
    p = np.asarray(p)[..., None, None]
    P = np.einsum("...ik,...kj->...ij", s.F, S) - p * cof
    if not want_moduli:
        return P, None, cof, Finv
    Cm = material_tangent(m, s)
    A = np.einsum("ik,...jl->...ijkl", _I, S)
    A += np.einsum("...im,...mjlq,...kq->...ijkl", s.F, Cm, s.F)
    pJ = (p * J)[..., None, None]
    A -= pJ * (np.einsum("...ji,...lk->...ijkl", Finv, Finv) - np.einsum("...li,...jk->...ijkl", Finv, Finv))
    return P, A, cof, Finv


def material_tangent_fd(m: MaterialModel, s: DeformationState, h: float = 1e-6) -> np.ndarray:
    """Central-difference fallback for ``2 dS_dev/dC`` at a single state."""
    C = s.C
    out = np.zeros((3, 3, 3, 3))
    for k in range(3):
        for l in range(k, 3):
            E = np.zeros((3, 3))
            E[k, l] = E[l, k] = 1.0
            sp = _state_from_C(C + h * E)
            sm = _state_from_C(C - h * E)
            d = (pk2_deviatoric(m, sp) - pk2_deviatoric(m, sm)) / (2 * h)
            if k == l:
                out[..., k, l] = 2 * d
            else:
                out[..., k, l] = out[..., l, k] = d
    return out


def _state_from_C(C: np.ndarray) -> DeformationState:
    """State with ``F = C^(1/2)`` (symmetric root); stresses depending only on C agree."""
    w, V = np.linalg.eigh(C)
    F = (V * np.sqrt(w)) @ V.T
    return kinematics(F)


def cofactor(F: np.ndarray) -> np.ndarray:
    """``cof F = J F^-T`` from the 2x2 minors of ``F``."""
    out = np.empty(np.shape(F))
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            out[..., i, j] = F[..., i1, j1] * F[..., i2, j2] - F[..., i1, j2] * F[..., i2, j1]
    return out


def first_piola(m: MaterialModel, F: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total first Piola stress ``F S_dev - p cof F`` and ``cof F`` without matrix inverses.

    Uses ``F S_dev = J^(-2/3) (F S~ - (S~:C) / 3 F^-T)``.
    """
    F = np.asarray(F, dtype=float)
    cof = cofactor(F)
    J = np.einsum("...i,...i->...", F[..., :, 0], cof[..., :, 0])
    if np.any(J <= 0):
        raise ElementInversionError(f"det F <= 0 (min {np.min(J):g})")
    if isinstance(m, NeoHookean):
        FS = m.c1 * F
        trSC = m.c1 * _ddot(F, F)
    else:
        C = np.einsum("...ki,...kj->...ij", F, F)
        St = m.stress(J[..., None, None] ** (-2.0 / 3.0) * C)
        FS = F @ St
        trSC = _ddot(St, C)
    Jm = J[..., None, None]
    a = np.cbrt(Jm) ** -2
    P = a * FS - (a * trSC[..., None, None] / (3.0 * Jm) + np.asarray(p)[..., None, None]) * cof
    return P, cof


def _neo_hookean_moduli(m: NeoHookean, F: np.ndarray, p: np.ndarray, want_moduli: bool):
    """Closed-form :func:`stress_and_moduli` for the Neo-Hookean model.

    With ``a = J^(-2/3)``, ``G = F^-T`` and ``I1 = F:F``:
    ``P = c1 a (F - I1/3 G) - p J G``.
    """
    cof = cofactor(F)
    J = np.einsum("...i,...i->...", F[..., :, 0], cof[..., :, 0])
    if np.any(J <= 0):
        raise ElementInversionError(f"det F <= 0 (min {np.min(J):g})")
    Jm = J[..., None, None]
    G = cof / Jm
    a = Jm ** (-2.0 / 3.0)
    I1 = _ddot(F, F)[..., None, None]
    pm = p[..., None, None]
    dev = F - I1 / 3.0 * G
    P = m.c1 * a * dev - pm * cof
    Finv = np.swapaxes(G, -1, -2)
    if not want_moduli:
        return P, None, cof, Finv
    c1a = (m.c1 * a)[..., None, None]
    GG = _outer(G, G)
    GGx = np.einsum("...iL,...kJ->...iJkL", G, G)
    A = -(2.0 / 3.0) * c1a * _outer(dev, G)
    A += c1a * (np.einsum("ik,JL->iJkL", _I, _I) - (2.0 / 3.0) * _outer(G, F) + I1[..., None, None] / 3.0 * GGx)
    A -= (pm * Jm)[..., None, None] * (GG - GGx)
    return P, A, cof, Finv
