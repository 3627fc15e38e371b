"""NURBS patches for the benchmark domains and evaluation of the geometric map."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .splines import (KnotVector, TensorSpace, UnivariateSpace, h_refine,
                      transfer_matrix)

# Regularity marker for breaks where the geometry is smooth (inserted knots).
SMOOTH = 10**6

FACES = {
    "xi1_min": (0, 0), "xi1_max": (0, 1),
    "xi2_min": (1, 0), "xi2_max": (1, 1),
    "xi3_min": (2, 0), "xi3_max": (2, 1),
}


class GeometryError(ValueError):
    """Degenerate or unrepresentable geometry."""


@dataclass(frozen=True, eq=False)
class Patch:
    """Single NURBS patch ``psi: (0,1)^3 -> Omega_X``.

    Attributes
    ----------
    space : TensorSpace
    control_points : ndarray, shape (n, 3)
        Ordered with direction 1 fastest.
    break_regularity : tuple of ndarray
        Geometric regularity at the interior breaks of each direction.
        Knots inserted by refinement carry ``SMOOTH``; the spaces built on the
        patch never exceed these values.
    seam : bool
        True when the faces ``xi1 = 0`` and ``xi1 = 1`` coincide and are glued.
    """

    space: TensorSpace
    control_points: np.ndarray
    break_regularity: tuple = field(default=None)
    seam: bool = False

    def __post_init__(self) -> None:
        cp = np.array(self.control_points, dtype=float)
        if cp.shape != (self.space.dimension, 3):
            raise GeometryError(f"expected {self.space.dimension} control points, got {cp.shape}")
        cp.flags.writeable = False
        object.__setattr__(self, "control_points", cp)
        if self.break_regularity is None:
            reg = tuple(np.asarray(s.knot_vector.regularity[1:-1]) for s in self.space.spaces)
            object.__setattr__(self, "break_regularity", reg)

    @property
    def weights(self) -> np.ndarray:
        return self.space.weights

    @property
    def nel(self) -> tuple[int, int, int]:
        return tuple(s.knot_vector.nspans for s in self.space.spaces)

    def represent_in(self, kvs: Sequence[KnotVector], check: bool = True
                     ) -> tuple[TensorSpace, np.ndarray]:
        """Express the geometry in a tensor space on the knot vectors ``kvs``.

        Weights and homogeneous control points are interpolated at Greville
        points, which is exact whenever the map lies in the target space.
        """
        T = [transfer_matrix(s.knot_vector, kv) for s, kv in zip(self.space.spaces, kvs)]
        spaces = tuple(UnivariateSpace(kv, Td @ s.weights)
                       for kv, Td, s in zip(kvs, T, self.space.spaces))
        target = TensorSpace(spaces)
        n1, n2, n3 = self.space.shape
        hom = (self.control_points * self.weights[:, None]).reshape(n3, n2, n1, 3)
        hom = np.einsum("ck,bj,ai,kjid->cbad", T[2], T[1], T[0], hom, optimize=True)
        cp = hom.reshape(-1, 3) / target.weights[:, None]
        if check:
            rng = np.random.default_rng(0)
            for xi in rng.random((8, 3)):
                x0 = map_geometry(self, xi, check=False)[0]
                idx, val = target.evaluate(xi, 0)
                if np.max(np.abs(val @ cp[idx] - x0)) > 1e-9 * (1 + np.abs(x0).max()):
                    raise GeometryError("geometry is not representable in the requested space")
        return target, cp


def map_geometry(patch: Patch, xi: Sequence[float], check: bool = True
                 ) -> tuple[np.ndarray, np.ndarray, float]:
    """Evaluate ``X = psi(xi)``, ``dX/dxi`` (``[i, j] = dX_i/dxi_j``) and its determinant."""
    idx, R = patch.space.evaluate(xi, 1)
    P = patch.control_points[idx]
    X = R[0] @ P
    jac = (R[1:] @ P).T
    det = float(np.linalg.det(jac))
    if check and det <= 0:
        raise GeometryError(f"nonpositive Jacobian determinant {det:g} at xi={tuple(xi)}")
    return X, jac, det


def refine_patch(patch: Patch, nel: Sequence[int]) -> Patch:
    """Uniformly split every span so that direction ``d`` has ``nel[d]`` spans."""
    kvs, regs = [], []
    for d, (s, n) in enumerate(zip(patch.space.spaces, nel)):
        kv = s.knot_vector
        if n % kv.nspans:
            raise GeometryError(f"nel[{d}]={n} is not a multiple of the {kv.nspans} existing spans")
        m = n // kv.nspans
        new = h_refine(kv, m)
        old_reg = dict(zip(kv.breaks[1:-1].tolist(), patch.break_regularity[d].tolist()))
        regs.append(np.array([old_reg.get(z, SMOOTH) for z in new.breaks[1:-1].tolist()],
                             dtype=np.int64))
        kvs.append(new)
    space, cp = patch.represent_in(kvs)
    return Patch(space, cp, tuple(regs), patch.seam)


def _tensor_net(points_1: np.ndarray, f: Callable[[int, int, int], np.ndarray],
                shape: tuple[int, int, int]) -> np.ndarray:
    n1, n2, n3 = shape
    return np.array([f(i, j, k) for k in range(n3) for j in range(n2) for i in range(n1)])


def make_cube(lengths: Sequence[float] = (1.0, 1.0, 1.0), p: int = 1,
              nel: Sequence[int] = (1, 1, 1)) -> Patch:
    """Box ``[0, L1] x [0, L2] x [0, L3]`` of degree ``p`` with ``nel`` spans per direction."""
    if p < 1:
        raise GeometryError("degree must be >= 1")
    lin = KnotVector(1, [0, 0, 1, 1])
    base = TensorSpace((UnivariateSpace(lin),) * 3)
    L = np.asarray(lengths, dtype=float)
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], float) * L
    coarse = Patch(base, corners, tuple(np.zeros(0, np.int64) for _ in range(3)))
    kvs = [KnotVector.uniform(p, n) for n in nel]
    space, cp = coarse.represent_in(kvs)
    regs = tuple(np.full(n - 1, SMOOTH, dtype=np.int64) for n in nel)
    return Patch(space, cp, regs)


_ARC_W = np.sqrt(0.5)


def make_quarter_cylinder(Ri: float = 0.5, Ro: float = 1.5, H: float = 1.0,
                          nel: Sequence[int] = (1, 1, 1)) -> Patch:
    """90 degree annular sector; directions are (circumferential, radial, axial).

    The arc runs clockwise from the +Y axis to the +X axis so that the
    parametrization is positively oriented.
    """
    if not 0 < Ri < Ro or H <= 0:
        raise GeometryError("require 0 < Ri < Ro and H > 0")
    circ = UnivariateSpace(KnotVector(2, [0, 0, 0, 1, 1, 1]), [1.0, _ARC_W, 1.0])
    lin = UnivariateSpace(KnotVector(1, [0, 0, 1, 1]))
    dirs = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    radii, heights = (Ri, Ro), (0.0, H)
    cp = _tensor_net(dirs, lambda i, j, k: np.r_[radii[j] * dirs[i], heights[k]], (3, 2, 2))
    coarse = Patch(TensorSpace((circ, lin, lin)), cp,
                   tuple(np.zeros(0, np.int64) for _ in range(3)))
    return refine_patch(coarse, nel)


def make_annulus_disk(Ri: float = 0.5, Ro: float = 1.5, H: float = 1.0,
                      nel: Sequence[int] = (32, 4, 4)) -> Patch:
    """Full annulus from four C0-joined quadratic quarter arcs, seam at angle 0."""
    if nel[0] % 4:
        raise GeometryError("circumferential element count must be divisible by 4")
    if not 0 < Ri < Ro or H <= 0:
        raise GeometryError("require 0 < Ri < Ro and H > 0")
    kv = KnotVector(2, [0, 0, 0, .25, .25, .5, .5, .75, .75, 1, 1, 1])
    unit = [np.array([np.cos(-k * np.pi / 2), np.sin(-k * np.pi / 2)]) for k in range(5)]
    dirs, w = [], []
    for k in range(4):
        dirs += [unit[k], unit[k] + unit[k + 1]]
        w += [1.0, _ARC_W]
    dirs.append(unit[4])
    w.append(1.0)
    dirs = np.round(np.array(dirs), 15)
    circ = UnivariateSpace(kv, w)
    lin = UnivariateSpace(KnotVector(1, [0, 0, 1, 1]))
    radii, heights = (Ri, Ro), (0.0, H)
    cp = _tensor_net(dirs, lambda i, j, k: np.r_[radii[j] * dirs[i], heights[k]], (9, 2, 2))
    coarse = Patch(TensorSpace((circ, lin, lin)), cp,
                   (np.zeros(3, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)),
                   seam=True)
    return refine_patch(coarse, nel)


@dataclass(frozen=True)
class DeadLoad:
    """Referential traction ``H`` (Pa), constant over the face or a parametric box of it.

    ``box`` holds ``((lo, hi), (lo, hi))`` for the two face coordinates in
    increasing direction order.
    """

    vector: tuple[float, float, float]
    box: tuple | None = None


@dataclass(frozen=True)
class AnalyticTraction:
    """Referential traction ``H(X, t, N)``; ``X`` and the outward normal ``N`` have shape (..., 3)."""

    func: Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class BoundaryTag:
    """Boundary condition on one parametric face.

    Attributes
    ----------
    face : str
        One of ``FACES``.
    fixed : tuple of bool
        Dirichlet mask for the three displacement/velocity components.
    g, dgdt : callable, optional
        Prescribed displacement and its rate, ``(X, t) -> (..., 3)``. Zero when omitted.
    traction : DeadLoad | AnalyticTraction | None
    ramp : float, optional
        Ramp time for dead loads; the load is scaled by ``min(t / ramp, 1)``.
    """

    face: str
    fixed: tuple[bool, bool, bool] = (False, False, False)
    g: Callable | None = None
    dgdt: Callable | None = None
    traction: DeadLoad | AnalyticTraction | None = None
    ramp: float | None = None

    def __post_init__(self) -> None:
        if self.face not in FACES:
            raise GeometryError(f"unknown face {self.face!r}; expected one of {sorted(FACES)}")
        if self.traction is not None and all(self.fixed):
            raise GeometryError(f"traction on face {self.face} where every component is fixed")


def clamp(face: str) -> BoundaryTag:
    return BoundaryTag(face, (True, True, True))
