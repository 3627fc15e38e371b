"""Univariate and tensor-product B-spline / NURBS spaces.

Basis functions are evaluated span by span with the Cox-de Boor recursion and
the knot-difference derivative formula. Refinement helpers build the
velocity/pressure knot vectors of the mixed spaces and transfer functions
between nested (or function-containing) spline spaces by interpolation at
Greville abscissae.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class SplineError(ValueError):
    """Invalid spline input (domain, knot vector or weights)."""


class KnotVector:
    """Open, nondecreasing knot vector on [0, 1].

    Parameters
    ----------
    degree : int
        Polynomial degree ``p >= 0``.
    knots : array_like
        Nondecreasing knots with first knot 0 and last knot 1, each end
        repeated ``p + 1`` times.
    """

    __slots__ = ("degree", "knots", "breaks", "multiplicities")

    def __init__(self, degree: int, knots: Sequence[float]):
        degree = int(degree)
        knots = np.array(knots, dtype=float)
        if degree < 0:
            raise SplineError("degree must be nonnegative")
        if knots.ndim != 1 or knots.size < 2 * (degree + 1):
            raise SplineError("too few knots for the degree")
        if np.any(np.diff(knots) < 0):
            raise SplineError("knots must be nondecreasing")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise SplineError("knots must start at 0 and end at 1")
        breaks, mult = np.unique(knots, return_counts=True)
        if mult[0] != degree + 1 or mult[-1] != degree + 1:
            raise SplineError("knot vector must be open (end multiplicity p+1)")
        if np.any(mult[1:-1] > max(degree, 1)):
            raise SplineError("interior multiplicity exceeds the degree")
        knots.flags.writeable = False
        breaks.flags.writeable = False
        mult.flags.writeable = False
        self.degree = degree
        self.knots = knots
        self.breaks = breaks
        self.multiplicities = mult

    @classmethod
    def uniform(cls, degree: int, nel: int, regularity: int | None = None) -> "KnotVector":
        """Open knot vector with ``nel`` equal spans and uniform interior regularity."""
        if regularity is None:
            regularity = degree - 1
        interior = np.arange(1, nel) / nel
        return cls.from_breaks(degree, np.r_[0.0, interior, 1.0],
                               np.full(nel - 1, regularity, dtype=int))

    @classmethod
    def from_breaks(cls, degree: int, breaks: Sequence[float],
                    regularity: Sequence[int]) -> "KnotVector":
        """Build from distinct breaks and the regularity at each interior break."""
        breaks = np.asarray(breaks, dtype=float)
        regularity = np.asarray(regularity, dtype=int)
        if regularity.size != breaks.size - 2:
            raise SplineError("one regularity value per interior break expected")
        mult = degree - regularity
        if np.any(mult < 1) or np.any(mult > degree):
            raise SplineError("interior regularity must lie in [0, p-1]")
        knots = np.concatenate([np.zeros(degree + 1)]
                               + [np.full(m, z) for z, m in zip(breaks[1:-1], mult)]
                               + [np.ones(degree + 1)])
        return cls(degree, knots)

    @property
    def dimension(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def regularity(self) -> np.ndarray:
        """Regularity vector, ``-1`` at both ends."""
        return self.degree - self.multiplicities

    @property
    def nspans(self) -> int:
        return self.breaks.size - 1

    def span_starts(self) -> np.ndarray:
        """Knot index ``i`` with ``knots[i] < knots[i+1]`` for each nonempty span."""
        idx = np.nonzero(np.diff(self.knots) > 0)[0]
        return idx

    def find_span(self, x: float) -> int:
        """Knot index of the span containing ``x`` (left-limit span at ``x = 1``)."""
        if not (0.0 <= x <= 1.0):
            raise SplineError(f"parameter {x!r} outside [0, 1]")
        p, U = self.degree, self.knots
        n = self.dimension
        if x >= U[n]:
            return n - 1
        return int(np.searchsorted(U, x, side="right") - 1)

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages), one per basis function."""
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        U = self.knots
        return np.array([U[i + 1:i + p + 1].mean() for i in range(self.dimension)])

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, KnotVector) and other.degree == self.degree
                and np.array_equal(other.knots, self.knots))

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self) -> str:
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


def eval_bspline(kv: KnotVector, x: float, max_deriv: int = 0) -> tuple[int, np.ndarray]:
    """Nonzero B-spline basis functions and derivatives at ``x``.

    Returns
    -------
    span : int
        Knot span index; the nonzero functions are ``span - p .. span``.
    ders : ndarray, shape (max_deriv + 1, p + 1)
        ``ders[k, j]`` is the k-th derivative of ``N_{span-p+j}``.
    """
    span = kv.find_span(x)
    return span, _ders_basis(kv.knots, kv.degree, span, float(x), max_deriv)


def _ders_basis(U: np.ndarray, p: int, span: int, x: float, nd: int) -> np.ndarray:
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nd + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, min(nd, p) + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, min(nd, p) + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


@dataclass(frozen=True, eq=False)
class UnivariateSpace:
    """Spline space on one parametric direction; rational when weights differ from 1."""

    knot_vector: KnotVector
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.knot_vector.dimension
        w = np.ones(n) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (n,):
            raise SplineError(f"expected {n} weights, got shape {w.shape}")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise SplineError("weights must be positive")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def dimension(self) -> int:
        return self.knot_vector.dimension

    @property
    def is_rational(self) -> bool:
        return bool(np.any(self.weights != self.weights[0]))


def eval_nurbs(space: UnivariateSpace, x: float, max_deriv: int = 0) -> tuple[int, np.ndarray]:
    """Rational basis functions ``R_i = w_i N_i / sum_j w_j N_j`` and derivatives.

    Same layout as :func:`eval_bspline`.
    """
    if max_deriv > 2:
        raise SplineError("rational derivatives implemented up to order 2")
    span, N = eval_bspline(space.knot_vector, x, max_deriv)
    return span, _rationalize(N, space.weights[span - space.degree:span + 1])


def _rationalize(N: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply the quotient rule to B-spline derivative rows ``N`` (last axis = functions)."""
    wN = N * w
    W = wN.sum(axis=-1, keepdims=True)
    R = np.empty_like(N)
    R[..., 0, :] = wN[..., 0, :] / W[..., 0, :]
    nd = N.shape[-2] - 1
    if nd >= 1:
        R[..., 1, :] = (wN[..., 1, :] - R[..., 0, :] * W[..., 1, :]) / W[..., 0, :]
    if nd >= 2:
        R[..., 2, :] = (wN[..., 2, :] - 2.0 * R[..., 1, :] * W[..., 1, :]
                        - R[..., 0, :] * W[..., 2, :]) / W[..., 0, :]
    return R


def basis_matrix(space: UnivariateSpace | KnotVector, x: Sequence[float],
                 deriv: int = 0) -> np.ndarray:
    """Dense matrix ``B[k, i]`` of the ``deriv``-th derivative of basis ``i`` at ``x[k]``."""
    if isinstance(space, KnotVector):
        space = UnivariateSpace(space)
    p = space.degree
    x = np.atleast_1d(np.asarray(x, dtype=float))
    B = np.zeros((x.size, space.dimension))
    for k, xk in enumerate(x):
        span, R = eval_nurbs(space, float(xk), deriv)
        B[k, span - p:span + 1] = R[deriv]
    return B


def element_tables(space: UnivariateSpace, points: np.ndarray, nderiv: int = 1
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Basis tables on every nonempty span.

    Parameters
    ----------
    points : ndarray, shape (nq,)
        Reference points in [0, 1] mapped affinely onto each span.

    Returns
    -------
    first : ndarray, shape (nspans,)
        Index of the first nonzero basis function on each span.
    values : ndarray, shape (nspans, nq, nderiv + 1, p + 1)
        Basis values and parametric derivatives.
    """
    kv = space.knot_vector
    p = kv.degree
    starts = kv.span_starts()
    first = starts - p
    out = np.empty((starts.size, points.size, nderiv + 1, p + 1))
    for e, s in enumerate(starts):
        a, b = kv.knots[s], kv.knots[s + 1]
        for q, t in enumerate(points):
            out[e, q] = _ders_basis(kv.knots, p, s, a + (b - a) * t, nderiv)
    w = space.weights
    idx = first[:, None] + np.arange(p + 1)
    out = _rationalize(out, w[idx][:, None, None, :]) if space.is_rational else out
    return first, out


def refine_space(pressure_kv: KnotVector, a: int, b: int,
                 cap: Sequence[int] | None = None) -> KnotVector:
    """Velocity knot vector of degree ``p + a`` and interior regularity ``alpha + b``.

    Parameters
    ----------
    cap : sequence of int, optional
        Upper bound on the regularity at each interior break (used where the
        geometry itself has lower continuity, e.g. the C0 junctions of the
        annulus).
    """
    if a < 1 or b < 0 or b > a:
        raise SplineError("require 1 <= a and 0 <= b <= a")
    p = pressure_kv.degree
    reg = pressure_kv.regularity[1:-1] + b
    if cap is not None:
        reg = np.minimum(reg, np.asarray(cap, dtype=int))
    if np.any(reg > p + a - 1):
        raise SplineError("velocity regularity would exceed degree - 1")
    return KnotVector.from_breaks(p + a, pressure_kv.breaks, reg)


def h_refine(kv: KnotVector, n_splits: int, regularity: int | None = None) -> KnotVector:
    """Split every nonempty span into ``n_splits`` equal spans.

    Existing knots keep their multiplicity; new knots get regularity
    ``regularity`` (default ``p - 1``).
    """
    if n_splits < 1:
        raise SplineError("n_splits must be >= 1")
    p = kv.degree
    if regularity is None:
        regularity = p - 1
    new = [kv.breaks[0]]
    reg = []
    for i in range(kv.nspans):
        z0, z1 = kv.breaks[i], kv.breaks[i + 1]
        for k in range(1, n_splits):
            new.append(z0 + (z1 - z0) * k / n_splits)
            reg.append(regularity)
        new.append(z1)
        if i + 1 < kv.nspans:
            reg.append(kv.regularity[i + 1])
    return KnotVector.from_breaks(p, new, reg)


def transfer_matrix(src: KnotVector, dst: KnotVector) -> np.ndarray:
    """Coefficient map ``T`` with ``sum_i c_i N_i^src = sum_j (T c)_j N_j^dst``.

    Computed by interpolation at the Greville abscissae of ``dst``. Exact when
    the source functions lie in the destination space; otherwise it is the
    interpolant, and callers check representability where it matters.
    """
    g = dst.greville()
    Bd = basis_matrix(dst, g)
    Bs = basis_matrix(src, g)
    return np.linalg.solve(Bd, Bs)


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """Trivariate tensor-product space; index ``A = i1 + n1*(i2 + n2*i3)``."""

    spaces: tuple[UnivariateSpace, UnivariateSpace, UnivariateSpace]

    def __post_init__(self) -> None:
        if len(self.spaces) != 3:
            raise SplineError("a tensor space needs three directions")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(s.dimension for s in self.spaces)

    @property
    def dimension(self) -> int:
        n1, n2, n3 = self.shape
        return n1 * n2 * n3

    @property
    def degrees(self) -> tuple[int, int, int]:
        return tuple(s.degree for s in self.spaces)

    @property
    def weights(self) -> np.ndarray:
        """Product weights, flattened with direction 1 fastest."""
        w1, w2, w3 = (s.weights for s in self.spaces)
        return np.einsum("k,j,i->kji", w3, w2, w1).ravel()

    def evaluate(self, xi: Sequence[float], max_deriv: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Global indices and values/gradients of the nonzero basis at ``xi``.

        Returns
        -------
        idx : ndarray, shape (nb,)
        vals : ndarray, shape (nb,) if ``max_deriv == 0`` else (4, nb)
            Row 0 holds values, rows 1..3 the parametric partial derivatives.
        """
        spans, tabs = [], []
        for s, x in zip(self.spaces, xi):
            span, R = eval_nurbs(s, float(x), max_deriv)
            spans.append(np.arange(span - s.degree, span + 1))
            tabs.append(R)
        n1, n2, _ = self.shape
        i1, i2, i3 = spans
        idx = (i1[None, None, :] + n1 * (i2[None, :, None] + n2 * i3[:, None, None])).ravel()
        R1, R2, R3 = tabs
        val = np.einsum("k,j,i->kji", R3[0], R2[0], R1[0]).ravel()
        if max_deriv == 0:
            return idx, val
        d1 = np.einsum("k,j,i->kji", R3[0], R2[0], R1[1]).ravel()
        d2 = np.einsum("k,j,i->kji", R3[0], R2[1], R1[0]).ravel()
        d3 = np.einsum("k,j,i->kji", R3[1], R2[0], R1[0]).ravel()
        return idx, np.stack([val, d1, d2, d3])
