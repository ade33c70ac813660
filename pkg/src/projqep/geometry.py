"""Closed convex sets in Euclidean R^n.

Every set supports metric projection, membership and support-function
evaluation.  Sets are immutable once built; all operations are pure.

Available variants: :class:`Box`, :class:`Ball`, :class:`Polytope`,
:class:`Segment`, :class:`Translate`, :class:`MinkowskiSum` and
:class:`Intersection`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DimensionMismatch,
    InfeasibleSet,
    NonConvergence,
    UnboundedSupport,
)

DEFAULT_TOL = 1e-9


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float array, optionally checking its length."""
    v = np.array(x, dtype=float).reshape(-1)
    if v.size == 0:
        raise DimensionMismatch(f"{name} must have at least one coordinate")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries: {v}")
    if dim is not None and v.size != dim:
        raise DimensionMismatch(f"{name} has dimension {v.size}, expected {dim}")
    return v


def _frozen(v):
    v.flags.writeable = False
    return v


class ProjectionResult(NamedTuple):
    point: np.ndarray
    distance: float


class ConvexSet:
    """Common interface of the set variants."""

    dim: int

    def project(self, x, tol=DEFAULT_TOL) -> ProjectionResult:
        x = as_vector(x, self.dim)
        p = self._project(x, tol)
        return ProjectionResult(p, float(np.linalg.norm(x - p)))

    def contains(self, x, tol=DEFAULT_TOL) -> bool:
        return self.project(x, max(tol, DEFAULT_TOL) / 2).distance <= tol

    def contains_many(self, X, tol=DEFAULT_TOL) -> np.ndarray:
        """Row-wise :meth:`contains`."""
        return np.array([self.contains(x, tol) for x in np.atleast_2d(X)], dtype=bool)

    def support(self, direction) -> float:
        d = as_vector(direction, self.dim, "direction")
        if not np.any(d):
            return 0.0
        return float(self._support(d))

    def support_many(self, directions) -> np.ndarray:
        """Support values for each row of ``directions``."""
        D = np.atleast_2d(np.asarray(directions, dtype=float))
        if D.shape[1] != self.dim:
            raise DimensionMismatch(f"directions have dimension {D.shape[1]}, expected {self.dim}")
        return self._support_many(D)

    def _support_many(self, D):
        return np.array([self.support(d) for d in D])

    def bounding_box(self):
        """Tight axis-aligned bounding box ``(lower, upper)``."""
        eye = np.eye(self.dim)
        upper = self.support_many(eye)
        lower = -self.support_many(-eye)
        return lower, upper

    def max_norm(self) -> float:
        """Largest Euclidean norm over the set."""
        raise NotImplementedError(type(self).__name__)

    def _project(self, x, tol):
        raise NotImplementedError

    def _support(self, d):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_vector(self.lower, name="lower")
        hi = as_vector(self.upper, lo.size, name="upper")
        if np.any(lo > hi):
            raise InfeasibleSet(f"box lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dim(self):
        return self.lower.size

    def _project(self, x, tol):
        return np.clip(x, self.lower, self.upper)

    def _support(self, d):
        return np.sum(np.maximum(d * self.lower, d * self.upper))

    def _support_many(self, D):
        return np.sum(np.maximum(D * self.lower, D * self.upper), axis=1)

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def contains_many(self, X, tol=DEFAULT_TOL):
        X = np.atleast_2d(X)
        return np.linalg.norm(X - np.clip(X, self.lower, self.upper), axis=1) <= tol

    def max_norm(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = as_vector(self.center, name="center")
        r = float(self.radius)
        if not np.isfinite(r) or r < 0:
            raise ValueError(f"ball radius must be finite and nonnegative, got {r}")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.size

    def _project(self, x, tol):
        v = x - self.center
        nv = np.linalg.norm(v)
        if nv <= self.radius:
            return x.copy()
        return self.center + (self.radius / nv) * v

    def _support(self, d):
        return self.center @ d + self.radius * np.linalg.norm(d)

    def _support_many(self, D):
        return D @ self.center + self.radius * np.linalg.norm(D, axis=1)

    def contains_many(self, X, tol=DEFAULT_TOL):
        return np.linalg.norm(np.atleast_2d(X) - self.center, axis=1) <= self.radius + tol

    def max_norm(self):
        return float(np.linalg.norm(self.center) + self.radius)


@dataclass(frozen=True, eq=False)
class Segment(ConvexSet):
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_vector(self.a, name="a")
        b = as_vector(self.b, a.size, name="b")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def dim(self):
        return self.a.size

    def _project(self, x, tol):
        d = self.b - self.a
        dd = d @ d
        if dd == 0.0:
            return self.a.copy()
        t = min(1.0, max(0.0, (x - self.a) @ d / dd))
        if t == 0.0:
            return self.a.copy()
        if t == 1.0:
            return self.b.copy()
        return self.a + t * d

    def _support(self, d):
        return max(self.a @ d, self.b @ d)

    def _support_many(self, D):
        return np.maximum(D @ self.a, D @ self.b)

    def max_norm(self):
        return float(max(np.linalg.norm(self.a), np.linalg.norm(self.b)))


class Polytope(ConvexSet):
    """Bounded nonempty polyhedron ``{x : <a_i, x> <= b_i}``.

    Construction runs a phase-1 linear program (Chebyshev centre) and fails
    with :class:`InfeasibleSet` if the inequalities have no common point, or
    with :class:`UnboundedSupport` if the set is unbounded along some axis.

    Projection runs Dykstra's alternating scheme over the half-spaces, then
    polishes the result by solving the KKT system on the detected active
    set.  If the polish does not verify, a primal active-set quadratic solve
    started from the phase-1 point finishes the job.
    """

    def __init__(self, normals, offsets):
        A = np.atleast_2d(np.array(normals, dtype=float))
        b = np.array(offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise DimensionMismatch(f"{A.shape[0]} normals but {b.size} offsets")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("polytope data must be finite")
        norms = np.linalg.norm(A, axis=1)
        zero = norms == 0.0
        if np.any(b[zero] < 0):
            raise InfeasibleSet("a zero normal with negative offset is never satisfied")
        A, b, norms = A[~zero], b[~zero], norms[~zero]
        if A.shape[0] == 0:
            raise UnboundedSupport("polytope has no constraints")
        self.A = _frozen(A)
        self.b = _frozen(b)
        self._norms = _frozen(norms)
        self._center, self._inradius = self._chebyshev_center()
        self._bbox = super().bounding_box()

    @classmethod
    def from_box(cls, lower, upper):
        lo, hi = as_vector(lower), as_vector(upper)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def feasible_point(self):
        return self._center.copy()

    def _chebyshev_center(self):
        m, n = self.A.shape
        # maximise r subject to a_i.x + r |a_i| <= b_i, 0 <= r <= 1e6
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, self._norms[:, None]])
        bounds = [(None, None)] * n + [(0.0, 1e6)]
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=bounds, method="highs")
        if res.status == 2:
            raise InfeasibleSet("polytope inequalities are infeasible")
        if res.status != 0:
            raise InfeasibleSet(f"phase-1 solve failed: {res.message}")
        return res.x[:n], float(res.x[-1])

    def _support(self, d):
        res = linprog(-d, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            raise UnboundedSupport(f"polytope is unbounded in direction {d}")
        if res.status != 0:
            raise NonConvergence(f"support LP failed: {res.message}")
        return -res.fun

    def bounding_box(self):
        lo, hi = self._bbox
        return lo.copy(), hi.copy()

    def _violation(self, x):
        return (self.A @ x - self.b) / self._norms

    def contains(self, x, tol=DEFAULT_TOL):
        x = as_vector(x, self.dim)
        v = np.max(self._violation(x))
        if v <= 0.0:
            return True
        if v > tol:
            return False
        return super().contains(x, tol)

    def contains_many(self, X, tol=DEFAULT_TOL):
        X = np.atleast_2d(X)
        v = np.max((X @ self.A.T - self.b) / self._norms, axis=1)
        out = v <= 0.0
        for i in np.flatnonzero((v > 0.0) & (v <= tol)):
            out[i] = super().contains(X[i], tol)
        return out

    def _project(self, x, tol):
        if np.max(self._violation(x)) <= 0.0:
            return x.copy()
        p = self._dykstra(x, tol)
        if p is not None:
            return p
        return self._active_set(x, tol)

    def _dykstra(self, x, tol, polish_every=4):
        """Dykstra sweeps over the halfspaces; returns a KKT-verified projection or None.

        Alternation alone converges slowly near corners, so every few sweeps the
        halfspaces active at the current iterate are tried as the exact active set.
        None means the sweeps stalled or ran out of budget.
        """
        A, b = self.A, self.b
        m, n = A.shape
        sq = self._norms**2
        z = x.copy()
        incr = np.zeros((m, n))
        steps = []
        for sweep in range(10 * n * m):
            z_prev = z
            for i in range(m):
                y = z + incr[i]
                s = A[i] @ y - b[i]
                p = y - (s / sq[i]) * A[i] if s > 0 else y
                incr[i] = y - p
                z = p
            settled = np.linalg.norm(z - z_prev) <= 0.1 * tol and np.max(self._violation(z)) <= tol
            if settled or sweep % polish_every == polish_every - 1:
                p = self._kkt_polish(x, z, tol)
                if p is not None:
                    return p
            if settled:
                break
            steps.append(np.linalg.norm(z - z_prev))
            if len(steps) > 5 and steps[-1] > 0.95 * steps[-6]:
                break  # stalled: hand over to the active-set solve
        return None

    def _kkt_check(self, x, W, tol):
        AW = self.A[W]
        # projection of x onto the affine hull of the working set
        mu, *_ = np.linalg.lstsq(AW @ AW.T, AW @ x - self.b[W], rcond=None)
        p = x - AW.T @ mu
        scale = 1.0 + np.linalg.norm(x)
        if np.max(self._violation(p)) > 1e-12 * scale:
            return None
        if np.any(mu < -1e-12 * scale):
            return None
        return p

    def _kkt_polish(self, x, z, tol):
        # at most n independent halfspaces are active at the projection; try the
        # tightest ones at z as the working set, smallest first
        slack = -self._violation(z)
        order = np.argsort(slack, kind="stable")
        near = order[slack[order] <= 1e-3 * (1.0 + np.linalg.norm(x))]
        for k in range(1, min(self.dim, near.size) + 1):
            p = self._kkt_check(x, near[:k], tol)
            if p is not None:
                return p
        return None

    def _active_set(self, x, tol):
        A, b = self.A, self.b
        m, n = A.shape
        z = self._center.copy()
        W: list[int] = []
        scale = 1.0 + np.linalg.norm(x)
        for _ in range(50 * (m + n)):
            g = z - x
            if W:
                AW = A[W]
                mu, *_ = np.linalg.lstsq(AW.T, g, rcond=None)
                p = -(g - AW.T @ mu)
            else:
                mu = np.zeros(0)
                p = -g
            if np.linalg.norm(p) <= 1e-13 * scale:
                lam = -mu
                if not W or lam.min() >= -1e-12 * scale:
                    return z
                W.pop(int(np.argmin(lam)))
                continue
            Ap = A @ p
            slack = b - A @ z
            alpha, block = 1.0, None
            for i in range(m):
                if i in W or Ap[i] <= 1e-15 * scale:
                    continue
                ratio = max(slack[i], 0.0) / Ap[i]
                if ratio < alpha:
                    alpha, block = ratio, i
            z = z + alpha * p
            if block is not None:
                W.append(block)
        raise NonConvergence("active-set projection exceeded its iteration budget")

    def vertices(self):
        """Enumerate vertices by intersecting every n-subset of facets."""
        m, n = self.A.shape
        out = []
        for idx in itertools.combinations(range(m), n):
            M = self.A[list(idx)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, self.b[list(idx)])
            if np.max(self._violation(v)) <= 1e-9:
                if not any(np.allclose(v, w, atol=1e-12) for w in out):
                    out.append(v)
        return np.array(out)

    def max_norm(self):
        return float(np.max(np.linalg.norm(self.vertices(), axis=1)))

    def __repr__(self):
        return f"Polytope(A={self.A.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True, eq=False)
class Translate(ConvexSet):
    base: ConvexSet
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", _frozen(as_vector(self.shift, self.base.dim, "shift")))

    @property
    def dim(self):
        return self.base.dim

    def _project(self, x, tol):
        return self.base._project(x - self.shift, tol) + self.shift

    def contains(self, x, tol=DEFAULT_TOL):
        return self.base.contains(as_vector(x, self.dim) - self.shift, tol)

    def contains_many(self, X, tol=DEFAULT_TOL):
        return self.base.contains_many(np.atleast_2d(X) - self.shift, tol)

    def _support(self, d):
        return self.base.support(d) + self.shift @ d

    def _support_many(self, D):
        return self.base.support_many(D) + D @ self.shift

    def bounding_box(self):
        lo, hi = self.base.bounding_box()
        return lo + self.shift, hi + self.shift

    def max_norm(self):
        if isinstance(self.base, Box):
            return Box(self.base.lower + self.shift, self.base.upper + self.shift).max_norm()
        if isinstance(self.base, Ball):
            return Ball(self.base.center + self.shift, self.base.radius).max_norm()
        if isinstance(self.base, Segment):
            return Segment(self.base.a + self.shift, self.base.b + self.shift).max_norm()
        if isinstance(self.base, Polytope):
            return float(np.max(np.linalg.norm(self.base.vertices() + self.shift, axis=1)))
        if isinstance(self.base, Translate):
            return Translate(self.base.base, self.base.shift + self.shift).max_norm()
        raise NotImplementedError(f"max_norm of translated {type(self.base).__name__}")


@dataclass(frozen=True, eq=False)
class MinkowskiSum(ConvexSet):
    """``base + addend`` where the addend is a :class:`Box` or :class:`Ball`."""

    base: ConvexSet
    addend: ConvexSet

    def __post_init__(self):
        if not isinstance(self.addend, (Box, Ball)):
            raise TypeError("MinkowskiSum addend must be a Box or a Ball")
        if self.addend.dim != self.base.dim:
            raise DimensionMismatch("MinkowskiSum operands differ in dimension")

    @property
    def dim(self):
        return self.base.dim

    def _project(self, x, tol):
        ad = self.addend
        if isinstance(ad, Ball):
            p = self.base._project(x - ad.center, tol) + ad.center
            v = x - p
            nv = np.linalg.norm(v)
            if nv <= ad.radius:
                return x.copy()
            return p + (ad.radius / nv) * v
        if isinstance(self.base, Box):
            return np.clip(x, self.base.lower + ad.lower, self.base.upper + ad.upper)
        # block coordinate descent on ||x - k - u||^2 over k in base, u in box
        u = np.clip(x - self.base._project(x, tol), ad.lower, ad.upper)
        for _ in range(100_000):
            k = self.base._project(x - u, tol)
            u_new = np.clip(x - k, ad.lower, ad.upper)
            if np.linalg.norm(u_new - u) <= 0.01 * tol:
                return k + u_new
            u = u_new
        raise NonConvergence("Minkowski-sum projection did not settle")

    def _support(self, d):
        return self.base.support(d) + self.addend.support(d)

    def _support_many(self, D):
        return self.base.support_many(D) + self.addend.support_many(D)

    def max_norm(self):
        if isinstance(self.addend, Ball):
            return Translate(self.base, self.addend.center).max_norm() + self.addend.radius
        corners = itertools.product(*zip(self.addend.lower, self.addend.upper))
        return max(Translate(self.base, np.array(c)).max_norm() for c in corners)


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    """Intersection of two sets.

    When ``first`` is a box whose lower corner is the centre of the ball
    ``second`` and whose upper corner is out of the ball's reach, the set is
    a shifted orthant cut by a ball; projection is then exact (clamp to the
    orthant, then pull into the ball).  Otherwise Dykstra's alternating
    projection is used.
    """

    first: ConvexSet
    second: ConvexSet

    def __post_init__(self):
        if self.first.dim != self.second.dim:
            raise DimensionMismatch("Intersection operands differ in dimension")

    @property
    def dim(self):
        return self.first.dim

    @property
    def is_orthant_ball(self):
        f, s = self.first, self.second
        return (
            isinstance(f, Box)
            and isinstance(s, Ball)
            and np.array_equal(f.lower, s.center)
            and bool(np.all(f.upper >= s.center + s.radius))
        )

    def _project(self, x, tol):
        if self.is_orthant_ball:
            return self.second._project(np.maximum(x, self.first.lower), tol)
        return self.project_dykstra(x, tol).point

    def project_dykstra(self, x, tol=DEFAULT_TOL, max_sweeps=100_000):
        x = as_vector(x, self.dim)
        z = x.copy()
        p_inc = np.zeros_like(x)
        q_inc = np.zeros_like(x)
        for _ in range(max_sweeps):
            y = self.first._project(z + p_inc, tol)
            p_inc = z + p_inc - y
            z_new = self.second._project(y + q_inc, tol)
            q_inc = y + q_inc - z_new
            if np.linalg.norm(z_new - z) <= 0.01 * tol and np.linalg.norm(z_new - y) <= tol:
                return ProjectionResult(z_new, float(np.linalg.norm(x - z_new)))
            z = z_new
        raise NonConvergence("Dykstra projection onto intersection did not converge")

    def _support(self, d):
        if self.is_orthant_ball:
            c, r = self.second.center, self.second.radius
            return c @ d + r * np.linalg.norm(np.maximum(d, 0.0))
        if isinstance(self.second, Ball):
            return self._ball_cut_support(d)
        A, b = _halfspaces(self.first)
        A2, b2 = _halfspaces(self.second)
        return Polytope(np.vstack([A, A2]), np.concatenate([b, b2])).support(d)

    def _ball_cut_support(self, d, iters=200):
        # max <d, z> - lam (|z - c|^2 - r^2) over z in first is attained at
        # P_first(c + d / (2 lam)); its distance to c falls as lam grows, and
        # the optimal lam puts that point on the sphere.
        c, r = self.second.center, self.second.radius

        def point(lam):
            return self.first._project(c + d / (2.0 * lam), DEFAULT_TOL)

        lo, hi = -30.0, 30.0  # log10 of lam
        if np.linalg.norm(point(10.0**lo) - c) <= r:
            return self.first.support(d)
        if np.linalg.norm(point(10.0**hi) - c) > r + DEFAULT_TOL:
            raise InfeasibleSet("intersection is empty")
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(point(10.0**mid) - c) > r:
                lo = mid
            else:
                hi = mid
        return float(d @ point(10.0**hi))

    def max_norm(self):
        if self.is_orthant_ball:
            c, r = self.second.center, self.second.radius
            if np.all(c >= 0):
                return float(np.linalg.norm(c) + r)
            raise NotImplementedError("max_norm of an orthant-ball cut away from the origin")
        A, b = _halfspaces(self.first)
        A2, b2 = _halfspaces(self.second)
        return Polytope(np.vstack([A, A2]), np.concatenate([b, b2])).max_norm()


def _halfspaces(s):
    if isinstance(s, Polytope):
        return s.A, s.b
    if isinstance(s, Box):
        n = s.dim
        eye = np.eye(n)
        return np.vstack([eye, -eye]), np.concatenate([s.upper, -s.lower])
    if isinstance(s, Translate):
        A, b = _halfspaces(s.base)
        return A, b + A @ s.shift
    raise NotImplementedError(f"{type(s).__name__} is not polyhedral")


def project(cset: ConvexSet, x, tol=DEFAULT_TOL) -> ProjectionResult:
    """Nearest point of ``cset`` to ``x`` and the distance to it."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return cset.project(x, tol)


def contains(cset: ConvexSet, x, tol=DEFAULT_TOL) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return cset.contains(x, tol)


def support_value(cset: ConvexSet, direction) -> float:
    """``sup { <direction, z> : z in cset }``."""
    return cset.support(direction)


def grid_points(cset: ConvexSet, resolution, tol=DEFAULT_TOL):
    """Lattice points of the set at spacing ``resolution``, in lexicographic order.

    The lattice is anchored at the lower corner of the bounding box and
    filtered by membership.  Segments (and translated segments) are sampled
    along their own parametrisation instead, so that slanted segments are
    not missed by the lattice.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    seg, shift = cset, np.zeros(cset.dim)
    while isinstance(seg, Translate):
        shift = shift + seg.shift
        seg = seg.base
    if isinstance(seg, Segment):
        length = np.linalg.norm(seg.b - seg.a)
        k = int(np.ceil(length / resolution - 1e-9)) if length > 0 else 0
        t = np.arange(k + 1) / max(k, 1)
        pts = seg.a + t[:, None] * (seg.b - seg.a) + shift
        return pts[np.lexsort(pts.T[::-1])]
    lo, hi = cset.bounding_box()
    axes = []
    for l, h in zip(lo, hi):
        k = int(np.floor((h - l) / resolution + 1e-9))
        axes.append(l + resolution * np.arange(k + 1))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cset.dim)
    return mesh[cset.contains_many(mesh, tol)]
