"""Bifunctions, set-valued operators, constraint maps and their moduli."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm, qmc

from .errors import (
    DegenerateSamples,
    DimensionMismatch,
    InvalidBifunction,
    OutsideDomain,
)
from .geometry import (
    Ball,
    Box,
    ConvexSet,
    Segment,
    Translate,
    as_vector,
)


def singleton_point(cset: ConvexSet):
    """The unique element of ``cset`` if it is a single point, else ``None``."""
    if isinstance(cset, Ball) and cset.radius == 0.0:
        return cset.center.copy()
    if isinstance(cset, Box) and np.array_equal(cset.lower, cset.upper):
        return cset.lower.copy()
    if isinstance(cset, Segment) and np.array_equal(cset.a, cset.b):
        return cset.a.copy()
    if isinstance(cset, Translate):
        p = singleton_point(cset.base)
        return None if p is None else p + cset.shift
    return None


class Bifunction:
    """A real function ``f(x, y)`` on R^n x R^n with ``f(x, x) = 0``."""

    dim: int
    # exact strong-monotonicity modulus, when known analytically
    monotonicity: Optional[float] = None
    # f(z, .) is affine for every z
    affine_in_y = False

    def __call__(self, x, y) -> float:
        x = as_vector(x, self.dim)
        y = as_vector(y, self.dim, "y")
        return float(self._eval(x, y))

    def _eval(self, x, y):
        raise NotImplementedError

    def linear_part(self, z):
        """Vector ``g`` with ``f(z, y) = <g, y - z>`` for all y, or ``None``."""
        return None

    def matrix(self, Z, Y):
        """``M[i, j] = f(Z[i], Y[j])``."""
        Z = np.atleast_2d(Z)
        Y = np.atleast_2d(Y)
        return np.array([[self._eval(z, y) for y in Y] for z in Z])

    def check_diagonal(self, points, tol=1e-12):
        """Raise :class:`InvalidBifunction` unless ``f(x, x) = 0`` on ``points``."""
        for p in np.atleast_2d(points):
            v = self(p, p)
            if abs(v) > tol:
                raise InvalidBifunction(f"f(x, x) = {v} != 0 at x = {p.tolist()}")


class VIBifunction(Bifunction):
    """``f(x, y) = <F(x), y - x>`` for a vector field ``F``."""

    affine_in_y = True

    def __init__(self, F: Callable, dim: int, monotonicity: Optional[float] = None, name="F"):
        self.F = F
        self.dim = int(dim)
        self.monotonicity = monotonicity
        self.name = name

    @classmethod
    def identity(cls, dim):
        # <x, y - x> + <y, x - y> = -|x - y|^2, so the modulus is exactly 1
        return cls(lambda x: x, dim, monotonicity=1.0, name="identity")

    def field(self, x):
        return as_vector(self.F(x), self.dim, "F(x)")

    def _eval(self, x, y):
        return self.field(x) @ (y - x)

    def linear_part(self, z):
        return self.field(z)

    def matrix(self, Z, Y):
        Z = np.atleast_2d(Z)
        Y = np.atleast_2d(Y)
        G = np.array([self.field(z) for z in Z])
        return G @ Y.T - np.sum(G * Z, axis=1)[:, None]

    def __repr__(self):
        return f"VIBifunction({self.name}, dim={self.dim})"


class CoordinateDifference(Bifunction):
    """``f(x, y) = y_k - x_k`` for the coordinate ``k`` counted from 1."""

    affine_in_y = True

    def __init__(self, index: int, dim: int):
        if not 1 <= index <= dim:
            raise DimensionMismatch(f"coordinate {index} out of range 1..{dim}")
        self.index = int(index)
        self.dim = int(dim)
        self._k = self.index - 1

    def _eval(self, x, y):
        return y[self._k] - x[self._k]

    def linear_part(self, z):
        g = np.zeros(self.dim)
        g[self._k] = 1.0
        return g

    def matrix(self, Z, Y):
        Z = np.atleast_2d(Z)
        Y = np.atleast_2d(Y)
        return Y[:, self._k][None, :] - Z[:, self._k][:, None]

    def __repr__(self):
        return f"CoordinateDifference({self.index}, dim={self.dim})"


class CustomBifunction(Bifunction):
    def __init__(self, func: Callable, dim: int, name="custom"):
        self.func = func
        self.dim = int(dim)
        self.name = name

    def _eval(self, x, y):
        return self.func(x, y)

    def __repr__(self):
        return f"CustomBifunction({self.name}, dim={self.dim})"


@dataclass(frozen=True)
class SetValuedOperator:
    """``T: R^n => R^n`` whose values are bounded convex sets."""

    eval_set: Callable[[np.ndarray], ConvexSet]
    dim: int

    def __call__(self, x) -> ConvexSet:
        x = as_vector(x, self.dim)
        s = self.eval_set(x)
        if s.dim != self.dim:
            raise DimensionMismatch(f"T(x) has dimension {s.dim}, expected {self.dim}")
        return s

    def modulus(self, z) -> float:
        """``h(z) = sup { |v| : v in T(z) }``."""
        return self(z).max_norm()

    def check_bounded(self, points):
        eye = np.eye(self.dim)
        for p in np.atleast_2d(points):
            vals = self(p).support_many(np.vstack([eye, -eye]))
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"T({p.tolist()}) is unbounded")


def gt_eval(T: SetValuedOperator, x, y) -> float:
    """Representative bifunction ``sup { <v, y - x> : v in T(x) }``."""
    x = as_vector(x, T.dim)
    y = as_vector(y, T.dim, "y")
    return T(x).support(y - x)


class OperatorSupBifunction(Bifunction):
    """The representative bifunction of a set-valued operator."""

    def __init__(self, T: SetValuedOperator):
        self.T = T
        self.dim = T.dim

    def _eval(self, x, y):
        return self.T(x).support(y - x)

    def linear_part(self, z):
        return singleton_point(self.T(z))

    def matrix(self, Z, Y):
        Z = np.atleast_2d(Z)
        Y = np.atleast_2d(Y)
        return np.array([self.T(z).support_many(Y - z) for z in Z])

    def __repr__(self):
        return f"OperatorSupBifunction(dim={self.dim})"


def bifunction_eval(f: Bifunction, x, y) -> float:
    return f(x, y)


@dataclass(frozen=True)
class ConstraintMap:
    """Parametric constraint ``x -> Phi(x)`` defined on the set ``domain``.

    ``lipschitz`` records an analytically known Lipschitz modulus (in the
    Hausdorff sense) when there is one.
    """

    eval_set: Callable[[np.ndarray], ConvexSet]
    domain: ConvexSet
    lipschitz: Optional[float] = None
    name: str = "Phi"

    @property
    def dim(self):
        return self.domain.dim

    def __call__(self, x, tol=1e-7) -> ConvexSet:
        return constraint_eval(self, x, tol)


def constraint_eval(cmap: ConstraintMap, x, tol=1e-7) -> ConvexSet:
    x = as_vector(x, cmap.dim)
    # the formula goes first so that singular points report UndefinedAtPoint
    s = cmap.eval_set(x)
    if not cmap.domain.contains(x, tol):
        raise OutsideDomain(f"{x.tolist()} is not in the domain of {cmap.name}")
    if s.dim != cmap.dim:
        raise DimensionMismatch(f"{cmap.name}(x) has dimension {s.dim}, expected {cmap.dim}")
    return s


@dataclass(frozen=True)
class Estimate:
    value: float
    exact: bool


@dataclass(frozen=True)
class ProblemConstants:
    """Moduli of the contraction corollary.

    ``L`` Lipschitz modulus of the constraint map, ``m`` strong monotonicity
    of ``f``, ``R`` quadratic modulus of ``f`` in its second argument and
    ``h_sup`` its linear modulus.
    """

    L: Estimate
    m: Estimate
    R: Estimate
    h_sup: Estimate

    @property
    def all_exact(self):
        return all(e.exact for e in (self.L, self.m, self.R, self.h_sup))


def direction_net(dim, per_dim=64):
    """Deterministic set of ``per_dim * dim`` unit vectors.

    Equally spaced angles in the plane; in higher dimension the coordinate
    axes followed by an unscrambled Halton sequence pushed through the normal
    quantile function and normalised.
    """
    count = per_dim * dim
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    eye = np.eye(dim)
    halton = qmc.Halton(d=dim, scramble=False)
    halton.fast_forward(1)
    g = norm.ppf(halton.random(count - 2 * dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return np.vstack([eye, -eye, g])


def sample_point(cset: ConvexSet, rng: np.random.Generator):
    """Uniform draw in the bounding box, projected onto the set."""
    lo, hi = cset.bounding_box()
    return cset.project(lo + (hi - lo) * rng.random(cset.dim)).point


def estimate_lipschitz(func, points):
    """Largest ``|func(a) - func(b)| / |a - b|`` over pairs of ``points``."""
    P = np.atleast_2d(points)
    V = np.array([np.asarray(func(p), dtype=float).reshape(-1) for p in P])
    best = 0.0
    for i in range(len(P)):
        dx = np.linalg.norm(P[i + 1 :] - P[i], axis=1)
        dv = np.linalg.norm(V[i + 1 :] - V[i], axis=1)
        ok = dx > 1e-12
        if np.any(ok):
            best = max(best, float(np.max(dv[ok] / dx[ok])))
    return best


def estimate_constants(
    f: Bifunction,
    cmap: ConstraintMap,
    sample_count: int = 32,
    seed: int = 0,
    per_dim: int = 64,
) -> ProblemConstants:
    """Sampled estimates of ``L``, ``m``, ``R`` and ``h_sup``.

    Points ``x_i`` are drawn from the domain and, right after each, one point
    ``u_i`` from ``Phi(x_i)``, with numpy's PCG64 generator seeded by
    ``seed``.  The draws for ``sample_count = k`` are a prefix of those for
    any larger count, so ``L``, ``R`` and ``h_sup`` can only grow and ``m``
    can only shrink as the count increases.

    A modulus is flagged exact only when it is known analytically
    (``cmap.lipschitz``, ``f.monotonicity``); everything else is an estimate
    that can refute but never certify the corresponding hypothesis.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    rng = np.random.default_rng(seed)
    xs, us, sets = [], [], []
    for _ in range(sample_count):
        x = sample_point(cmap.domain, rng)
        phi = constraint_eval(cmap, x)
        xs.append(x)
        sets.append(phi)
        us.append(sample_point(phi, rng))
    X = np.array(xs)
    U = np.array(us)

    dX = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    dU = np.linalg.norm(U[:, None, :] - U[None, :, :], axis=2)
    iu = np.triu_indices(sample_count, 1)
    if not np.any(dX[iu] > 1e-12) or not np.any(dU[iu] > 1e-12):
        raise DegenerateSamples("all sampled pairs coincide")

    if cmap.lipschitz is not None:
        L = Estimate(float(cmap.lipschitz), True)
    else:
        D = direction_net(cmap.dim, per_dim)
        S = np.array([s.support_many(D) for s in sets])
        # excess of Phi(x_i) over Phi(x_j): max over directions of the support gap
        excess = np.max(S[:, None, :] - S[None, :, :], axis=2)
        ok = dX > 1e-12
        L = Estimate(float(np.max(np.maximum(excess[ok], 0.0) / dX[ok])), False)

    F = f.matrix(U, U)
    okU = dU > 1e-12
    if f.monotonicity is not None:
        m = Estimate(float(f.monotonicity), True)
    else:
        sym = F + F.T
        m = Estimate(float(max(0.0, -np.max(sym[okU] / dU[okU] ** 2))), False)

    # |f(u_i, u_j) - f(u_i, u_l)| over pairs (j, l) with u_j != u_l
    diff = np.abs(F[:, :, None] - F[:, None, :])
    mask = np.broadcast_to(okU, diff.shape)
    R = Estimate(float(np.max(diff[mask] / np.broadcast_to(dU**2, diff.shape)[mask])), False)
    h = Estimate(float(np.max(diff[mask] / np.broadcast_to(dU, diff.shape)[mask])), False)
    return ProblemConstants(L=L, m=m, R=R, h_sup=h)

