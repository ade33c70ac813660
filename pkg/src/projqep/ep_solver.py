"""Inner equilibrium problems ``EP(f, K)`` on a compact convex set."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DimensionTooHigh,
    EmptyConstraint,
    InnerBudgetExceeded,
    NoMethodApplicable,
)
from .geometry import ConvexSet, as_vector, grid_points
from .problems import Bifunction, VIBifunction, estimate_lipschitz, sample_point

GRID_MAX_DIM = 4


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    EXTRAGRADIENT = "Extragradient"
    GRID_ORACLE = "GridOracle"


@dataclass(frozen=True)
class InnerConfig:
    epsilon_inner: float = 1e-7
    max_inner_iterations: int = 10_000
    step_size: float = 0.5
    grid_resolution: float = 0.01
    # "auto", "closed_form", "extragradient" or "grid"
    method: str = "auto"
    allow_grid: bool = True
    membership_tol: float = 1e-7

    def __post_init__(self):
        for name in ("epsilon_inner", "step_size", "grid_resolution", "membership_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_inner_iterations < 1:
            raise ValueError("max_inner_iterations must be at least 1")
        if self.method not in ("auto", "closed_form", "extragradient", "grid"):
            raise ValueError(f"unknown inner method {self.method!r}")


@dataclass(frozen=True)
class EPSolution:
    point: np.ndarray
    residual: float
    method: Method
    inner_iterations: int


def _linear_residual(g, K, z):
    # inf_{y in K} <g, y - z>
    return min(0.0, -K.support(-g) - float(g @ z))


def _grid_min(f: Bifunction, Z, Y, chunk=2048):
    """``min_j f(Z[i], Y[j])`` for every row of ``Z``."""
    if f.affine_in_y and len(Y) > Y.shape[1] + 1:
        # a linear function attains its minimum over a finite set at a hull vertex
        try:
            Y = Y[ConvexHull(Y).vertices]
        except (QhullError, ValueError):
            pass
    out = np.empty(len(Z))
    for s in range(0, len(Z), chunk):
        out[s : s + chunk] = f.matrix(Z[s : s + chunk], Y).min(axis=1)
    return out


def ep_residual(f: Bifunction, K: ConvexSet, z, cfg: InnerConfig = InnerConfig()) -> float:
    """``inf { f(z, y) : y in K }``; nonnegative exactly when ``z`` solves ``EP(f, K)``.

    Exact (via the support function of ``K``) when ``f(z, .)`` is affine.
    Otherwise the infimum is taken over the grid of ``K`` at
    ``cfg.grid_resolution``, which over-estimates the true value by at most
    the resolution times the modulus of ``f(z, .)``.
    """
    z = as_vector(z, K.dim)
    g = f.linear_part(z)
    if g is not None:
        return _linear_residual(as_vector(g, K.dim), K, z)
    if K.dim > GRID_MAX_DIM:
        raise DimensionTooHigh(f"grid residual limited to dimension {GRID_MAX_DIM}")
    Y = grid_points(K, cfg.grid_resolution)
    if len(Y) == 0:
        raise EmptyConstraint("grid of the constraint set is empty")
    return min(0.0, float(_grid_min(f, z[None, :], Y)[0]))


def grid_ep_oracle(f: Bifunction, K: ConvexSet, grid_resolution: float) -> EPSolution:
    """Brute force: the grid point of ``K`` with the best grid residual.

    Ties are broken by lexicographic point order, so the answer does not
    depend on evaluation order.
    """
    if K.dim > GRID_MAX_DIM:
        raise DimensionTooHigh(f"grid oracle limited to dimension {GRID_MAX_DIM}")
    pts = grid_points(K, grid_resolution)
    if len(pts) == 0:
        raise EmptyConstraint("grid of the constraint set is empty")
    pts = pts[np.lexsort(pts.T[::-1])]
    res = np.minimum(_grid_min(f, pts, pts), 0.0)
    best = int(np.flatnonzero(res == res.max())[0])
    return EPSolution(pts[best].copy(), float(res[best]), Method.GRID_ORACLE, len(pts))


def solve_vi_extragradient(F, K: ConvexSet, cfg: InnerConfig = InnerConfig()) -> EPSolution:
    """Korpelevich extragradient iteration for the VI of ``F`` over ``K``.

    The step is ``min(cfg.step_size, 0.9 / L_F)`` where ``L_F`` is a sampled
    Lipschitz estimate of ``F`` on ``K``.
    """
    eps = cfg.epsilon_inner

    def field(z):
        return as_vector(F(z), K.dim, "F(z)")

    z = K.project(np.zeros(K.dim)).point
    rng = np.random.default_rng(0)
    samples = np.array([z] + [sample_point(K, rng) for _ in range(16)])
    L_F = estimate_lipschitz(field, samples)
    tau = cfg.step_size if L_F == 0 else min(cfg.step_size, 0.9 / L_F)

    for k in range(1, cfg.max_inner_iterations + 1):
        y = K.project(z - tau * field(z)).point
        z_new = K.project(z - tau * field(y)).point
        if np.linalg.norm(z_new - z) <= eps / 10:
            r = _linear_residual(field(z_new), K, z_new)
            if r >= -eps:
                return EPSolution(z_new, r, Method.EXTRAGRADIENT, k)
        z = z_new
    raise InnerBudgetExceeded(f"extragradient did not reach residual {eps} in {cfg.max_inner_iterations} steps")


def _select(f, cfg, closed_form):
    if cfg.method == "closed_form":
        if closed_form is None:
            raise NoMethodApplicable("closed form requested but none provided")
        return Method.CLOSED_FORM
    if cfg.method == "extragradient":
        if not isinstance(f, VIBifunction):
            raise NoMethodApplicable("extragradient needs a VI-form bifunction")
        return Method.EXTRAGRADIENT
    if cfg.method == "grid":
        return Method.GRID_ORACLE
    if closed_form is not None:
        return Method.CLOSED_FORM
    if isinstance(f, VIBifunction):
        return Method.EXTRAGRADIENT
    if cfg.allow_grid:
        return Method.GRID_ORACLE
    raise NoMethodApplicable(f"no inner method for {f!r} without a closed form")


def solve_ep(
    f: Bifunction,
    K: ConvexSet,
    cfg: InnerConfig = InnerConfig(),
    closed_form=None,
    x=None,
) -> EPSolution:
    """Solve ``EP(f, K)``.

    ``closed_form(x)`` supplies the solution directly when the instance
    knows it; ``x`` is the outer point it is evaluated at.  Without one, VI
    bifunctions go to extragradient and everything else to the grid oracle.
    """
    if K is None:
        raise EmptyConstraint("constraint set is missing")
    method = _select(f, cfg, closed_form)
    eps = cfg.epsilon_inner

    if method is Method.CLOSED_FORM:
        z = as_vector(closed_form(x), K.dim, "closed-form solution")
        if not K.contains(z, cfg.membership_tol):
            raise InnerBudgetExceeded(f"closed-form point {z.tolist()} is not in the constraint set")
        r = ep_residual(f, K, z, cfg)
        slack = 0.0 if f.linear_part(z) is not None else _grid_slack(f, K, z, cfg)
        if r < -eps - slack:
            raise InnerBudgetExceeded(f"closed-form point has residual {r}")
        return EPSolution(z, r, Method.CLOSED_FORM, 0)

    if method is Method.EXTRAGRADIENT:
        return solve_vi_extragradient(f.field, K, cfg)

    sol = grid_ep_oracle(f, K, cfg.grid_resolution)
    if sol.residual < -eps - _grid_slack(f, K, sol.point, cfg):
        raise InnerBudgetExceeded(f"best grid point has residual {sol.residual}")
    return sol


def _grid_slack(f, K, z, cfg):
    """Allowance for grid discretisation: resolution times a local modulus of f(z, .)."""
    Y = grid_points(K, cfg.grid_resolution)
    d = np.linalg.norm(Y - z, axis=1)
    ok = d > 1e-12
    if not np.any(ok):
        return 0.0
    h = float(np.max(np.abs(f.matrix(z[None, :], Y[ok])[0]) / d[ok]))
    return cfg.grid_resolution * np.sqrt(K.dim) * h
