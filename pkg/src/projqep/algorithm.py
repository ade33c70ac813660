"""The projected solution procedure and its diagnostics.

Starting from ``x_0`` in ``C`` the procedure repeats

1. solve the inner problem ``EP(f, Phi(x_i))`` and pick a solution ``z_i``;
2. set ``x_{i+1} = P_C(z_i)``;

and stops when ``x_{i+1}`` equals ``x_i`` up to ``stop_tol``.  A limit
``x`` with ``x = P_C(z)`` for some inner solution ``z`` at ``x`` is a
projected solution; every converged run carries a certificate checking
exactly that.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .ep_solver import InnerConfig, ep_residual, solve_ep
from .errors import DimensionTooHigh, NonpositiveModulus, QEPError
from .geometry import ConvexSet, as_vector, grid_points
from .problems import Bifunction, ConstraintMap, ProblemConstants, constraint_eval

log = logging.getLogger(__name__)

ORACLE_MAX_DIM = 3


@dataclass(frozen=True)
class OuterConfig:
    stop_tol: float = 1e-8
    max_outer_iterations: int = 1000
    cycle_window: int = 12
    cycle_tol: Optional[float] = None  # defaults to 10 * stop_tol
    inner: InnerConfig = field(default_factory=InnerConfig)
    certify_eps: float = 1e-6
    projection_tol: float = 1e-9

    def __post_init__(self):
        for name in ("stop_tol", "certify_eps", "projection_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cycle_tol is not None and not self.cycle_tol > 0:
            raise ValueError("cycle_tol must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be at least 1")
        if not 2 <= self.cycle_window <= self.max_outer_iterations:
            raise ValueError("cycle_window must lie in [2, max_outer_iterations]")

    @property
    def effective_cycle_tol(self):
        return 10 * self.stop_tol if self.cycle_tol is None else self.cycle_tol


@dataclass
class IterateTrace:
    """Outer iterates, inner solutions, step gaps and inner residuals.

    ``gaps[i] = |xs[i+1] - xs[i]|`` and ``zs[i]`` is the inner solution at
    ``xs[i]``, so ``len(xs) == len(zs) + 1`` once a step has been taken.
    """

    xs: list = field(default_factory=list)
    zs: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    methods: list = field(default_factory=list)

    @property
    def dim(self):
        return len(self.xs[0])


class Outcome(str, enum.Enum):
    CONVERGED = "Converged"
    CYCLING = "Cycling"
    BUDGET_EXHAUSTED = "BudgetExhausted"


@dataclass(frozen=True)
class Certificate:
    x: np.ndarray
    z: np.ndarray
    ep_residual: float
    projection_gap: float
    membership_distance: float
    in_constraint: bool
    residual_ok: bool
    projects_back: bool
    eps: float

    @property
    def valid(self):
        return self.in_constraint and self.residual_ok and self.projects_back


@dataclass(frozen=True)
class ContractionReport:
    """Geometric decay predicted when the solution map contracts at rate ``q``.

    ``q`` is ``sqrt(2 R L / m)`` when built from problem constants, or the
    known Lipschitz constant of a closed-form solution map.  ``guaranteed``
    holds only if ``q < 1`` and every ingredient is exact.
    """

    q: float
    guaranteed: bool
    base_distance: float
    constants: Optional[ProblemConstants] = None

    def predicted_gap_bound(self, i):
        return self.q**i * self.base_distance

    def cauchy_bound(self, m):
        """Bound on ``|x_m - x_n|`` for every ``n > m``; infinite unless ``q < 1``."""
        if not self.q < 1:
            return math.inf
        return self.q**m / (1.0 - self.q) * self.base_distance


@dataclass
class RunResult:
    trace: IterateTrace
    outcome: Outcome
    certificate: Optional[Certificate] = None
    period: Optional[int] = None
    diagnostics: Optional[ContractionReport] = None

    @property
    def x(self):
        return self.trace.xs[-1]

    @property
    def steps(self):
        return len(self.trace.gaps)

    def summary(self):
        x = ", ".join(repr(float(v)) for v in self.x)
        if self.outcome is Outcome.CONVERGED:
            return f"Converged at ({x}) after {self.steps} outer steps"
        if self.outcome is Outcome.CYCLING:
            return f"Cycling period {self.period} after {self.steps} outer steps"
        return f"Budget exhausted after {self.steps} outer steps at ({x})"


def contraction_certificate(constants: ProblemConstants, x0, z0, require_guarantee=False) -> ContractionReport:
    m = constants.m.value
    if m <= 0:
        if require_guarantee:
            raise NonpositiveModulus("strong monotonicity modulus must be positive")
        q = math.inf
    else:
        q = math.sqrt(2.0 * constants.R.value * constants.L.value / m)
    dist = float(np.linalg.norm(as_vector(x0) - as_vector(z0, len(as_vector(x0)), "z0")))
    return ContractionReport(q, bool(q < 1 and constants.all_exact), dist, constants)


def rate_certificate(q, x0, z0, exact=True) -> ContractionReport:
    """Report for a solution map whose Lipschitz constant ``q`` is known directly."""
    dist = float(np.linalg.norm(as_vector(x0) - as_vector(z0)))
    return ContractionReport(float(q), bool(q < 1 and exact), dist)


def verify_projected_solution(
    f: Bifunction,
    cmap: ConstraintMap,
    C: ConvexSet,
    x,
    z,
    eps: float = 1e-6,
    cfg: InnerConfig = InnerConfig(),
) -> Certificate:
    """Check ``z in Phi(x)``, ``inf_y f(z, y) >= -eps`` over ``Phi(x)`` and ``x = P_C(z)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = as_vector(x, C.dim)
    z = as_vector(z, C.dim, "z")
    K = constraint_eval(cmap, x)
    member = K.project(z).distance
    r = ep_residual(f, K, z, cfg)
    proj = C.project(z)
    back = float(np.linalg.norm(x - proj.point))
    gap = abs(float(np.linalg.norm(x - z)) - proj.distance) + back
    return Certificate(
        x=x,
        z=z,
        ep_residual=r,
        projection_gap=gap,
        membership_distance=member,
        in_constraint=member <= eps,
        residual_ok=r >= -eps,
        projects_back=back <= eps,
        eps=eps,
    )


def detect_cycle(trace: IterateTrace, window: int, cycle_tol: float, stop_tol: float = 0.0):
    """Smallest period ``p >= 2`` of the trailing ``window`` iterates, or ``None``.

    Returns ``None`` while the trailing steps are still shrinking below
    ``stop_tol`` or when the smallest matching period is 1 (that is
    convergence, not cycling).
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    xs = trace.xs
    n = len(xs)
    if n < window + 2:
        return None
    if any(g <= stop_tol for g in trace.gaps[-window:]):
        return None
    X = np.asarray(xs)
    for p in range(1, window + 1):
        if n < window + p:
            break
        d = np.linalg.norm(X[n - window :] - X[n - window - p : n - p], axis=1)
        if np.all(d <= cycle_tol):
            return None if p == 1 else p
    return None


class RegularityProfile(NamedTuple):
    gaps: list
    tail_max: float


def asymptotic_regularity_profile(trace: IterateTrace) -> RegularityProfile:
    """Step gaps and the largest of the last ten; the latter tends to 0 on regular runs."""
    if len(trace.xs) < 2:
        raise ValueError("need at least two iterates")
    gaps = list(trace.gaps)
    return RegularityProfile(gaps, max(gaps[-10:]))


def run_projected_procedure(
    f: Bifunction,
    cmap: ConstraintMap,
    C: ConvexSet,
    x0,
    cfg: OuterConfig = OuterConfig(),
    closed_form=None,
    constants: Optional[ProblemConstants] = None,
    known_rate: Optional[float] = None,
) -> RunResult:
    """Run the outer loop from ``x0``.

    Errors raised inside an iteration propagate with two extra attributes:
    ``iteration`` (the outer index) and ``trace`` (everything recorded so far).
    """
    x = as_vector(x0, C.dim, "x0")
    if not C.contains(x, cfg.inner.membership_tol):
        raise ValueError(f"x0 = {x.tolist()} is not in C")
    trace = IterateTrace(xs=[x])
    diagnostics = None
    i = 0
    while True:
        try:
            K = constraint_eval(cmap, x)
            sol = solve_ep(f, K, cfg.inner, closed_form=closed_form, x=x)
            x_next = C.project(sol.point, cfg.projection_tol).point
        except QEPError as err:
            err.iteration = i
            err.trace = trace
            raise
        gap = float(np.linalg.norm(x_next - x))
        trace.zs.append(sol.point)
        trace.residuals.append(sol.residual)
        trace.methods.append(sol.method)
        trace.xs.append(x_next)
        trace.gaps.append(gap)

        if i == 0:
            if known_rate is not None:
                diagnostics = rate_certificate(known_rate, x, sol.point)
            elif constants is not None:
                diagnostics = contraction_certificate(constants, x, sol.point)

        if gap <= cfg.stop_tol:
            try:
                cert = verify_projected_solution(f, cmap, C, x, sol.point, cfg.certify_eps, cfg.inner)
            except QEPError as err:
                err.iteration = i
                err.trace = trace
                raise
            if cert.valid:
                return RunResult(trace, Outcome.CONVERGED, certificate=cert, diagnostics=diagnostics)
            log.warning("step %d: iterate stalled but certificate failed: %s", i, cert)

        period = detect_cycle(trace, cfg.cycle_window, cfg.effective_cycle_tol, cfg.stop_tol)
        if period is not None:
            return RunResult(trace, Outcome.CYCLING, period=period, diagnostics=diagnostics)
        i += 1
        if i >= cfg.max_outer_iterations:
            return RunResult(trace, Outcome.BUDGET_EXHAUSTED, diagnostics=diagnostics)
        x = x_next


def composite_map(f, cmap, C, x, cfg: InnerConfig = InnerConfig(), closed_form=None, tol=1e-9):
    """``P_C(S(x))`` with ``S(x)`` the selected inner solution; returns ``(Tx, z)``."""
    x = as_vector(x, C.dim)
    z = solve_ep(f, constraint_eval(cmap, x), cfg, closed_form=closed_form, x=x).point
    return C.project(z, tol).point, z


def fixed_point_oracle(
    f: Bifunction,
    cmap: ConstraintMap,
    C: ConvexSet,
    grid_resolution: float,
    eps: float = 1e-6,
    cfg: InnerConfig = InnerConfig(),
    closed_form=None,
) -> np.ndarray:
    """Grid points ``x`` of ``C`` with ``|P_C(S(x)) - x| <= eps + grid_resolution``.

    An outer approximation, at grid scale, of the projected-solution set.
    """
    if C.dim > ORACLE_MAX_DIM:
        raise DimensionTooHigh(f"fixed-point oracle limited to dimension {ORACLE_MAX_DIM}")
    keep = []
    for x in grid_points(C, grid_resolution):
        tx, _ = composite_map(f, cmap, C, x, cfg, closed_form)
        if np.linalg.norm(tx - x) <= eps + grid_resolution:
            keep.append(x)
    return np.array(keep).reshape(-1, C.dim)


def cluster_points(points, link):
    """Single-linkage clusters (points closer than ``link`` are joined), in input order."""
    P = np.atleast_2d(points)
    if P.size == 0:
        return []
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    _, labels = connected_components(csr_matrix(D <= link), directed=False)
    order = []
    for lab in labels:
        if lab not in order:
            order.append(lab)
    return [P[labels == lab] for lab in order]
