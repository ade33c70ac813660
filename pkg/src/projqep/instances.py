"""Worked example problems with known answers.

Each factory returns a :class:`ProblemInstance` bundling the set ``C``, the
constraint map, the bifunction, the closed-form inner solution map when one
is known, the known projected solutions and the expected behaviour of the
outer loop from a few starting points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .algorithm import OuterConfig, Outcome, RunResult, run_projected_procedure, verify_projected_solution
from .errors import InvalidModulus, UndefinedAtPoint
from .geometry import Ball, Box, ConvexSet, Intersection, Polytope, Segment, Translate, as_vector
from .problems import (
    Bifunction,
    ConstraintMap,
    CoordinateDifference,
    CustomBifunction,
    VIBifunction,
    sample_point,
)

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Behavior:
    """Expected outcome of a run from ``x0``."""

    x0: tuple
    outcome: Outcome
    point: Optional[tuple] = None
    period: Optional[int] = None
    max_steps: Optional[int] = None


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    C: ConvexSet
    cmap: ConstraintMap
    f: Bifunction
    closed_form: Optional[Callable] = None
    known_solutions: tuple = ()
    known_behaviors: tuple = ()
    composite: Optional[Callable] = None
    solution_lipschitz: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        rng = np.random.default_rng(12345)
        self.f.check_diagonal([sample_point(self.C, rng) for _ in range(8)])

    @property
    def dim(self):
        return self.C.dim

    def run(self, x0, cfg: OuterConfig = OuterConfig(), use_closed_form=True, constants=None) -> RunResult:
        return run_projected_procedure(
            self.f,
            self.cmap,
            self.C,
            x0,
            cfg,
            closed_form=self.closed_form if use_closed_form else None,
            constants=constants,
            known_rate=self.solution_lipschitz,
        )

    def certify(self, x, eps=1e-6):
        """Certificate for ``x`` using the closed-form inner solution."""
        return verify_projected_solution(self.f, self.cmap, self.C, x, self.closed_form(as_vector(x)), eps)


def make_counterexample() -> ProblemInstance:
    """Segment ``C = [-1, 1] x {0}`` with ``Phi(x) = {-x^1} x [1, 2]`` and ``f = y^2 - x^2``.

    The inner solution is ``(-x^1, 1)``, which projects to ``-x``: every
    start except the origin flips forever between ``x_0`` and ``-x_0``.
    """
    C = Segment((-1.0, 0.0), (1.0, 0.0))

    def phi(x):
        return Segment((-x[0], 1.0), (-x[0], 2.0))

    return ProblemInstance(
        name="counterexample",
        C=C,
        cmap=ConstraintMap(phi, C, name="flip"),
        f=CoordinateDifference(2, 2),
        closed_form=lambda x: np.array([-x[0], 1.0]),
        known_solutions=((0.0, 0.0),),
        known_behaviors=(
            Behavior((0.5, 0.0), Outcome.CYCLING, period=2),
            Behavior((0.0, 0.0), Outcome.CONVERGED, point=(0.0, 0.0), max_steps=1),
        ),
    )


def counterexample_squared_bifunction() -> Bifunction:
    """``(y^2)^2 - (x^2)^2``: same solution map as the default on ``Phi(x)`` since ``y^2 >= 1``."""
    return CustomBifunction(lambda x, y: y[1] ** 2 - x[1] ** 2, 2, name="squared second coordinate")


def moving_square_composite(x):
    """Piecewise closed form of ``P_C(S(x))`` for the moving-square problem."""
    x1, x2 = as_vector(x, 2)
    r = math.hypot(x1, x2)
    if r == 0.0:
        raise UndefinedAtPoint("the moving square is undefined at the origin")
    if x2 < x1 / SQRT3:
        return np.array([1.0, 2.0 * x2 / r])
    if x2 <= SQRT3 * x1:
        return np.array([1.0, 1.0])
    return np.array([2.0 * x1 / r, 1.0])


def moving_square_k_step(x0, k):
    """Iterate ``k`` of the lower branch, valid while it stays below the ray ``x^2 = x^1 / sqrt 3``."""
    a, b = as_vector(x0, 2)
    return np.array([1.0, 2.0**k * b / math.sqrt(a * a + (4.0**k - 1.0) / 3.0 * b * b)])


def make_moving_square() -> ProblemInstance:
    """Triangle ``C`` with a unit square pushed to distance 2 along ``x``.

    ``Phi(x) = Q + 2 x / |x|`` with ``Q = [0, 1]^2`` and ``f(x, y) = <x, y - x>``;
    the inner solution ``2 x / |x|`` is the lower-left corner of ``Phi(x)``.
    """
    C = Polytope(
        [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0], [-1.0, -1.0]],
        [0.0, 1.0, 0.0, 1.0, -1.0],
    )
    Q = Box((0.0, 0.0), (1.0, 1.0))

    def S(x):
        r = np.linalg.norm(x)
        if r == 0.0:
            raise UndefinedAtPoint("the moving square is undefined at the origin")
        return 2.0 * np.asarray(x, dtype=float) / r

    return ProblemInstance(
        name="moving_square",
        C=C,
        cmap=ConstraintMap(lambda x: Translate(Q, S(x)), C, name="moving square"),
        f=VIBifunction.identity(2),
        closed_form=S,
        known_solutions=((1.0, 0.0), (1.0, 1.0), (0.0, 1.0)),
        known_behaviors=(
            Behavior((1.0, 0.0), Outcome.CONVERGED, point=(1.0, 0.0), max_steps=1),
            Behavior((1.0, 1.0), Outcome.CONVERGED, point=(1.0, 1.0), max_steps=1),
            Behavior((0.0, 1.0), Outcome.CONVERGED, point=(0.0, 1.0), max_steps=1),
            Behavior((1.0, 0.2), Outcome.CONVERGED, point=(1.0, 1.0), max_steps=4),
            Behavior((0.2, 1.0), Outcome.CONVERGED, point=(1.0, 1.0), max_steps=4),
        ),
        composite=moving_square_composite,
        extras={"k_step": moving_square_k_step},
    )


def harmonic_vector(n):
    return 1.0 / np.arange(1, n + 1)


def make_l2_truncated(n: int) -> ProblemInstance:
    """First ``n`` coordinates of the sequence-space example.

    ``C`` is the nonnegative part of the unit ball, ``w = (1, 1/2, ..., 1/n)``
    and ``Phi(x) = (3 - |x|) w + {u : 0 <= u_k <= (1 + |x|) w_k}``.  The inner
    solution ``(3 - |x|) w`` always projects to ``w / |w|``.
    """
    if not 2 <= n <= 100:
        raise ValueError("n must lie in [2, 100]")
    w = harmonic_vector(n)
    C = Intersection(Box(np.zeros(n), np.ones(n)), Ball(np.zeros(n), 1.0))

    def phi(x):
        r = np.linalg.norm(x)
        return Translate(Box(np.zeros(n), (1.0 + r) * w), (3.0 - r) * w)

    sol = tuple(float(v) for v in w / np.linalg.norm(w))
    starts = [tuple(float(v) for v in s) for s in (np.full(n, 1.0 / math.sqrt(n)), np.eye(n)[0], np.zeros(n))]
    return ProblemInstance(
        name=f"l2_truncated:{n}",
        C=C,
        cmap=ConstraintMap(phi, C, name="harmonic box"),
        f=VIBifunction.identity(n),
        closed_form=lambda x: (3.0 - np.linalg.norm(x)) * w,
        known_solutions=(sol,),
        known_behaviors=tuple(Behavior(s, Outcome.CONVERGED, point=sol, max_steps=2) for s in starts),
        extras={"w": w},
    )


def make_contraction_fixture(q: float, dimension: int = 2) -> ProblemInstance:
    """Synthetic problem whose inner solution map is ``x -> q x + c0``.

    ``C = [-1, 1]^n``, ``c0 = (2, 0, ..., 0)`` lies outside ``C`` and
    ``Phi(x)`` is the ball of radius 0.1 whose lowest point along ``e_1`` is
    ``q x + c0``.  With the constant field ``F = e_1`` that lowest point is
    the unique inner solution.  The fixed point of ``P_C(q x + c0)`` is
    ``(1, 0, ..., 0)`` on the boundary of ``C``.
    """
    if not 0 < q < 1:
        raise InvalidModulus(f"q must lie in (0, 1), got {q}")
    n = int(dimension)
    C = Box(-np.ones(n), np.ones(n))
    c0 = np.zeros(n)
    c0[0] = 2.0
    e1 = np.eye(n)[0]
    radius = 0.1

    def S(x):
        return q * np.asarray(x, dtype=float) + c0

    fixed = np.zeros(n)
    fixed[0] = 1.0
    return ProblemInstance(
        name=f"contraction:{q!r}" if n == 2 else f"contraction:{q!r}:{n}",
        C=C,
        cmap=ConstraintMap(lambda x: Ball(S(x) + radius * e1, radius), C, lipschitz=q, name="shrinking ball"),
        f=VIBifunction(lambda y: e1, n, name="constant e1"),
        closed_form=S,
        known_solutions=(tuple(float(v) for v in fixed),),
        known_behaviors=(Behavior(tuple(float(v) for v in fixed), Outcome.CONVERGED, point=tuple(float(v) for v in fixed), max_steps=1),),
        solution_lipschitz=q,
        extras={"offset": c0},
    )


INSTANCE_HELP = {
    "counterexample": "period-2 flip on a segment; only projected solution is the origin",
    "moving_square": "unit square pushed along x/|x|; projected solutions (1,0), (1,1), (0,1)",
    "l2_truncated:N": "harmonic box in R^N; converges to w/|w| in two steps",
    "contraction:Q[:DIM]": "affine inner solution map with rate Q in (0, 1)",
}


def get_instance(name: str) -> ProblemInstance:
    """Look an instance up by its CLI name."""
    head, _, rest = name.strip().partition(":")
    if head == "counterexample" and not rest:
        return make_counterexample()
    if head == "moving_square" and not rest:
        return make_moving_square()
    if head == "l2_truncated":
        try:
            n = int(rest)
        except ValueError:
            raise KeyError(f"l2_truncated needs an integer dimension, got {rest!r}") from None
        return make_l2_truncated(n)
    if head == "contraction":
        parts = rest.split(":") if rest else []
        try:
            q = float(parts[0])
            dim = int(parts[1]) if len(parts) > 1 else 2
        except (IndexError, ValueError):
            raise KeyError(f"contraction needs a rate, as in contraction:0.5, got {name!r}") from None
        return make_contraction_fixture(q, dim)
    raise KeyError(f"unknown instance {name!r}")
