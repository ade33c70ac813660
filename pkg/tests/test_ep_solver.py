import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projqep.ep_solver import (
    InnerConfig,
    Method,
    ep_residual,
    grid_ep_oracle,
    solve_ep,
    solve_vi_extragradient,
)
from projqep.errors import (
    DimensionTooHigh,
    EmptyConstraint,
    InnerBudgetExceeded,
    NoMethodApplicable,
)
from projqep.geometry import Ball, Box, Segment, Translate, grid_points
from projqep.instances import make_counterexample, make_moving_square
from projqep.problems import CoordinateDifference, CustomBifunction, VIBifunction

VI = VIBifunction.identity(2)
SQUARE = Translate(Box((0.0, 0.0), (1.0, 1.0)), (2.0, 0.0))
FLIP = Segment((-0.5, 1.0), (-0.5, 2.0))
YDIFF = CoordinateDifference(2, 2)


# --- solve_ep --------------------------------------------------------------


def test_closed_form_moving_square():
    inst = make_moving_square()
    x = np.array([1.0, 0.0])
    sol = solve_ep(VI, inst.cmap(x), closed_form=inst.closed_form, x=x)
    assert sol.method is Method.CLOSED_FORM
    assert np.allclose(sol.point, (2, 0)) and sol.residual == 0.0


def test_extragradient_on_moving_square():
    sol = solve_ep(VI, SQUARE, InnerConfig())
    assert sol.method is Method.EXTRAGRADIENT
    assert np.linalg.norm(sol.point - (2, 0)) <= 1e-7
    assert sol.residual >= -1e-7


def test_counterexample_inner_solution():
    inst = make_counterexample()
    x = np.array([0.5, 0.0])
    cf = solve_ep(YDIFF, FLIP, closed_form=inst.closed_form, x=x)
    grid = solve_ep(YDIFF, FLIP)
    assert grid.method is Method.GRID_ORACLE
    assert np.allclose(cf.point, (-0.5, 1)) and np.allclose(grid.point, (-0.5, 1))


def test_bad_closed_form_rejected():
    with pytest.raises(InnerBudgetExceeded):
        solve_ep(VI, SQUARE, closed_form=lambda x: np.array([3.0, 1.0]), x=None)
    with pytest.raises(InnerBudgetExceeded):
        solve_ep(VI, SQUARE, closed_form=lambda x: np.array([0.0, 0.0]), x=None)


def test_method_selection_errors():
    custom = CustomBifunction(lambda x, y: y[0] - x[0], 2)
    with pytest.raises(NoMethodApplicable):
        solve_ep(custom, SQUARE, InnerConfig(allow_grid=False))
    with pytest.raises(NoMethodApplicable):
        solve_ep(custom, SQUARE, InnerConfig(method="extragradient"))
    with pytest.raises(NoMethodApplicable):
        solve_ep(VI, SQUARE, InnerConfig(method="closed_form"))
    with pytest.raises(EmptyConstraint):
        solve_ep(VI, None)


def test_inner_budget():
    with pytest.raises(InnerBudgetExceeded):
        solve_vi_extragradient(lambda z: z - 5.0, Box((0.0, 0.0), (10.0, 10.0)), InnerConfig(max_inner_iterations=2))


def test_config_validation():
    for bad in ({"epsilon_inner": 0}, {"step_size": -1}, {"max_inner_iterations": 0}, {"method": "newton"}):
        with pytest.raises(ValueError):
            InnerConfig(**bad)


# --- ep_residual -----------------------------------------------------------


def test_residual_examples():
    assert ep_residual(VI, SQUARE, (2, 0)) == 0.0
    assert ep_residual(VI, SQUARE, (3, 1)) == pytest.approx(-4.0)
    assert ep_residual(YDIFF, FLIP, (-0.5, 1)) == 0.0


@settings(max_examples=200, derandomize=True, deadline=None)
@given(st.floats(2, 3), st.floats(0, 1))
def test_exact_residual_matches_vertex_enumeration(a, b):
    z = np.array([a, b])
    corners = [np.array(c, dtype=float) for c in ((2, 0), (3, 0), (2, 1), (3, 1))]
    ref = min(0.0, min(z @ (c - z) for c in corners))
    assert ep_residual(VI, SQUARE, z) == pytest.approx(ref, abs=1e-12)


def test_grid_residual_error_bound():
    def fv(x, Y):
        return (Y[:, 1] - x[1]) + 0.3 * (Y[:, 0] - x[0]) ** 2

    f = CustomBifunction(lambda x, y: float(fv(x, y[None, :])[0]), 2)
    K = Ball((0.0, 0.0), 1.0)
    cfg = InnerConfig(grid_resolution=0.05)
    # fine polar sample of the disc as the reference infimum
    rad, ang = np.meshgrid(np.linspace(0, 1, 400), np.linspace(0, 2 * math.pi, 2000))
    fine_pts = np.c_[(rad * np.cos(ang)).ravel(), (rad * np.sin(ang)).ravel()]
    for z in ((0.0, 0.0), (0.3, -0.5), (-0.6, 0.6)):
        z = np.array(z)
        r = ep_residual(f, K, z, cfg)
        fine = min(0.0, float(fv(z, fine_pts).min()))
        h = 2.0  # |grad_y f| <= 1 + 0.6 * 2 on the unit ball
        # the reference sample is itself accurate to ~1e-6
        assert fine - 1e-5 <= r <= fine + 0.05 * math.sqrt(2) * h


# --- extragradient ---------------------------------------------------------


def test_extragradient_examples():
    assert np.allclose(solve_vi_extragradient(lambda z: z, SQUARE).point, (2, 0), atol=1e-7)
    assert np.allclose(solve_vi_extragradient(lambda z: z, Ball((5.0, 0.0), 1.0)).point, (4, 0), atol=1e-7)
    sol = solve_vi_extragradient(lambda z: np.zeros(2), SQUARE)
    assert np.allclose(sol.point, SQUARE.project(np.zeros(2)).point)
    assert sol.residual == 0.0 and sol.inner_iterations == 1


def test_extragradient_agrees_with_grid_oracle():
    for K in (SQUARE, Ball((5.0, 0.0), 1.0), Translate(Box((0, 0), (1, 1)), (-0.5, 1.5))):
        eg = solve_vi_extragradient(lambda z: z, K).point
        grid = grid_ep_oracle(VI, K, 0.01).point
        assert np.linalg.norm(eg - grid) <= 0.01 * math.sqrt(2) + 1e-7


def test_extragradient_geometric_decay():
    # trace the iteration by hand for F = identity and check the per-sweep ratio
    K = Ball((5.0, 0.0), 1.0)
    target = np.array([4.0, 0.0])
    z = K.project(np.array([5.0, 0.9])).point
    tau = 0.5
    dists = []
    for _ in range(30):
        y = K.project(z - tau * z).point
        z = K.project(z - tau * y).point
        dists.append(np.linalg.norm(z - target))
    ratios = [b / a for a, b in zip(dists, dists[1:]) if a > 1e-13]
    assert ratios and max(ratios) < 1.0


# --- grid oracle -----------------------------------------------------------


def test_grid_oracle_examples():
    s = grid_ep_oracle(VI, SQUARE, 0.25)
    assert np.allclose(s.point, (2, 0)) and s.residual == 0.0
    s = grid_ep_oracle(YDIFF, FLIP, 0.25)
    assert np.allclose(s.point, (-0.5, 1))
    s = grid_ep_oracle(VI, Box((-1, -1), (1, 1)), 0.5)
    assert np.allclose(s.point, (0, 0)) and s.residual == 0.0


def test_grid_oracle_is_best_on_its_grid():
    f = CustomBifunction(lambda x, y: (y[0] - x[0]) * (1 + x[1] ** 2) + 0.5 * (y[1] ** 2 - x[1] ** 2), 2)
    K = Box((-1.0, -1.0), (1.0, 1.0))
    s = grid_ep_oracle(f, K, 0.25)
    G = grid_points(K, 0.25)
    res = [min(0.0, min(f(z, y) for y in G)) for z in G]
    assert s.residual == pytest.approx(max(res))
    # lexicographically first among the maximisers
    best = [tuple(z) for z, r in zip(G, res) if r == max(res)]
    assert tuple(s.point) == min(best)


def test_grid_oracle_dimension_cap():
    with pytest.raises(DimensionTooHigh):
        grid_ep_oracle(VIBifunction.identity(5), Box(np.zeros(5), np.ones(5)), 0.5)


def test_grid_oracle_order_independent():
    # reversing the grid evaluation order gives the same answer (lexicographic tie-break)
    f = CustomBifunction(lambda x, y: 0.0, 2)
    K = Box((0.0, 0.0), (1.0, 1.0))
    s = grid_ep_oracle(f, K, 0.1)
    assert np.allclose(s.point, (0.0, 0.0))


# --- agreement on the instance ---------------------------------------------


def test_numerical_paths_match_closed_form_on_moving_square():
    inst = make_moving_square()
    rng = np.random.default_rng(7)
    lo, hi = inst.C.bounding_box()
    cfg_eg = InnerConfig(method="extragradient")
    cfg_grid = InnerConfig(method="grid", grid_resolution=0.01)
    checked = 0
    while checked < 10:
        x = lo + (hi - lo) * rng.random(2)
        if not inst.C.contains(x):
            continue
        K = inst.cmap(x)
        ref = inst.closed_form(x)
        assert np.linalg.norm(solve_ep(VI, K, cfg_eg).point - ref) <= 1e-6
        hz = np.linalg.norm(ref) + 2.0
        assert np.linalg.norm(solve_ep(VI, K, cfg_grid).point - ref) <= 1e-6 + 0.01 * hz
        checked += 1
