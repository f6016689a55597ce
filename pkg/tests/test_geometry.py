import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcap.errors import SpacingTooCoarse
from gradcap.geometry import (BOUNDARY, EXTERIOR, INSIDE, INTERIOR, OUTSIDE,
                              Ball, Box, SolutionField, build_grid,
                              classify_point, field_value_extended)


def test_box_lattice_and_interior():
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.5)
    assert np.allclose(g.axes[0], [-1, -0.5, 0, 0.5, 1])
    assert np.allclose(sorted(g.interior_points().ravel()), [-0.5, 0, 0.5])


def test_ball_membership_classification():
    g = build_grid(Ball(center=(0.0, 0.0), radius=1.0), 0.5)
    pts = g.points()
    inside = np.linalg.norm(pts, axis=1) < 1.0
    assert np.array_equal(g.classes.ravel() == INTERIOR, inside)
    # (0.5, 0.5) has norm ~0.707 < 1
    assert Ball(center=(0.0, 0.0), radius=1.0).contains((0.5, 0.5))


def test_spacing_too_coarse():
    with pytest.raises(SpacingTooCoarse):
        build_grid(Box(lo=(0,), hi=(1,)), 0.6)


def test_classify_point_examples():
    box = Box(lo=(-1,), hi=(1,))
    assert classify_point(box, 0.0) == INSIDE
    assert classify_point(box, 1.0) == OUTSIDE  # boundary is outside the open set
    assert classify_point(Ball(center=(0, 0), radius=1.0), (1, 1)) == OUTSIDE


def test_partition_property():
    for dom, h in [(Box(lo=(-1,), hi=(1,)), 0.25),
                   (Ball(center=(0.0, 0.0), radius=1.0), 0.25)]:
        g = build_grid(dom, h)
        cls = g.classes.ravel()
        assert set(np.unique(cls)) <= {INTERIOR, BOUNDARY, EXTERIOR}
        n = (cls == INTERIOR).sum() + (cls == BOUNDARY).sum() \
            + (cls == EXTERIOR).sum()
        assert n == cls.size


def test_zero_extension_exact():
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.5)
    rng = np.random.default_rng(3)
    f = SolutionField(g, rng.standard_normal(g.shape))
    for x in [1.0, -1.0, 1.5, -2.3]:
        assert field_value_extended(f, x) == 0.0


def test_interpolation_of_constants_and_linear():
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.5)
    ones = SolutionField.from_function(g, lambda p: 1.0)
    assert ones.value_extended(0.25) == 1.0
    lin = SolutionField.from_function(g, lambda p: p[0])
    assert lin.value_extended(0.25) == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=60, derandomize=True)
@given(st.floats(-0.999, 0.999), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_reproduction_1d(x, alpha, beta):
    g = build_grid(Box(lo=(-1,), hi=(1,)), 0.25)
    f = SolutionField.from_function(g, lambda p: alpha * p[0] + beta)
    assert f.value_extended(x) == pytest.approx(alpha * x + beta,
                                                abs=1e-12 * (1 + abs(alpha) + abs(beta)))


@settings(max_examples=60, derandomize=True)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_affine_reproduction_2d(x, y, ax, ay, b):
    g = build_grid(Ball(center=(0.0, 0.0), radius=1.0), 0.25)
    f = SolutionField.from_function(g, lambda p: ax * p[0] + ay * p[1] + b)
    expect = ax * x + ay * y + b
    assert f.value_extended((x, y)) == pytest.approx(
        expect, abs=1e-12 * (1 + abs(ax) + abs(ay) + abs(b)))


def test_interior_nodes_never_on_lattice_hull():
    for dom in [Box(lo=(-1,), hi=(1,)), Ball(center=(0.0, 0.0), radius=1.0)]:
        g = build_grid(dom, 0.25)
        multis = np.array(np.unravel_index(g.interior_flat, g.shape)).T
        for k in range(g.dim):
            assert multis[:, k].min() >= 1
            assert multis[:, k].max() <= g.shape[k] - 2
