import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grid_argmin, penalty_array
from sparsemsv.errors import ConfigError
from sparsemsv.penalties import (
    PenaltySpec,
    penalty_derivative,
    penalty_sum,
    penalty_value,
    univariate_minimizer,
)

SCAD = PenaltySpec("scad", 1.0, a=3.5)
MCP = PenaltySpec("mcp", 1.0, b=3.0)

specs = st.builds(
    PenaltySpec,
    family=st.sampled_from(["lasso", "scad", "mcp"]),
    lam=st.floats(0.01, 3.0),
    a=st.floats(2.1, 6.0),
    b=st.floats(0.5, 6.0),
)


@pytest.mark.parametrize(
    "spec, theta, expected",
    [(SCAD, 0.5, 0.5), (SCAD, 10.0, 2.25), (MCP, 10.0, 1.5), (MCP, 1.5, 1.125)],
)
def test_penalty_values(spec, theta, expected):
    assert penalty_value(spec, theta) == pytest.approx(expected, abs=1e-12)


def test_mcp_matches_closed_form_on_grid():
    t = np.linspace(0, 4, 4001)
    got = np.array([penalty_value(MCP, v) for v in t])
    np.testing.assert_allclose(got, penalty_array("mcp", 1.0, 3.0, t), atol=1e-12)


def test_derivative_examples():
    assert penalty_derivative(SCAD, 2.0) == pytest.approx(0.6)
    h = 1e-6
    fd = (penalty_value(SCAD, 2.0 + h) - penalty_value(SCAD, 2.0 - h)) / (2 * h)
    assert fd == pytest.approx(0.6, abs=1e-6)
    assert penalty_derivative(SCAD, 5.0) == 0.0
    assert penalty_derivative(MCP, 3.0) == 0.0


def test_minimizer_examples():
    assert univariate_minimizer(PenaltySpec("lasso", 0.5), 2.0, 1.0) == pytest.approx(1.5)
    for fam in ("lasso", "scad", "mcp"):
        assert univariate_minimizer(PenaltySpec(fam, 0.7), 0.0, 1.3) == 0.0
    ref = grid_argmin(lambda t: 0.5 * (t - 2.0) ** 2 + penalty_array("scad", 1.0, 3.5, t))
    assert univariate_minimizer(SCAD, 2.0, 1.0) == pytest.approx(ref, abs=1e-4)


def test_invalid_shapes_rejected():
    with pytest.raises(ConfigError):
        PenaltySpec("scad", 1.0, a=2.0)
    with pytest.raises(ConfigError):
        PenaltySpec("mcp", 1.0, b=0.0)
    with pytest.raises(ConfigError):
        PenaltySpec("lasso", -1.0)
    with pytest.raises(ConfigError):
        PenaltySpec("ridge", 1.0)


@settings(max_examples=200, deadline=None)
@given(specs, st.floats(0, 20), st.floats(0, 20))
def test_zero_at_origin_and_nondecreasing(spec, s, t):
    assert penalty_value(spec, 0.0) == 0.0
    lo, hi = sorted((s, t))
    assert penalty_value(spec, lo) <= penalty_value(spec, hi) + 1e-15


@settings(max_examples=200, deadline=None)
@given(specs)
def test_continuity_at_knots(spec):
    knots = [spec.lam]
    if spec.family.name == "SCAD":
        knots.append(spec.a * spec.lam)
    if spec.family.name == "MCP":
        knots = [spec.b * spec.lam]
    for k in knots:
        left = penalty_value(spec, np.nextafter(k, 0))
        right = penalty_value(spec, np.nextafter(k, np.inf))
        assert abs(left - right) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(specs, st.floats(0.01, 15))
def test_derivative_matches_finite_difference(spec, theta):
    h = 1e-6
    kinks = [spec.lam, spec.a * spec.lam, spec.b * spec.lam]
    if min(abs(theta - k) for k in kinks) < 1e-4:
        return
    fd = (penalty_value(spec, theta + h) - penalty_value(spec, theta - h)) / (2 * h)
    assert abs(fd - penalty_derivative(spec, theta)) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(specs, st.floats(-8, 8), st.floats(0.2, 3.0))
def test_minimizer_beats_grid(spec, z, w):
    grid = np.linspace(-10, 10, 20001)
    shape = spec.b if spec.family.name == "MCP" else spec.a
    obj = 0.5 * w * (grid - z) ** 2 + penalty_array(spec.family.name.lower(), spec.lam, shape, grid)
    theta = univariate_minimizer(spec, z, w)
    f = 0.5 * w * (theta - z) ** 2 + penalty_value(spec, theta)
    assert f <= obj.min() + 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(2.1, 6.0), st.floats(0, 10))
def test_scad_unbiased_for_large_inputs(lam, a, excess):
    z = a * lam + 1e-6 + excess
    for sign in (1, -1):
        assert univariate_minimizer(PenaltySpec("scad", lam, a=a), sign * z, 1.0) == sign * z


def test_penalty_sum_adds_entries():
    coefs = np.array([[0.5, -2.0], [10.0, 0.0]])
    expected = sum(penalty_value(SCAD, v) for v in coefs.ravel())
    assert penalty_sum(SCAD, coefs) == pytest.approx(expected)
