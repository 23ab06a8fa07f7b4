import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodic_torus.torus import (CATALOG, TWO_PI, StateBlowUp, eval_diffusion, eval_drift,
                                 get_problem, hormander_fields, hormander_rank, lie_bracket, wrap)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def test_wrap_examples():
    assert wrap([TWO_PI + 0.5])[0] == pytest.approx(0.5, abs=1e-15)
    assert wrap([-0.3])[0] == pytest.approx(TWO_PI - 0.3, abs=1e-15)
    out = wrap([1.0, 7.0])
    assert out[0] == 1.0
    assert out[1] == pytest.approx(7.0 - TWO_PI, abs=1e-15)


def test_wrap_at_period_maps_to_zero():
    assert wrap([TWO_PI])[0] == 0.0
    # -tiny mod 2pi rounds to 2pi in floating point
    assert wrap([-1e-300])[0] == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_wrap_rejects_non_finite(bad):
    with pytest.raises(StateBlowUp, match="non-finite state"):
        wrap([0.0, bad])


@given(st.lists(finite, min_size=1, max_size=3))
def test_wrap_range_and_idempotence(xs):
    w = wrap(xs)
    assert np.all((w >= 0) & (w < TWO_PI))
    assert np.array_equal(wrap(w), w)


@given(finite, st.integers(-50, 50))
def test_wrap_preserves_class(x, k):
    a, b = wrap([x])[0], wrap([x + k * TWO_PI])[0]
    gap = abs(a - b)
    assert min(gap, TWO_PI - gap) <= 1e-9 * max(1.0, abs(x))


def test_drift_examples():
    assert eval_drift(get_problem("grad1d"), [math.pi / 2])[0] == pytest.approx(-1.0)
    assert eval_drift(get_problem("grad1d"), [0.0])[0] == 0.0
    np.testing.assert_allclose(eval_drift(get_problem("hypo2d"), [0.0, math.pi / 2]), [1.0, 0.5])


def test_catalog_shapes():
    dims = {"grad1d": (1, 1), "zero1d": (1, 1), "nongrad2d": (2, 2), "hypo2d": (2, 1)}
    for pid, (d, m) in dims.items():
        p = get_problem(pid)
        assert (p.d, p.m) == (d, m)
        assert eval_diffusion(p, np.zeros(d)).shape == (d, m)
        assert p.catalog_id == pid
    assert set(CATALOG) == set(dims)
    with pytest.raises(KeyError):
        get_problem("missing")


def test_nongrad2d_drift_closed_form():
    p = get_problem("nongrad2d")
    x = np.array([0.7, 2.1])
    want = [-math.sin(0.7) + 0.3 * math.sin(2.1 - 0.7), -math.sin(2.1)]
    np.testing.assert_allclose(eval_drift(p, x), want, atol=1e-15)


@pytest.mark.parametrize("pid", sorted(CATALOG))
def test_periodicity(pid):
    p = get_problem(pid)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.uniform(0, TWO_PI, p.d)
        for i in range(p.d):
            shifted = x.copy()
            shifted[i] += TWO_PI
            y = wrap(shifted)
            assert np.max(np.abs(eval_drift(p, x) - eval_drift(p, y))) <= 1e-12
            assert np.max(np.abs(eval_diffusion(p, x) - eval_diffusion(p, y))) <= 1e-12


def test_gradient_consistency():
    p = get_problem("grad1d")
    rng = np.random.default_rng(2)
    h = 1e-6
    for x in rng.uniform(0, TWO_PI, 100):
        dv = (p.potential(np.array([x + h])) - p.potential(np.array([x - h]))) / (2 * h)
        assert abs(eval_drift(p, [x])[0] + dv) <= 1e-9


def test_analytic_jacobian_matches_drift():
    p = get_problem("nongrad2d")
    x = np.array([0.4, 5.0])
    h = 1e-6
    fd = np.column_stack([(eval_drift(p, x + h * e) - eval_drift(p, x - h * e)) / (2 * h)
                          for e in np.eye(2)])
    np.testing.assert_allclose(p.drift_jacobian(x), fd, atol=1e-8)


def test_lie_bracket_examples():
    hypo = get_problem("hypo2d")

    def const(x):
        return np.array([0.0, 1.0])

    np.testing.assert_allclose(lie_bracket(const, hypo.drift, [0.0, 0.0]), [1.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(lie_bracket(hypo.drift, hypo.drift, [0.3, 0.2]), [0.0, 0.0], atol=1e-12)

    def other(x):
        return np.array([2.0, -1.0])

    np.testing.assert_allclose(lie_bracket(const, other, [1.0, 1.0]), [0.0, 0.0], atol=1e-12)


def _field(a, b):
    def f(x):
        return np.array([a * math.sin(x[1]) + b, b * math.cos(x[0])])
    return f


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, TWO_PI), st.floats(0, TWO_PI))
def test_bracket_antisymmetry_and_bilinearity(a, b, x0, x1):
    x = [x0, x1]
    h, k, j = _field(a, b), _field(b, 1.0), _field(1.0, a)
    np.testing.assert_allclose(lie_bracket(h, k, x), -lie_bracket(k, h, x), atol=1e-6)

    def hj(y):
        return 2.0 * h(y) + j(y)

    np.testing.assert_allclose(lie_bracket(hj, k, x),
                               2.0 * lie_bracket(h, k, x) + lie_bracket(j, k, x), atol=1e-6)


def test_hormander_rank_examples():
    p = get_problem("hypo2d")
    assert hormander_rank(p, [0.0, 0.0], 0) == 1
    assert hormander_rank(p, [0.0, 0.0], 1) == 2
    assert hormander_rank(p, [0.0, math.pi / 2], 0) == 2
    with pytest.raises(ValueError):
        hormander_rank(p, [0.0, 0.0], 4)


def test_hypo2d_hormander_certificate_on_grid():
    p = get_problem("hypo2d")
    axis = TWO_PI * np.arange(64) / 64
    for a in axis:
        for b in axis:
            assert hormander_rank(p, [a, b], 2) == 2


def test_elliptic_problems_full_rank_at_depth_zero():
    for pid in ("grad1d", "zero1d", "nongrad2d"):
        p = get_problem(pid)
        assert hormander_rank(p, np.full(p.d, 0.3), 0) == p.d


def test_symbolic_and_finite_difference_brackets_agree():
    p = get_problem("hypo2d")
    fields = hormander_fields(p, 2)
    x = np.array([0.9, 2.2])
    vals = np.array([f(x) for f in fields])
    # depth-one bracket [g, f] = (cos x2, 0)
    assert np.any(np.all(np.abs(vals - [math.cos(2.2), 0.0]) < 1e-6, axis=1))
