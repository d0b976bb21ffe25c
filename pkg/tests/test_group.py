import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from carnot_torus.group import (DescriptorError, GroupDescriptor, abelian, cc_distance, cc_lower_bound,
                                cc_norm, cc_upper_bound, compose, dilate, exp_horizontal, heisenberg,
                                homogeneous_norm, horizontal_frame, inverse, lie_derivative,
                                load_descriptor, resolve_group)

coord = st.floats(-5, 5, allow_nan=False)
point3 = st.tuples(coord, coord, coord).map(np.array)


def test_descriptor_basics(h1):
    assert h1.n == 3 and h1.n1 == 2 and h1.Q == 4 and h1.step == 2
    assert list(h1.dilation_exponents) == [1, 1, 2]
    assert not h1.is_abelian and h1.has_integer_brackets
    ab = abelian(3)
    assert ab.Q == 3 and ab.is_abelian


def test_descriptor_roundtrip(h1, tmp_path):
    path = tmp_path / "h1.json"
    import json
    path.write_text(json.dumps(h1.to_dict()))
    g = load_descriptor(path)
    assert np.array_equal(g.brackets, h1.brackets)
    assert resolve_group("heisenberg").layer_dims == (2, 1)
    assert resolve_group(str(path)).layer_dims == (2, 1)


@pytest.mark.parametrize("data, invariant", [
    ({"step": 2, "layer_dims": [2, 1], "brackets": [{"i": 1, "j": 2, "m": 3, "c": 1.0},
                                                    {"i": 2, "j": 1, "m": 3, "c": 1.0}]},
     "bracket antisymmetry"),
    ({"step": 2, "layer_dims": [2, 1], "brackets": []}, None),
    ({"step": 3, "layer_dims": [2, 1, 2], "brackets": []}, None),
    ({"step": 2, "layer_dims": [2], "brackets": []}, "layer dimensions"),
    ({"layer_dims": [2, 1]}, "schema"),
])
def test_descriptor_violations(data, invariant):
    with pytest.raises((DescriptorError, ValueError)) as info:
        GroupDescriptor.from_dict(data)
    if invariant is not None:
        assert info.value.invariant == invariant


def test_compose_examples(h1):
    assert np.allclose(compose(h1, [1, 0, 0], [0, 1, 0]), [1, 1, 0.5])
    p = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(compose(h1, p, np.zeros(3)), p)
    assert np.array_equal(compose(h1, np.zeros(3), p), p)
    assert np.allclose(compose(abelian(2), [1, 2], [3, 4]), [4, 6])


def test_inverse_examples(h1):
    assert np.array_equal(inverse(h1, np.zeros(3)), np.zeros(3))
    assert np.allclose(inverse(h1, [1, 0, 0]), [-1, 0, 0])
    q = inverse(h1, [1, 2, 3])
    assert np.allclose(compose(h1, [1, 2, 3], q), 0)
    assert np.allclose(q, [-1, -2, -3])


def test_dilate_examples(h1):
    assert np.allclose(dilate(h1, 2, [1, 1, 1]), [2, 2, 4])
    p = np.array([1.0, 0, 2])
    assert np.array_equal(dilate(h1, 1, p), p)
    assert np.allclose(dilate(h1, 2, dilate(h1, 3, p)), [6, 0, 72])
    assert np.allclose(dilate(h1, 6, p), [6, 0, 72])
    with pytest.raises(ValueError):
        dilate(h1, 0.0, p)


def test_norm_examples(h1):
    assert homogeneous_norm(h1, [1, 0, 0]) == pytest.approx(1)
    assert homogeneous_norm(h1, [0, 0, 1]) == pytest.approx(1)
    assert homogeneous_norm(h1, dilate(h1, 3, [1, 0, 1])) == pytest.approx(3 * 2 ** 0.25)


@settings(max_examples=200, deadline=None)
@given(point3, point3, point3)
def test_compose_matches_hand_formula(p, q, s):
    g = heisenberg()
    assert np.allclose(compose(g, p, q), oracles.h1_compose(p, q), atol=1e-12)
    lhs = compose(g, compose(g, p, q), s)
    rhs = compose(g, p, compose(g, q, s))
    assert np.allclose(lhs, rhs, atol=1e-10)
    assert np.allclose(compose(g, p, inverse(g, p)), 0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(point3, point3, st.floats(0.1, 4))
def test_dilation_is_automorphism(p, q, lam):
    g = heisenberg()
    lhs = dilate(g, lam, compose(g, p, q))
    rhs = compose(g, dilate(g, lam, p), dilate(g, lam, q))
    assert np.allclose(lhs, rhs, atol=1e-9 * max(1, lam ** 2))
    assert homogeneous_norm(g, dilate(g, lam, p)) == pytest.approx(lam * homogeneous_norm(g, p), rel=1e-12, abs=1e-12)
    assert float(homogeneous_norm(g, p)) == pytest.approx(float(oracles.h1_norm(p)), rel=1e-12, abs=1e-14)


def test_frame_and_hoermander(h1):
    F = horizontal_frame(h1, np.array([0.0, 0.7, 0.0]))
    assert np.allclose(F[0], [1, 0, -0.35]) and np.allclose(F[1], [0, 1, 0])
    # brackets at the origin span the centre
    assert np.linalg.matrix_rank(np.vstack([F, h1.brackets[0, 1]])) == 3


def test_exp_horizontal_examples(h1):
    assert np.allclose(exp_horizontal(h1, np.zeros(3), [1, 0], 0.8), [0.8, 0, 0])
    y0, tau = 0.6, 1.3
    assert np.allclose(exp_horizontal(h1, [0, y0, 0], [1, 0], tau), [tau, y0, -tau * y0 / 2], atol=1e-10)
    p = np.array([0.3, 0.2, 0.1])
    assert np.allclose(exp_horizontal(h1, p, [1, 1], 0.0), p)


def test_lie_derivative_examples(h1):
    f = lambda X: np.asarray(X)[..., 2]
    p = np.array([0.0, 0.8, 0.0])
    assert lie_derivative(h1, f, p, (), 1e-3) == pytest.approx(0.0)
    assert lie_derivative(h1, f, p, (1,), 1e-3) == pytest.approx(-0.4, abs=1e-8)
    q = np.array([0.4, -0.3, 1.2])
    comm = lie_derivative(h1, f, q, (1, 2), 1e-3) - lie_derivative(h1, f, q, (2, 1), 1e-3)
    assert comm == pytest.approx(1.0, abs=1e-6)
    g2 = lambda X: np.sin(np.asarray(X)[..., 0]) * np.asarray(X)[..., 1]
    assert lie_derivative(h1, g2, q, (), 1e-3) == pytest.approx(float(g2(q)))


def test_cc_distance_examples(h1):
    d = cc_distance(h1, np.zeros(3), [0.7, 0, 0])
    assert d.exact and d.value == pytest.approx(0.7, abs=1e-10)
    for z in (0.05, 0.3, 2.0):
        length, area = oracles.h1_cc_isoperimetric(z)
        v = cc_distance(h1, np.zeros(3), [0, 0, z]).value
        assert area == pytest.approx(z, rel=1e-5)
        assert v == pytest.approx(length, rel=1e-5)
        assert v == pytest.approx(oracles.h1_cc_vertical(z), rel=1e-9)


def test_cc_left_invariance_and_bounds(h1):
    rng = np.random.default_rng(3)
    x, y, z = (rng.uniform(-1, 1, (50, 3)) for _ in range(3))
    d1 = cc_distance(h1, x, y).value
    d2 = cc_distance(h1, compose(h1, z, x), compose(h1, z, y)).value
    assert np.allclose(d1, d2, atol=1e-8)
    w = compose(h1, inverse(h1, x), y)
    nrm = cc_norm(h1, w)
    assert np.all(cc_lower_bound(h1, w) <= nrm + 1e-10)
    ub = cc_upper_bound(h1, w[0])
    assert ub >= nrm[0] - 1e-6 and ub <= nrm[0] * 1.05


def test_cc_generic_is_flagged_upper_bound():
    g = GroupDescriptor.from_dict({"step": 2, "layer_dims": [3, 1],
                                   "brackets": [{"i": 1, "j": 2, "m": 4, "c": 1.0},
                                                {"i": 2, "j": 3, "m": 4, "c": 2.0}]})
    d = cc_distance(g, np.zeros(4), np.array([0.3, 0.1, 0.0, 0.0]))
    assert not d.exact
    assert d.value >= math.hypot(0.3, 0.1) - 1e-6


def test_euclidean_comparison_exponent(h1):
    # C^-1 |x - y| <= d_cc(x, y) <= C |x - y|^(1/r) on a compact box
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, (300, 3))
    y = rng.uniform(-0.5, 0.5, (300, 3))
    d = cc_distance(h1, x, y).value
    e = np.linalg.norm(x - y, axis=1)
    lo, hi = np.max(e / d), np.max(d / np.sqrt(e))
    assert np.isfinite(lo) and np.isfinite(hi) and lo < 10 and hi < 10
