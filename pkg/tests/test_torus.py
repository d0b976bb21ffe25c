import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

import oracles
from carnot_torus.group import cc_distance, compose
from carnot_torus.mollifiers import BumpProfile
from carnot_torus.torus import (GridFunction, LatticeElement, grid_nodes, lattice_point, periodize_kernel,
                                reduce, torus_distance)


def test_reduce_identity_on_domain(h1):
    x = np.random.default_rng(0).random((200, 3))
    x0, a = reduce(h1, x)
    assert np.array_equal(x0, x) and np.all(a == 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(0, 0.999999), min_size=3, max_size=3))
@example(a=[1, 0, 2], x=[0.0, 0.8836277473542505, 0.0])  # central residue of -2e-16
def test_reduce_quotient_invariance(a, x):
    from carnot_torus.group import heisenberg
    g = heisenberg()
    x = np.array(x)
    y = compose(g, lattice_point(g, a), x)
    y0, k = reduce(g, y)
    assert np.allclose(y0, x, atol=1e-10)
    assert np.array_equal(k, np.array(a, float))
    assert np.allclose(compose(g, lattice_point(g, k), y0), y, atol=1e-10)


def test_reduce_matches_bruteforce(h1):
    rng = np.random.default_rng(1)
    for p in rng.uniform(-2.5, 2.5, (40, 3)):
        hits = oracles.h1_reduce_bruteforce(p, box=4)
        assert len(hits) == 1
        x0, a = reduce(h1, p)
        assert np.allclose(x0, hits[0][0], atol=1e-12)
        assert tuple(int(v) for v in a) == hits[0][1]


def test_reduce_worked_point(h1):
    # lattice translate and first layer agree with the literal search; the
    # central coordinate follows the lattice kappa(Z^3) (see README).
    x0, a = reduce(h1, [1.5, -0.25, 0.7])
    assert tuple(a) == (1, -1, 0)
    assert np.allclose(x0[:2], [0.5, 0.75])
    assert x0[2] == pytest.approx(0.575)
    raw = oracles.h1_reduce_raw_integer([1.5, -0.25, 0.7])
    assert np.allclose(raw[0][0], [0.5, 0.75, 0.075])


def test_lattice_is_subgroup(h1):
    rng = np.random.default_rng(2)
    a, b = rng.integers(-4, 5, (2, 100, 3))
    p = compose(h1, lattice_point(h1, a), lattice_point(h1, b))
    x0, _ = reduce(h1, p)
    assert np.allclose(x0, 0, atol=1e-12)
    e = LatticeElement((1, 2, -1))
    assert np.allclose(e.act(h1, np.zeros(3)), oracles.h1_lattice([1, 2, -1]))


def test_torus_distance_examples(h1):
    rng = np.random.default_rng(4)
    x, y = rng.random((2, 100, 3))
    assert np.allclose(torus_distance(h1, x, x), 0)
    assert np.all(torus_distance(h1, x, y) <= cc_distance(h1, x, y).value + 1e-12)
    assert torus_distance(h1, [0.9, 0, 0], [0.1, 0, 0]) == pytest.approx(0.2)


def test_torus_distance_bruteforce(h1):
    rng = np.random.default_rng(6)
    x, y = rng.random((2, 30, 3))
    d, k = torus_distance(h1, x, y, return_translate=True)
    import itertools
    best = np.full(30, np.inf)
    for a in itertools.product(range(-2, 3), repeat=3):
        ya = compose(h1, lattice_point(h1, a), y)
        best = np.minimum(best, cc_distance(h1, x, ya).value)
    assert np.allclose(d, best, atol=1e-9)
    # symmetric and invariant under lattice moves
    assert np.allclose(torus_distance(h1, y, x), d, atol=1e-9)
    ys = compose(h1, lattice_point(h1, [2, -1, 3]), y)
    assert np.allclose(torus_distance(h1, x, ys), d, atol=1e-9)


def test_torus_distance_abelian(ab1):
    rng = np.random.default_rng(7)
    x, y = rng.uniform(-3, 3, (2, 50, 1))
    assert np.allclose(torus_distance(ab1, x, y), oracles.torus1d_distance(x[:, 0], y[:, 0]))


def test_periodize_bump(h1):
    prof = BumpProfile(h1, 0.1)
    K = prof.kernel()
    x = np.array([0.3, 0.4, 0.5])
    v = periodize_kernel(h1, K, x, x)
    assert v == pytest.approx(prof.C * 0.1 ** -4 * np.exp(-1), rel=1e-12)
    # distant points: no overlap
    assert periodize_kernel(h1, K, x, [0.8, 0.9, 0.1]) == 0.0
    # a wide kernel integrates to one over the fundamental domain
    K = BumpProfile(h1, 0.6).kernel()
    rng = np.random.default_rng(8)
    Y = rng.random((200_000, 3))
    vals = periodize_kernel(h1, K, np.broadcast_to(x, Y.shape), Y)
    assert vals.mean() == pytest.approx(1.0, abs=4 * vals.std() / np.sqrt(len(Y)))


def test_grid_function_interpolation(h1, tmp_path):
    from carnot_torus.fields import theta
    f = theta(h1, 0.3)
    G = GridFunction.from_function(h1, f, (24, 24, 24))
    rng = np.random.default_rng(9)
    P = rng.uniform(-2, 2, (500, 3))
    assert np.max(np.abs(G(P) - f(P))) < 0.05
    assert np.allclose(G(grid_nodes((24, 24, 24)).reshape(-1, 3)), G.values.reshape(-1))
    # periodic by construction
    Q = compose(h1, lattice_point(h1, [1, -2, 1]), P)
    assert np.allclose(G(P), G(Q), atol=1e-12)
    for fmt in ("bin", "csv"):
        G.save(tmp_path / f"g.{fmt}", fmt=fmt)
        H = GridFunction.load(tmp_path / f"g.{fmt}")
        assert np.array_equal(H.values, G.values)


def test_grid_function_refines(h1):
    from carnot_torus.fields import theta
    f = theta(h1, 0.3)
    P = np.random.default_rng(10).random((500, 3))
    errs = [np.max(np.abs(GridFunction.from_function(h1, f, (m,) * 3)(P) - f(P))) for m in (16, 32)]
    assert errs[1] < errs[0] / 3
