import numpy as np
import pytest

import oracles
from carnot_torus.fields import tent, theta, white_noise
from carnot_torus.measures import DiscreteMeasure
from carnot_torus.metrics import (aggregate, binned_d1, dual_norm_estimate, holder_norm, holder_seminorm,
                                  kantorovich_d1, multi_indices, parabolic_seminorm, schauder_ratio,
                                  time_holder_ratio)
from carnot_torus.mollifiers import SpaceTimeFunction, mollify_torus
from carnot_torus.torus import GridFunction, torus_distance


def test_seminorm_constant_and_tent(h1):
    assert holder_seminorm(GridFunction.constant(h1, 3.0, (8, 8, 8)), 0.5, 1000).value == pytest.approx(0.0, abs=1e-12)
    for slope in (1.0, 2.5):
        G = GridFunction.from_function(h1, tent(slope), (16, 16, 8))
        s = holder_seminorm(G, 1.0, 4000, seed=1)
        assert s.value == pytest.approx(slope, rel=1e-6)
        x, y = s.witness
        assert abs(G(x[None])[0] - G(y[None])[0]) == pytest.approx(s.value * torus_distance(h1, x, y), rel=1e-9)


def test_seminorm_monotone_in_alpha(h1):
    G = GridFunction.from_function(h1, theta(h1, 0.3), (12, 12, 12))
    a = holder_seminorm(G, 0.4, 3000, seed=2, refine_rounds=0)
    b = holder_seminorm(G, 0.8, 3000, seed=2, refine_rounds=0)
    # same pairs, all distances <= 1
    assert a.value <= b.value + 1e-12


def test_seminorm_cc_metric(h1):
    G = GridFunction.from_function(h1, tent(1.0), (16, 16, 8))
    s = holder_seminorm(G, 1.0, 2000, seed=3, metric="cc")
    assert s.value <= 1.0 + 1e-9


def test_holder_norm(h1):
    rep = holder_norm(h1, GridFunction.constant(h1, -2.0, (8, 8, 8)), 1, 0.5)
    assert rep.norm == pytest.approx(2.0)
    assert len(multi_indices(2, 2)) == 1 + 2 + 4
    f = lambda X: np.cos(2 * np.pi * X[..., 0])
    r_grid = holder_norm(h1, GridFunction.from_function(h1, f, (32, 32, 4)), 1, 1.0, pair_budget=3000)
    r_call = holder_norm(h1, f, 1, 1.0, h=1e-4, pair_budget=3000, resolution=(32, 32, 4))
    assert r_grid.sup_norms[(1,)] == pytest.approx(2 * np.pi, rel=0.01)
    assert r_call.sup_norms[(1,)] == pytest.approx(2 * np.pi, rel=1e-6)
    assert r_grid.to_dict()["kind"] == "lower bound"


def test_mollified_noise_norm_decreases(h1):
    W = GridFunction(h1, white_noise(h1, (8, 8, 8), seed=1))
    norms = [holder_norm(h1, mollify_torus(h1, W, e, q=4), 0, 0.5, pair_budget=2000).norm for e in (0.25, 0.5)]
    assert all(np.isfinite(norms)) and norms[1] < norms[0]


def test_parabolic_seminorm_constant_in_time(h1):
    G = GridFunction.from_function(h1, tent(1.0), (16, 16, 8))
    st = SpaceTimeFunction.constant_in_time(G, [0.0, 0.5, 1.0])
    p = parabolic_seminorm(st, 1.0, pair_budget=2000, seed=4).value
    assert p <= holder_seminorm(G, 1.0, 4000, seed=4).value + 1e-9


def test_dual_norm(h1):
    assert dual_norm_estimate(DiscreteMeasure.zero(h1), 0, 0.5, size=4) == 0.0
    d = DiscreteMeasure.dirac(h1, [0.2, 0.3, 0.4])
    val, wit = dual_norm_estimate(d, 0, 0.5, size=6, return_witness=True)
    assert val == pytest.approx(1.0) and wit == "one"
    e = DiscreteMeasure.dirac(h1, [0.7, 0.1, 0.9], -1.0)
    s = dual_norm_estimate(d + e, 0, 0.5, size=6)
    assert s <= dual_norm_estimate(d, 0, 0.5, size=6) + dual_norm_estimate(e, 0, 0.5, size=6) + 1e-12


def test_d1_basics(h1):
    rng = np.random.default_rng(5)
    mu = DiscreteMeasure(h1, rng.random((5, 3)), np.full(5, 0.2))
    assert kantorovich_d1(mu, mu) == pytest.approx(0.0, abs=1e-12)
    x, y = rng.random((2, 3))
    assert kantorovich_d1(DiscreteMeasure.dirac(h1, x), DiscreteMeasure.dirac(h1, y)) == pytest.approx(
        float(torus_distance(h1, x, y)), rel=1e-12)
    nu = DiscreteMeasure(h1, rng.random((4, 3)), np.array([0.1, 0.2, 0.3, 0.4]))
    assert kantorovich_d1(mu, nu) == kantorovich_d1(nu, mu)


def test_d1_two_atoms_bruteforce(h1):
    rng = np.random.default_rng(6)
    for _ in range(5):
        P, Q = rng.random((2, 2, 3))
        a = np.array([0.3, 0.7])
        b = np.array([0.55, 0.45])
        C = torus_distance(h1, P[:, None, :], Q[None, :, :])
        ref = oracles.two_by_two_d1(C, a, b)
        val = kantorovich_d1(DiscreteMeasure(h1, P, a), DiscreteMeasure(h1, Q, b))
        assert val == pytest.approx(ref, abs=1e-6)


def test_d1_mass_mismatch(h1):
    with pytest.raises(ValueError):
        kantorovich_d1(DiscreteMeasure.dirac(h1, [0, 0, 0]), DiscreteMeasure.dirac(h1, [0, 0, 0], 2.0))


def test_binned_d1(h1):
    pts = np.random.default_rng(7).random((4000, 3))
    w = np.full(4000, 1 / 4000)
    m = aggregate(h1, pts, w, (4, 4, 2))
    assert m.sum() == pytest.approx(1.0) and m.shape == (32,)
    U = GridFunction.constant(h1, 1.0, (16, 16, 16))
    mu = DiscreteMeasure(h1, pts, w)
    assert binned_d1(h1, U, mu) < 0.05
    assert binned_d1(h1, U, U) == pytest.approx(0.0, abs=1e-12)


def test_regularity_probes(h1):
    from carnot_torus.solvers import BackwardProblem, cfl_bound, solve_backward_fd
    zT = lambda X: np.cos(2 * np.pi * X[..., 0])
    res = (12, 12, 12)
    z = solve_backward_fd(BackwardProblem(h1, 0.05, zT=zT), res, cfl_bound(h1, res))
    ZT = GridFunction.from_function(h1, zT, res)
    r0 = schauder_ratio(z, ZT, 0.0, 0, 0.5, slices=3, pair_budget=1500)
    assert 0 < r0["ratio"] <= 1.0 + 1e-6  # heat flow does not increase sup or seminorm
    rt = time_holder_ratio(z, ZT, 0.0, slices=4, pair_budget=1500)
    assert np.isfinite(rt["ratio"]) and rt["ratio"] > 0
