import math

import numpy as np
import pytest

import oracles
from carnot_torus.group import dilate, inverse
from carnot_torus.heat import (HeatKernelKDE, SDEConfig, estimate_kernel, fit_gaussian_bound, heat_apply,
                               heat_apply_many, kde_mass, read_endpoints, sample_path, write_endpoints)


def test_config_validation():
    with pytest.raises(ValueError):
        SDEConfig(dt=0)
    with pytest.raises(ValueError):
        SDEConfig(scheme="euler")
    assert SDEConfig().with_(N=5).N == 5


@pytest.mark.parametrize("scheme", ["geometric", "heun"])
def test_abelian_variance(ab2, scheme):
    cfg = SDEConfig(dt=0.05, N=40_000, seed=1, scheme=scheme)
    Z = sample_path(ab2, None, 0.2, 0.7, np.array([0.1, -0.3]), cfg)
    d = Z - np.array([0.1, -0.3])
    var = d.var(axis=0, ddof=1)
    se = 2 * 0.5 * math.sqrt(2 / (cfg.N - 1))
    assert np.all(np.abs(var - 1.0) < 3 * se)


def test_h1_central_mean_and_area_variance(h1):
    cfg = SDEConfig(dt=0.01, N=40_000, seed=2)
    Z = sample_path(h1, None, 0.0, 0.5, np.zeros(3), cfg)
    se = Z[:, 2].std() / math.sqrt(cfg.N)
    assert abs(Z[:, 2].mean()) < 3 * se
    # the area of sqrt(2) B over [0, t] has variance t^2
    z2 = Z[:, 2] ** 2
    assert abs(z2.mean() - 0.25) < 3 * z2.std() / math.sqrt(cfg.N)
    assert np.all(np.abs(Z[:, :2].var(axis=0) - 1.0) < 0.05)


def test_heat_apply_trivial(h1):
    cfg = SDEConfig(dt=0.05, N=2000, seed=3)
    m, s = heat_apply(h1, lambda X: np.ones(X.shape[:-1]), 0.4, [0.2, 0.3, 0.4], cfg)
    assert m == 1.0 and s == 0.0
    m, s = heat_apply(h1, lambda X: np.full(X.shape[:-1], 2.5), 0.4, [0.2, 0.3, 0.4], cfg)
    assert m == 2.5 and s == 0.0
    f = lambda X: np.abs(np.sin(np.pi * X[..., 0]))
    m, _ = heat_apply(h1, f, 1e-6, [0.2, 0.3, 0.4], cfg.with_(dt=1e-6))
    assert m == pytest.approx(float(f(np.array([0.2, 0.3, 0.4]))), abs=1e-3)


def test_heat_apply_abelian_fourier(ab2):
    cfg = SDEConfig(dt=0.02, N=200_000, seed=4)
    f = lambda X: np.cos(2 * np.pi * X[..., 0])
    X = np.array([[0.1, 0.2], [0.35, 0.9], [0.0, 0.0]])
    m, s = heat_apply_many(ab2, f, 0.02, X, cfg)
    exact = oracles.heat_cos(0.02, X)
    assert np.all(np.abs(m - exact) < 4 * s + 1e-12)


def test_threads_do_not_change_results(h1):
    cfg = SDEConfig(dt=0.05, N=20_000, seed=5, shard_size=4096)
    a = sample_path(h1, None, 0, 0.3, np.zeros(3), cfg)
    b = sample_path(h1, None, 0, 0.3, np.zeros(3), cfg.with_(threads=4))
    assert np.array_equal(a, b)


def test_estimate_kernel_zero_time(h1):
    est = estimate_kernel(h1, 0.0, [0.1, 0.2, 0.3], SDEConfig())
    assert est.exact_zero and est.value == 0.0


def test_kernel_1d_gaussian(ab1):
    cfg = SDEConfig(dt=0.1, N=200_000, seed=6)
    kde = HeatKernelKDE(ab1, 0.5, cfg, bandwidth=0.08)
    xs = np.array([[0.0], [0.5], [1.2]])
    v, e = kde.evaluate(xs)
    # the window bias of a narrow bump is second order in the bandwidth
    exact = oracles.gaussian_1d(0.5, xs[:, 0])
    assert np.all(np.abs(v - exact) < 3 * e + 0.01 * exact)


def test_kernel_mass_and_symmetry(h1):
    cfg = SDEConfig(dt=0.02, N=100_000, seed=7)
    kde = HeatKernelKDE(h1, 0.5, cfg)
    m, s = kde_mass(kde, M=20_000)
    assert abs(m - 1) < 3 * s and s < 0.02
    x = np.array([[0.4, -0.2, 0.15]])
    v1, e1 = kde.evaluate(x)
    v2, e2 = kde.evaluate(inverse(h1, x))
    assert abs(v1 - v2)[0] < 3 * math.hypot(e1[0], e2[0])


def test_kernel_homogeneity(h1):
    cfg = SDEConfig(dt=0.02, N=100_000, seed=8)
    t, lam, x = 0.3, 1.5, np.array([0.3, 0.1, -0.1])
    a = estimate_kernel(h1, t, x, cfg, stream=1)
    b = estimate_kernel(h1, lam ** 2 * t, dilate(h1, lam, x), cfg.with_(dt=0.02 * lam ** 2),
                        bandwidth=a.bandwidth * lam, stream=2)
    scale = lam ** -h1.Q
    assert abs(b.value - scale * a.value) < 3 * math.hypot(b.stderr, scale * a.stderr)


def test_gaussian_bound_fit():
    t = np.repeat([0.2, 0.5, 1.0], 5)
    r = np.tile(np.linspace(0, 1.5, 5), 3)
    v = 0.7 * t ** -2 * np.exp(-r ** 2 / (3.0 * t))
    c0, c = fit_gaussian_bound(t, r, v, 4)
    assert c == pytest.approx(3.0, rel=1e-8) and c0 == pytest.approx(0.7, rel=1e-8)


def test_endpoint_dump_roundtrip(h1, tmp_path):
    Z = np.random.default_rng(9).random((10, 3))
    write_endpoints(tmp_path / "z.bin", Z)
    Y, w = read_endpoints(tmp_path / "z.bin", 3)
    assert np.array_equal(Y, Z) and np.allclose(w, 0.1)
