"""Horizontal Brownian motion and the hypoelliptic heat kernel.

The diffusion is

    dZ = -sum_k b_k(t, Z) X_k(Z) dt + sqrt(2) sum_k X_k(Z) o dB^k,

so its generator is the full sub-Laplacian sum_k X_k^2 - b . D_X.  With
b = 0 every first-layer coordinate has variance 2t, the abelian kernel is
(4 pi t)^(-n/2) exp(-|x|^2 / 4t) and cos(2 pi x) decays like exp(-4 pi^2 t).

Random numbers are drawn per shard of ``shard_size`` particles from
``SeedSequence(seed, spawn_key=(stream, shard))``, so results depend on
the seed only, never on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .group import GroupDescriptor, compose, embed_horizontal, inverse
from .torus import reduce

__all__ = [
    "SDEConfig",
    "HeatKernelEstimate",
    "simulate",
    "sample_path",
    "heat_apply",
    "heat_apply_many",
    "endpoint_increments",
    "HeatKernelKDE",
    "estimate_kernel",
    "kde_mass",
    "fit_gaussian_bound",
    "write_endpoints",
    "read_endpoints",
]

SCHEMES = ("geometric", "heun")


@dataclass(frozen=True)
class SDEConfig:
    """Discretization and sampling parameters.

    ``scheme`` is ``"geometric"`` (split-step composition of exact
    horizontal flows, the default) or ``"heun"`` (Stratonovich-Heun in
    coordinates).
    """

    dt: float = 1e-2
    scheme: str = "geometric"
    seed: int = 0
    N: int = 10_000
    shard_size: int = 8192
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.shard_size < 1 or self.threads < 1:
            raise ValueError("shard_size and threads must be positive")

    def with_(self, **kw) -> "SDEConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class HeatKernelEstimate:
    t: float
    x: tuple
    value: float
    stderr: float
    bandwidth: float
    N: int
    exact_zero: bool = False

    def to_dict(self) -> dict:
        return {"t": self.t, "x": list(self.x), "value": self.value, "stderr": self.stderr,
                "bandwidth": self.bandwidth, "N": self.N, "exact_zero": self.exact_zero}


def _rng(seed, stream, shard):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(shard))))


def _steps(t0, t1, dt):
    span = t1 - t0
    if not span > 0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    if dt > span * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the integration window {span}")
    k = max(1, math.ceil(span / dt - 1e-9))
    return k, span / k


def _advance(g, Z, t, h, dW, b, scheme):
    """One step of the chosen scheme from time t with Brownian increment dW."""
    sq2 = math.sqrt(2.0)
    if scheme == "geometric":
        if b is not None:
            Z = compose(g, Z, embed_horizontal(g, -0.5 * h * b(t, Z)))
        Z = compose(g, Z, embed_horizontal(g, sq2 * dW))
        if b is not None:
            Z = compose(g, Z, embed_horizontal(g, -0.5 * h * b(t + h, Z)))
        return Z
    # Stratonovich-Heun: predictor with the frame at Z, corrector with the mean frame
    n1 = g.n1

    def incr(P, u):
        out = embed_horizontal(g, u)
        if g.step == 2:
            out[:, n1:] += 0.5 * g.bracket(P[:, :n1], u)
        return out

    u0 = sq2 * dW if b is None else sq2 * dW - h * b(t, Z)
    k0 = incr(Z, u0)
    Zp = Z + k0
    u1 = sq2 * dW if b is None else sq2 * dW - h * b(t + h, Zp)
    return Z + 0.5 * (k0 + incr(Zp, u1))


def _run_shard(g, b, t0, k, h, x0, cfg, stream, shard, count, integrand, reduce_each, record):
    rng = _rng(cfg.seed, stream, shard)
    Z = np.array(np.broadcast_to(x0, (count, g.n)), dtype=float)
    acc = np.zeros(count) if integrand is not None else None
    path = [Z.copy()] if record else None
    t = t0
    prev = integrand(t, Z) if integrand is not None else None
    for i in range(k):
        dW = rng.standard_normal((count, g.n1)) * math.sqrt(h)
        Z = _advance(g, Z, t, h, dW, b, cfg.scheme)
        t = t0 + (i + 1) * h
        if reduce_each:
            Z = reduce(g, Z, check=False)[0]
        if integrand is not None:
            cur = integrand(t, Z)
            acc += 0.5 * h * (prev + cur)
            prev = cur
        if record:
            path.append(Z.copy())
    return Z, acc, (np.stack(path) if record else None)


def simulate(g: GroupDescriptor, b, t0: float, t1: float, x0, cfg: SDEConfig, *,
             stream: int = 0, integrand: Callable | None = None, reduce_each: bool = False,
             record_path: bool = False):
    """Integrate the diffusion for ``cfg.N`` particles.

    Parameters
    ----------
    b : callable or None
        Drift ``b(t, Z) -> (P, n1)``; None means zero drift.
    x0 : array_like
        Start point ``(n,)`` shared by all particles, or ``(N, n)``.
    integrand : callable, optional
        ``f(t, Z) -> (P,)``; its time integral along each path is
        accumulated with the trapezoid rule.
    reduce_each : bool
        Reduce to the fundamental domain after every step (torus particles).

    Returns
    -------
    endpoints : ndarray (N, n)
    integrals : ndarray (N,) or None
    path : ndarray (steps+1, N, n) or None
    """
    x0 = g.check_point(x0)
    N = cfg.N if x0.ndim == 1 else len(x0)
    k, h = _steps(t0, t1, cfg.dt)
    shards = [(s, lo, min(N, lo + cfg.shard_size)) for s, lo in enumerate(range(0, N, cfg.shard_size))]

    def work(item):
        s, lo, hi = item
        start = x0 if x0.ndim == 1 else x0[lo:hi]
        return _run_shard(g, b, t0, k, h, start, cfg, stream, s, hi - lo, integrand,
                          reduce_each, record_path)

    if cfg.threads > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(work, shards))
    else:
        results = [work(s) for s in shards]
    Z = np.concatenate([r[0] for r in results])
    acc = np.concatenate([r[1] for r in results]) if integrand is not None else None
    path = np.concatenate([r[2] for r in results], axis=1) if record_path else None
    return Z, acc, path


def sample_path(g: GroupDescriptor, b, t0: float, t1: float, x0, cfg: SDEConfig,
                return_path: bool = False, stream: int = 0):
    """Endpoints (and optionally full paths) of ``cfg.N`` trajectories."""
    Z, _, path = simulate(g, b, t0, t1, x0, cfg, stream=stream, record_path=return_path)
    return (Z, path) if return_path else Z


def _mean_stderr(vals):
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        raise ValueError("no samples")
    if np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    mean = math.fsum(vals) / vals.size
    var = math.fsum((vals - mean) ** 2) / max(1, vals.size - 1)
    return mean, math.sqrt(var / vals.size)


def _as_function(f):
    if callable(f):
        return f
    raise TypeError("f must be a GridFunction or a vectorized callable")


def heat_apply(g: GroupDescriptor, f, t: float, x, cfg: SDEConfig, stream: int = 0):
    """Monte Carlo value of ``(e^{t Delta_X} f)(x)``; returns ``(mean, stderr)``."""
    f = _as_function(f)
    x = g.check_point(x)
    if t == 0:
        return float(np.asarray(f(x[None]))[0]), 0.0
    Z = sample_path(g, None, 0.0, t, x, cfg, stream=stream)
    return _mean_stderr(f(Z))


def endpoint_increments(g: GroupDescriptor, t: float, cfg: SDEConfig, stream: int = 0) -> np.ndarray:
    """Driftless endpoints started at the origin, reusable by left translation."""
    return sample_path(g, None, 0.0, t, np.zeros(g.n), cfg, stream=stream)


def heat_apply_many(g: GroupDescriptor, f, t: float, X, cfg: SDEConfig, stream: int = 0,
                    increments: np.ndarray | None = None, chunk: int = 2_000_000):
    """Heat semigroup at many points with common random numbers.

    Driftless paths from ``x`` are left translates ``x o Z`` of paths from
    the origin, so one sample of ``Z`` serves every ``x``.  Returns
    ``(means, stderrs)`` with the shape of ``X[..., 0]``.
    """
    f = _as_function(f)
    X = g.check_point(X)
    shape = X.shape[:-1]
    X = X.reshape(-1, g.n)
    if t == 0:
        return np.asarray(f(X), dtype=float).reshape(shape), np.zeros(shape)
    Z = endpoint_increments(g, t, cfg, stream) if increments is None else increments
    N = len(Z)
    means = np.empty(len(X))
    errs = np.empty(len(X))
    step = max(1, chunk // N)
    for lo in range(0, len(X), step):
        pts = compose(g, X[lo:lo + step, None, :], Z[None])
        vals = np.asarray(f(pts), dtype=float)
        means[lo:lo + step] = vals.mean(axis=1)
        errs[lo:lo + step] = vals.std(axis=1, ddof=1) / math.sqrt(N) if N > 1 else 0.0
    return means.reshape(shape), errs.reshape(shape)


# ---------------------------------------------------------------------------
# kernel density estimation


class HeatKernelKDE:
    """Density estimate of Gamma_0(t, .) from driftless endpoints started at 0.

    The window is the normalized bump of scale ``bandwidth`` in the
    homogeneous norm, ``K_h(Z^-1 o x)``, so every window integrates to one
    and the estimate has unit mass exactly.  Default bandwidth is
    ``N^(-1/(Q+4)) t^(1/2)``.
    """

    def __init__(self, g: GroupDescriptor, t: float, cfg: SDEConfig, bandwidth: float | None = None,
                 stream: int = 0, endpoints: np.ndarray | None = None):
        from .mollifiers import BumpProfile

        if not t > 0:
            raise ValueError("kernel estimates need t > 0")
        self.g, self.t, self.cfg = g, float(t), cfg
        self.Z = endpoint_increments(g, t, cfg, stream) if endpoints is None else endpoints
        self.N = len(self.Z)
        self.bandwidth = float(bandwidth) if bandwidth else self.N ** (-1.0 / (g.Q + 4)) * math.sqrt(t)
        self.profile = BumpProfile(g, self.bandwidth)
        self.tree = cKDTree(self.Z[:, : g.n1])

    def evaluate(self, X, chunk: int = 4096):
        """Return ``(values, stderrs)`` at points ``X``."""
        g = self.g
        X = g.check_point(X)
        shape = X.shape[:-1]
        X = X.reshape(-1, g.n)
        vals = np.zeros(len(X))
        sq = np.zeros(len(X))
        for lo in range(0, len(X), chunk):
            xs = X[lo:lo + chunk]
            lists = self.tree.query_ball_point(xs[:, : g.n1], self.bandwidth * (1 + 1e-12))
            counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
            if counts.sum() == 0:
                continue
            idx = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists])
            owner = np.repeat(np.arange(len(xs)), counts)
            w = compose(g, inverse(g, self.Z[idx]), xs[owner])
            k = self.profile(w)
            vals[lo:lo + chunk] = np.bincount(owner, weights=k, minlength=len(xs))
            sq[lo:lo + chunk] = np.bincount(owner, weights=k * k, minlength=len(xs))
        mean = vals / self.N
        var = np.maximum(sq / self.N - mean ** 2, 0.0)
        err = np.sqrt(var / max(1, self.N - 1))
        return mean.reshape(shape), err.reshape(shape)

    def __call__(self, X):
        return self.evaluate(X)[0]


def estimate_kernel(g: GroupDescriptor, t: float, x, cfg: SDEConfig, bandwidth: float | None = None,
                    stream: int = 0) -> HeatKernelEstimate:
    """Kernel density estimate of Gamma_0(t, x); exact zero for t <= 0."""
    x = g.check_point(x)
    if t <= 0:
        return HeatKernelEstimate(float(t), tuple(map(float, x)), 0.0, 0.0, 0.0, 0, exact_zero=True)
    kde = HeatKernelKDE(g, t, cfg, bandwidth, stream)
    v, e = kde.evaluate(x[None])
    return HeatKernelEstimate(float(t), tuple(map(float, x)), float(v[0]), float(e[0]),
                              kde.bandwidth, kde.N)


def kde_mass(kde: HeatKernelKDE, M: int = 40_000, seed: int = 1, inflate: float = 1.6):
    """Importance-sampling estimate of the total mass of a KDE, with its standard error.

    Proposal: Gaussian first layer with variance ``2 t inflate^2`` and a
    Laplace law of scale ``t`` on each central coordinate, both heavier
    tailed than the heat kernel.
    """
    g, t = kde.g, kde.t
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    s1 = math.sqrt(2 * t) * inflate
    n1, n2 = g.n1, g.n - g.n1
    X = np.empty((M, g.n))
    X[:, :n1] = rng.normal(scale=s1, size=(M, n1))
    logq = np.sum(-0.5 * (X[:, :n1] / s1) ** 2, axis=1) - n1 * math.log(s1 * math.sqrt(2 * math.pi))
    if n2:
        b = (t + kde.bandwidth ** 2) * max(1.0, g.bracket_norm)
        X[:, n1:] = rng.laplace(scale=b, size=(M, n2))
        logq += np.sum(-np.abs(X[:, n1:]) / b, axis=1) - n2 * math.log(2 * b)
    vals = kde(X) / np.exp(logq)
    return _mean_stderr(vals)


def fit_gaussian_bound(t, x_norm, values, Q: int):
    """Fit ``values <= c0 t^(-Q/2) exp(-|x|^2 / (c t))``.

    ``1/c`` comes from least squares on the logarithm over the points with
    positive values; ``c0`` is then the smallest constant making the bound
    hold at every sample.  Returns ``(c0, c)``.
    """
    t, r, v = (np.asarray(a, dtype=float).ravel() for a in (t, x_norm, values))
    pos = v > 0
    y = np.log(v[pos]) + 0.5 * Q * np.log(t[pos])
    s = r[pos] ** 2 / t[pos]
    A = np.stack([np.ones_like(s), -s], axis=1)
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    inv_c = max(coef[1], 1e-12)
    c = 1.0 / inv_c
    c0 = float(np.max(v * t ** (0.5 * Q) * np.exp(r ** 2 / (c * t))))
    return c0, c


# ---------------------------------------------------------------------------
# endpoint dumps


def write_endpoints(path, Z: np.ndarray, weights: np.ndarray | None = None):
    """Binary records of ``n`` float64 coordinates followed by one float64 weight."""
    Z = np.asarray(Z, dtype="<f8")
    w = np.full(len(Z), 1.0 / len(Z)) if weights is None else np.asarray(weights, dtype="<f8")
    np.concatenate([Z, w[:, None]], axis=1).astype("<f8").tofile(path)


def read_endpoints(path, n: int):
    rec = np.fromfile(path, dtype="<f8").reshape(-1, n + 1)
    return rec[:, :n], rec[:, n]
