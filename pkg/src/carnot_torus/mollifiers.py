"""Mollifiers on Carnot groups and tori.

* the compact bump ``psi_eps = C eps^-Q psi(D_{1/eps} x)`` with
  ``psi(x) = exp(1 / (||x||^(2 r!) - 1))`` inside the unit gauge ball;
* its torus version ``g_eps(x) = int_C sum_k psi_eps(k o x o y^-1) g(y) dy``;
* the same kernel applied to atomic measures;
* the heat mollifier: a time bump in t and the heat semigroup at time eps
  in space.

For step two groups the substitution ``w = k o x o y^-1`` maps (lattice) x
[0,1)^n bijectively onto the group, so

    g_eps(x) = int psi_eps(w) g(Y(w, x)) dw,

where ``Y(w, x)`` is the unique point of [0,1)^n of the form
``w^-1 o k o x``.  Integrals against ``psi_eps`` use a fixed tensor
Gauss-Legendre rule on the dilated unit box whose weights are normalized
to sum to one, so constants are reproduced exactly.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .group import GroupDescriptor, compose, dilate, homogeneous_norm, inverse, resolve_group
from .heat import SDEConfig, endpoint_increments
from .measures import DiscreteMeasure
from .torus import GridFunction, Kernel, grid_nodes, lattice_point, periodize_kernel

__all__ = [
    "BumpProfile",
    "bump_psi_eps",
    "bump_integral",
    "bump_quadrature",
    "time_bump",
    "representative",
    "mollify_torus",
    "mollify_measure",
    "mollified_atoms",
    "deposit",
    "SpaceTimeFunction",
    "HeatMollifier",
    "mollify_heat",
]


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


@functools.lru_cache(maxsize=None)
def _bump_integral_cached(step, layer_dims):
    dims = layer_dims
    if step == 1:
        (d,) = dims
        f = lambda r: math.exp(1.0 / (r * r - 1.0)) * r ** (d - 1) if r < 1 else 0.0
        val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
        return _sphere_area(d) * val
    d1, d2 = dims
    # layer-polar coordinates: rho1 in [0,1], rho2 in [0, sqrt(1 - rho1^4)]

    def inner(r2, r1):
        s = r1 ** 4 + r2 ** 2
        return math.exp(1.0 / (s - 1.0)) * r1 ** (d1 - 1) * r2 ** (d2 - 1) if s < 1 else 0.0

    val, _ = integrate.dblquad(inner, 0.0, 1.0, 0.0, lambda r1: math.sqrt(max(0.0, 1 - r1 ** 4)),
                               epsabs=1e-15, epsrel=1e-13)
    return _sphere_area(d1) * _sphere_area(d2) * val


def bump_integral(g: GroupDescriptor) -> float:
    """``int psi`` over R^n for the unnormalized unit bump."""
    return _bump_integral_cached(g.step, g.layer_dims)


def _psi(g, u):
    e = 2 * math.factorial(g.step)
    s = homogeneous_norm(g, u) ** e
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 / (s[inside] - 1.0))
    return out


@dataclass(frozen=True, eq=False)
class BumpProfile:
    """Normalized bump of scale ``eps``; ``C = 1 / int psi``."""

    g: GroupDescriptor
    eps: float
    C: float = field(init=False)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "C", 1.0 / bump_integral(self.g))

    def __call__(self, x) -> np.ndarray:
        return bump_psi_eps(self, x)

    def kernel(self) -> Kernel:
        return Kernel(self.__call__, support_radius=self.eps)


def bump_psi_eps(profile: BumpProfile, x) -> np.ndarray:
    g, eps = profile.g, profile.eps
    u = dilate(g, 1.0 / eps, g.check_point(x))
    return profile.C * eps ** (-g.Q) * _psi(g, u)


@functools.lru_cache(maxsize=None)
def _quadrature_cached(step, layer_dims, q):
    n = sum(layer_dims)
    t, w = np.polynomial.legendre.leggauss(q)
    grids = np.meshgrid(*([t] * n), indexing="ij")
    nodes = np.stack(grids, axis=-1).reshape(-1, n)
    wts = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    return nodes, wts


def bump_quadrature(g: GroupDescriptor, q: int = 6):
    """Nodes ``u`` in the unit box and weights proportional to ``psi(u)``.

    Returns ``(nodes, weights, raw)``: weights sum to one; ``raw`` is the
    unnormalized Gauss-Legendre value of ``C int psi``, close to one.
    """
    nodes, wts = _quadrature_cached(g.step, g.layer_dims, int(q))
    vals = wts * _psi(g, nodes)
    keep = vals > 0
    raw = float(vals.sum() / bump_integral(g))
    return nodes[keep], vals[keep] / vals.sum(), raw


def time_bump(s) -> np.ndarray:
    """Standard bump ``exp(-1/(1 - s^2))`` on [-1, 1], normalized to unit integral."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out / _TIME_BUMP_MASS


_TIME_BUMP_MASS = integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1, 1,
                                 epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def representative(g: GroupDescriptor, w, x) -> np.ndarray:
    """The unique point of [0,1)^n of the form ``w^-1 o kappa(a) o x``."""
    w, x = np.broadcast_arrays(g.check_point(w), g.check_point(x))
    n1 = g.n1
    winv = inverse(g, w)
    a1 = -np.floor(x[..., :n1] - w[..., :n1])
    a = np.zeros_like(x)
    a[..., :n1] = a1
    t = compose(g, winv, compose(g, lattice_point(g, a), x))
    y = t.copy()
    # first layer is already in [0,1) up to rounding
    y[..., :n1] = np.mod(t[..., :n1], 1.0)
    if g.step == 2:
        y[..., n1:] = t[..., n1:] - np.floor(t[..., n1:])
    y[y >= 1.0] = 0.0
    return y


def _check_eps(eps):
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")


def mollify_torus(g: GroupDescriptor, fn: GridFunction, eps: float, q: int = 6,
                  chunk: int = 1_000_000) -> GridFunction:
    """Bump mollification of a periodic grid function, evaluated at its nodes."""
    _check_eps(eps)
    nodes_u, W, _ = bump_quadrature(g, q)
    wq = dilate(g, eps, nodes_u)
    X = fn.nodes().reshape(-1, g.n)
    out = np.zeros(len(X))
    step = max(1, chunk // len(wq))
    for lo in range(0, len(X), step):
        xs = X[lo:lo + step]
        Y = representative(g, wq[None, :, :], xs[:, None, :])
        out[lo:lo + step] = fn.evaluate(Y) @ W
    return fn.with_values(out.reshape(fn.resolution))


def mollified_atoms(g: GroupDescriptor, mu: DiscreteMeasure, eps: float, q: int = 5) -> DiscreteMeasure:
    """Quadrature discretization of the mollified measure.

    The density ``sum_j w_j sum_k psi_eps(k o x o y_j^-1)`` is the law of
    ``reduce(W o y_j)`` with ``W ~ psi_eps``; each atom is replaced by the
    images of the bump quadrature nodes.
    """
    _check_eps(eps)
    nodes_u, W, _ = bump_quadrature(g, q)
    wq = dilate(g, eps, nodes_u)
    pts = compose(g, wq[None, :, :], mu.points[:, None, :]).reshape(-1, g.n)
    wts = (mu.weights[:, None] * W[None, :]).reshape(-1)
    return DiscreteMeasure(g, pts, wts)


def deposit(g: GroupDescriptor, mu: DiscreteMeasure, resolution) -> GridFunction:
    """Grid density whose node pairing reproduces ``mu`` on interpolated test functions.

    Node value ``M * sum_j w_j Lambda_node(y_j)`` with ``Lambda`` the
    interpolation weights, so ``mean(rho * phi_nodes) = <mu, interp(phi)>``
    and the mass ``mean(rho)`` equals ``mu``'s mass exactly.
    """
    proto = GridFunction(g, np.zeros(tuple(resolution)))
    M = math.prod(proto.resolution)
    acc = np.zeros(M)
    if len(mu):
        for flat, w in proto.stencil(mu.points):
            acc += np.bincount(flat, weights=w * mu.weights, minlength=M)
    return proto.with_values((M * acc).reshape(proto.resolution))


def mollify_measure(g: GroupDescriptor, mu: DiscreteMeasure, eps: float, resolution,
                    method: str = "sample", q: int = 6) -> GridFunction:
    """Density of the mollified measure on a grid.

    ``method="sample"`` evaluates ``sum_j w_j sum_k psi_eps(k o x o y_j^-1)``
    at the nodes (needs ``eps`` resolved by the grid in every layer).
    ``method="deposit"`` deposits the quadrature atoms of
    :func:`mollified_atoms` with interpolation weights; this conserves
    mass exactly and is used when the kernel is narrower than a cell.
    """
    _check_eps(eps)
    if method == "deposit":
        return deposit(g, mollified_atoms(g, mu, eps, q), resolution)
    if method != "sample":
        raise ValueError(f"unknown method {method!r}")
    X = grid_nodes(tuple(resolution)).reshape(-1, g.n)
    kern = BumpProfile(g, eps).kernel()
    dens = np.zeros(len(X))
    for y, w in zip(mu.points, mu.weights):
        dens += w * periodize_kernel(g, kern, X, y[None, :])
    return GridFunction(g, dens.reshape(tuple(resolution)))


# ---------------------------------------------------------------------------
# space-time functions and the heat mollifier


class SpaceTimeFunction:
    """Periodic field sampled on a time grid: ``values[k]`` is the slice at ``times[k]``.

    ``alpha`` and ``modulus`` are optional metadata (spatial Holder
    exponent and a time-modulus estimate).  Between time nodes values are
    interpolated linearly; outside ``[times[0], times[-1]]`` the nearest
    slice is used, which is the constant continuous extension.
    """

    def __init__(self, g: GroupDescriptor, times, values, alpha: float | None = None,
                 modulus: float | None = None, meta: dict | None = None):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape[0] != len(times) or values.ndim != g.n + 1:
            raise ValueError(f"values of shape {values.shape} do not match {len(times)} times")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be increasing")
        values.setflags(write=False)
        self.g, self.times, self.values = g, times, values
        self.alpha, self.modulus = alpha, modulus
        self.meta = dict(meta or {})

    @classmethod
    def constant_in_time(cls, fn: GridFunction, times, **kw) -> "SpaceTimeFunction":
        vals = np.broadcast_to(fn.values, (len(times),) + fn.resolution)
        return cls(fn.g, times, np.array(vals), **kw)

    @classmethod
    def from_function(cls, g, f, times, resolution, **kw) -> "SpaceTimeFunction":
        X = grid_nodes(resolution)
        return cls(g, times, np.stack([f(t, X) for t in times]), **kw)

    @property
    def resolution(self):
        return self.values.shape[1:]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def slice(self, k: int) -> GridFunction:
        return GridFunction(self.g, self.values[k])

    def slice_at(self, t: float) -> GridFunction:
        return GridFunction(self.g, self._values_at(t))

    def _values_at(self, t):
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        k = int(np.searchsorted(ts, t, side="right") - 1)
        lam = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1 - lam) * self.values[k] + lam * self.values[k + 1]

    def __call__(self, t, points):
        return self.slice_at(t).evaluate(points)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values) -> "SpaceTimeFunction":
        return SpaceTimeFunction(self.g, self.times, values, self.alpha, self.modulus, self.meta)

    def save(self, path):
        """Write ``path`` (little-endian float64 slices) plus ``path.json`` (header)."""
        path = Path(path)
        path.write_bytes(self.values.astype("<f8").tobytes(order="C"))
        header = {"times": self.times.tolist(), "resolution": list(self.resolution),
                  "alpha": self.alpha, "modulus": self.modulus, "meta": self.meta,
                  "group": self.g.to_dict(), "dtype": "<f8", "order": "C"}
        Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, g: GroupDescriptor | None = None) -> "SpaceTimeFunction":
        path = Path(path)
        header = json.loads(Path(str(path) + ".json").read_text())
        g = g or resolve_group(header["group"])
        shape = (len(header["times"]),) + tuple(header["resolution"])
        vals = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(shape)
        return cls(g, header["times"], vals, header.get("alpha"), header.get("modulus"),
                   header.get("meta"))


class HeatMollifier:
    """``f_eps(t, x) = int int phi_eps(t - s, y^-1 o x) f(s, y) dy ds`` for one (eps, cfg).

    The time factor is the normalized bump of width ``eps``, integrated
    with ``time_nodes`` Gauss-Legendre points.  The space factor is the
    heat kernel at time ``eps``, applied as an average over ``x o Z_j``
    with one fixed sample of driftless endpoints ``Z_j``; the same sample
    is used at every point, so the operator is linear, periodic and
    deterministic given the seed.
    """

    def __init__(self, g: GroupDescriptor, eps: float, cfg: SDEConfig, time_nodes: int = 16,
                 stream: int = 11):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.g, self.eps, self.cfg = g, float(eps), cfg
        self.Z = endpoint_increments(g, eps, cfg.with_(dt=min(cfg.dt, eps)), stream)
        s, w = np.polynomial.legendre.leggauss(time_nodes)
        w = w * time_bump(s)
        self.s, self.w = s, w / w.sum()

    def time_slice(self, fn, t: float) -> GridFunction:
        """Time convolution of ``fn`` at ``t`` (continuous extension outside its grid)."""
        vals = sum(wk * fn._values_at(t - self.eps * sk) for sk, wk in zip(self.s, self.w))
        return GridFunction(self.g, vals)

    def apply_space(self, slice_fn, points, chunk: int = 2_000_000):
        """Heat semigroup at time eps applied to ``slice_fn`` at ``points``; ``(mean, stderr)``."""
        g = self.g
        P = g.check_point(points)
        shape = P.shape[:-1]
        P = P.reshape(-1, g.n)
        N = len(self.Z)
        means, errs = np.empty(len(P)), np.empty(len(P))
        step = max(1, chunk // N)
        for lo in range(0, len(P), step):
            vals = slice_fn(compose(g, P[lo:lo + step, None, :], self.Z[None]))
            means[lo:lo + step] = vals.mean(axis=1)
            errs[lo:lo + step] = vals.std(axis=1) / math.sqrt(N)
        return means.reshape(shape), errs.reshape(shape)

    def __call__(self, fn: "SpaceTimeFunction", t: float, points):
        return self.apply_space(self.time_slice(fn, t), points)


def mollify_heat(fn: SpaceTimeFunction, eps: float, cfg: SDEConfig, time_nodes: int = 16,
                 return_error: bool = False):
    """Heat mollification of a space-time field, sampled on its own grid."""
    mol = HeatMollifier(fn.g, eps, cfg, time_nodes)
    X = grid_nodes(fn.resolution)
    out, err = [], []
    for t in fn.times:
        m, e = mol(fn, t, X)
        out.append(m)
        err.append(e)
    res = SpaceTimeFunction(fn.g, fn.times, np.stack(out), fn.alpha, fn.modulus,
                            {"eps": eps, "N": len(mol.Z), "seed": cfg.seed})
    return (res, np.stack(err)) if return_error else res
