"""Grid and Monte Carlo solvers for the backward equation and its dual FPK equation.

Backward problem on [0, T] x torus::

    -d_t z - Delta_X z + b . D_X z = f,    z(T) = z_T,

solved through ``w(s) = z(T - s)``, which obeys ``d_s w = Delta_X w - b . D_X w + f``.
Forward (Fokker-Planck-Kolmogorov) problem::

    d_t rho - Delta_X rho - div_X(rho b) = upsilon,    rho(0) = rho_0.

Discretization
--------------
The horizontal translates ``x o (+-delta e_i)`` with ``delta = 1/m_i`` map the
first-layer grid onto itself; only the central coordinates move off the grid,
by an amount that depends on the first-layer node alone.  These central
shifts are applied exactly for trigonometric interpolants (FFT along the
central axes, ``interp="spectral"``) or with linear interpolation
(``interp="linear"``).  In both cases the shift operators are orthogonal
pairs, ``T_i^- = (T_i^+)^T``, so

    Delta_h = sum_i (T_i^+ - 2 + T_i^-) / delta_i^2     is symmetric,
    D_i     = (T_i^+ - T_i^-) / (2 delta_i)            is antisymmetric,

and ``div_h = -D_h^T`` is again ``sum_i D_i``.  Time stepping is explicit
Euler with the coefficients of each step frozen at its earlier time
``t_n``; with that choice the grid pairing of the two solvers satisfies the
weak formulation exactly up to the left/right placement of the source sums.
"""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .group import GroupDescriptor, compose, embed_horizontal
from .heat import SDEConfig, _mean_stderr, simulate
from .measures import DiscreteMeasure
from .mollifiers import SpaceTimeFunction, mollify_measure
from .torus import GridFunction, grid_nodes, reduce

__all__ = [
    "CFLError",
    "ContractError",
    "BackwardProblem",
    "FPKProblem",
    "ParticleEnsemble",
    "HorizontalStencil",
    "cfl_bound",
    "solve_backward_fd",
    "solve_fpk_fd",
    "feynman_kac_oracle",
    "simulate_fpk_particles",
    "duality_sides",
    "duality_residual",
    "perturbed_problem",
    "stability_ladder",
]


class CFLError(ValueError):
    """Requested time step exceeds the explicit stability bound."""

    def __init__(self, dt, admissible):
        self.dt, self.admissible = float(dt), float(admissible)
        super().__init__(f"dt={dt:.6g} violates the stability bound; use dt <= {admissible:.6g}")


class ContractError(ValueError):
    """Inputs of a solver or checker do not fit together."""


# ---------------------------------------------------------------------------
# problem data


def _space_field(obj, g) -> Callable:
    """Scalar field ``X -> values`` from a number, GridFunction or callable."""
    if obj is None:
        obj = 0.0
    if isinstance(obj, (int, float)):
        c = float(obj)
        return lambda X: np.full(np.shape(X)[:-1], c)
    if callable(obj):
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a scalar field")


def _time_field(obj, g) -> Callable:
    """Scalar field ``(t, X) -> values``; time-independent inputs are lifted."""
    if isinstance(obj, SpaceTimeFunction):
        return lambda t, X: obj(t, X)
    if obj is None or isinstance(obj, (int, float, GridFunction)):
        f = _space_field(obj, g)
        return lambda t, X: f(X)
    if callable(obj):
        if _takes_one_argument(obj):
            return lambda t, X: obj(X)
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a space-time field")


def _takes_one_argument(fn) -> bool:
    """True when ``fn`` accepts ``fn(X)`` but not ``fn(t, X)``."""
    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return False
    try:
        sig.bind(0.0, None)
        return False
    except TypeError:
        return True


def _drift_field(obj, g) -> Callable | None:
    """Horizontal field ``(t, X) -> (..., n1)``; None for zero drift."""
    if obj is None:
        return None
    if callable(obj):
        return obj
    arr = np.asarray(obj, dtype=float)
    if arr.shape == (g.n1,):
        return lambda t, X: np.broadcast_to(arr, np.shape(X)[:-1] + (g.n1,))
    comps = list(obj)
    if len(comps) == g.n1 and all(isinstance(c, GridFunction) for c in comps):
        return lambda t, X: np.stack([c(X) for c in comps], axis=-1)
    raise TypeError("drift must be None, a constant vector, n1 GridFunctions or a callable")


@dataclass
class BackwardProblem:
    """Data ``(b, f, z_T, T)`` of the backward equation.

    ``b(t, X) -> (..., n1)``, ``f(t, X)`` and ``zT(X)`` may be callables,
    numbers, GridFunctions (``f`` also a SpaceTimeFunction).  Callables are
    evaluated at reduced points, so they only need to be periodic.
    """

    g: GroupDescriptor
    T: float
    b: object = None
    f: object = 0.0
    zT: object = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        self.drift = _drift_field(self.b, self.g)
        self.source = _time_field(self.f, self.g)
        self.terminal = _space_field(self.zT, self.g)


@dataclass
class FPKProblem:
    """Data ``(b, upsilon, rho_0, T)`` of the FPK equation.

    ``rho0`` and ``upsilon`` are densities (numbers, GridFunctions,
    callables) or DiscreteMeasures; measures are mollified at twice the
    stencil step before grid solves.  A measure-valued ``upsilon`` is
    constant in time.
    """

    g: GroupDescriptor
    T: float
    b: object = None
    upsilon: object = None
    rho0: object = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        self.drift = _drift_field(self.b, self.g)

    @property
    def has_source(self) -> bool:
        u = self.upsilon
        if u is None:
            return False
        if isinstance(u, (int, float)):
            return u != 0
        if isinstance(u, DiscreteMeasure):
            return len(u) > 0 and bool(np.any(u.weights != 0))
        return True


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted particles on the torus at time ``t`` with their RNG lineage."""

    g: GroupDescriptor
    points: np.ndarray
    weights: np.ndarray
    t: float
    lineage: dict = field(default_factory=dict)

    def as_measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.g, self.points, self.weights)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)


def _unit_weights(N: int) -> np.ndarray:
    w = np.full(N, 1.0 / N)
    if N > 1:
        w[-1] = 1.0 - math.fsum(w[:-1])
    return w


# ---------------------------------------------------------------------------
# stencil


class HorizontalStencil:
    """Shift, gradient, divergence and sub-Laplacian on a node grid."""

    def __init__(self, g: GroupDescriptor, resolution, interp: str = "spectral"):
        if interp not in ("spectral", "linear"):
            raise ValueError(f"unknown interpolation {interp!r}")
        res = tuple(int(m) for m in resolution)
        if len(res) != g.n:
            raise ContractError(f"resolution {res} does not match dimension {g.n}")
        self.g, self.resolution, self.interp = g, res, interp
        n1 = g.n1
        self.m1, self.mc = res[:n1], res[n1:]
        self.M1 = math.prod(self.m1)
        self.delta = 1.0 / np.array(self.m1, dtype=float)
        J = grid_nodes(self.m1).reshape(-1, n1)
        self._maps = {}
        for i in range(n1):
            for sgn in (1, -1):
                P = np.zeros((self.M1, g.n))
                P[:, :n1] = J
                h = np.zeros(n1)
                h[i] = sgn * self.delta[i]
                x0 = reduce(g, compose(g, P, embed_horizontal(g, h)), check=False)[0]
                Jt = np.rint(x0[:, :n1] * np.array(self.m1)).astype(np.int64) % np.array(self.m1)
                target = np.ravel_multi_index(tuple(Jt.T), self.m1)
                shift = x0[:, n1:]
                self._maps[i, sgn] = (target, self._prepare(shift))

    def _prepare(self, shift):
        if not self.mc:
            return None
        if self.interp == "spectral":
            phases = []
            for d, m in enumerate(self.mc):
                k = np.fft.rfftfreq(m, 1.0 / m) if d == len(self.mc) - 1 else np.fft.fftfreq(m, 1.0 / m)
                phases.append(np.exp(2j * np.pi * shift[:, d, None] * k[None, :]))
            return phases
        u = shift * np.array(self.mc)
        lo = np.floor(u)
        return lo.astype(np.int64), u - lo

    # -- shifts -----------------------------------------------------------------
    def _spectrum(self, W):
        W = np.asarray(W, dtype=float).reshape((self.M1,) + self.mc)
        if not self.mc or self.interp != "spectral":
            return W
        return np.fft.rfftn(W, axes=tuple(range(1, 1 + len(self.mc))))

    def _shift(self, H, i, sgn):
        """``(T_i^sgn W)(x) = W(x o sgn delta_i e_i)`` from the prepared array H."""
        target, prep = self._maps[i, sgn]
        if not self.mc:
            return H[target].reshape(self.resolution)
        if self.interp == "spectral":
            G = H[target]
            nc = len(self.mc)
            for d, ph in enumerate(prep):
                shape = [len(target)] + [1] * nc
                shape[1 + d] = ph.shape[1]
                G = G * ph.reshape(shape)
            out = np.fft.irfftn(G, s=self.mc, axes=tuple(range(1, 1 + nc)))
            return out.reshape(self.resolution)
        lo, frac = prep
        nc = len(self.mc)
        grids = np.meshgrid(*[np.arange(m) for m in self.mc], indexing="ij")
        out = np.zeros((len(target),) + self.mc)
        rows = target.reshape((-1,) + (1,) * nc)
        for corner in np.ndindex(*(2,) * nc):
            w = np.ones(len(target))
            idx = []
            for d in range(nc):
                c = corner[d]
                w = w * (frac[:, d] if c else 1.0 - frac[:, d])
                idx.append((grids[d][None] + (lo[:, d] + c).reshape((-1,) + (1,) * nc)) % self.mc[d])
            out += w.reshape((-1,) + (1,) * nc) * H[(rows,) + tuple(idx)]
        return out.reshape(self.resolution)

    def shift(self, W, i: int, sgn: int) -> np.ndarray:
        return self._shift(self._spectrum(W), i, sgn)

    # -- operators ---------------------------------------------------------------
    def laplacian(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        H = self._spectrum(W)
        out = np.zeros(self.resolution)
        for i, d in enumerate(self.delta):
            out += (self._shift(H, i, 1) + self._shift(H, i, -1) - 2.0 * W) / d ** 2
        return out

    def grad(self, W) -> np.ndarray:
        """Centred horizontal derivatives ``(n1, *m)``."""
        H = self._spectrum(W)
        return np.stack([(self._shift(H, i, 1) - self._shift(H, i, -1)) / (2.0 * d)
                         for i, d in enumerate(self.delta)])

    def derivative(self, W, i: int) -> np.ndarray:
        H = self._spectrum(W)
        return (self._shift(H, i, 1) - self._shift(H, i, -1)) / (2.0 * self.delta[i])

    def divergence(self, V) -> np.ndarray:
        """``div_h V = -D_h^T V = sum_i D_i V_i``."""
        return sum(self.derivative(V[i], i) for i in range(self.g.n1))

    def backward_operator(self, W, B=None) -> np.ndarray:
        """``Delta_h W - b . D_h W`` with ``B`` of shape ``(n1, *m)``."""
        W = np.asarray(W, dtype=float)
        H = self._spectrum(W)
        out = np.zeros(self.resolution)
        for i, d in enumerate(self.delta):
            tp, tm = self._shift(H, i, 1), self._shift(H, i, -1)
            out += (tp + tm - 2.0 * W) / d ** 2
            if B is not None:
                out -= B[i] * (tp - tm) / (2.0 * d)
        return out

    def forward_operator(self, R, B=None) -> np.ndarray:
        """The transpose ``Delta_h R + div_h(R b)`` of :meth:`backward_operator`."""
        out = self.laplacian(R)
        if B is not None:
            out += self.divergence(B * np.asarray(R)[None])
        return out

    def cfl(self, bmax: float) -> float:
        return cfl_bound(self.g, self.resolution, bmax)


def cfl_bound(g: GroupDescriptor, resolution, bmax: float = 0.0) -> float:
    """Conservative explicit bound ``delta^2 / (4 n1 + 2 delta max|b|)``."""
    delta = 1.0 / max(resolution[: g.n1])
    return delta ** 2 / (4 * g.n1 + 2 * delta * float(bmax))


# ---------------------------------------------------------------------------
# grid solvers


def _time_grid(T, dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    K = max(1, math.ceil(T / dt - 1e-9))
    return K, T / K


def _store_mask(K, store_every):
    keep = np.zeros(K + 1, dtype=bool)
    keep[::max(1, int(store_every))] = True
    keep[[0, K]] = True
    return keep


def _drift_on_grid(drift, ts, X, g):
    if drift is None:
        return None, 0.0
    Bs = [np.moveaxis(np.asarray(drift(t, X), dtype=float), -1, 0) for t in ts]
    bmax = max(float(np.max(np.sqrt(np.sum(B ** 2, axis=0)))) for B in Bs)
    return Bs, bmax


def _check_cfl(h, admissible, check):
    if check and h > admissible * (1 + 1e-12):
        raise CFLError(h, admissible)


def solve_backward_fd(prob: BackwardProblem, resolution, dt: float, interp: str = "spectral",
                      store_every: int = 1, check_cfl: bool = True) -> SpaceTimeFunction:
    """Explicit finite differences for the backward equation.

    The step ``dt`` is rounded down to ``T / ceil(T / dt)``.  Returns the
    solution on the stored times (every ``store_every`` steps plus both
    ends) in increasing order; ``meta`` records the step, the stability
    bound and the drift maximum.
    """
    g = prob.g
    st = HorizontalStencil(g, resolution, interp)
    K, h = _time_grid(prob.T, dt)
    ts = np.arange(K + 1) * h
    ts[-1] = prob.T
    X = grid_nodes(st.resolution)
    Bs, bmax = _drift_on_grid(prob.drift, ts[:-1], X, g)
    admissible = st.cfl(bmax)
    _check_cfl(h, admissible, check_cfl)
    keep = _store_mask(K, store_every)
    z = np.array(np.broadcast_to(prob.terminal(X), st.resolution), dtype=float)
    stored = {K: z}
    for n in range(K - 1, -1, -1):
        B = Bs[n] if Bs is not None else None
        z = z + h * (st.backward_operator(z, B) + prob.source(ts[n], X))
        if keep[n]:
            stored[n] = z
    idx = sorted(stored)
    meta = {"dt": h, "steps": K, "cfl_bound": admissible, "bmax": bmax, "interp": interp,
            "delta": st.delta.tolist(), "store_every": int(store_every)}
    return SpaceTimeFunction(g, ts[idx], np.stack([stored[k] for k in idx]), meta=meta)


def _density_on_grid(g, obj, resolution, eps, t=0.0):
    """Grid density of a number, GridFunction, callable or measure."""
    X = grid_nodes(resolution)
    if obj is None:
        return np.zeros(tuple(resolution))
    if isinstance(obj, DiscreteMeasure):
        return mollify_measure(g, obj, eps, resolution, method="deposit").values
    if isinstance(obj, SpaceTimeFunction):
        return np.asarray(obj(t, X), dtype=float)
    if isinstance(obj, (int, float)):
        return np.full(tuple(resolution), float(obj))
    if isinstance(obj, GridFunction):
        return np.asarray(obj(X), dtype=float)
    if callable(obj):
        try:
            return np.asarray(obj(t, X), dtype=float)
        except TypeError:
            return np.asarray(obj(X), dtype=float)
    raise TypeError(f"cannot use {type(obj).__name__} as a density")


def _source_sequence(g, upsilon, ts, resolution, eps):
    """Grid densities of the source at the given times (cached when static)."""
    static = upsilon is None or isinstance(upsilon, (int, float, GridFunction, DiscreteMeasure))
    if static:
        v = _density_on_grid(g, upsilon, resolution, eps)
        return lambda n: v
    return lambda n: _density_on_grid(g, upsilon, resolution, eps, ts[n])


def _premollify_eps(st):
    return float(min(1.0, 2.0 * np.max(st.delta)))


def solve_fpk_fd(prob: FPKProblem, resolution, dt: float, interp: str = "spectral",
                 store_every: int = 1, check_cfl: bool = True) -> SpaceTimeFunction:
    """Explicit finite differences for the FPK equation (density on the grid)."""
    g = prob.g
    st = HorizontalStencil(g, resolution, interp)
    K, h = _time_grid(prob.T, dt)
    ts = np.arange(K + 1) * h
    ts[-1] = prob.T
    X = grid_nodes(st.resolution)
    Bs, bmax = _drift_on_grid(prob.drift, ts[:-1], X, g)
    admissible = st.cfl(bmax)
    _check_cfl(h, admissible, check_cfl)
    eps = _premollify_eps(st)
    rho = _density_on_grid(g, prob.rho0, st.resolution, eps)
    ups = _source_sequence(g, prob.upsilon, ts, st.resolution, eps)
    keep = _store_mask(K, store_every)
    stored = {0: rho}
    for n in range(K):
        B = Bs[n] if Bs is not None else None
        rho = rho + h * (st.forward_operator(rho, B) + ups(n))
        if keep[n + 1]:
            stored[n + 1] = rho
    idx = sorted(stored)
    meta = {"dt": h, "steps": K, "cfl_bound": admissible, "bmax": bmax, "interp": interp,
            "delta": st.delta.tolist(), "store_every": int(store_every), "premollify_eps": eps}
    return SpaceTimeFunction(g, ts[idx], np.stack([stored[k] for k in idx]), meta=meta)


# ---------------------------------------------------------------------------
# Monte Carlo


def feynman_kac_oracle(prob: BackwardProblem, t: float, x, cfg: SDEConfig, stream: int = 0):
    """``E[z_T(Z_T) + int_t^T f(s, Z_s) ds]`` over paths started at ``(t, x)``.

    Paths are reduced to the fundamental domain after each step, so the
    data callables only see points of [0,1)^n.  Returns ``(mean, stderr)``.
    """
    g = prob.g
    x = reduce(g, g.check_point(x))[0]
    if t >= prob.T:
        return float(np.asarray(prob.terminal(x[None]))[0]), 0.0
    Z, integral, _ = simulate(g, prob.drift, float(t), prob.T, x, cfg, stream=stream,
                              integrand=prob.source, reduce_each=True)
    return _mean_stderr(prob.terminal(Z) + integral)


def _sample_density(g, rho0, N, rng, resolution):
    if isinstance(rho0, DiscreteMeasure):
        return rho0.sample(N, rng)
    vals = _density_on_grid(g, rho0, resolution, 1.0)
    p = np.clip(vals.reshape(-1), 0.0, None)
    if not p.sum() > 0:
        raise ValueError("initial density has no positive mass")
    idx = rng.choice(p.size, size=N, p=p / p.sum())
    h = 1.0 / np.array(resolution, dtype=float)
    nodes = grid_nodes(resolution).reshape(-1, g.n)[idx]
    pts = nodes + (rng.random((N, g.n)) - 0.5) * h
    return reduce(g, pts)[0]


def simulate_fpk_particles(prob: FPKProblem, cfg: SDEConfig, times, stream: int = 0,
                           sample_resolution=None) -> list:
    """Particle approximation of the FPK solution at the requested times.

    Particles start from ``rho0`` (an atom list is sampled exactly, a
    density through its grid values at ``sample_resolution``) and follow
    the diffusion with drift ``-b``, reduced to the torus every step.
    Sources are not supported; use :func:`solve_fpk_fd`.
    """
    if prob.has_source:
        raise NotImplementedError("particle FPK supports upsilon = 0 only")
    g = prob.g
    times = sorted(float(t) for t in times)
    if times and (times[0] < 0 or times[-1] > prob.T * (1 + 1e-12)):
        raise ValueError("requested times must lie in [0, T]")
    res = tuple(sample_resolution or (32,) * g.n)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(stream, 2**20)))
    Z = _sample_density(g, prob.rho0, cfg.N, rng, res)
    w = _unit_weights(len(Z))
    out, t_prev = [], 0.0
    for seg, t in enumerate(times):
        if t > t_prev:
            Z, _, _ = simulate(g, prob.drift, t_prev, t, Z, cfg.with_(dt=min(cfg.dt, t - t_prev)),
                               stream=stream * 4096 + seg, reduce_each=True)
        pts = Z.copy()
        pts.setflags(write=False)
        out.append(ParticleEnsemble(g, pts, w, t, {"seed": cfg.seed, "stream": stream,
                                                   "segment": seg, "scheme": cfg.scheme}))
        t_prev = t
    return out


# ---------------------------------------------------------------------------
# weak formulation


def _pair(a, b) -> float:
    return float(np.mean(np.asarray(a) * np.asarray(b)))


def _trapezoid(ts, vals) -> float:
    ts, vals = np.asarray(ts), np.asarray(vals)
    if len(ts) < 2:
        return 0.0
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ts)))


def duality_sides(rho: SpaceTimeFunction, b, rho0, upsilon, f, xi, t: float | None = None,
                  interp: str | None = None):
    """Both sides of the weak formulation on the grid of ``rho``.

    The dual solution ``z`` solves the backward equation on ``[0, t]`` with
    terminal value ``xi``, source ``f`` and drift ``b`` on the same grid
    and time step as ``rho``.  Returns ``(lhs, rhs, z)`` with

        lhs = <rho(t), xi> + int_0^t <rho(s), f(s)> ds,
        rhs = <rho_0, z(0)> + int_0^t <upsilon(s), z(s)> ds,

    pairings being node averages and time integrals trapezoidal over the
    stored slices of ``rho``.
    """
    g = rho.g
    t = rho.T if t is None else float(t)
    res = rho.resolution
    dt = rho.meta.get("dt")
    if dt is None:
        raise ContractError("rho carries no time step; pass the output of solve_fpk_fd")
    K = round(t / dt)
    if K < 1 or abs(K * dt - t) > 1e-9 * max(1.0, t):
        raise ContractError(f"t={t} is not on the time grid of rho (dt={dt})")
    on = rho.times <= t + 1e-12
    tr = rho.times[on]
    if abs(tr[-1] - t) > 1e-9 * max(1.0, t):
        raise ContractError(f"rho was not stored at t={t}")
    if isinstance(xi, GridFunction) and xi.resolution != res:
        raise ContractError(f"xi has resolution {xi.resolution}, rho has {res}")
    if isinstance(rho0, GridFunction) and rho0.resolution != res:
        raise ContractError(f"rho0 has resolution {rho0.resolution}, rho has {res}")
    stride = int(rho.meta.get("store_every", 1))
    interp = interp or rho.meta.get("interp", "spectral")
    dual = BackwardProblem(g, t, b=b, f=f, zT=xi)
    z = solve_backward_fd(dual, res, t / K, interp=interp, store_every=stride, check_cfl=False)
    X = grid_nodes(res)
    eps = float(rho.meta.get("premollify_eps", 2.0 / max(res[: g.n1])))
    src = dual.source
    rho_vals = rho.values[on]
    lhs = _pair(rho_vals[-1], dual.terminal(X))
    lhs += _trapezoid(tr, [_pair(r, src(s, X)) for r, s in zip(rho_vals, tr)])
    if not np.allclose(z.times, tr, rtol=0, atol=1e-9 * max(1.0, t)):
        raise ContractError("time grids of rho and the dual solution differ")
    r0 = _density_on_grid(g, rho0, res, eps)
    rhs = _pair(r0, z.values[0])
    ups = _source_sequence(g, upsilon, tr, res, eps)
    rhs += _trapezoid(tr, [_pair(ups(k), z.values[k]) for k in range(len(tr))])
    return lhs, rhs, z


def duality_residual(rho: SpaceTimeFunction, b, rho0, upsilon, f, xi, t: float | None = None,
                     interp: str | None = None) -> float:
    """``|lhs - rhs|`` of :func:`duality_sides`."""
    lhs, rhs, _ = duality_sides(rho, b, rho0, upsilon, f, xi, t, interp)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# data stability


def _value_tx(obj, t, X):
    if obj is None:
        return 0.0
    if isinstance(obj, (int, float)):
        return float(obj)
    try:
        return np.asarray(obj(t, X), dtype=float)
    except TypeError:
        return np.asarray(obj(X), dtype=float)


def _shifted(base, pert, delta):
    if pert is None or delta == 0:
        return base
    return lambda t, X: _value_tx(base, t, X) + delta * _value_tx(pert, t, X)


def perturbed_problem(prob: FPKProblem, delta: float, b=None, rho0=None, upsilon=None) -> FPKProblem:
    """``(b + delta b', rho0 + delta rho0', upsilon + delta upsilon')`` as a new problem.

    Perturbations are numbers or callables ``(t, X)`` / ``X``; measures are
    not accepted here.  Mass-neutral ``rho0'`` and ``upsilon'`` keep the
    two solutions comparable in ``d_1``.
    """
    if any(isinstance(o, DiscreteMeasure) for o in (prob.rho0, prob.upsilon, rho0, upsilon)):
        raise ContractError("perturbations act on densities, not on atom lists")
    drift = prob.drift
    if b is not None and delta != 0:
        db = _drift_field(b, prob.g)
        base = drift
        drift = (lambda t, X: (0.0 if base is None else base(t, X)) + delta * db(t, X))
    return FPKProblem(prob.g, prob.T, b=drift, rho0=_shifted(prob.rho0, rho0, delta),
                      upsilon=_shifted(prob.upsilon, upsilon, delta))


def stability_ladder(prob: FPKProblem, deltas, resolution, dt: float | None = None, b=None,
                     rho0=None, upsilon=None, blocks=None, slices: int = 5,
                     interp: str = "spectral") -> list:
    """``sup_t d_1(rho(t), rho_delta(t))`` and ``K = response / delta`` along a ladder.

    Both problems are solved on the same grid and time step (the stable
    step of the largest perturbation when ``dt`` is None).  ``d_1`` is the
    exact transport distance between the block aggregates of the two
    densities (see :func:`carnot_torus.metrics.binned_d1`), taken at
    ``slices`` evenly spaced stored times.
    """
    from .metrics import binned_d1
    g = prob.g
    res = tuple(resolution)
    X = grid_nodes(res)
    ts = np.linspace(0, prob.T, 33)
    if dt is None:
        worst = perturbed_problem(prob, max(deltas), b, rho0, upsilon)
        dt = cfl_bound(g, res, _drift_on_grid(worst.drift, ts, X, g)[1])
    ref = solve_fpk_fd(prob, res, dt, interp)
    idx = sorted(set(np.linspace(0, len(ref.times) - 1, slices).round().astype(int).tolist()))
    out = []
    for d in deltas:
        rho = solve_fpk_fd(perturbed_problem(prob, d, b, rho0, upsilon), res, dt, interp)
        resp = max(binned_d1(g, ref.slice(i), rho.slice(i), blocks) for i in idx)
        out.append({"delta": float(d), "response": resp, "K": resp / d, "dt": ref.meta["dt"]})
    return out
