"""Non-isotropic Holder seminorms, dual-norm lower bounds and the d_1 distance.

Every seminorm here is a supremum over a continuum of pairs, so the
estimators return *lower bounds* together with the pair that attains
them.  The Kantorovich-Rubinstein distance between finite atom lists is
computed exactly as a transportation linear program.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .group import GroupDescriptor, cc_distance, compose, embed_horizontal, lie_derivative
from .measures import DiscreteMeasure
from .torus import GridFunction, grid_nodes, reduce, torus_distance

__all__ = [
    "HolderSeminorm",
    "HoelderReport",
    "holder_seminorm",
    "holder_norm",
    "parabolic_seminorm",
    "schauder_ratio",
    "time_holder_ratio",
    "multi_indices",
    "dual_dictionary",
    "dual_norm_estimate",
    "kantorovich_d1",
    "aggregate",
    "binned_d1",
]


@dataclass(frozen=True)
class HolderSeminorm:
    """Lower bound ``value`` of a Holder seminorm with its witness pair."""

    value: float
    witness: tuple
    pairs: int

    def to_dict(self) -> dict:
        x, y = self.witness
        return {"value": self.value, "witness": [list(map(float, x)), list(map(float, y))],
                "pairs": self.pairs, "kind": "lower bound"}


@dataclass
class HoelderReport:
    """Parts of the ``C_X^{k+alpha}`` norm estimate.

    ``sup_norms[I]`` and ``seminorms[I]`` are keyed by multi-index tuples
    (1 based, ``()`` is the function itself).
    """

    k: int
    alpha: float
    sup_norms: dict = field(default_factory=dict)
    seminorms: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    sample_size: int = 0

    @property
    def sup_part(self) -> float:
        return math.fsum(self.sup_norms.values())

    @property
    def seminorm_part(self) -> float:
        return math.fsum(self.seminorms.values())

    @property
    def norm(self) -> float:
        return self.sup_part + self.seminorm_part

    def to_dict(self) -> dict:
        key = lambda I: ",".join(map(str, I)) or "id"
        return {
            "k": self.k, "alpha": self.alpha, "norm": self.norm, "kind": "lower bound",
            "sup_norms": {key(I): v for I, v in self.sup_norms.items()},
            "seminorms": {key(I): v for I, v in self.seminorms.items()},
            "witnesses": {key(I): [list(map(float, p)) for p in w] for I, w in self.witnesses.items()},
            "sample_size": self.sample_size,
        }


# ---------------------------------------------------------------------------
# seminorms


def _as_callable(fn):
    if isinstance(fn, GridFunction):
        return fn.g, fn
    raise TypeError("expected a GridFunction; pass (g, callable) via holder_seminorm(..., g=g)")


def _distance(g, x, y, metric):
    if metric == "torus":
        return torus_distance(g, x, y)
    if metric == "cc":
        return cc_distance(g, x, y).value
    raise ValueError(f"unknown metric {metric!r}")


def _ratio(f, g, x, y, alpha, metric):
    d = _distance(g, x, y, metric)
    df = np.abs(f(x) - f(y))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 1e-14, df / np.maximum(d, 1e-300) ** alpha, 0.0)
    return r


def _horizontal_pairs(g, X, steps):
    """Pairs ``(x, x o (s e_i))`` for all first-layer directions and steps ``s``."""
    out = []
    for s in steps:
        for i in range(g.n1):
            v = np.zeros(g.n1)
            v[i] = s
            out.append((X, compose(g, X, embed_horizontal(g, v))))
    return out


def holder_seminorm(fn, alpha: float, pair_budget: int = 20_000, seed: int = 0, g=None,
                    metric: str = "torus", resolution=None, refine_rounds: int = 6) -> HolderSeminorm:
    """Lower bound of ``sup |f(x) - f(y)| / d(x, y)^alpha`` over sampled pairs.

    Pairs are grid-node neighbours along the horizontal directions (at one
    and two grid steps), uniformly random pairs, random close pairs
    ``(x, x o D_r w)`` over a ladder of scales ``r``, followed by a local
    ascent around the best pairs.  ``metric="torus"`` uses the torus
    distance; ``metric="cc"`` uses ``d_cc`` between the representatives
    as drawn (the first point in [0,1)^n, the second in its neighbourhood).
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if g is None:
        g, f = _as_callable(fn)
    else:
        f = fn
    res = tuple(resolution or (fn.resolution if isinstance(fn, GridFunction) else (16,) * g.n))
    rng = np.random.default_rng(seed)
    X = grid_nodes(res).reshape(-1, g.n)
    h = 1.0 / max(res[: g.n1])
    best, wit, used = 0.0, (np.zeros(g.n), np.zeros(g.n)), 0

    def consider(x, y):
        nonlocal best, wit, used
        r = _ratio(f, g, x, y, alpha, metric)
        used += len(r)
        j = int(np.argmax(r)) if len(r) else 0
        if len(r) and r[j] > best:
            best, wit = float(r[j]), (x[j].copy(), y[j].copy())
        return r

    budget = int(pair_budget)
    grid_budget = budget // 3
    sub = X if len(X) * 2 * g.n1 <= grid_budget else X[rng.choice(len(X), grid_budget // (2 * g.n1), replace=False)]
    cand = []
    for x, y in _horizontal_pairs(g, sub, (h, 2 * h)):
        r = consider(x, y)
        cand.append((r, x, y))
    n_rand = max(1, (budget - used) // 2)
    x = rng.random((n_rand, g.n))
    y = rng.random((n_rand, g.n))
    cand.append((consider(x, y), x, y))
    n_close = max(1, budget - used)
    x = rng.random((n_close, g.n))
    scales = 2.0 ** -rng.integers(1, 7, size=n_close)
    w = rng.uniform(-1, 1, (n_close, g.n))
    w = w * np.concatenate([np.repeat(scales[:, None], g.n1, 1),
                            np.repeat(scales[:, None] ** 2, g.n - g.n1, 1)], axis=1)
    y = compose(g, x, w)
    if metric == "torus":
        y = reduce(g, y)[0]
    cand.append((consider(x, y), x, y))
    # local ascent from the best few pairs
    allr = np.concatenate([c[0] for c in cand])
    allx = np.concatenate([c[1] for c in cand])
    ally = np.concatenate([c[2] for c in cand])
    top = np.argsort(allr)[-8:]
    px, py, pr = allx[top], ally[top], allr[top]
    step = 0.5 * h
    for _ in range(refine_rounds):
        for _ in range(4):
            nx = px + rng.normal(0, step, px.shape)
            ny = py + rng.normal(0, step, py.shape)
            if metric == "torus":
                nx, ny = reduce(g, nx)[0], reduce(g, ny)[0]
            r = consider(nx, ny)
            better = r > pr
            px[better], py[better], pr[better] = nx[better], ny[better], r[better]
        step *= 0.5
    return HolderSeminorm(best, wit, used)


def multi_indices(n1: int, k: int):
    """All multi-indices of length <= k over generators 1..n1."""
    out = [()]
    for ell in range(1, k + 1):
        out.extend(itertools.product(range(1, n1 + 1), repeat=ell))
    return out


def _grid_derivatives(fn: GridFunction, k: int, interp="spectral"):
    from .solvers import HorizontalStencil
    st = HorizontalStencil(fn.g, fn.resolution, interp)
    vals = {(): np.asarray(fn.values)}
    for I in multi_indices(fn.g.n1, k)[1:]:
        # X_I f = X_{i1} (X_{i2..ik} f): apply the outermost generator last
        vals[I] = st.derivative(vals[I[1:]], I[0] - 1)
    return vals


def holder_norm(g: GroupDescriptor, fn, k: int, alpha: float, h=None, pair_budget: int = 20_000,
                seed: int = 0, resolution=None, metric: str = "torus") -> HoelderReport:
    """Estimate of ``sum_{|I|<=k} sup|X_I f| + sum_{|I|<=k} [X_I f]_alpha``.

    For a GridFunction the horizontal derivatives are centred grid
    differences; for a callable they come from :func:`lie_derivative`
    with step ``h`` evaluated on a node grid of ``resolution``.
    """
    if k < 0 or k > 2:
        raise ValueError("holder_norm supports 0 <= k <= 2")
    if isinstance(fn, GridFunction):
        if np.ptp(fn.values) == 0:
            derivs = {I: np.zeros(fn.resolution) for I in multi_indices(g.n1, k)}
            derivs[()] = np.asarray(fn.values)
        else:
            derivs = _grid_derivatives(fn, k)
        res = fn.resolution
    else:
        res = tuple(resolution or (16,) * g.n)
        X = grid_nodes(res)
        derivs = {I: np.asarray(lie_derivative(g, fn, X, I, h), dtype=float)
                  for I in multi_indices(g.n1, k)}
    rep = HoelderReport(k, float(alpha))
    for j, (I, vals) in enumerate(derivs.items()):
        G = GridFunction(g, vals)
        rep.sup_norms[I] = float(np.max(np.abs(vals)))
        if np.ptp(vals) == 0:
            rep.seminorms[I] = 0.0
            rep.witnesses[I] = (np.zeros(g.n), np.zeros(g.n))
            continue
        s = holder_seminorm(G, alpha, pair_budget, seed + j, metric=metric)
        rep.seminorms[I] = s.value
        rep.witnesses[I] = s.witness
        rep.sample_size += s.pairs
    return rep


def parabolic_seminorm(fn, alpha: float, beta: float | None = None, pair_budget: int = 20_000,
                       seed: int = 0) -> HolderSeminorm:
    """``sup |f(t,x) - f(s,y)| / (|t-s|^beta + d(x,y)^alpha)`` with ``beta = alpha/2`` by default."""
    beta = alpha / 2 if beta is None else beta
    g = fn.g
    rng = np.random.default_rng(seed)
    n = max(1, pair_budget // 2)
    T0, T1 = fn.times[0], fn.times[-1]
    t = rng.uniform(T0, T1, n)
    s = np.clip(t + rng.normal(0, 0.1 * max(T1 - T0, 1e-12), n), T0, T1)
    x = rng.random((n, g.n))
    y = np.where(rng.random((n, 1)) < 0.5, x, reduce(g, x + rng.normal(0, 0.05, x.shape))[0])
    fx = np.array([fn(ti, xi[None])[0] for ti, xi in zip(t, x)])
    fy = np.array([fn(si, yi[None])[0] for si, yi in zip(s, y)])
    den = np.abs(t - s) ** beta + torus_distance(g, x, y) ** alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 1e-14, np.abs(fx - fy) / den, 0.0)
    j = int(np.argmax(r))
    return HolderSeminorm(float(r[j]), (np.r_[t[j], x[j]], np.r_[s[j], y[j]]), n)


# ---------------------------------------------------------------------------
# regularity probes


def _probe_slices(z, slices):
    K = len(z.times)
    return sorted(set(np.linspace(0, K - 1, min(slices, K)).round().astype(int).tolist()))


def _source_slice(g, f, t, res):
    if f is None:
        return np.zeros(tuple(res))
    if isinstance(f, (int, float)):
        return np.full(tuple(res), float(f))
    X = grid_nodes(res)
    try:
        return np.asarray(f(t, X), dtype=float)
    except TypeError:
        return np.asarray(f(X), dtype=float)


def schauder_ratio(z, zT, f, k: int, alpha: float, slices: int = 5, pair_budget: int = 4000,
                   seed: int = 0) -> dict:
    """Estimated ``sup_t ||z(t)||_{k+alpha} / (||z_T||_{k+alpha} + sup_t ||f(t)||_{k-1+alpha})``.

    ``z`` is a SpaceTimeFunction (a backward solution), ``zT`` its terminal
    GridFunction and ``f`` the source (number, callable ``f(t, X)`` or
    ``f(X)``).  Suprema in time run over ``slices`` stored times.  For
    ``k = 0`` the source enters through its sup norm, which dominates the
    negative-order norm.  All norms are sampled lower bounds, so the ratio
    is an estimate, not a bound.
    """
    g = z.g
    idx = _probe_slices(z, slices)
    num = max(holder_norm(g, z.slice(i), k, alpha, pair_budget=pair_budget, seed=seed + i).norm
              for i in idx)
    term = holder_norm(g, zT, k, alpha, pair_budget=pair_budget, seed=seed).norm
    src = 0.0
    for i in idx:
        F = _source_slice(g, f, float(z.times[i]), z.resolution)
        if k == 0:
            src = max(src, float(np.max(np.abs(F))))
        else:
            src = max(src, holder_norm(g, GridFunction(g, F), k - 1, alpha, pair_budget=pair_budget,
                                       seed=seed + 101 + i).norm)
    den = term + src
    return {"ratio": num / den if den > 0 else float("nan"), "numerator": num,
            "terminal_norm": term, "source_norm": src, "k": k, "alpha": alpha, "slices": idx}


def time_holder_ratio(z, zT, f, slices: int = 9, pair_budget: int = 4000, seed: int = 0) -> dict:
    """Estimated ratio of the half-Holder-in-time plus Lipschitz-in-space bound.

    Numerator ``sup |z(t') - z(t)|_inf / |t' - t|^(1/2) + sup_t [z(t)]_Lip``
    over the stored slices; denominator ``||z_T||_{0+1} + ||f||_inf``.
    """
    g = z.g
    idx = _probe_slices(z, slices)
    t = z.times[idx]
    V = z.values[idx].reshape(len(idx), -1)
    half = 0.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            half = max(half, float(np.max(np.abs(V[b] - V[a]))) / math.sqrt(t[b] - t[a]))
    lip = max(holder_seminorm(z.slice(i), 1.0, pair_budget, seed + i).value for i in idx)
    term = holder_norm(g, zT, 0, 1.0, pair_budget=pair_budget, seed=seed).norm
    src = max(float(np.max(np.abs(_source_slice(g, f, float(ti), z.resolution)))) for ti in t)
    den = term + src
    return {"ratio": (half + lip) / den if den > 0 else float("nan"), "time_part": half,
            "lipschitz_part": lip, "terminal_norm": term, "source_norm": src}


# ---------------------------------------------------------------------------
# dual norms


@functools.lru_cache(maxsize=8)
def _dictionary_cached(gkey, k, alpha, res, seed, size):
    from .fields import tent, theta, trig
    from .group import GroupDescriptor as _GD
    from .mollifiers import mollify_torus
    g = _GD.from_dict(_unfreeze(gkey))
    rng = np.random.default_rng(seed)
    X = grid_nodes(res)
    n1 = g.n1
    out = [("one", np.ones(res))]
    gens = []
    for i in range(n1):
        gens.append((f"tent{i + 1}", lambda i=i: tent(1.0, i)(X)))
    for kvec in itertools.product(range(-1, 2), repeat=n1):
        if any(kvec):
            for ph in (0.0, np.pi / 2):
                gens.append((f"trig{kvec}+{ph:.2f}", lambda kvec=kvec, ph=ph: trig(kvec, ph)(X)))
    h1 = g.layer_dims == (2, 1) and g.brackets[0, 1, 2] == 1.0
    if h1:
        for ph in (0.0, np.pi / 2):
            gens.append((f"theta+{ph:.2f}", lambda ph=ph: theta(g, 0.3, ph)(X)))
    j = 0
    while len(out) + len(gens) < size:
        sd = int(rng.integers(2**31))
        gens.append((f"noise{j}", lambda sd=sd: mollify_torus(
            g, GridFunction(g, np.random.default_rng(sd).standard_normal(res)), 0.5, q=4).values))
        j += 1
    for name, make in gens[: size - 1]:
        vals = make()
        nrm = holder_norm(g, GridFunction(g, vals), k, alpha, pair_budget=4000, seed=7).norm
        out.append((name, vals / nrm))
    return tuple(out)


def _freeze(d):
    if isinstance(d, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in d.items()))
    if isinstance(d, list):
        return ("__list__",) + tuple(_freeze(v) for v in d)
    return d


def _unfreeze(t):
    if isinstance(t, tuple) and t and t[0] == "__list__":
        return [_unfreeze(v) for v in t[1:]]
    if isinstance(t, tuple):
        return {k: _unfreeze(v) for k, v in t}
    return t


def dual_dictionary(g: GroupDescriptor, k: int = 0, alpha: float = 1.0, size: int = 16,
                    resolution=None, seed: int = 0):
    """Fixed-seed test fields rescaled to unit estimated ``C_X^{k+alpha}`` norm.

    Element 0 is the constant 1 (norm exactly 1).  Then come first-layer
    tents, low-frequency trigonometric fields, theta fields on H^1 and
    bump-smoothed white noise.  The dictionary of size D is a prefix of the
    one of size D+1.
    """
    res = tuple(resolution or (16,) * g.n)
    return _dictionary_cached(_freeze(g.to_dict()), int(k), float(alpha), res, int(seed), int(size))


def dual_norm_estimate(mu: DiscreteMeasure, k: int = 0, alpha: float = 1.0, size: int = 16,
                       resolution=None, seed: int = 0, return_witness: bool = False):
    """Lower bound ``max_phi |<mu, phi>|`` over the unit-norm dictionary."""
    g = mu.g
    if len(mu) == 0:
        return (0.0, "one") if return_witness else 0.0
    best, arg = 0.0, "one"
    for name, vals in dual_dictionary(g, k, alpha, size, resolution, seed):
        v = abs(mu.pair(GridFunction(g, vals))) if name != "one" else abs(mu.total_mass)
        if v > best:
            best, arg = v, name
    return (best, arg) if return_witness else best


# ---------------------------------------------------------------------------
# Kantorovich-Rubinstein distance


def _cost_matrix(g, P, R):
    x = np.repeat(P, len(R), axis=0)
    y = np.tile(R, (len(P), 1))
    C = torus_distance(g, x, y).reshape(len(P), len(R))
    return C


def _canonical(mu: DiscreteMeasure) -> bytes:
    return mu.points.tobytes() + mu.weights.tobytes()


def _transport(C, a, b):
    m, n = C.shape
    rows = np.repeat(np.arange(m), n)
    cols = np.arange(m * n)
    A_r = csr_matrix((np.ones(m * n), (rows, cols)), shape=(m, m * n))
    rows = np.tile(np.arange(n), m)
    A_c = csr_matrix((np.ones(m * n), (rows, cols)), shape=(n, m * n))
    from scipy.sparse import vstack
    A = vstack([A_r, A_c[:-1]]).tocsr()
    rhs = np.concatenate([a, b[:-1]])
    res = linprog(C.reshape(-1), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(0.0, float(res.fun)), res.x.reshape(m, n)


def kantorovich_d1(mu: DiscreteMeasure, nu: DiscreteMeasure, cost=None, return_plan: bool = False):
    """Exact ``d_1`` between two atom lists of equal mass (torus-distance cost).

    Solved as a transportation LP (HiGHS).  The pair is put in a canonical
    order first so that the result is exactly symmetric.
    """
    if np.any(mu.weights < 0) or np.any(nu.weights < 0):
        raise ValueError("d1 needs nonnegative weights")
    ma, mb = mu.total_mass, nu.total_mass
    if abs(ma - mb) > 1e-9 * max(1.0, ma):
        raise ValueError(f"measures have different masses {ma} and {mb}")
    swap = _canonical(mu) > _canonical(nu)
    A, B = (nu, mu) if swap else (mu, nu)
    a = A.weights.astype(float)
    b = B.weights.astype(float) * (ma / mb if mb > 0 else 1.0)
    if cost is None:
        C = _cost_matrix(A.g, A.points, B.points)
    else:
        C = np.asarray(cost, dtype=float)
        if swap:
            C = C.T
    if len(a) == 1 or len(b) == 1:
        val = float(np.dot(C.reshape(-1), (b if len(a) == 1 else a)))
        plan = (b[None, :] if len(a) == 1 else a[:, None]) * np.ones_like(C)
    else:
        val, plan = _transport(C, a, b)
    if return_plan:
        return val, (plan.T if swap else plan)
    return val


def aggregate(g: GroupDescriptor, points, weights, blocks) -> np.ndarray:
    """Mass per block of a regular ``blocks`` partition of [0,1)^n (flattened)."""
    blocks = np.array(blocks)
    P = reduce(g, g.check_point(points))[0]
    J = np.minimum((P * blocks).astype(np.int64), blocks - 1)
    flat = np.ravel_multi_index(tuple(J.T), tuple(blocks))
    return np.bincount(flat, weights=np.asarray(weights, dtype=float), minlength=int(np.prod(blocks)))


@functools.lru_cache(maxsize=4)
def _block_cost_cached(gkey, blocks):
    from .group import GroupDescriptor as _GD
    g = _GD.from_dict(_unfreeze(gkey))
    centres = (grid_nodes(blocks) + 0.5 / np.array(blocks)).reshape(-1, g.n)
    C = _cost_matrix(g, centres, centres)
    return centres, np.minimum(C, C.T)


def binned_d1(g: GroupDescriptor, a, b, blocks=None) -> float:
    """``d_1`` between two measures after aggregating each onto block centres.

    ``a`` and ``b`` are DiscreteMeasures, ParticleEnsembles or nonnegative
    density GridFunctions.  Each is represented by its mass per block of a
    regular partition, placed at the block centre, and the exact transport
    problem between these aggregated measures is solved.
    """
    blocks = tuple(blocks or ((8,) * g.n1 + (4,) * (g.n - g.n1)))
    masses = []
    for obj in (a, b):
        if isinstance(obj, GridFunction):
            vals = np.clip(obj.values, 0.0, None).reshape(-1)
            m = aggregate(g, obj.nodes().reshape(-1, g.n), vals / vals.size, blocks)
        else:
            m = aggregate(g, obj.points, obj.weights, blocks)
        masses.append(m / m.sum())
    _, C = _block_cost_cached(_freeze(g.to_dict()), blocks)
    keep = (masses[0] > 0) | (masses[1] > 0)
    ma, mb = masses[0][keep], masses[1][keep]
    ia, ib = ma > 0, mb > 0
    Ck = C[np.ix_(keep, keep)][np.ix_(ia, ib)]
    if ia.sum() == 1 or ib.sum() == 1:
        w = mb[ib] if ia.sum() == 1 else ma[ia]
        return float(np.dot(Ck.reshape(-1), w))
    return _transport(Ck, ma[ia], mb[ib])[0]
