"""The Carnot torus: quotient of a step two group by its integer lattice.

In exponential coordinates the integer points of R^n are not closed under
the group law, e.g. ``(1,0,0) o (0,1,0) = (1,1,1/2)`` on H^1.  The lattice
used here is generated by the integer multiples of the basis vectors:

    kappa(a) = (a_1 E_1) o (a_2 E_2) o ... o (a_n E_n),   a in Z^n,

which in coordinates is ``a + 1/2 sum_{i<j} a_i a_j [E_i, E_j]``.  It is a
discrete cocompact subgroup when the structure constants are integers,
and [0,1)^n is a fundamental domain for its left action.  An integer
vector ``a`` is stored as a :class:`LatticeElement`; its group point is
``kappa(a)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .group import (GroupDescriptor, cc_lower_bound, cc_norm, cc_upper_bound, compose,
                    homogeneous_norm, inverse, resolve_group)

__all__ = [
    "ReductionError",
    "LatticeElement",
    "lattice_point",
    "reduce",
    "torus_distance",
    "Kernel",
    "periodize_kernel",
    "GridFunction",
    "grid_nodes",
]


class ReductionError(RuntimeError):
    """Layer-by-layer reduction failed its round-trip check."""


def _require_lattice(g: GroupDescriptor):
    if g.step == 2 and not g.has_integer_brackets:
        raise ValueError("the integer lattice is a subgroup only for integer structure constants")


@dataclass(frozen=True)
class LatticeElement:
    """Integer vector ``a`` acting on points by ``x -> kappa(a) o x``."""

    k: tuple

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))

    def point(self, g: GroupDescriptor) -> np.ndarray:
        return lattice_point(g, np.array(self.k, dtype=float))

    def act(self, g: GroupDescriptor, x) -> np.ndarray:
        return compose(g, self.point(g), x)


def lattice_point(g: GroupDescriptor, a) -> np.ndarray:
    """Group point ``kappa(a)`` of integer vector(s) ``a``."""
    a = np.asarray(a, dtype=float)
    out = a.copy()
    if g.step == 2:
        n1 = g.n1
        a1 = a[..., :n1]
        # 1/2 sum_{i<j} a_i a_j [E_i, E_j]
        upper = np.triu(np.ones((n1, n1)), 1)[:, :, None] * g._blk
        out[..., n1:] += 0.5 * np.einsum("...i,ijm,...j->...m", a1, upper, a1)
    return out


def _safe_floor(x, scale=1.0):
    a = np.floor(x)
    frac = x - a
    # a rounding residue just below an integer (relative to the size of the
    # inputs it was computed from) belongs to the next cell, not to 1 - ulp
    bump = frac >= 1.0 - 16 * np.finfo(float).eps * np.maximum(1.0, scale)
    return a + bump, np.where(bump, np.maximum(frac - 1.0, 0.0), frac)


def reduce(g: GroupDescriptor, p, check: bool = True):
    """Fundamental-domain representative of ``p``.

    Returns ``(x0, a)`` with ``x0`` in [0,1)^n, ``a`` integer (stored as
    float array) and ``kappa(a) o x0 = p``.  Layer one is reduced by
    floor; with ``a^(1)`` fixed the second layer of ``kappa(a) o x0`` is
    affine in ``(x0^(2), a^(2))`` with unit coefficient, and is reduced by
    floor again.
    """
    _require_lattice(g)
    p = g.check_point(p)
    n1 = g.n1
    a = np.zeros_like(p)
    x0 = np.empty_like(p)
    scale = np.max(np.abs(p), axis=-1, keepdims=True)
    a[..., :n1], x0[..., :n1] = _safe_floor(p[..., :n1], scale)
    if g.step == 2:
        k1 = lattice_point(g, np.concatenate([a[..., :n1], np.zeros_like(p[..., n1:])], axis=-1))
        s = p[..., n1:] - k1[..., n1:] - 0.5 * g.bracket(a[..., :n1], x0[..., :n1])
        a[..., n1:], x0[..., n1:] = _safe_floor(s, scale * (1 + np.max(np.abs(a[..., :n1]), axis=-1,
                                                                          keepdims=True)))
    if check:
        back = compose(g, lattice_point(g, a), x0)
        err = np.max(np.abs(back - p)) if p.size else 0.0
        tol = 1e-10 * max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
        if not err <= tol:
            raise ReductionError(f"round-trip error {err:.3e} exceeds {tol:.1e}")
    return x0, a


def _candidates_first_layer(n1, radius):
    rng = range(-radius, radius + 1)
    return np.array(list(itertools.product(rng, repeat=n1)), dtype=float)


def _central_window(g, xin, y0, A1, bound):
    """Integer central components that can beat ``bound`` for each first-layer translate."""
    n1, n = g.n1, g.n
    k1 = lattice_point(g, np.concatenate([A1, np.zeros((len(A1), n - n1))], axis=1))
    c0 = compose(g, compose(g, xin[:, None, :], k1[None]), y0[:, None, :])[..., n1:]
    # a curve of length D reaches central offsets of size at most |B| D^2 / 4
    half = g.bracket_norm * bound ** 2 / 4.0
    lo = np.floor(-c0 - half[:, None, None])
    hi = np.ceil(-c0 + half[:, None, None])
    return c0, lo, int(np.max(hi - lo)) + 1


def _translate_candidates(g, A1, lo, width):
    n1, n = g.n1, g.n
    it = np.array(list(itertools.product(range(width), repeat=n - n1)), dtype=float)
    a2 = lo[:, :, None, :] + it[None, None]
    a1 = np.broadcast_to(A1[None, :, None, :], a2.shape[:3] + (n1,))
    return np.concatenate([a1, a2], axis=-1).reshape(len(lo), -1, n)


def torus_distance(g: GroupDescriptor, x, y, radius: int = 2, return_translate: bool = False):
    """Distance on the torus: min over lattice translates of ``d_cc(x, kappa o y)``.

    Translates are searched in the box ``|a^(1)|_inf <= radius`` and, for
    each first-layer translate, in the window of central components allowed
    by the certified bound ``d_cc(0, w) >= 2 sqrt(|w^(2)| / |B|)``.  The box
    grows until every translate outside it provably exceeds the best value
    found.  Exact for abelian and Heisenberg-type groups, otherwise an
    upper bound.
    """
    _require_lattice(g)
    x, y = np.broadcast_arrays(g.check_point(x), g.check_point(y))
    shape = x.shape[:-1]
    x0 = reduce(g, x.reshape(-1, g.n))[0]
    y0 = reduce(g, y.reshape(-1, g.n))[0]
    n1, n = g.n1, g.n
    exact = g.is_abelian or g.heisenberg_constant is not None

    def norm(w):
        if exact:
            return cc_norm(g, w)
        return np.array([cc_upper_bound(g, v) for v in w.reshape(-1, n)]).reshape(w.shape[:-1])

    xin = inverse(g, x0)
    best = np.full(len(x0), np.inf)
    arg = np.zeros((len(x0), n))

    def scan(idx, cand):
        w = compose(g, compose(g, xin[idx, None, :], lattice_point(g, cand)), y0[idx, None, :])
        d = np.full(w.shape[:-1], np.inf)
        ok = cc_lower_bound(g, w) <= best[idx, None] + 1e-12
        d[ok] = norm(w[ok])
        j = np.argmin(d, axis=1)
        dj = d[np.arange(len(idx)), j]
        better = dj < best[idx]
        best[idx[better]] = dj[better]
        arg[idx[better]] = cand[np.arange(len(idx)), j][better]

    chunk = 4096
    # cheap initial bound: nearest central translate for neighbouring first-layer cells
    A1 = _candidates_first_layer(n1, 1)
    for sub in np.array_split(np.arange(len(x0)), max(1, len(x0) // chunk)):
        if g.step == 1:
            cand = np.broadcast_to(A1, (len(sub),) + A1.shape)
        else:
            c0, _, _ = _central_window(g, xin[sub], y0[sub], A1, np.zeros(len(sub)))
            cand = np.concatenate([np.broadcast_to(A1, c0.shape[:2] + (n1,)), np.round(-c0)], axis=-1)
        scan(sub, cand)
    todo = np.arange(len(x0))
    R = radius
    while todo.size:
        A1 = _candidates_first_layer(n1, R)
        for sub in np.array_split(todo, max(1, todo.size // chunk)):
            if g.step == 1:
                cand = np.broadcast_to(A1, (len(sub),) + A1.shape)
            else:
                _, lo, width = _central_window(g, xin[sub], y0[sub], A1, best[sub])
                cand = _translate_candidates(g, A1, lo, width)
            scan(sub, cand)
        # any translate with |a^(1)|_inf > R has first-layer offset > R - 1
        todo = todo[best[todo] > R - 1]
        R += 2
    best = best.reshape(shape)
    if return_translate:
        return best, arg.reshape(shape + (n,))
    return best


# ---------------------------------------------------------------------------
# kernels and their periodization


@dataclass(frozen=True)
class Kernel:
    """Kernel handle for periodization.

    ``fn`` maps points ``(..., n)`` to values.  Either ``support_radius``
    (the kernel vanishes where the homogeneous norm exceeds it) or
    ``tail_bound`` must be given; ``tail_bound(R)`` bounds the total
    absolute contribution of all lattice translates with norm above R.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    support_radius: float | None = None
    tail_bound: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.support_radius is None and self.tail_bound is None:
            raise ValueError("kernel needs a support radius or a tail bound")


def _translates_within(g, w, radius):
    """Integer vectors a with ||kappa(a) o w||_G possibly <= radius, for all rows w."""
    n1, n = g.n1, g.n
    w = w.reshape(-1, n)
    lo1 = np.floor(np.min(-w[:, :n1], axis=0) - radius)
    hi1 = np.ceil(np.max(-w[:, :n1], axis=0) + radius)
    A1 = np.array(list(itertools.product(*[np.arange(a, b + 1) for a, b in zip(lo1, hi1)])),
                  dtype=float)
    if g.step == 1:
        return A1
    zero2 = np.zeros((len(A1), n - n1))
    c0 = compose(g, lattice_point(g, np.concatenate([A1, zero2], axis=1))[:, None, :],
                 w[None, :, :])[..., n1:]
    r2 = radius ** 2
    lo2 = np.floor(np.min(-c0, axis=1) - r2)
    hi2 = np.ceil(np.max(-c0, axis=1) + r2)
    out = []
    for a1, l, h in zip(A1, lo2, hi2):
        for a2 in itertools.product(*[np.arange(a, b + 1) for a, b in zip(l, h)]):
            out.append(np.concatenate([a1, a2]))
    return np.array(out, dtype=float)


def periodize_kernel(g: GroupDescriptor, kernel: Kernel, x, y, tol: float = 1e-10) -> np.ndarray:
    """Lattice sum ``sum_a kernel(kappa(a) o x o y^-1)``, vectorized over x and y."""
    if not isinstance(kernel, Kernel):
        raise TypeError("periodize_kernel expects a Kernel with support or tail information")
    _require_lattice(g)
    x, y = np.broadcast_arrays(g.check_point(x), g.check_point(y))
    shape = x.shape[:-1]
    w = compose(g, x, inverse(g, y)).reshape(-1, g.n)
    if kernel.support_radius is not None:
        A = _translates_within(g, w, kernel.support_radius)
        total = np.zeros(len(w))
        for chunk in np.array_split(A, max(1, len(A) // 64)):
            pts = compose(g, lattice_point(g, chunk)[None], w[:, None, :])
            total += np.sum(kernel.fn(pts), axis=1)
        return total.reshape(shape)
    # tail-bounded kernel: grow spherical shells until the tail is certified
    R = 1.0
    while kernel.tail_bound(R) >= tol:
        R *= 1.5
        if R > 1e3:
            raise RuntimeError("tail bound does not decay")
    A = _translates_within(g, w, R)
    total = np.zeros(len(w))
    for chunk in np.array_split(A, max(1, len(A) // 64)):
        pts = compose(g, lattice_point(g, chunk)[None], w[:, None, :])
        vals = kernel.fn(pts)
        vals = np.where(homogeneous_norm(g, pts) <= R, vals, 0.0)
        total += np.sum(vals, axis=1)
    return total.reshape(shape)


# ---------------------------------------------------------------------------
# grid functions


def grid_nodes(resolution) -> np.ndarray:
    """Node coordinates ``j / m`` of the grid on [0,1)^n, shape ``(*m, n)``."""
    axes = [np.arange(m) / m for m in resolution]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


class GridFunction:
    """Periodic scalar field sampled on the nodes ``j / m`` of [0,1)^n.

    Off-grid evaluation reduces the point to the fundamental domain and
    interpolates multilinearly.  Near a first-layer face the cell is
    completed by the lattice translate of the neighbouring nodes, whose
    values are themselves interpolated along the central axes, so the
    interpolant is periodic by construction and second-order accurate.
    """

    def __init__(self, g: GroupDescriptor, values, group_ref: str | None = None):
        values = np.array(values, dtype=float)
        if values.ndim != g.n:
            raise ValueError(f"values must have {g.n} axes, got shape {values.shape}")
        values.setflags(write=False)
        self.g = g
        self.values = values
        self.group_ref = group_ref or g.name

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return 1.0 / np.array(self.resolution, dtype=float)

    @classmethod
    def from_function(cls, g, fn, resolution, **kw) -> "GridFunction":
        return cls(g, fn(grid_nodes(resolution)), **kw)

    @classmethod
    def constant(cls, g, c, resolution) -> "GridFunction":
        return cls(g, np.full(tuple(resolution), float(c)))

    def nodes(self) -> np.ndarray:
        return grid_nodes(self.resolution)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.g, values, self.group_ref)

    def __call__(self, p) -> np.ndarray:
        return self.evaluate(p)

    def stencil(self, p):
        """Interpolation corners at points ``p``: yields ``(flat_index, weight)`` pairs.

        The interpolant at ``p`` is ``sum weight * values.flat[flat_index]`` over
        the yielded pairs; the weights at each point sum to one.
        """
        g = self.g
        m = np.array(self.resolution)
        x0 = reduce(g, g.check_point(p).reshape(-1, g.n))[0]
        n1 = g.n1 if g.step == 2 else g.n
        m1, mc = m[:n1], m[n1:]
        u = x0[:, :n1] * m1
        lo = np.floor(u)
        f = u - lo
        lo = lo.astype(np.int64)
        for corner in itertools.product((0, 1), repeat=n1):
            c = np.array(corner)
            J = lo + c
            w1 = np.prod(np.where(c == 1, f, 1.0 - f), axis=1)
            wrap = J >= m1
            s = x0[:, n1:]
            rows = np.any(wrap, axis=1)
            if g.step == 2 and np.any(rows):
                # the corner column (J/m, x0^(2)) lies outside [0,1)^n: translate it back
                s = s.copy()
                q = np.concatenate([J[rows] / m1, s[rows]], axis=1)
                s[rows] = compose(g, _kappa_inv(g, wrap[rows]), q)[:, n1:]
            J = J % m1
            if g.step == 1:
                yield np.ravel_multi_index(tuple(J.T), tuple(m)), w1
                continue
            uc = s * mc
            lc = np.floor(uc)
            fc = uc - lc
            lc = lc.astype(np.int64)
            for cc in itertools.product((0, 1), repeat=g.n - n1):
                cc = np.array(cc)
                idx = (lc + cc) % mc
                w2 = np.prod(np.where(cc == 1, fc, 1.0 - fc), axis=1)
                yield np.ravel_multi_index(tuple(J.T) + tuple(idx.T), tuple(m)), w1 * w2

    def evaluate(self, p) -> np.ndarray:
        p = self.g.check_point(p)
        flat = self.values.reshape(-1)
        out = np.zeros(int(np.prod(p.shape[:-1])))
        for idx, w in self.stencil(p):
            out += w * flat[idx]
        return out.reshape(p.shape[:-1])

    # -- arithmetic helpers ---------------------------------------------------
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def integral(self) -> float:
        """Riemann sum over the nodes (exact for trigonometric fields below the Nyquist limit)."""
        return float(np.mean(self.values))

    def __add__(self, other):
        if isinstance(other, GridFunction):
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    # -- serialization ------------------------------------------------------------
    def save(self, path, fmt: str = "bin"):
        """Write ``path`` (values) plus ``path.json`` (header)."""
        path = Path(path)
        header = {"resolution": list(self.resolution), "group_descriptor_ref": self.group_ref,
                  "group": self.g.to_dict(), "format": fmt, "order": "C", "dtype": "<f8"}
        if fmt == "bin":
            path.write_bytes(self.values.astype("<f8").tobytes(order="C"))
        elif fmt == "csv":
            np.savetxt(path, self.values.reshape(-1), fmt="%.17g")
        else:
            raise ValueError(f"unknown format {fmt!r}")
        Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, g: GroupDescriptor | None = None) -> "GridFunction":
        path = Path(path)
        header = json.loads(Path(str(path) + ".json").read_text())
        if g is None:
            g = resolve_group(header.get("group") or header["group_descriptor_ref"])
        res = tuple(header["resolution"])
        if header.get("format", "bin") == "bin":
            vals = np.frombuffer(path.read_bytes(), dtype="<f8")
        else:
            vals = np.loadtxt(path, dtype=float, ndmin=1)
        if vals.size != math.prod(res):
            raise ValueError(f"{path}: {vals.size} values for resolution {res}")
        return cls(g, vals.reshape(res), header.get("group_descriptor_ref"))


def _kappa_inv(g, wrap):
    """Inverse of the lattice point with first-layer entries ``wrap`` (0/1)."""
    a = np.zeros((len(wrap), g.n))
    a[:, : g.n1] = wrap
    return inverse(g, lattice_point(g, a))
