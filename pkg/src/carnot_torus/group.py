"""Arithmetic of homogeneous Carnot groups of step at most two.

Points are arrays whose last axis holds exponential coordinates of the
first kind, ordered layer by layer.  With these coordinates the group law
is the truncated Baker-Campbell-Hausdorff product

    p o q = p + q + 1/2 [p, q],

the identity is the origin and the inverse of ``p`` is ``-p``.  All
functions broadcast over leading axes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

__all__ = [
    "DescriptorError",
    "UnsupportedOrderError",
    "GroupDescriptor",
    "heisenberg",
    "abelian",
    "load_descriptor",
    "resolve_group",
    "compose",
    "inverse",
    "dilate",
    "homogeneous_norm",
    "embed_horizontal",
    "flow",
    "exp_horizontal",
    "horizontal_frame",
    "lie_derivative",
    "CCDistance",
    "cc_distance",
    "cc_norm",
    "cc_lower_bound",
    "cc_upper_bound",
]


class DescriptorError(ValueError):
    """A group descriptor violates one of its invariants.

    The name of the violated invariant is stored in ``invariant``.
    """

    def __init__(self, invariant: str, message: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {message}" if message else invariant)


class UnsupportedOrderError(ValueError):
    """Requested derivative order is beyond what nested differences support."""


@dataclass(frozen=True, eq=False)
class GroupDescriptor:
    """Homogeneous Carnot group of step ``step`` on R^n.

    Parameters
    ----------
    step : int
        Nilpotency step r (1 or 2).
    layer_dims : tuple of int
        Dimensions (n_1, ..., n_r) of the layers.
    brackets : ndarray, shape (n, n, n)
        Structure constants ``c[i, j, m]`` with ``[E_i, E_j] = sum_m c[i, j, m] E_m``
        (zero based).  Only first-layer pairs may be nonzero.
    name : str
        Free-form label used in reports.
    """

    step: int
    layer_dims: tuple
    brackets: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        c = np.array(self.brackets, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "brackets", c)
        self._validate()
        n1 = self.layer_dims[0]
        blk = np.ascontiguousarray(c[:n1, :n1, n1:])
        blk.setflags(write=False)
        object.__setattr__(self, "_blk", blk)

    # -- invariants ---------------------------------------------------------
    def _validate(self):
        dims, r, c = self.layer_dims, self.step, self.brackets
        if r < 1 or len(dims) != r or any(d < 1 for d in dims):
            raise DescriptorError("layer dimensions", f"step {r} with layers {dims}")
        if r > 2:
            raise DescriptorError(
                "supported step", "only step 1 and step 2 groups are implemented")
        n = sum(dims)
        if c.shape != (n, n, n):
            raise DescriptorError("dimension", f"brackets shape {c.shape}, expected {(n, n, n)}")
        if not np.all(np.isfinite(c)):
            raise DescriptorError("finite structure constants")
        if not np.allclose(c, -np.transpose(c, (1, 0, 2)), rtol=0, atol=1e-14):
            raise DescriptorError("bracket antisymmetry", "c[i,j,m] != -c[j,i,m]")
        n1 = dims[0]
        graded = np.zeros_like(c, dtype=bool)
        if r == 2:
            graded[:n1, :n1, n1:] = True
        if np.any(c[~graded] != 0):
            raise DescriptorError(
                "bracket grading", "brackets of layer j and k must land in layer j+k")
        if r == 2:
            span = np.concatenate([c[i, j, n1:][None] for i in range(n1) for j in range(i + 1, n1)]
                                  or [np.zeros((1, dims[1]))])
            if np.linalg.matrix_rank(span, tol=1e-12) < dims[1]:
                raise DescriptorError(
                    "hoermander rank", "generators and brackets do not span R^n")

    # -- derived data ---------------------------------------------------------
    @property
    def n(self) -> int:
        return sum(self.layer_dims)

    @property
    def n1(self) -> int:
        return self.layer_dims[0]

    @property
    def dilation_exponents(self) -> np.ndarray:
        return np.concatenate([np.full(d, j + 1.0) for j, d in enumerate(self.layer_dims)])

    @property
    def Q(self) -> int:
        return sum((j + 1) * d for j, d in enumerate(self.layer_dims))

    @property
    def is_abelian(self) -> bool:
        return self.step == 1

    @property
    def has_integer_brackets(self) -> bool:
        return bool(np.all(self.brackets == np.round(self.brackets)))

    @property
    def bracket_norm(self) -> float:
        """Upper bound for |[u, v]| / (|u||v|) (Frobenius norm of the constants)."""
        return float(np.sqrt(np.sum(self._blk ** 2)))

    @property
    def heisenberg_constant(self) -> float | None:
        """Constant beta when the group is of Heisenberg type, else None.

        Heisenberg type here means a one dimensional second layer whose
        bracket matrix B satisfies B^T B = beta^2 I; the distance then has a
        closed form.
        """
        if self.step != 2 or self.layer_dims[1] != 1 or self.n1 % 2:
            return None
        b = self._blk[:, :, 0]
        beta2 = float(np.sum(b ** 2)) / self.n1
        if beta2 == 0 or not np.allclose(b.T @ b, beta2 * np.eye(self.n1), atol=1e-12):
            return None
        return math.sqrt(beta2)

    def layer(self, p: np.ndarray, j: int) -> np.ndarray:
        """Coordinates of layer ``j`` (1 based) of ``p``."""
        lo = sum(self.layer_dims[: j - 1])
        return p[..., lo : lo + self.layer_dims[j - 1]]

    def bracket(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Second-layer part of [u, v] for first-layer vectors ``u`` and ``v``."""
        return np.einsum("...i,ijm,...j->...m", u, self._blk, v)

    def check_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.ndim == 0 or p.shape[-1] != self.n:
            raise DescriptorError("dimension", f"point of shape {p.shape} for n={self.n}")
        return p

    # -- serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        entries = []
        n = self.n
        for i in range(n):
            for j in range(i + 1, n):
                for m in range(n):
                    if self.brackets[i, j, m] != 0:
                        entries.append({"i": i + 1, "j": j + 1, "m": m + 1,
                                        "c": float(self.brackets[i, j, m])})
        out = {"step": self.step, "layer_dims": list(self.layer_dims), "brackets": entries}
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GroupDescriptor":
        """Build from the JSON layout ``{step, layer_dims, brackets: [{i, j, m, c}]}``.

        Indices are 1 based.  An entry whose antisymmetric partner is absent
        implies the partner; an explicitly listed partner must match.
        """
        try:
            step = int(data["step"])
            dims = [int(d) for d in data["layer_dims"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DescriptorError("schema", f"missing or malformed field ({exc})") from None
        n = sum(dims)
        c = np.zeros((n, n, n))
        given = np.zeros((n, n, n), dtype=bool)
        for e in data.get("brackets", []):
            try:
                i, j, m, val = int(e["i"]) - 1, int(e["j"]) - 1, int(e["m"]) - 1, float(e["c"])
            except (KeyError, TypeError, ValueError):
                raise DescriptorError("schema", f"malformed bracket entry {e!r}") from None
            if not all(0 <= k < n for k in (i, j, m)):
                raise DescriptorError("dimension", f"bracket index out of range in {e!r}")
            if given[i, j, m] and c[i, j, m] != val:
                raise DescriptorError("schema", f"duplicate bracket entry {e!r}")
            c[i, j, m] = val
            given[i, j, m] = True
        for i, j, m in zip(*np.nonzero(given)):
            if i == j and c[i, j, m] != 0:
                raise DescriptorError("bracket antisymmetry", f"[E_{i+1}, E_{i+1}] != 0")
            if not given[j, i, m]:
                c[j, i, m] = -c[i, j, m]
        return cls(step, tuple(dims), c, name=str(data.get("name", "")))


def heisenberg() -> GroupDescriptor:
    """First Heisenberg group H^1 with [E_1, E_2] = E_3."""
    c = np.zeros((3, 3, 3))
    c[0, 1, 2], c[1, 0, 2] = 1.0, -1.0
    return GroupDescriptor(2, (2, 1), c, name="heisenberg")


def abelian(n: int = 2) -> GroupDescriptor:
    """Euclidean R^n viewed as a step one Carnot group."""
    return GroupDescriptor(1, (n,), np.zeros((n, n, n)), name=f"abelian-{n}")


def load_descriptor(path) -> GroupDescriptor:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DescriptorError("schema", f"invalid JSON ({exc})") from None
    return GroupDescriptor.from_dict(data)


def resolve_group(ref) -> GroupDescriptor:
    """Descriptor from a builtin name (``heisenberg``, ``abelian-N``), dict or file path."""
    if isinstance(ref, GroupDescriptor):
        return ref
    if ref is None or ref == "heisenberg":
        return heisenberg()
    if isinstance(ref, dict):
        return GroupDescriptor.from_dict(ref)
    ref = str(ref)
    if ref.startswith("abelian"):
        tail = ref[len("abelian"):].lstrip("-:")
        return abelian(int(tail) if tail else 2)
    return load_descriptor(ref)


# ---------------------------------------------------------------------------
# group law


def compose(g: GroupDescriptor, p, q) -> np.ndarray:
    """Group product ``p o q``."""
    p, q = g.check_point(p), g.check_point(q)
    out = p + q
    if g.step == 2:
        n1 = g.n1
        out[..., n1:] += 0.5 * g.bracket(p[..., :n1], q[..., :n1])
    return out


def inverse(g: GroupDescriptor, p) -> np.ndarray:
    return -g.check_point(p)


def dilate(g: GroupDescriptor, lam: float, p) -> np.ndarray:
    """Dilation D_lambda, scaling coordinate i by lambda**alpha_i."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return g.check_point(p) * lam ** g.dilation_exponents


def homogeneous_norm(g: GroupDescriptor, p) -> np.ndarray:
    """Gauge ``(sum_j |x^(j)|^(2 r!/j))^(1/(2 r!))``."""
    p = g.check_point(p)
    e = 2 * math.factorial(g.step)
    acc = 0.0
    for j in range(1, g.step + 1):
        acc = acc + np.sum(g.layer(p, j) ** 2, axis=-1) ** (e / (2 * j))
    return acc ** (1.0 / e)


def embed_horizontal(g: GroupDescriptor, v) -> np.ndarray:
    """Lift first-layer vectors to points with zero higher layers."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != g.n1:
        raise DescriptorError("dimension", f"horizontal vector of shape {v.shape}")
    out = np.zeros(v.shape[:-1] + (g.n,))
    out[..., : g.n1] = v
    return out


def flow(g: GroupDescriptor, p, v, tau=1.0) -> np.ndarray:
    """Closed-form time-``tau`` flow of ``sum v_i X_i`` from ``p``, i.e. ``p o (tau v)``."""
    return compose(g, p, embed_horizontal(g, np.asarray(v, dtype=float) * tau))


def horizontal_frame(g: GroupDescriptor, p) -> np.ndarray:
    """Left-invariant fields at ``p``: array (..., n1, n) whose row i is X_i(p)."""
    p = g.check_point(p)
    n1 = g.n1
    frame = np.broadcast_to(np.eye(n1, g.n), p.shape[:-1] + (n1, g.n)).copy()
    if g.step == 2:
        # X_i(p) = E_i + 1/2 [p^(1), E_i]
        frame[..., n1:] += 0.5 * np.einsum("...k,kim->...im", p[..., :n1], g._blk)
    return frame


def exp_horizontal(g: GroupDescriptor, p, v, tau: float, rtol=1e-12, atol=1e-13) -> np.ndarray:
    """Flow of ``sum v_i X_i`` for time ``tau``, integrated with DOP853.

    Agrees with :func:`flow` up to the integrator tolerance.
    """
    p = g.check_point(p)
    v = np.asarray(v, dtype=float)
    if tau == 0:
        return p.copy()

    def rhs(_, y):
        return v @ horizontal_frame(g, y)

    sol = solve_ivp(rhs, (0.0, float(tau)), p, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:  # pragma: no cover - polynomial field, should not happen
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


# ---------------------------------------------------------------------------
# derivatives

MAX_DERIVATIVE_ORDER = 4


def _step_for_order(h, base, k):
    # per-level step for a k-fold nested central difference; k=1 uses h itself
    return base * (h / base) ** (2.0 / (k + 1))


def lie_derivative(g: GroupDescriptor, f: Callable[[np.ndarray], np.ndarray], p,
                   I: Sequence[int] = (), h=None) -> np.ndarray:
    """Approximate ``X_{i1} ... X_{ik} f (p)`` by nested central differences.

    Parameters
    ----------
    f : callable
        Vectorized function of points ``(..., n) -> (...)``.
    p : array_like
        Evaluation point(s).
    I : sequence of int
        Generator indices, 1 based; empty means f itself.
    h : float, optional
        Base step, default ``1e-4 * max(1, ||p||)``.  A k-fold derivative
        uses ``s = b (h/b)^(2/(k+1))`` with ``b = max(1, ||p||)`` at every
        level, which reduces to ``h`` for k=1 and to order ``h^(1/2)`` for k=3.
    """
    p = g.check_point(p)
    I = [int(i) for i in I]
    k = len(I)
    if k > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"|I| = {k} exceeds {MAX_DERIVATIVE_ORDER}")
    if any(not 1 <= i <= g.n1 for i in I):
        raise ValueError(f"multi-index {I} must use generators 1..{g.n1}")
    if k == 0:
        return np.asarray(f(p), dtype=float)
    base = np.maximum(1.0, homogeneous_norm(g, p))
    if h is None:
        h = 1e-4 * base
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("step h must be positive")
    s = _step_for_order(h, base, k)
    signs = np.array(np.meshgrid(*([[1.0, -1.0]] * k), indexing="ij")).reshape(k, -1).T
    pts = np.broadcast_to(p, (len(signs),) + p.shape).copy()
    for level, i in enumerate(I):
        v = np.zeros(g.n1)
        v[i - 1] = 1.0
        step = (signs[:, level].reshape((-1,) + (1,) * (p.ndim - 1)) * s)[..., None]
        pts = compose(g, pts, embed_horizontal(g, step * v))
    vals = np.asarray(f(pts), dtype=float)
    weights = np.prod(signs, axis=1).reshape((-1,) + (1,) * (p.ndim - 1))
    return np.sum(weights * vals, axis=0) / (2.0 * s) ** k


# ---------------------------------------------------------------------------
# Carnot-Caratheodory distance


class CCDistance(NamedTuple):
    value: float | np.ndarray
    exact: bool


def _phi_minus_sin(phi):
    small = phi < 1e-2
    p2 = phi * phi
    series = phi * p2 / 6.0 * (1 - p2 / 20.0 * (1 - p2 / 42.0 * (1 - p2 / 72.0)))
    return np.where(small, series, phi - np.sin(phi))


def _heisenberg_norm(r, zeta):
    """Distance from the origin to (v, zeta) in the standard Heisenberg group.

    ``r = |v|`` and the central coordinate is normalized so that the group
    law adds half the symplectic area.  Along the geodesic with angle phi
    in (0, 2 pi) one has ``zeta / r^2 = (phi - sin phi) / (8 sin^2(phi/2))``
    and length ``r (phi/2) / sin(phi/2)``.  The angle equation is solved
    by bisection to machine precision, in phi when phi <= pi and in
    u = 2 pi - phi otherwise, so both regimes keep full relative accuracy.
    """
    r = np.asarray(r, dtype=float)
    a = np.abs(np.asarray(zeta, dtype=float))
    r, a = np.broadcast_arrays(r, a)
    out = np.array(r, dtype=float, copy=True)
    vert = (r == 0) & (a > 0)
    out[vert] = 2.0 * np.sqrt(np.pi * a[vert])
    gen = (r > 0) & (a > 0)
    if not np.any(gen):
        return out
    target = a[gen] / r[gen] ** 2
    low = target <= np.pi / 8.0  # mu(pi) = pi / 8
    res = np.empty_like(target)

    def bisect(fun, lo, hi, increasing):
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = fun(mid) > tgt
            if increasing:
                hi, lo = np.where(above, mid, hi), np.where(above, lo, mid)
            else:
                lo, hi = np.where(above, mid, lo), np.where(above, hi, mid)
            if np.all(np.nextafter(lo, hi) >= hi):
                break
        return 0.5 * (lo + hi)

    if np.any(low):
        tgt = target[low]
        phi = bisect(lambda x: _phi_minus_sin(x) / (8 * np.sin(x / 2) ** 2),
                     np.zeros_like(tgt), np.full_like(tgt, np.pi), True)
        half = phi / 2.0
        h2 = half * half
        ratio = np.where(half < 1e-4, 1 + h2 / 6 + 7 * h2 * h2 / 360,
                         half / np.sin(np.where(half == 0, 1.0, half)))
        res[low] = ratio
    if np.any(~low):
        tgt = target[~low]
        u = bisect(lambda x: (2 * np.pi - x + np.sin(x)) / (8 * np.sin(x / 2) ** 2),
                   np.zeros_like(tgt), np.full_like(tgt, np.pi), False)
        res[~low] = (np.pi - u / 2.0) / np.sin(u / 2.0)
    out[gen] = r[gen] * res
    return out


def cc_norm(g: GroupDescriptor, w) -> np.ndarray:
    """Exact ``d_cc(0, w)`` for abelian and Heisenberg-type groups."""
    w = g.check_point(w)
    if g.is_abelian:
        return np.linalg.norm(w, axis=-1)
    beta = g.heisenberg_constant
    if beta is None:
        raise NotImplementedError("no closed-form distance for this group; use cc_upper_bound")
    r = np.linalg.norm(w[..., : g.n1], axis=-1)
    return _heisenberg_norm(r, w[..., g.n1] / beta)


def cc_lower_bound(g: GroupDescriptor, w) -> np.ndarray:
    """Cheap certified lower bound for ``d_cc(0, w)``."""
    w = g.check_point(w)
    first = np.linalg.norm(w[..., : g.n1], axis=-1)
    if g.is_abelian:
        return np.linalg.norm(w, axis=-1)
    central = np.linalg.norm(w[..., g.n1:], axis=-1)
    # a curve of length L has |central endpoint| <= |B| L^2 / 4
    return np.maximum(first, 2.0 * np.sqrt(central / g.bracket_norm))


def _constructive_path(g, w):
    """Horizontal segments joining 0 to w: a straight piece, then commutator squares."""
    n1 = g.n1
    segs = [w[:n1].copy()] if np.any(w[:n1]) else []
    zeta = w[n1:]
    pairs = [(i, j) for i in range(n1) for j in range(i + 1, n1)]
    basis = np.array([g._blk[i, j] for i, j in pairs]).T  # (n2, npairs)
    coef = np.linalg.lstsq(basis, zeta, rcond=None)[0]
    for (i, j), a in zip(pairs, coef):
        if a == 0:
            continue
        s = math.sqrt(abs(a))
        ei, ej = np.zeros(n1), np.zeros(n1)
        ei[i], ej[j] = s, s
        if a < 0:
            ei, ej = ej, ei
        segs += [ei, ej, -ei, -ej]
    return segs


def _endpoint(g, U):
    """Endpoint of the concatenation of straight horizontal segments ``U`` (rows)."""
    first = U.sum(axis=0)
    cum = np.cumsum(U, axis=0) - U  # sum of previous segments
    central = 0.5 * np.sum(g.bracket(cum, U), axis=0)
    return np.concatenate([first, central])


def cc_upper_bound(g: GroupDescriptor, w, segments: int = 24, starts: int = 4,
                   seed: int = 0) -> float:
    """Upper bound for ``d_cc(0, w)`` from optimized piecewise-straight horizontal paths.

    The length of every returned path is computed from a path whose endpoint
    matches ``w`` to 1e-9, so the value is a genuine upper bound.
    """
    w = g.check_point(w).astype(float)
    if g.is_abelian:
        return float(np.linalg.norm(w))
    n1, M = g.n1, segments
    segs = _constructive_path(g, w)
    best = float(sum(np.linalg.norm(s) for s in segs))
    if best == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)

    def energy(x):
        U = x.reshape(M, n1)
        return M * np.sum(U ** 2), 2 * M * x

    def cons(x):
        return _endpoint(g, x.reshape(M, n1)) - w

    def cons_jac(x):
        U = x.reshape(M, n1)
        J = np.zeros((g.n, M, n1))
        for a in range(n1):
            J[a, :, a] = 1.0
        before = np.cumsum(U, axis=0) - U
        after = U.sum(axis=0) - np.cumsum(U, axis=0)
        # central part is 1/2 sum_j [S_j, U_j] with S_j the sum of earlier segments
        blk = g._blk
        J[n1:] = 0.5 * (np.einsum("kj,ijm->mki", after, blk) + np.einsum("ki,ijm->mkj", before, blk))
        return J.reshape(g.n, M * n1)

    scale = best / M
    for s in range(starts):
        x0 = rng.normal(scale=scale, size=(M, n1))
        x0 += w[:n1] / M
        res = minimize(energy, x0.ravel(), jac=True, method="SLSQP",
                       constraints=[{"type": "eq", "fun": cons, "jac": cons_jac}],
                       options={"maxiter": 500, "ftol": 1e-14})
        U = res.x.reshape(M, n1)
        if np.max(np.abs(_endpoint(g, U) - w)) <= 1e-9:
            best = min(best, float(np.sum(np.linalg.norm(U, axis=1))))
    return best


def cc_distance(g: GroupDescriptor, p, q) -> CCDistance:
    """Carnot-Caratheodory distance ``d_cc(p, q) = ||p^-1 o q||_cc``.

    Exact for abelian and Heisenberg-type groups; otherwise the value is an
    upper bound and ``exact`` is False.
    """
    w = compose(g, inverse(g, p), q)
    if g.is_abelian or g.heisenberg_constant is not None:
        val = cc_norm(g, w)
        return CCDistance(float(val) if val.ndim == 0 else val, True)
    flat = w.reshape(-1, g.n)
    vals = np.array([cc_upper_bound(g, x) for x in flat]).reshape(w.shape[:-1])
    return CCDistance(float(vals) if vals.ndim == 0 else vals, False)
