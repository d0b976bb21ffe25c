"""Independent reference values used by the test suite.

Nothing here imports the package under test except for plain data
containers; every formula is written out from first principles.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, special


# -- Heisenberg group H^1 with [E1, E2] = E3, written out by hand -------------

def h1_compose(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    x = p[..., 0] + q[..., 0]
    y = p[..., 1] + q[..., 1]
    z = p[..., 2] + q[..., 2] + 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
    return np.stack([x, y, z], axis=-1)


def h1_inverse(p):
    return -np.asarray(p, float)


def h1_norm(p):
    """Homogeneous norm (|x^(1)|^4 + |x^(2)|^2)^(1/4) on H^1."""
    p = np.asarray(p, float)
    return ((p[..., 0] ** 2 + p[..., 1] ** 2) ** 2 + p[..., 2] ** 2) ** 0.25


def h1_lattice(a):
    """Lattice point of integer vector a: (a1, a2, a3 + a1 a2 / 2)."""
    a = np.asarray(a, float)
    return np.stack([a[..., 0], a[..., 1], a[..., 2] + 0.5 * a[..., 0] * a[..., 1]], axis=-1)


def h1_reduce_bruteforce(p, box=3):
    """Search a in {-box..box}^3 for kappa(a)^-1 o p in [0,1)^3."""
    p = np.asarray(p, float)
    hits = []
    for a in itertools.product(range(-box, box + 1), repeat=3):
        x0 = h1_compose(h1_inverse(h1_lattice(a)), p)
        if np.all(x0 >= -1e-12) and np.all(x0 < 1 - 1e-12):
            hits.append((x0, a))
    return hits


def h1_reduce_raw_integer(p, box=3):
    """Same search with the raw integer points a in Z^3 as translates."""
    p = np.asarray(p, float)
    hits = []
    for a in itertools.product(range(-box, box + 1), repeat=3):
        x0 = h1_compose(h1_inverse(np.array(a, float)), p)
        if np.all(x0 >= -1e-12) and np.all(x0 < 1 - 1e-12):
            hits.append((x0, a))
    return hits


def h1_cc_vertical(z):
    """d_cc(0, (0, 0, z)) = 2 sqrt(pi |z|) for the law z + (xy' - yx')/2."""
    return 2.0 * math.sqrt(math.pi * abs(z))


def h1_cc_isoperimetric(z, segments=4000):
    """Length of the circle through 0 enclosing signed area z, traced as a polygon.

    A closed horizontal loop gains central coordinate equal to its signed
    area, so the shortest loop is a circle of area |z|; the polygon length
    converges to 2 sqrt(pi |z|) from below.
    """
    r = math.sqrt(abs(z) / math.pi)
    th = np.linspace(0, 2 * math.pi, segments + 1)
    pts = np.stack([r * np.cos(th) - r, r * np.sin(th)], axis=1)
    area = 0.5 * np.sum(pts[:-1, 0] * pts[1:, 1] - pts[1:, 0] * pts[:-1, 1])
    length = np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))
    return length, area


# -- bump integral in closed form ----------------------------------------------

def bump_integral_closed_form(layer_dims, step):
    """int exp(1 / (||x||^e - 1)) over R^n with ||x||^e = |x1|^e + |x2|^(e/2) (e = 2 r!).

    Polar coordinates in each layer and the substitution s = ||x||^e give
    (|S^{d1-1}| |S^{d2-1}| Gamma(d1/e) Gamma(2 d2/e) / (e (e/2) Gamma(Q/e)))
    times int_0^1 exp(1/(s-1)) s^(Q/e - 1) ds.
    """
    e = 2 * math.factorial(step)
    sphere = lambda d: 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    if step == 1:
        (d,) = layer_dims
        radial, _ = integrate.quad(lambda r: math.exp(1 / (r * r - 1)) * r ** (d - 1), 0, 1,
                                   epsabs=1e-15, epsrel=1e-13)
        return sphere(d) * radial
    d1, d2 = layer_dims
    Q = d1 + 2 * d2
    beta = math.gamma(d1 / e) * math.gamma(2 * d2 / e) / math.gamma(Q / e)
    s_int, _ = integrate.quad(lambda s: math.exp(1 / (s - 1)) * s ** (Q / e - 1), 0, 1,
                              epsabs=1e-15, epsrel=1e-13)
    return sphere(d1) * sphere(d2) * beta / (e * (e / 2)) * s_int


def h1_bump_integral():
    """For H^1 the integral reduces to (pi^2 / 2) E_2(1)."""
    return 0.5 * math.pi ** 2 * float(special.expn(2, 1.0))


# -- abelian Fourier solutions (generator Delta, noise sqrt(2) dB) -------------

def heat_cos(t, x, k=1):
    """e^{t Delta} cos(2 pi k x1) = exp(-4 pi^2 k^2 t) cos(2 pi k x1)."""
    x = np.asarray(x, float)
    return np.exp(-4 * math.pi ** 2 * k * k * t) * np.cos(2 * math.pi * k * x[..., 0])


def gaussian_1d(t, x):
    """Fundamental solution of d_t - d_xx on R: (4 pi t)^(-1/2) exp(-x^2 / 4t)."""
    return np.exp(-np.asarray(x) ** 2 / (4 * t)) / math.sqrt(4 * math.pi * t)


def backward_fourier(T, t, X, zT_modes, f_modes=()):
    """Exact solution of -z_t - Delta z = f, z(T) = zT, on the abelian torus.

    Modes are ``(amplitude, k_vector, phase)`` of ``a cos(2 pi k.x + phase)``;
    ``f`` is time independent.
    """
    X = np.asarray(X, float)
    tau = T - t
    out = np.zeros(X.shape[:-1])
    for a, k, ph in zT_modes:
        lam = 4 * math.pi ** 2 * float(np.dot(k, k))
        out += a * math.exp(-lam * tau) * np.cos(2 * math.pi * (X @ np.asarray(k, float)) + ph)
    for a, k, ph in f_modes:
        lam = 4 * math.pi ** 2 * float(np.dot(k, k))
        w = tau if lam == 0 else (1 - math.exp(-lam * tau)) / lam
        out += a * w * np.cos(2 * math.pi * (X @ np.asarray(k, float)) + ph)
    return out


def forward_fourier(t, X, rho0_modes):
    """Exact solution of rho_t = Delta rho with rho(0) given by cosine modes (plus constants)."""
    X = np.asarray(X, float)
    out = np.zeros(X.shape[:-1])
    for a, k, ph in rho0_modes:
        lam = 4 * math.pi ** 2 * float(np.dot(k, k))
        out += a * math.exp(-lam * t) * np.cos(2 * math.pi * (X @ np.asarray(k, float)) + ph)
    return out


# -- transport -------------------------------------------------------------------

def two_by_two_d1(C, a, b, steps=20001):
    """Brute force over the one-parameter family of couplings of two 2-atom measures."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    lo, hi = max(0.0, a[0] - b[1]), min(a[0], b[0])
    best = math.inf
    for p00 in np.linspace(lo, hi, steps):
        P = np.array([[p00, a[0] - p00], [b[0] - p00, a[1] - b[0] + p00]])
        if P.min() < -1e-12:
            continue
        best = min(best, float(np.sum(P * C)))
    return best


def torus1d_distance(x, y):
    """Distance on R/Z."""
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.minimum(d, 1 - d)
