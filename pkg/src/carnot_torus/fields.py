"""Periodic test fields on Carnot tori.

Any function of the first-layer coordinates taken mod 1 is periodic,
since lattice translations move the first layer by integers.  For fields
that also vary along the centre of H^1 we use the theta-type sum

    Theta(x, y, z) = sum_n exp(-(y + n)^2 / (2 s^2)) cos(2 pi (z - xy/2 - n x) + phase),

which is invariant under the integer lattice of H^1 (the shift of
``z - xy/2`` by ``-a_2 x`` is absorbed by re-indexing ``n``).
"""
from __future__ import annotations

import numpy as np

from .group import GroupDescriptor

__all__ = ["tent", "trig", "holder_bump", "theta", "white_noise"]


def _frac(u):
    return u - np.floor(u)


def tent(slope: float = 1.0, axis: int = 0):
    """``slope * dist(x_axis, Z)``: Lipschitz constant ``slope`` w.r.t. d_cc."""
    def f(X):
        u = _frac(np.asarray(X, dtype=float)[..., axis])
        return slope * np.minimum(u, 1.0 - u)
    return f


def trig(freqs, phase: float = 0.0, amplitude: float = 1.0):
    """``amplitude * cos(2 pi k . x^(1) + phase)`` for integer first-layer frequencies ``k``."""
    k = np.asarray(freqs, dtype=float)

    def f(X):
        X = np.asarray(X, dtype=float)
        return amplitude * np.cos(2 * np.pi * (X[..., : len(k)] @ k) + phase)
    return f


def holder_bump(alpha: float, axis: int = 0):
    """``|sin(pi x_axis)|^alpha``: exactly C^alpha at the cusp ``x_axis in Z``."""
    def f(X):
        return np.abs(np.sin(np.pi * np.asarray(X, dtype=float)[..., axis])) ** alpha
    return f


def _require_h1(g: GroupDescriptor):
    if g.layer_dims != (2, 1) or abs(g.brackets[0, 1, 2] - 1.0) > 0 or abs(g.brackets[1, 0, 2] + 1.0) > 0:
        raise ValueError("theta fields are defined for H^1 with [E1, E2] = E3")


def theta(g: GroupDescriptor, sigma: float = 0.25, phase: float = 0.0, terms: int = 6):
    """Smooth lattice-periodic field of H^1 depending on every coordinate."""
    _require_h1(g)
    ns = np.arange(-terms, terms + 1)

    def f(X):
        X = np.asarray(X, dtype=float)
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        # sum over the translates nearest to y; terms beyond +-terms are below 1e-30
        base = np.floor(y)
        out = np.zeros(np.shape(x))
        for n in ns:
            m = n - base
            out = out + np.exp(-((y + m) ** 2) / (2 * sigma ** 2)) * np.cos(
                2 * np.pi * (z - 0.5 * x * y - m * x) + phase)
        return out
    return f


def white_noise(g: GroupDescriptor, resolution, seed: int = 0) -> np.ndarray:
    """Independent standard normal node values (white noise at grid scale)."""
    return np.random.default_rng(seed).standard_normal(tuple(resolution))
