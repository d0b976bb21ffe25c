"""A small arithmetic expression language for data specifications.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom (("^" | "**") unary)?
    atom    := NUMBER | NAME | NAME "(" [expr ("," expr)*] ")" | "(" expr ")"

Names: ``x1 .. xn`` (coordinates), ``x, y, z`` (aliases of ``x1, x2, x3``),
``t`` (time), ``pi`` and ``e``.  Functions: ``sin cos tan exp log sqrt abs
tanh`` (one argument), ``min max`` (two), ``frac(u) = u - floor(u)``,
``tri(u)`` (distance from u to the nearest integer) and, on H^1 only,
``theta(sigma[, phase])``, the lattice-periodic field of
:func:`carnot_torus.fields.theta`.

Expressions compile to vectorized callables ``f(t, X)``; evaluation
reduces nothing by itself, so periodicity is the author's responsibility
(:func:`periodicity_defect` measures it).
"""
from __future__ import annotations

import math
import re

import numpy as np

__all__ = ["ExprError", "parse", "compile_expr", "compile_vector", "periodicity_defect"]


class ExprError(ValueError):
    """Syntax or name error in an expression."""


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
                    r"|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^(),]))")

_UNARY = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
          "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
          "frac": lambda u: u - np.floor(u),
          "tri": lambda u: np.abs(u - np.round(u))}
_BINARY = {"min": np.minimum, "max": np.maximum}
_CONST = {"pi": math.pi, "e": math.e}
_ALIASES = {"x": 0, "y": 1, "z": 2}


def _tokenize(src: str):
    pos, out = 0, []
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise ExprError(f"unexpected character {src[pos:].strip()[:1]!r} at {pos}")
        num, name, op = m.groups()
        out.append(("num", float(num)) if num else ("name", name) if name else ("op", op))
        pos = m.end()
    out.append(("end", None))
    return out


class _Parser:
    def __init__(self, src):
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind
            raise ExprError(f"expected {want!r}, found {_show(tok)}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExprError(f"unexpected {_show(self.peek())}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() in (("op", "-"), ("op", "+")):
            op = self.take()[1]
            arg = self.unary()
            return ("neg", arg) if op == "-" else arg
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() in (("op", "^"), ("op", "**")):
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return ("num", val)
        if kind == "name":
            self.take()
            if self.peek() == ("op", "("):
                self.take()
                args = []
                if self.peek() != ("op", ")"):
                    args.append(self.expr())
                    while self.peek() == ("op", ","):
                        self.take()
                        args.append(self.expr())
                self.take("op", ")")
                return ("call", val, args)
            return ("name", val)
        if (kind, val) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise ExprError(f"unexpected {_show((kind, val))}")


def _show(tok):
    return "end of input" if tok[0] == "end" else repr(tok[1])


def parse(src: str):
    """Syntax tree of ``src`` (nested tuples)."""
    if not isinstance(src, str) or not src.strip():
        raise ExprError("empty expression")
    return _Parser(src).parse()


def _check(node, n, g):
    kind = node[0]
    if kind == "num":
        return
    if kind == "name":
        name = node[1]
        if name in _CONST or name == "t":
            return
        idx = _coord_index(name)
        if idx is None or idx >= n:
            raise ExprError(f"unknown name {name!r} (coordinates are x1..x{n})")
        return
    if kind == "call":
        name, args = node[1], node[2]
        if name in _UNARY:
            want = (1,)
        elif name in _BINARY:
            want = (2,)
        elif name == "theta":
            from .fields import _require_h1
            if g is None:
                raise ExprError("theta() needs a group")
            try:
                _require_h1(g)
            except ValueError as exc:
                raise ExprError(str(exc)) from None
            want = (1, 2)
        else:
            raise ExprError(f"unknown function {name!r}")
        if len(args) not in want:
            raise ExprError(f"{name}() takes {' or '.join(map(str, want))} argument(s), got {len(args)}")
        for a in args:
            _check(a, n, g)
        return
    for child in node[1:]:
        _check(child, n, g)


def _coord_index(name):
    if name in _ALIASES:
        return _ALIASES[name]
    m = re.fullmatch(r"x([1-9]\d*)", name)
    return int(m.group(1)) - 1 if m else None


def _evaluate(node, t, X, g):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "name":
        name = node[1]
        if name == "t":
            return t
        if name in _CONST:
            return _CONST[name]
        return X[..., _coord_index(name)]
    if kind == "neg":
        return -_evaluate(node[1], t, X, g)
    if kind == "call":
        name, args = node[1], [_evaluate(a, t, X, g) for a in node[2]]
        if name in _UNARY:
            return _UNARY[name](args[0])
        if name in _BINARY:
            return _BINARY[name](args[0], args[1])
        from .fields import theta
        sigma = float(np.asarray(args[0]).reshape(-1)[0])
        phase = float(np.asarray(args[1]).reshape(-1)[0]) if len(args) > 1 else 0.0
        return theta(g, sigma, phase)(X)
    a, b = _evaluate(node[1], t, X, g), _evaluate(node[2], t, X, g)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        return a / b
    return np.power(a, b)


def uses_time(node) -> bool:
    if node[0] == "name":
        return node[1] == "t"
    if node[0] == "num":
        return False
    if node[0] == "call":
        return any(uses_time(a) for a in node[2])
    return any(uses_time(c) for c in node[1:])


class CompiledExpr:
    """Callable ``f(t, X)`` (or ``f(X)`` with ``t = 0``) of a parsed expression."""

    def __init__(self, src: str, n: int, g=None):
        self.src, self.n, self.g = src, n, g
        self.tree = parse(src)
        _check(self.tree, n, g)
        self.time_dependent = uses_time(self.tree)

    def __call__(self, *args):
        if len(args) == 1:
            t, X = 0.0, args[0]
        elif len(args) == 2:
            t, X = args
        else:
            raise TypeError("call as f(X) or f(t, X)")
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            out = _evaluate(self.tree, t, X, self.g)
        return np.broadcast_to(np.asarray(out, dtype=float), X.shape[:-1]).copy()

    def __repr__(self):
        return f"CompiledExpr({self.src!r})"


def compile_expr(src, n: int, g=None) -> CompiledExpr:
    """Compile a scalar expression over ``n`` coordinates (numbers are accepted too)."""
    if isinstance(src, (int, float)):
        src = repr(float(src))
    return CompiledExpr(src, n, g)


class CompiledVector:
    """Vector field ``(t, X) -> (..., k)`` from a list of expressions."""

    def __init__(self, comps):
        self.comps = comps
        self.time_dependent = any(c.time_dependent for c in comps)

    def __call__(self, *args):
        return np.stack([c(*args) for c in self.comps], axis=-1)


def compile_vector(srcs, n: int, g=None) -> CompiledVector:
    return CompiledVector([compile_expr(s, n, g) for s in srcs])


def periodicity_defect(g, fn, samples: int = 256, seed: int = 0, t: float = 0.0) -> float:
    """``max |f(kappa(a) o x) - f(x)|`` over random points and lattice elements a in {-2..2}^n."""
    from .group import compose
    from .torus import lattice_point
    rng = np.random.default_rng(seed)
    X = rng.random((samples, g.n))
    A = rng.integers(-2, 3, size=(samples, g.n)).astype(float)
    Y = compose(g, lattice_point(g, A), X)
    fx, fy = fn(t, X), fn(t, Y)
    return float(np.max(np.abs(np.asarray(fx) - np.asarray(fy))))
