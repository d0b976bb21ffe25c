"""Command line entry points.

Every subcommand reads a JSON config (``--config``), applies the command
line overrides (``--seed``, ``--threads``, ``--out``), validates the
result against a schema and writes a self-describing JSON report (and a
CSV table where relevant) into the output directory.  Reports contain no
timestamps or timings, so identical inputs give byte-identical files.

Exit codes: 0 success, 1 a check failed, 2 invalid descriptor or config,
3 time step refused by the stability bound.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .expr import ExprError, compile_expr, compile_vector, periodicity_defect
from .group import (DescriptorError, GroupDescriptor, compose, dilate, homogeneous_norm,
                    horizontal_frame, inverse, resolve_group)
from .heat import SDEConfig, estimate_kernel
from .measures import DiscreteMeasure
from .metrics import binned_d1, dual_norm_estimate, holder_norm, holder_seminorm, kantorovich_d1
from .mollifiers import SpaceTimeFunction, mollify_heat, mollify_torus
from .solvers import (BackwardProblem, CFLError, FPKProblem, _density_on_grid, _drift_on_grid,
                      cfl_bound, duality_sides, feynman_kac_oracle, simulate_fpk_particles,
                      solve_backward_fd, solve_fpk_fd)
from .torus import GridFunction, grid_nodes, lattice_point, reduce

COMMANDS = ("group-check", "heat-kernel", "mollify", "solve-backward", "solve-fpk", "duality",
            "norms", "d1")


class ConfigError(ValueError):
    pass


def version_string() -> str:
    """Package version, with ``git describe`` appended when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        tag = out.stdout.strip()
        if out.returncode == 0 and tag:
            return f"{__version__}+g{tag}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# schemas

_SPEC = {"oneOf": [{"type": "number"}, {"type": "string"}, {"type": "null"},
                   {"type": "object", "properties": {"expr": {"type": "string"}},
                    "required": ["expr"], "additionalProperties": False},
                   {"type": "object", "properties": {"grid": {"type": "string"}},
                    "required": ["grid"], "additionalProperties": False}]}
_VSPEC = {"oneOf": [{"type": "null"},
                    {"type": "array", "items": {"type": ["number", "string"]}},
                    {"type": "object", "properties": {"expr": {"type": "array", "items": {"type": "string"}}},
                     "required": ["expr"], "additionalProperties": False},
                    {"type": "object", "properties": {"grid": {"type": "array", "items": {"type": "string"}}},
                     "required": ["grid"], "additionalProperties": False}]}
_ATOMS = {"type": "object", "properties": {
    "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    "weights": {"type": "array", "items": {"type": "number"}}},
    "required": ["points", "weights"], "additionalProperties": False}
_MSPEC = {"oneOf": [_SPEC, {"type": "object", "properties": {"atoms": _ATOMS},
                            "required": ["atoms"], "additionalProperties": False}]}
_GROUP = {"oneOf": [{"type": "string"}, {"type": "object"}]}
_GRID = {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_OPT_POS = {"oneOf": [_POS, {"type": "null"}]}
_SDE = {"type": "object", "properties": {
    "N": {"type": "integer", "minimum": 1}, "dt": _POS,
    "scheme": {"enum": ["geometric", "heun"]}, "shard_size": {"type": "integer", "minimum": 1}},
    "additionalProperties": False}
_PAIRS = {"type": "array", "items": {"type": "object", "properties": {"xi": _SPEC, "f": _SPEC},
                                     "required": ["xi"], "additionalProperties": False}}
_COMMON = {"group": _GROUP, "seed": {"type": "integer", "minimum": 0},
           "threads": {"type": "integer", "minimum": 1}}

SCHEMAS = {
    "group-check": {"cases": {"type": "integer", "minimum": 1}},
    "heat-kernel": {"t": {"oneOf": [_POS, {"type": "array", "items": _POS}]},
                    "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                    "sde": _SDE, "bandwidth": {"oneOf": [_POS, {"type": "null"}]}},
    "mollify": {"function": _SPEC, "resolution": _GRID, "kind": {"enum": ["torus", "heat"]},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "q": {"type": "integer", "minimum": 2}, "pair_budget": {"type": "integer", "minimum": 10},
                "sde": _SDE},
    "solve-backward": {"T": _POS, "grid": _GRID, "dt": _OPT_POS, "b": _VSPEC, "f": _SPEC, "zT": _SPEC,
                       "interp": {"enum": ["spectral", "linear"]},
                       "store_every": {"type": "integer", "minimum": 1},
                       "probes": {"type": "integer", "minimum": 0}, "sde": _SDE,
                       "rho0": _MSPEC, "upsilon": _MSPEC, "pairs": _PAIRS},
    "solve-fpk": {"T": _POS, "grid": _GRID, "dt": _OPT_POS, "b": _VSPEC, "rho0": _MSPEC,
                  "upsilon": _MSPEC, "interp": {"enum": ["spectral", "linear"]},
                  "store_every": {"type": "integer", "minimum": 1}, "pairs": _PAIRS,
                  "particles": {"type": "object", "properties": {
                      "N": {"type": "integer", "minimum": 1}, "dt": _POS,
                      "blocks": {"type": "array", "items": {"type": "integer", "minimum": 1}}},
                      "additionalProperties": False}},
    "duality": {"T": _POS, "grids": {"type": "array", "items": _GRID, "minItems": 1},
                "dt_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "b": _VSPEC, "rho0": _MSPEC, "upsilon": _MSPEC, "pairs": _PAIRS,
                "interp": {"enum": ["spectral", "linear"]}},
    "norms": {"function": _SPEC, "resolution": _GRID, "k": {"type": "integer", "minimum": 0, "maximum": 2},
              "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
              "pair_budget": {"type": "integer", "minimum": 10}, "measure": _ATOMS,
              "dictionary_size": {"type": "integer", "minimum": 1}},
    "d1": {"mu": _ATOMS, "nu": _ATOMS},
}

DEFAULTS = {
    "group-check": {"group": "heisenberg", "cases": 1000},
    "heat-kernel": {"group": "heisenberg", "t": [0.5], "points": [[0.0, 0.0, 0.0]],
                    "sde": {"N": 100000, "dt": 0.01}, "bandwidth": None},
    "mollify": {"group": "heisenberg", "function": "tri(x1)", "resolution": [16, 16, 16],
                "kind": "torus", "levels": [1, 2, 3, 4, 5, 6], "alpha": 1.0, "q": 6,
                "pair_budget": 20000, "sde": {"N": 20000, "dt": 0.01}},
    "solve-backward": {"group": "heisenberg", "T": 0.1, "grid": [16, 16, 16], "dt": None,
                       "b": ["0.5*sin(2*pi*x2)", "0.5*cos(2*pi*x1)"],
                       "f": "cos(2*pi*x1)*sin(2*pi*t)", "zT": "cos(2*pi*x1) + 0.5*sin(2*pi*x2)",
                       "interp": "spectral", "store_every": 1, "probes": 5,
                       "sde": {"N": 20000, "dt": 0.005}, "rho0": "1 + 0.5*cos(2*pi*x1)",
                       "upsilon": 0, "pairs": []},
    "solve-fpk": {"group": "heisenberg", "T": 0.1, "grid": [16, 16, 16], "dt": None,
                  "b": ["0.5*sin(2*pi*x2)", "0.5*cos(2*pi*x1)"], "rho0": "1 + 0.5*cos(2*pi*x1)",
                  "upsilon": 0, "interp": "spectral", "store_every": 1, "pairs": []},
    "duality": {"group": "heisenberg", "T": 0.05, "grids": [[8, 8, 8], [16, 16, 16]], "dt_factor": 1.0,
                "b": ["0.5*sin(2*pi*x2)", "0.5*cos(2*pi*x1)"], "rho0": "1 + 0.5*cos(2*pi*x1)",
                "upsilon": "cos(2*pi*x1)*(1 + t)", "pairs": [], "interp": "spectral"},
    "norms": {"group": "heisenberg", "function": "tri(x1)", "resolution": [16, 16, 16], "k": 0,
              "alpha": 1.0, "pair_budget": 20000, "dictionary_size": 16},
    "d1": {"group": "heisenberg"},
}

_SDE_REQUIRED = {"heat-kernel", "mollify", "solve-backward"}
_REQUIRED = {"group-check": [], "heat-kernel": [], "mollify": [], "solve-backward": [],
             "solve-fpk": [], "duality": [], "norms": [], "d1": ["mu", "nu"]}


def resolve_config(command: str, user: dict, seed=None, threads=None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    if seed is not None:
        cfg["seed"] = int(seed)
    if threads is not None:
        cfg["threads"] = int(threads)
    schema = {"type": "object", "properties": {**_COMMON, **SCHEMAS[command]},
              "required": _REQUIRED[command], "additionalProperties": False}
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    return cfg


# ---------------------------------------------------------------------------
# data specs


def _scalar(spec, g):
    """Callable ``f(t, X)`` / ``f(X)`` for a scalar spec, or a GridFunction."""
    if spec is None:
        spec = 0.0
    if isinstance(spec, dict) and "grid" in spec:
        return GridFunction.load(spec["grid"], g)
    if isinstance(spec, dict):
        spec = spec["expr"]
    return compile_expr(spec, g.n, g)


def _vector(spec, g):
    if spec is None:
        return None
    if isinstance(spec, dict) and "grid" in spec:
        comps = [GridFunction.load(p, g) for p in spec["grid"]]
        if len(comps) != g.n1:
            raise ConfigError(f"drift needs {g.n1} components, got {len(comps)}")
        return comps
    srcs = spec["expr"] if isinstance(spec, dict) else spec
    if len(srcs) != g.n1:
        raise ConfigError(f"drift needs {g.n1} components, got {len(srcs)}")
    if all(isinstance(s, (int, float)) and s == 0 for s in srcs):
        return None
    return compile_vector(srcs, g.n, g)


def _measure_or_density(spec, g):
    if isinstance(spec, dict) and "atoms" in spec:
        return _atoms(spec["atoms"], g)
    if isinstance(spec, (int, float)):
        return float(spec)
    return _scalar(spec, g)


def _atoms(data, g):
    pts = np.asarray(data["points"], dtype=float).reshape(-1, g.n)
    return DiscreteMeasure(g, pts, data["weights"])


def _sde(cfg, key="sde"):
    s = cfg.get(key, {})
    return SDEConfig(dt=s.get("dt", 0.01), scheme=s.get("scheme", "geometric"), seed=cfg["seed"],
                     N=s.get("N", 10000), shard_size=s.get("shard_size", 8192),
                     threads=cfg["threads"])


CANNED_PAIRS = [
    {"xi": 1, "f": 0},
    {"xi": "cos(2*pi*x1)", "f": 0},
    {"xi": "sin(2*pi*x1) + 0.5*cos(4*pi*x1)", "f": "cos(2*pi*x1)*(1 + t)"},
]


def _components(b):
    comps = getattr(b, "comps", None) or []
    return {f"b{i + 1}": c for i, c in enumerate(comps)}


def _defects(g, specs):
    out = {}
    for name, fn in specs.items():
        if fn is None or isinstance(fn, (float, GridFunction, DiscreteMeasure)):
            continue
        if callable(fn):
            out[name] = periodicity_defect(g, fn)
    return out


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, data):
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _report(command, cfg, results, status="ok"):
    return {"command": command, "version": version_string(), "config": cfg, "seed": cfg["seed"],
            "status": status, "results": results}


# ---------------------------------------------------------------------------
# group-check


def group_invariants(g: GroupDescriptor, cases: int = 1000, seed: int = 0) -> list:
    """Named checks of the group law, dilations, Haar measure and the lattice."""
    rng = np.random.default_rng(seed)
    n = g.n
    p, q, s = (rng.uniform(-2, 2, (cases, n)) for _ in range(3))
    checks = []

    def add(name, value, tol):
        checks.append({"name": name, "value": float(value), "tolerance": tol,
                       "passed": bool(value <= tol)})

    add("associativity", np.max(np.abs(compose(g, compose(g, p, q), s) - compose(g, p, compose(g, q, s)))), 1e-10)
    zero = np.zeros_like(p)
    add("identity", max(np.max(np.abs(compose(g, p, zero) - p)), np.max(np.abs(compose(g, zero, p) - p))), 1e-12)
    add("inverse", max(np.max(np.abs(compose(g, p, inverse(g, p)))),
                       np.max(np.abs(compose(g, inverse(g, p), p)))), 1e-12)
    auto, homog = 0.0, 0.0
    for lam, pp, qq in zip(rng.uniform(0.2, 3.0, 10), np.array_split(p, 10), np.array_split(q, 10)):
        d = dilate(g, lam, compose(g, pp, qq)) - compose(g, dilate(g, lam, pp), dilate(g, lam, qq))
        auto = max(auto, np.max(np.abs(d)) / max(1.0, lam ** g.step))
        homog = max(homog, np.max(np.abs(homogeneous_norm(g, dilate(g, lam, pp))
                                         - lam * homogeneous_norm(g, pp))))
    add("dilation automorphism", auto, 1e-10)
    add("norm homogeneity", homog, 1e-10)
    h = 1e-5
    jac = np.zeros((cases, n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, :, j] = (compose(g, p, q + e) - compose(g, p, q - e)) / (2 * h)
    add("haar jacobian", np.max(np.abs(np.linalg.det(jac) - 1.0)), 1e-6)
    ranks = []
    for x in p[:100]:
        F = horizontal_frame(g, x)
        cols = [F[i] for i in range(g.n1)]
        if g.step == 2:
            cols += [np.concatenate([np.zeros(g.n1), g.brackets[i, j, g.n1:]])
                     for i in range(g.n1) for j in range(i + 1, g.n1)]
        ranks.append(np.linalg.matrix_rank(np.stack(cols, axis=1), tol=1e-10))
    add("hoermander rank", n - min(ranks), 0)
    if g.step == 1 or g.has_integer_brackets:
        a = rng.integers(-3, 4, (cases, n)).astype(float)
        x = rng.random((cases, n))
        y0, k = reduce(g, compose(g, lattice_point(g, a), x))
        add("reduce invariance", np.max(np.abs(y0 - reduce(g, x)[0])), 1e-10)
        add("reduce round trip", np.max(np.abs(compose(g, lattice_point(g, k), y0)
                                               - compose(g, lattice_point(g, a), x))), 1e-10)
    return checks


def cmd_group_check(cfg):
    g = resolve_group(cfg["group"])
    checks = group_invariants(g, cfg["cases"], cfg["seed"])
    notes = ["commutative: the group law is vector addition"] if g.is_abelian else []
    ok = all(c["passed"] for c in checks)
    results = {"group": g.to_dict(), "checks": checks, "notes": notes,
               "failed": [c["name"] for c in checks if not c["passed"]]}
    return results, (0 if ok else 1), None


# ---------------------------------------------------------------------------
# heat kernel


def cmd_heat_kernel(cfg):
    g = resolve_group(cfg["group"])
    sde = _sde(cfg)
    ts = cfg["t"] if isinstance(cfg["t"], list) else [cfg["t"]]
    rows = []
    for i, t in enumerate(ts):
        for x in cfg["points"]:
            est = estimate_kernel(g, t, np.asarray(x, dtype=float), sde.with_(dt=min(sde.dt, t)),
                                  cfg["bandwidth"], stream=i)
            rows.append({"t": t, "x": list(map(float, x)), "value": est.value, "stderr": est.stderr,
                         "bandwidth": est.bandwidth, "N": sde.N})
    return {"estimates": rows}, 0, None


# ---------------------------------------------------------------------------
# mollifier table


def _fit_slope(eps, err):
    eps, err = np.asarray(eps), np.asarray(err)
    ok = err > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(err[ok]), 1)[0])


def mollifier_table(g, fn, resolution, levels, kind="torus", alpha=1.0, q=6, pair_budget=20000,
                    sde=None, seed=0):
    """Rows ``(eps, sup_error, seminorm_ratio)`` along ``eps = 2^-j``."""
    G = GridFunction.from_function(g, lambda X: fn(X), tuple(resolution))
    s_in = holder_seminorm(G, alpha, pair_budget, seed).value
    rows = []
    for j in levels:
        eps = 2.0 ** -j
        if kind == "torus":
            out = mollify_torus(g, G, eps, q)
        else:
            st = SpaceTimeFunction.constant_in_time(G, [0.0, 1.0])
            out = mollify_heat(st, eps, sde.with_(dt=min(sde.dt, eps / 4)), time_nodes=8).slice(0)
        err = float(np.max(np.abs(out.values - G.values)))
        s_out = holder_seminorm(out, alpha, pair_budget, seed).value
        ratio = s_out / s_in if s_in > 0 else (0.0 if s_out == 0 else float("inf"))
        rows.append((eps, err, ratio))
    return rows, s_in


def cmd_mollify(cfg, out: Path):
    g = resolve_group(cfg["group"])
    fn = _scalar(cfg["function"], g)
    rows, s_in = mollifier_table(g, fn, cfg["resolution"], cfg["levels"], cfg["kind"], cfg["alpha"],
                                 cfg["q"], cfg["pair_budget"], _sde(cfg), cfg["seed"])
    _write_csv(out / "mollify_table.csv", ["eps", "sup_error", "seminorm_ratio"], rows)
    eps = [r[0] for r in rows]
    err = [r[1] for r in rows]
    res = {"rows": [{"eps": e, "sup_error": s, "seminorm_ratio": r} for e, s, r in rows],
           "input_seminorm": s_in, "fitted_slope": _fit_slope(eps, err),
           "max_seminorm_ratio": max(r[2] for r in rows),
           "seminorms": "lower bounds from sampled pairs",
           "periodicity_defect": _defects(g, {"function": fn}).get("function")}
    return res, 0, ["mollify_table.csv"]


# ---------------------------------------------------------------------------
# solvers


def _duality_block(g, rho, b, rho0, upsilon, pairs):
    out = []
    for pr in CANNED_PAIRS + list(pairs):
        xi = _scalar(pr["xi"], g)
        f = _scalar(pr.get("f", 0), g)
        lhs, rhs, _ = duality_sides(rho, b, rho0, upsilon, f, xi)
        out.append({"xi": pr["xi"], "f": pr.get("f", 0), "lhs": lhs, "rhs": rhs,
                    "residual": abs(lhs - rhs)})
    return out


def _mass_drift(rho, upsilon_grid_mass):
    mass = rho.values.reshape(len(rho.times), -1).mean(axis=1)
    ts = rho.times
    expected = mass[0] + np.concatenate([[0.0], np.cumsum(upsilon_grid_mass[:-1] * np.diff(ts))])
    return float(np.max(np.abs(mass - expected)))


def _upsilon_masses(g, upsilon, rho):
    eps = rho.meta.get("premollify_eps", 1.0)
    return np.array([_density_on_grid(g, upsilon, rho.resolution, eps, t).mean() for t in rho.times])


def _fourier_exact(g, zT, f, T, res, times):
    """Exact grid solution on an abelian torus for b = 0 and time-independent f."""
    X = grid_nodes(res)
    ax = tuple(range(g.n))
    ZT = np.fft.fftn(np.asarray(zT(X), dtype=float), axes=ax)
    F = np.fft.fftn(np.asarray(f(0.0, X), dtype=float), axes=ax)
    ks = np.meshgrid(*[np.fft.fftfreq(m, 1.0 / m) for m in res], indexing="ij")
    lam = 4 * np.pi ** 2 * sum(k ** 2 for k in ks)
    out = []
    for t in times:
        tau = T - t
        decay = np.exp(-lam * tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            duh = np.where(lam > 0, (1 - decay) / np.where(lam > 0, lam, 1.0), tau)
        out.append(np.real(np.fft.ifftn(decay * ZT + duh * F, axes=ax)))
    return np.stack(out)


def _admissible_dt(prob, grid, dt_factor=1.0):
    """Largest stable step for ``prob`` on ``grid`` (drift maximum over 33 sample times)."""
    _, bmax = _drift_on_grid(prob.drift, np.linspace(0, prob.T, 33), grid_nodes(grid), prob.g)
    return dt_factor * cfl_bound(prob.g, grid, bmax)


def _solve_with_cfl(solver, prob, grid, cfg):
    dt = cfg.get("dt") or _admissible_dt(prob, grid)
    return solver(prob, grid, dt, cfg["interp"], cfg["store_every"])


def cmd_solve_backward(cfg, out: Path):
    g = resolve_group(cfg["group"])
    grid = tuple(cfg["grid"])
    b, f, zT = _vector(cfg["b"], g), _scalar(cfg["f"], g), _scalar(cfg["zT"], g)
    prob = BackwardProblem(g, cfg["T"], b=b, f=f, zT=zT)
    z = _solve_with_cfl(solve_backward_fd, prob, grid, cfg)
    z.save(out / "solution.bin")
    res = {"cfl": {"dt": z.meta["dt"], "bound": z.meta["cfl_bound"], "bmax": z.meta["bmax"],
                   "steps": z.meta["steps"]},
           "sup_norm": z.sup_norm(),
           "periodicity_defect": _defects(g, {"f": f, "zT": zT, **_components(b)})}
    # Feynman-Kac probes
    rng = np.random.default_rng(cfg["seed"])
    sde = _sde(cfg)
    probes = []
    for i in range(cfg["probes"]):
        t = float(rng.uniform(0, prob.T))
        x = rng.random(g.n)
        k = int(np.argmin(np.abs(z.times - t)))
        t = float(z.times[k])
        fd = float(z.slice(k)(x[None])[0])
        mean, se = feynman_kac_oracle(prob, t, x, sde.with_(dt=min(sde.dt, max(prob.T - t, 1e-12))),
                                      stream=100 + i) if t < prob.T else (fd, 0.0)
        probes.append({"t": t, "x": x.tolist(), "fd": fd, "fk": mean, "fk_stderr": se,
                       "delta": abs(fd - mean)})
    res["feynman_kac"] = probes
    if g.is_abelian and b is None and not getattr(f, "time_dependent", False):
        exact = _fourier_exact(g, zT, f, prob.T, grid, z.times)
        res["fourier_delta"] = float(np.max(np.abs(exact - z.values)))
    # weak formulation against the FPK solution with the same drift
    rho0 = _measure_or_density(cfg["rho0"], g)
    ups = _measure_or_density(cfg["upsilon"], g)
    fprob = FPKProblem(g, prob.T, b=b, upsilon=ups, rho0=rho0)
    rho = solve_fpk_fd(fprob, grid, z.meta["dt"], cfg["interp"], 1)
    res["duality"] = _duality_block(g, rho, b, rho0, ups, cfg["pairs"])
    res["mass_drift"] = _mass_drift(rho, _upsilon_masses(g, ups, rho))
    return res, 0, ["solution.bin", "solution.bin.json"]


def cmd_solve_fpk(cfg, out: Path):
    g = resolve_group(cfg["group"])
    grid = tuple(cfg["grid"])
    b = _vector(cfg["b"], g)
    rho0 = _measure_or_density(cfg["rho0"], g)
    ups = _measure_or_density(cfg["upsilon"], g)
    prob = FPKProblem(g, cfg["T"], b=b, upsilon=ups, rho0=rho0)
    rho = _solve_with_cfl(solve_fpk_fd, prob, grid, cfg)
    rho.save(out / "density.bin")
    res = {"cfl": {"dt": rho.meta["dt"], "bound": rho.meta["cfl_bound"], "bmax": rho.meta["bmax"],
                   "steps": rho.meta["steps"]},
           "mass": [float(v.mean()) for v in rho.values[[0, -1]]],
           "mass_drift": _mass_drift(rho, _upsilon_masses(g, ups, rho)),
           "min_density": float(rho.values.min())}
    if int(cfg["store_every"]) == 1:
        res["duality"] = _duality_block(g, rho, b, rho0, ups, cfg["pairs"])
    part = cfg.get("particles")
    if part:
        if prob.has_source:
            raise ConfigError("particles support upsilon = 0 only")
        sde = SDEConfig(dt=part.get("dt", 0.005), seed=cfg["seed"], N=part.get("N", 100000),
                        threads=cfg["threads"])
        ens = simulate_fpk_particles(prob, sde, [prob.T], sample_resolution=grid)[-1]
        res["particles"] = {"N": sde.N, "mass": ens.total_mass,
                            "binned_d1_to_grid": binned_d1(g, rho.slice(len(rho.times) - 1), ens,
                                                           part.get("blocks"))}
    return res, 0, ["density.bin", "density.bin.json"]


def cmd_duality(cfg, out: Path):
    g = resolve_group(cfg["group"])
    b = _vector(cfg["b"], g)
    rho0 = _measure_or_density(cfg["rho0"], g)
    ups = _measure_or_density(cfg["upsilon"], g)
    levels = []
    prob = FPKProblem(g, cfg["T"], b=b, upsilon=ups, rho0=rho0)
    for grid in cfg["grids"]:
        grid = tuple(grid)
        rho = solve_fpk_fd(prob, grid, _admissible_dt(prob, grid, cfg["dt_factor"]), cfg["interp"], 1)
        levels.append({"grid": list(grid), "dt": rho.meta["dt"],
                       "pairs": _duality_block(g, rho, b, rho0, ups, cfg["pairs"]),
                       "mass_drift": _mass_drift(rho, _upsilon_masses(g, ups, rho))})
    for lo, hi in zip(levels, levels[1:]):
        hi["reduction"] = [a["residual"] / c["residual"] if c["residual"] > 0 else float("inf")
                           for a, c in zip(lo["pairs"], hi["pairs"])]
    return {"levels": levels, "tested_pairs": len(levels[0]["pairs"])}, 0, None


# ---------------------------------------------------------------------------
# norms and d1


def cmd_norms(cfg, out: Path):
    g = resolve_group(cfg["group"])
    fn = _scalar(cfg["function"], g)
    G = fn if isinstance(fn, GridFunction) else GridFunction.from_function(
        g, lambda X: fn(X), tuple(cfg["resolution"]))
    rep = holder_norm(g, G, cfg["k"], cfg["alpha"], pair_budget=cfg["pair_budget"], seed=cfg["seed"])
    res = {"holder": rep.to_dict()}
    if "measure" in cfg:
        mu = _atoms(cfg["measure"], g)
        val, wit = dual_norm_estimate(mu, cfg["k"], cfg["alpha"], cfg["dictionary_size"],
                                      return_witness=True)
        res["dual_norm"] = {"value": val, "witness": wit, "kind": "lower bound",
                            "dictionary_size": cfg["dictionary_size"]}
    return res, 0, None


def cmd_d1(cfg, out: Path):
    g = resolve_group(cfg["group"])
    mu, nu = _atoms(cfg["mu"], g), _atoms(cfg["nu"], g)
    val, plan = kantorovich_d1(mu, nu, return_plan=True)
    return {"d1": val, "plan": plan, "atoms": [len(mu), len(nu)]}, 0, None


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="carnot-torus", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run {name}")
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads for Monte Carlo stages")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if name == "group-check":
            sp.add_argument("--group", help="builtin name or descriptor file (overrides config)")
    return p


HANDLERS = {
    "group-check": lambda cfg, out: cmd_group_check(cfg),
    "heat-kernel": lambda cfg, out: cmd_heat_kernel(cfg),
    "mollify": cmd_mollify,
    "solve-backward": cmd_solve_backward,
    "solve-fpk": cmd_solve_fpk,
    "duality": cmd_duality,
    "norms": cmd_norms,
    "d1": cmd_d1,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"{cmd}.json"
    user, cfg = {}, None
    try:
        if args.config:
            try:
                user = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigError("config must be a JSON object")
        if getattr(args, "group", None):
            user["group"] = args.group
        cfg = resolve_config(cmd, user, args.seed, args.threads)
        results, code, files = HANDLERS[cmd](cfg, out)
    except DescriptorError as exc:
        print(f"descriptor violation: {exc}", file=sys.stderr)
        _write_json(report_path, {"command": cmd, "version": version_string(), "config": cfg, "status": "invalid",
                                  "failed_invariant": exc.invariant, "message": str(exc)})
        return 2
    except (ConfigError, ExprError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_json(report_path, {"command": cmd, "version": version_string(), "config": cfg, "status": "invalid",
                                  "message": str(exc)})
        return 2
    except CFLError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        _write_json(report_path, {"command": cmd, "version": version_string(), "config": cfg, "status": "refused",
                                  "dt": exc.dt, "suggested_dt": exc.admissible, "message": str(exc)})
        return 3
    status = "ok" if code == 0 else "failed"
    rep = _report(cmd, cfg, results, status)
    if files:
        rep["files"] = files
    _write_json(report_path, rep)
    summary = {"command": cmd, "status": status, "report": str(report_path)}
    print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
