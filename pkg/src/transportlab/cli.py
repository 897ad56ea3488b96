"""Batch experiment runner.

Usage::

    transportlab <kind> [--config cfg.yaml] [--out DIR] [--seed N]
                        [--resolution-scale F] [--quiet]
    transportlab validate --config cfg.yaml

Exit status: 0 when every declared assertion passes, 1 on an assertion
failure, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import carleman, geometry, inverse, transport
from .errors import ParameterError, TransportLabError
from .fields import Grid, ScalarField, VectorField, random_admissible_field, to_csv

log = logging.getLogger("transportlab")

KINDS = (
    "forward",
    "subdomain",
    "carleman-verify",
    "reconstruct-h",
    "reconstruct-p",
    "stability-sweep",
    "energy-check",
    "case-experiment",
    "demo-nonuniqueness",
)

DEFAULTS: dict = {
    "seed": 0,
    "geometry": {"boundary": "quadratic", "curvature": [0.5], "rho0": 1.0, "delta0": 1.0, "M": 2.0, "eps": 0.005},
    "coefficients": {
        "H": {"preset": "constant", "value": [1.0, 0.0]},
        "p": {"preset": "constant", "value": 0.5},
        "a": [{"preset": "affine", "b": 0.0, "c": [1.0, 0.0], "q": [0.0, 0.1]},
              {"preset": "affine", "b": 0.0, "c": [0.0, 1.0]}],
    },
    "discretization": {"h": 1 / 64, "dt": 1 / 128, "T": 0.25, "eps0": None, "beta": None},
    "box": {"lower": [-0.5, -0.5], "upper": [0.5, 0.5]},
    "region": {"lower": [-0.2, -0.2], "upper": [0.2, 0.2]},
    "experiment": {},
}


class ConfigError(ParameterError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str]) -> dict:
    data: dict = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError("<file>", str(exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError("<root>", "config must be a mapping")
    return _merge(DEFAULTS, data)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def vector_preset(spec: dict, dim: int, path: str = "coefficients.H") -> tuple[Callable, Callable]:
    """``constant`` (value), ``affine`` (b + A x) or ``sinusoidal`` (b + amp sin(k . x) e)."""
    kind = spec.get("preset")
    if kind == "constant":
        v = np.asarray(spec.get("value"), float)
        if v.shape != (dim,):
            raise ConfigError(f"{path}.value", f"expected {dim} components")
        return (lambda x: np.tile(v, (len(x), 1)), lambda x: np.zeros((len(x), dim, dim)))
    if kind == "affine":
        b = np.asarray(spec.get("b"), float)
        A = np.asarray(spec.get("A", np.zeros((dim, dim))), float)
        if b.shape != (dim,) or A.shape != (dim, dim):
            raise ConfigError(path, f"affine needs b of length {dim} and A of shape {dim}x{dim}")
        return (lambda x: b + x @ A.T, lambda x: np.broadcast_to(A, (len(x), dim, dim)).copy())
    if kind == "sinusoidal":
        b = np.asarray(spec.get("b"), float)
        e = np.asarray(spec.get("direction", np.eye(dim)[-1]), float)
        k = np.asarray(spec.get("wavevector", np.ones(dim)), float)
        amp = float(spec.get("amplitude", 0.1))
        if b.shape != (dim,) or e.shape != (dim,) or k.shape != (dim,):
            raise ConfigError(path, f"sinusoidal vectors need {dim} components")

        def f(x):
            return b + amp * np.sin(x @ k)[:, None] * e

        def jac(x):
            return amp * np.cos(x @ k)[:, None, None] * e[None, :, None] * k[None, None, :]

        return f, jac
    raise ConfigError(f"{path}.preset", f"unknown preset {kind!r}")


def scalar_preset(spec: dict, dim: int, path: str) -> Callable:
    """``constant`` (value), ``affine`` (b + c . x + q . x^2) or ``sinusoidal`` (b + amp sin(k . x))."""
    kind = spec.get("preset")
    if kind == "constant":
        c = float(spec.get("value"))
        return lambda x: np.full(len(x), c)
    if kind == "affine":
        b = float(spec.get("b", 0.0))
        c = np.asarray(spec.get("c", np.zeros(dim)), float)
        q = np.asarray(spec.get("q", np.zeros(dim)), float)
        if c.shape != (dim,) or q.shape != (dim,):
            raise ConfigError(path, f"affine coefficients need {dim} components")
        return lambda x: b + x @ c + (x**2) @ q
    if kind == "sinusoidal":
        b = float(spec.get("b", 0.0))
        k = np.asarray(spec.get("wavevector", np.ones(dim)), float)
        amp = float(spec.get("amplitude", 1.0))
        return lambda x: b + amp * np.sin(x @ k)
    raise ConfigError(f"{path}.preset", f"unknown preset {kind!r}")


def boundary_preset(geo: dict) -> geometry.BoundaryGraph:
    kind = geo.get("boundary", "flat")
    rho0 = float(geo.get("rho0", 1.0))
    if kind == "flat":
        return geometry.BoundaryGraph.flat(int(geo.get("dim", 2)), rho0)
    if kind == "linear":
        return geometry.BoundaryGraph.linear(geo["slope"], rho0)
    if kind == "quadratic":
        return geometry.BoundaryGraph.quadratic(geo["curvature"], rho0)
    if kind == "sinusoidal":
        return geometry.BoundaryGraph.sinusoidal(float(geo.get("amplitude", 0.05)), float(geo.get("frequency", 1.0)),
                                                 int(geo.get("dim", 2)), rho0)
    raise ConfigError("geometry.boundary", f"unknown boundary {kind!r}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _derived(cfg: dict) -> dict:
    geo, disc = cfg["geometry"], cfg["discretization"]
    T = float(disc["T"])
    d0 = float(geo["delta0"])
    return {
        "T": T,
        "eps0": float(disc["eps0"]) if disc.get("eps0") is not None else T / 32,
        "beta": float(disc["beta"]) if disc.get("beta") is not None else d0**2 / 4,
    }


def validate(cfg: dict) -> list[str]:
    """Every violated constraint, without running any experiment."""
    out: list[str] = []
    kind = cfg.get("kind")
    if kind is not None and kind not in KINDS:
        out.append(f"kind: unknown experiment kind {kind!r}")
    disc, geo = cfg.get("discretization", {}), cfg.get("geometry", {})
    try:
        h, dt, T = float(disc["h"]), float(disc["dt"]), float(disc["T"])
    except (KeyError, TypeError, ValueError):
        return out + ["discretization: h, dt and T must be numbers"]
    for name, v in (("h", h), ("dt", dt), ("T", T)):
        if not v > 0:
            out.append(f"discretization.{name}: must be positive")
    if dt > 0 and T > 0 and abs(T / dt - round(T / dt)) > 1e-9 * T / dt:
        out.append("discretization.T: must be an integer multiple of dt")
    try:
        delta0, M = float(geo["delta0"]), float(geo["M"])
    except (KeyError, TypeError, ValueError):
        return out + ["geometry: delta0 and M must be numbers"]
    if not (delta0 > 0 and M > 0):
        return out + ["geometry: delta0 and M must be positive"]
    d = _derived(cfg)
    if not 0 < d["eps0"] < T / 16:
        out.append("discretization.eps0: eps0 < T/16 violated")
    if not 0 < d["beta"] < delta0**2 / 2:
        out.append("discretization.beta: 0 < beta < delta0^2/2 violated")
    eps = geo.get("eps")
    if eps is not None:
        eps = float(eps)
        if not eps < delta0**2 / (2 * M**2):
            out.append("geometry.eps: smallness condition eps < delta0^2/(2M^2) violated")
        if not eps < 1:
            out.append("geometry.eps: smallness condition eps < 1 violated")
        if not eps < d["beta"] * T / (4 * M):
            out.append("geometry.eps: smallness condition eps < beta*T/(4M) violated")
        if kind == "subdomain":
            try:
                patch = boundary_preset(geo)
                _, r = geometry.lemma_radius(patch, delta0, M)
                if not eps < r:
                    out.append(f"geometry.eps: smallness condition eps < r violated (r = {r:.6g})")
            except (TransportLabError, KeyError, TypeError) as exc:
                out.append(f"geometry: {exc}")
    coeff = cfg.get("coefficients", {})
    box = cfg.get("box", {})
    dim = len(box.get("lower", [0, 0]))
    try:
        Hf, _ = vector_preset(coeff.get("H", {}), dim)
        lo, hi = np.asarray(box["lower"], float), np.asarray(box["upper"], float)
        probe = Grid(lo, hi, (9,) * dim).points()
        speed = float(np.max(np.linalg.norm(Hf(probe), axis=1)))
        if dt * speed > h * (1 + 1e-9):
            out.append(f"discretization.dt: CFL dt*max|H| = {dt * speed:.4g} exceeds h = {h:.4g}")
    except ConfigError as exc:
        out.append(str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        out.append(f"box: {exc}")
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    assertions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def check(self, name: str, ok) -> None:
        self.assertions[name] = bool(ok)

    def to_yaml(self) -> str:
        return yaml.safe_dump(_plain({"config": self.config, "outputs": self.outputs, "timings": self.timings,
                                      "assertions": self.assertions, "passed": self.passed}), sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class _Ctx:
    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.rng = np.random.default_rng(int(cfg["seed"]))
        disc = cfg["discretization"]
        self.h, self.dt, self.T = float(disc["h"]), float(disc["dt"]), float(disc["T"])
        self.derived = _derived(cfg)
        box = cfg["box"]
        self.grid = Grid.from_spacing(box["lower"], box["upper"], self.h)
        self.region = geometry.BoxRegion(cfg["region"]["lower"], cfg["region"]["upper"])
        self.exp = cfg.get("experiment", {}) or {}

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)

    def H(self) -> VectorField:
        f, j = vector_preset(self.cfg["coefficients"]["H"], self.grid.dim)
        return VectorField.from_function(self.grid, f, j, name="H")

    def p(self) -> ScalarField:
        return ScalarField.from_function(self.grid, scalar_preset(self.cfg["coefficients"]["p"], self.grid.dim,
                                                                  "coefficients.p"), name="p")

    def family(self) -> list:
        specs = self.cfg["coefficients"]["a"]
        if isinstance(specs, dict):
            specs = [specs]
        return [ScalarField.from_function(self.grid, scalar_preset(s, self.grid.dim, f"coefficients.a[{i}]"))
                for i, s in enumerate(specs)]


def run_forward(ctx: _Ctx, rep: RunReport) -> None:
    H, p = ctx.H(), ctx.p()
    a = ctx.family()[0]
    u = transport.solve_forward(H, p, a, ctx.T, ctx.dt)
    rep.outputs["determined_fraction"] = float(u.determined[-1][u.grid.node_mask()].mean())
    Hs, ps = ctx.cfg["coefficients"]["H"], ctx.cfg["coefficients"]["p"]
    if Hs.get("preset") == "constant" and ps.get("preset") == "constant":
        v, c = np.asarray(Hs["value"], float), float(ps["value"])
        pts = ctx.grid.points()
        exact = a.func(pts - ctx.T * v) * math.exp(-c * ctx.T)
        det = u.determined[-1].ravel()
        err = float(np.max(np.abs(u.values[-1].ravel()[det] - exact[det])))
        rep.outputs["max_error"] = err
        rep.check("closed-form error <= tolerance", err <= float(ctx.exp.get("tolerance", 1e-6)))
    ctx.write("u_final.csv", to_csv(u.slice(-1)))


def run_subdomain(ctx: _Ctx, rep: RunReport) -> None:
    geo = ctx.cfg["geometry"]
    patch = boundary_preset(geo)
    d0, M = float(geo["delta0"]), float(geo["M"])
    sub = geometry.construct_subdomain(patch, d0, M, float(geo["eps"]), ctx.T, ctx.derived["beta"])
    rep.outputs["subdomain"] = sub.to_dict()
    trials = int(ctx.exp.get("trials", 20))
    lo, hi = sub.bounds()
    g = Grid(lo - 0.01, hi + 0.01, (17,) * patch.dim)
    _, nu0 = geometry.eval_boundary(patch, np.zeros((1, patch.m)))
    worst1, worst2 = math.inf, -math.inf
    for _ in range(trials):
        H = random_admissible_field(ctx.rng, g, d0, M, nu0[0], x0=np.zeros(patch.dim))
        cls = geometry.classify_boundary(sub, H)
        worst1 = min(worst1, cls.margin_plus)
        worst2 = max(worst2, cls.margin_minus)
    rep.outputs.update(worst_gamma1_flux=worst1, worst_gamma2_flux=worst2)
    rep.check("H.nu > delta0/2 on gamma1", worst1 > d0 / 2)
    rep.check("H.nu <= -delta0/4 on gamma2", worst2 <= -d0 / 4)
    ctx.write("subdomain.csv", sub.to_csv())
    ctx.write("subdomain.json", sub.to_json())


def run_carleman(ctx: _Ctx, rep: RunReport) -> None:
    e = ctx.exp
    members, region = carleman.manufactured_family(h=float(e.get("h", 0.0025)), T=float(e.get("T", 1.0)),
                                                   size=int(e.get("size", 20)))
    s_vals = np.logspace(math.log10(float(e.get("s_min", 1.0))), math.log10(float(e.get("s_max", 100.0))),
                         int(e.get("s_count", 21)))
    fit, ledgers = carleman.verify_estimate(members, region, float(e.get("beta", 0.25)), s_vals)
    table = [led for member in ledgers for led in member]
    rep.outputs["fit"] = fit.as_dict()
    slack = min(led.slack(fit.C) for led in table if led.s >= fit.s0)
    rep.outputs["min_slack"] = slack
    rep.check("ledger inequality at every tabulated s >= s0", slack >= 0)
    ctx.write("ledger.csv", carleman.ledger_csv(table, fit.C))


def run_reconstruct(ctx: _Ctx, rep: RunReport, which: str) -> None:
    H, p = ctx.H(), ctx.p()
    fam = ctx.family()
    if which == "p":
        spec = ctx.exp.get("a", {"preset": "sinusoidal", "b": 2.0, "amplitude": 1.0})
        fam = [ScalarField.from_function(ctx.grid, scalar_preset(spec, ctx.grid.dim, "experiment.a"))]
    meas, _ = inverse.synthesize(H, p, fam, int(ctx.exp.get("levels", 4)) * ctx.dt, ctx.dt, ctx.region)
    if which == "H":
        res = inverse.reconstruct_H(meas, p, ctx.region, truth=H)
    else:
        res = inverse.reconstruct_p(meas, H, ctx.region, truth=p)
    rep.outputs.update(error_l2=res.error_l2, relative_error=res.relative_error, conditioning=res.conditioning,
                       max_residual=float(np.nanmax(res.residual)))
    rep.check("relative error <= tolerance", res.relative_error <= float(ctx.exp.get("tolerance", 1e-2)))
    ctx.write(f"{which}_estimate.csv", to_csv(res.estimate))


def run_sweep(ctx: _Ctx, rep: RunReport) -> None:
    e = ctx.exp
    kind = e.get("problem", "H")
    H, p = ctx.H(), ctx.p()
    dim = ctx.grid.dim
    if kind == "H":
        f, j = vector_preset(e.get("direction", {"preset": "sinusoidal", "b": [0.0] * dim, "amplitude": 0.2}), dim,
                             "experiment.direction")
        direction = VectorField.from_function(ctx.grid, f, j)
        fam = ctx.family()
    else:
        direction = ScalarField.from_function(ctx.grid, scalar_preset(
            e.get("direction", {"preset": "sinusoidal", "amplitude": 1.0}), dim, "experiment.direction"))
        spec = e.get("a", {"preset": "constant", "value": 1.0})
        fam = [ScalarField.from_function(ctx.grid, scalar_preset(spec, dim, "experiment.a"))]
    prob = inverse.SweepProblem(kind, H, p, fam, ctx.region, ctx.T, ctx.dt, direction,
                                noise=float(e.get("noise", 0.0)))
    taus = [2.0**-k for k in range(1, int(e.get("levels", 8)) + 1)]
    held = [3 * 2.0**-k for k in range(3, 3 + int(e.get("held_out", 5)))]
    sweep = inverse.stability_sweep(prob, taus, held, seed=int(ctx.cfg["seed"]))
    rep.outputs["summary"] = sweep.summary()
    rep.check("theta_hat in (0, 1]", 0 < sweep.theta_hat <= 1)
    rep.check("fit quality >= 0.9", sweep.fit_quality >= 0.9)
    rep.check("every pair within the fitted bound", sweep.all_within_bound)
    ctx.write("sweep.csv", sweep.to_csv())


def run_energy(ctx: _Ctx, rep: RunReport) -> None:
    n = int(ctx.exp.get("instances", 10))
    h = float(ctx.exp.get("h", ctx.h))
    ratios = []
    for _ in range(n):
        inst = inverse.random_instance(ctx.rng)
        g, H, p1, f, D, dt = inst.discretize(h)
        y1 = inverse.solve_rate_problem(H, p1, inst.R, inst.Rt, f, inst.T, dt)
        er = inverse.energy_check(y1, H, p1, inst.R, inst.Rt, f, region=D)
        ratios.append(float(np.max(er.E) / er.rhs_bound))
    rep.outputs["max_energy_to_bound"] = max(ratios)
    rep.check("energy bound holds on every instance", max(ratios) <= 1.0)
    ctx.write("energy.csv", "instance,ratio\n" + "".join(f"{i},{r!r}\n" for i, r in enumerate(ratios)))


def run_case(ctx: _Ctx, rep: RunReport) -> None:
    case = str(ctx.exp.get("case", "baseline"))
    n = int(ctx.exp.get("instances", 3))
    h = float(ctx.exp.get("h", ctx.h))
    rows = []
    for i in range(n):
        inst = inverse.random_instance(ctx.rng)
        rows.append(inverse.case_experiment(case, inst, h))
    rep.outputs["results"] = rows
    if case in ("PropIV", "PropVI"):
        consts = [r["lipschitz_constant"] for r in rows]
        rep.outputs["max_lipschitz_constant"] = max(consts)
        rep.check("finite Lipschitz constants", all(np.isfinite(consts)))
    keys = sorted({k for r in rows for k in r})
    lines = [",".join(keys)] + [",".join(repr(r.get(k, "")) for k in keys) for r in rows]
    ctx.write("case.csv", "\n".join(lines) + "\n")


def run_demo(ctx: _Ctx, rep: RunReport) -> None:
    res = inverse.nonuniqueness_demo(h=float(ctx.exp.get("h", 1 / 128)))
    rep.outputs.update(res)
    rep.check("zero initial data", res["initial_norm"] <= 1e-12)
    rep.check("zero data at x = 0", res["x0_norm"] <= 1e-12)
    rep.check("residual O(h)", res["residual_inf"] <= 2 * res["h"])
    rep.check("nonzero final state", res["final_norm"] >= 0.1)
    ctx.write("nonuniqueness.csv", "".join(f"{k},{v!r}\n" for k, v in sorted(res.items())))


RUNNERS = {
    "forward": run_forward,
    "subdomain": run_subdomain,
    "carleman-verify": run_carleman,
    "reconstruct-h": lambda c, r: run_reconstruct(c, r, "H"),
    "reconstruct-p": lambda c, r: run_reconstruct(c, r, "p"),
    "stability-sweep": run_sweep,
    "energy-check": run_energy,
    "case-experiment": run_case,
    "demo-nonuniqueness": run_demo,
}


def run(cfg: dict, out: Path) -> RunReport:
    """Execute the configured experiment and write artifacts into ``out``."""
    problems = validate(cfg)
    if problems:
        raise ConfigError("config", "; ".join(problems))
    ctx = _Ctx(cfg, out)
    rep = RunReport(_plain(cfg))
    t0 = time.perf_counter()
    RUNNERS[cfg["kind"]](ctx, rep)
    rep.timings["total_seconds"] = time.perf_counter() - t0
    ctx.write("report.yaml", rep.to_yaml())
    return rep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transportlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS + ("validate",):
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="YAML experiment configuration")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        sp.add_argument("--resolution-scale", type=float, default=1.0, help="multiplies h and dt")
        sp.add_argument("--quiet", action="store_true")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.kind != "validate":
            cfg["kind"] = args.kind
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.resolution_scale <= 0:
            raise ConfigError("--resolution-scale", "must be positive")
        cfg["discretization"]["h"] = float(cfg["discretization"]["h"]) * args.resolution_scale
        cfg["discretization"]["dt"] = float(cfg["discretization"]["dt"]) * args.resolution_scale
        if args.kind == "validate":
            problems = validate(cfg)
            for p in problems:
                print(p)
            return 2 if problems else 0
        rep = run(cfg, Path(args.out))
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except TransportLabError as exc:
        print(f"assertion failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, ok in rep.assertions.items():
        if not ok:
            print(f"FAILED: {name}", file=sys.stderr)
        else:
            log.info("ok: %s", name)
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
