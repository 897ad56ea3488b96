"""Weight functions, cut-offs and numerical checks of the weighted estimate.

The weight is ``phi(x, t) = psi(x) - beta t`` with ``psi(x) = sum_j x_j h_j(x)``.
For a sampled solution ``u`` the six integrals of the estimate are tabulated
on a grid of the large parameter ``s`` (a :class:`CarlemanLedger` per
value) and :func:`fit_constants` searches the smallest constant ``C`` that
makes the inequality hold on the whole table.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ParameterError, VerificationFailure
from .fields import Grid, ScalarField, VectorField, grad, quadrature_weights, trapezoid_time_weights
from .geometry import BoxRegion, classify_boundary
from .transport import SpaceTimeField, boundary_trace, pde_residual

Array = np.ndarray


def psi_values(H: VectorField, points: Array) -> Array:
    return np.sum(points * H.at(points), axis=1)


def psi_gradient(H: VectorField, points: Array) -> Array:
    """``d_k psi = h_k + sum_j x_j d_k h_j`` from the analytic Jacobian."""
    J = H.jac(points)  # [.., j, k] = d_k h_j
    return H.at(points) + np.einsum("nj,njk->nk", points, J)


def _closure_points(region, grid: Optional[Grid], count: int = 101):
    """Dense sample of the closed region: interior lattice nodes plus boundary nodes."""
    lo, hi = region.bounds()
    if grid is None:
        grid = Grid(lo, hi + (hi == lo) * 1e-12, tuple([count] * len(lo)))
    pts = grid.points()
    inner = pts[region.contains(pts)]
    bnd = region.boundary_samples(count).points if isinstance(region, BoxRegion) else region.boundary_samples().points
    return np.concatenate([inner, bnd]), grid


@dataclass
class CarlemanWeight:
    """``psi``, ``B = H.grad psi - beta`` and ``mu = min B + beta`` over the closed region.

    ``psi`` and ``B`` are sampled at ``points`` (interior lattice nodes and
    boundary samples of the region).
    """

    H: VectorField
    beta: float
    region: object
    points: Array
    psi: Array
    B: Array
    mu: float

    def phi(self, points: Array, t) -> Array:
        return psi_values(self.H, points) - self.beta * np.asarray(t)

    @property
    def min_B(self) -> float:
        return float(self.B.min())


def build_weight(H: VectorField, region, beta: float, grid: Optional[Grid] = None, count: int = 101) -> CarlemanWeight:
    """Sample the weight on the closed region; warns when ``beta >= mu``."""
    if beta <= 0:
        raise ParameterError("beta must be positive")
    pts, _ = _closure_points(region, grid, count)
    psi = psi_values(H, pts)
    if H.jac is not None:
        gpsi = psi_gradient(H, pts)
    else:
        g = H.grid
        psi_field = ScalarField(g, np.sum(g.points() * H.values.reshape(-1, g.dim), axis=1).reshape(g.shape))
        from .fields import interpolate

        gpsi = interpolate(g, grad(psi_field).values, pts)
    flux = np.sum(H.at(pts) * gpsi, axis=1)
    mu = float(flux.min())
    if beta >= mu:
        warnings.warn(f"beta={beta} >= mu={mu:.4g}: the weight loses positivity", RuntimeWarning, stacklevel=2)
    return CarlemanWeight(H, beta, region, pts, psi, flux - beta, mu)


@dataclass(frozen=True)
class Lemma1Result:
    mu: float
    bound: float
    status: str  # "verified", "violated" or "unverifiable"
    per_field: tuple = ()


def check_lemma1(ensemble: Sequence[VectorField], region, delta0: float, M: float, grid=None) -> Lemma1Result:
    """Infimum of ``mu_H`` over the ensemble against ``delta0^2 / 2``."""
    bound = delta0**2 / 2
    diam = region.diameter()
    mus = tuple(build_weight(H, region, min(bound, 1.0) / 2, grid).mu for H in ensemble)
    mu = min(mus)
    if not diam < delta0**2 / (2 * M**2):
        return Lemma1Result(mu, bound, "unverifiable", mus)
    return Lemma1Result(mu, bound, "verified" if mu >= bound else "violated", mus)


@dataclass(frozen=True)
class SeparationReport:
    eps0: float
    sigma1: float
    sigma2: float
    eps_condition: dict
    oscillation: float
    beta: float
    T: float

    @property
    def gap(self) -> float:
        return self.sigma1 - self.sigma2

    @property
    def flags_pass(self) -> bool:
        return all(self.eps_condition.values())

    @property
    def holds(self) -> bool:
        return self.gap > self.beta * self.T / 4


def separation(weight: CarlemanWeight, T: float, eps0: float, eps: Optional[float] = None,
               delta0: Optional[float] = None, M: Optional[float] = None, r: Optional[float] = None) -> SeparationReport:
    """Weight gap between ``[0, 2 eps0]`` and ``[T - 2 eps0, T]``.

    The smallness flags are checked for every bound whose inputs are given;
    the gap is asserted to exceed ``beta T / 4`` when all flags pass.
    """
    if not 0 < eps0 < T / 16:
        raise ParameterError("eps0 must satisfy 0 < eps0 < T/16")
    b = weight.beta
    smax, smin = float(weight.psi.max()), float(weight.psi.min())
    sigma1 = smin - b * 2 * eps0
    sigma2 = smax - b * (T - 2 * eps0)
    flags = {}
    if eps is not None:
        flags["diam < eps"] = weight.region.diameter() < eps
        flags["eps < 1"] = eps < 1
        flags["eps < beta*T/(4M)"] = M is not None and eps < b * T / (4 * M)
        flags["eps < delta0^2/(2M^2)"] = delta0 is not None and M is not None and eps < delta0**2 / (2 * M**2)
        if r is not None:
            flags["eps < r"] = eps < r
    else:
        flags["eps given"] = False
    rep = SeparationReport(eps0, sigma1, sigma2, flags, smax - smin, b, T)
    if rep.flags_pass and not rep.holds:
        raise VerificationFailure(f"gap {rep.gap:.6g} <= beta*T/4 = {b * T / 4:.6g} although all flags pass")
    return rep


@dataclass(frozen=True)
class CutoffFn:
    """``chi = 1 - S((t - (T - 2 eps0)) / eps0)`` with the quintic smoothstep ``S``."""

    eps0: float
    T: float

    def _z(self, t):
        return np.clip((np.asarray(t, dtype=float) - (self.T - 2 * self.eps0)) / self.eps0, 0.0, 1.0)

    def __call__(self, t):
        z = self._z(t)
        return 1.0 - z**3 * (10 - 15 * z + 6 * z**2)

    def derivative(self, t):
        z = self._z(t)
        return -30.0 * z**2 * (1 - z) ** 2 / self.eps0


def make_cutoff(eps0: float, T: float) -> CutoffFn:
    if not 0 < eps0 < T / 2:
        raise ParameterError("cut-off needs 0 < eps0 < T/2")
    return CutoffFn(eps0, T)


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


@dataclass
class CarlemanLedger:
    """Integrals of the estimate at one ``s``.

    ``lhs_initial`` and ``lhs_bulk`` include their powers of ``s``; the
    three constant-dependent terms are stored as raw integrals
    (``minus_flux``, ``plus_trace``, ``final``) together with
    ``rhs_residual_raw``.  :meth:`terms` applies a constant ``C``.
    """

    s: float
    lhs_initial: float
    lhs_bulk: float
    minus_flux: float
    residual_raw: float
    plus_trace: float
    final: float
    label: str = ""

    def log_terms(self, C: float):
        def lg(x):
            return math.log(x) if x > 0 else -math.inf

        s = self.s
        lhs = [lg(self.lhs_initial), lg(self.lhs_bulk), lg(C) - C * s + lg(self.minus_flux)]
        rhs = [lg(C) + lg(self.residual_raw), lg(C) + C * s + lg(self.plus_trace), lg(C) + lg(s) + lg(self.final)]
        return lhs, rhs

    def terms(self, C: float) -> dict:
        lhs, rhs = self.log_terms(C)
        names = ["lhsInitial", "lhsBulk", "lhsMinus", "rhsResidual", "rhsPlus", "rhsFinal"]
        return {k: (math.exp(v) if v < 709 else math.inf) for k, v in zip(names, lhs + rhs)}

    def log_margin(self, C: float) -> float:
        """``log(rhs) - log(lhs)``; nonnegative iff the inequality holds."""
        lhs, rhs = self.log_terms(C)
        L, R = logsumexp(lhs), logsumexp(rhs)
        if L == -math.inf:
            return math.inf
        return float(R - L)

    def slack(self, C: float) -> float:
        """Relative slack ``1 - lhs/rhs`` (computed in log space)."""
        m = self.log_margin(C)
        return 1.0 - math.exp(-m) if m != math.inf else 1.0


def carleman_ledger(u: SpaceTimeField, H: VectorField, p: Optional[ScalarField], region, beta: float,
                    s_values, classification=None, label: str = "") -> list[CarlemanLedger]:
    """Tabulate the six integrals for each ``s`` in ``s_values``.

    ``Pu`` uses centred space-time differences on interior nodes and time
    levels; the excluded ring is compensated by renormalising the quadrature
    weight.  Boundary integrals use ``classify_boundary`` on the lattice.
    """
    g = u.grid
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    w = quadrature_weights(g, region)
    used = w > 0
    vals = u.values
    if np.any(~u.determined[:, used]):
        raise DataError("u is not determined on the whole space-time region")
    pts = g.points()[used.ravel()]
    psi = psi_values(H, pts)
    times = u.times
    tw = trapezoid_time_weights(times)
    U = vals[:, used]  # (K+1, N)
    W = w[used]
    # residual on interior nodes / interior levels
    res = pde_residual(u, H, p)[:, used]
    ok = np.isfinite(res)
    res_w = np.where(ok, res**2, 0.0)
    cell_w = tw[:, None] * W[None, :]
    total_w = cell_w.sum()
    used_w = (cell_w * ok).sum()
    renorm = total_w / used_w if used_w > 0 else 0.0
    if classification is None:
        classification = classify_boundary(region, H, grid=g) if isinstance(region, BoxRegion) else classify_boundary(region, H)
    tr = boundary_trace(u, classification.samples)
    if tr.partial:
        raise DataError("boundary trace is partial")
    sw = classification.samples.weights
    bt = (tw[:, None] * sw[None, :] * tr.u**2)
    plus = classification.plus
    minus_flux = float(np.sum(bt[:, ~plus] * np.abs(classification.flux[~plus])[None, :]))
    plus_trace = float(np.sum(bt[:, plus]))
    out = []
    for s in s_values:
        e = np.exp(2 * s * (psi[None, :] - beta * times[:, None]))
        lhs_initial = s * float(np.sum(W * U[0] ** 2 * e[0]))
        lhs_bulk = s**2 * float(np.sum(cell_w * U**2 * e))
        residual = renorm * float(np.sum(cell_w * res_w * e))
        final = float(np.sum(W * U[-1] ** 2 * e[-1]))
        out.append(CarlemanLedger(float(s), lhs_initial, lhs_bulk, minus_flux, residual, plus_trace, final, label))
    return out


@dataclass
class FitResult:
    C: float
    s0: float
    binding: tuple  # (label, s)
    frontier: list = field(default_factory=list)  # (s0, minimal C for all s >= s0)

    def as_dict(self) -> dict:
        return {"C": self.C, "s0": self.s0, "binding": list(self.binding),
                "frontier": [list(x) for x in self.frontier]}


class _Table:
    """Columnar copy of a ledger table for vectorized margin evaluation."""

    def __init__(self, table: Sequence[CarlemanLedger]):
        with np.errstate(divide="ignore"):
            self.s = np.array([t.s for t in table])
            self.li = np.log([t.lhs_initial for t in table])
            self.lb = np.log([t.lhs_bulk for t in table])
            self.mf = np.log([t.minus_flux for t in table])
            self.rr = np.log([t.residual_raw for t in table])
            self.pt = np.log([t.plus_trace for t in table])
            self.fi = np.log([t.final for t in table]) + np.log(self.s)

    def margins(self, C: float) -> Array:
        lc = math.log(C)
        lhs = np.logaddexp(np.logaddexp(self.li, self.lb), lc - C * self.s + self.mf)
        rhs = lc + np.logaddexp(np.logaddexp(self.rr, C * self.s + self.pt), self.fi)
        with np.errstate(invalid="ignore"):
            m = rhs - lhs
        return np.where(lhs == -np.inf, np.inf, m)

    def subset(self, keep: Array) -> "_Table":
        out = object.__new__(_Table)
        for k in ("s", "li", "lb", "mf", "rr", "pt", "fi"):
            setattr(out, k, getattr(self, k)[keep])
        return out


def _feasible(table, C: float) -> bool:
    if not isinstance(table, _Table):
        table = _Table(table)
    return bool(np.all(table.margins(C) >= 0))


def _min_C(table, c_grid, rtol=1e-6):
    prev = None
    for C in c_grid:
        if _feasible(table, C):
            if prev is None:
                return float(C)
            lo, hi = prev, float(C)
            while hi / lo - 1 > rtol:
                mid = math.sqrt(lo * hi)
                if _feasible(table, mid):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = float(C)
    return None


def fit_constants(ledgers: Sequence[Sequence[CarlemanLedger]], c_grid=None) -> FitResult:
    """Smallest ``C`` (log grid, refined by bisection) with the inequality on every entry.

    ``ledgers`` holds one list per family member over a common ``s`` grid.
    ``s0`` is the smallest tabulated ``s``; ``frontier`` lists the minimal
    ``C`` when only ``s >= s0'`` is required, for every grid value ``s0'``.
    """
    if c_grid is None:
        c_grid = np.logspace(-4, 3, 701)
    table = [led for member in ledgers for led in member]
    if not table:
        raise VerificationFailure("empty ledger family")
    s_grid = sorted({led.s for led in table})
    cols = _Table(table)
    C = _min_C(cols, c_grid)
    if C is None:
        raise VerificationFailure("no constant on the search grid satisfies the inequality")
    margins = [(led.log_margin(C), led.label, led.s) for led in table]
    worst = min(margins, key=lambda m: m[0])
    frontier = []
    for s0 in s_grid:
        frontier.append((s0, _min_C(cols.subset(cols.s >= s0), c_grid)))
    return FitResult(C, s_grid[0], (worst[1], worst[2]), frontier)


def ledger_csv(table: Sequence[CarlemanLedger], C: float) -> str:
    """Rows ``label, s, six terms, lhs-sum, rhs-sum, slack`` at constant ``C``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = ["lhsInitial", "lhsBulk", "lhsMinus", "rhsResidual", "rhsPlus", "rhsFinal"]
    w.writerow(["label", "s"] + names + ["lhs_sum", "rhs_sum", "slack"])
    for led in table:
        t = led.terms(C)
        lhs = t["lhsInitial"] + t["lhsBulk"] + t["lhsMinus"]
        rhs = t["rhsResidual"] + t["rhsPlus"] + t["rhsFinal"]
        w.writerow([led.label, repr(led.s)] + [repr(t[k]) for k in names] + [repr(lhs), repr(rhs), repr(led.slack(C))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Manufactured family
# ---------------------------------------------------------------------------


@dataclass
class FamilyMember:
    label: str
    u: SpaceTimeField
    H: VectorField
    p: Optional[ScalarField]


def _const_field(grid, vec):
    return VectorField.constant(grid, vec)


def manufactured_family(h: float = 0.0025, T: float = 1.0, dt: Optional[float] = None,
                        size: int = 20) -> tuple[list, BoxRegion]:
    """Regression family on ``D = (-0.1, 0) x (-0.05, 0.05)``.

    Members: the zero field, ``u = 1``, exact transport solutions produced by
    the characteristic solver (with exact inflow so every sample is
    determined), and closed-form fields with nonzero residual that do not
    vanish at ``t = 0``, ``t = T`` or on either sheet.
    """
    from .transport import solve_forward

    lo, hi = np.array([-0.1, -0.05]), np.array([0.0, 0.05])
    region = BoxRegion(lo, hi)
    grid = Grid.from_spacing(lo, hi, h)
    dt = T / math.ceil(1.25 * T / h) if dt is None else dt  # members move at speed below 1.25
    K = int(round(T / dt))
    times = np.linspace(0.0, T, K + 1)
    members: list[FamilyMember] = []
    e1 = _const_field(grid, [1.0, 0.0])
    members.append(FamilyMember("zero", SpaceTimeField.from_function(grid, times, lambda x, t: np.zeros(len(x))), e1, None))
    members.append(FamilyMember("one", SpaceTimeField.from_function(grid, times, lambda x, t: np.ones(len(x))), e1, None))

    profiles = [
        lambda y: 1.0 + 0.5 * np.sin(3 * y[:, 0] + 2 * y[:, 1]),
        lambda y: np.exp(-4 * np.sum(y**2, axis=1)),
        lambda y: 0.5 + np.cos(5 * y[:, 1]) * (1 + y[:, 0]),
    ]
    for i, (vec, c) in enumerate([((1.0, 0.0), 0.0), ((1.0, 0.3), 0.5), ((0.8, -0.4), 0.0),
                                  ((1.0, 0.3), 0.0), ((0.8, -0.4), 0.5), ((1.0, 0.0), 0.5)]):
        v = np.array(vec)
        prof = profiles[i % 3]

        def exact(x, t, v=v, c=c, prof=prof):
            t = np.broadcast_to(np.asarray(t, float), (len(x),))
            return prof(x - t[:, None] * v) * np.exp(-c * t)

        H = _const_field(grid, v)
        p = ScalarField.constant(grid, c)
        a = ScalarField.from_function(grid, lambda x, e=exact: e(x, 0.0))
        u = solve_forward(H, p, a, T, dt, inflow=exact)
        members.append(FamilyMember(f"transport{i}", u, H, p))

    def hvar(x):
        return np.stack([1.0 + 0.2 * x[:, 1], 0.1 * x[:, 0]], axis=1)

    def hvar_jac(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 1] = 0.2
        J[:, 1, 0] = 0.1
        return J

    Hv = VectorField.from_function(grid, hvar, hvar_jac)
    closed = [
        lambda x, t: np.exp(0.5 * t) * (1 + x[:, 0]),
        lambda x, t: np.sin(2 * np.pi * t + 3 * x[:, 0]) + 1.5,
        lambda x, t: (1 + t**2) * np.cos(4 * x[:, 1]),
        lambda x, t: np.exp(-t) + x[:, 0] * x[:, 1] * 10,
        lambda x, t: 1 + 0.5 * np.cos(3 * t) * np.exp(2 * x[:, 0]),
        lambda x, t: (2 - t) * (1 + 5 * x[:, 1]) ,
    ]
    i = 0
    while len(members) < size:
        fn = closed[i % len(closed)]
        H = Hv if (i // len(closed)) % 2 == 0 else _const_field(grid, [1.0, 0.2])
        p = ScalarField.constant(grid, 0.3 * (i % 3))
        u = SpaceTimeField.from_function(grid, times, fn)
        members.append(FamilyMember(f"closed{i}", u, H, p))
        i += 1
    return members[:size], region


def verify_estimate(members: Sequence[FamilyMember], region, beta: float, s_values) -> tuple[FitResult, list]:
    """Ledger every member over ``s_values`` and fit the constants."""
    ledgers = [carleman_ledger(m.u, m.H, m.p, region, beta, s_values, label=m.label) for m in members]
    return fit_constants(ledgers), ledgers
