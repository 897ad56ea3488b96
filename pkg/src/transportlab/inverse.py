"""Coefficient reconstruction, linearized problems and stability experiments.

Reconstruction uses the equation at ``t = 0``: with ``u(., 0) = a`` known,
``du/dt(x, 0) = -(H . grad a)(x) - p(x) a(x)``, so interior initial-rate
data determine ``H`` from ``n`` initial states with independent gradients
and ``p`` from one nonvanishing initial state.  Stability experiments use
boundary traces only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (
    AdmissibilityError,
    DataError,
    DegenerateInitialDatumError,
    IllPosedFamilyError,
    InsufficientRangeError,
    InvalidInputError,
    InvalidProfileError,
    ParameterError,
    UnsupportedCaseError,
)
from .fields import (
    Grid,
    ScalarField,
    VectorField,
    check_admissible,
    grad,
    gradient_matrix,
    l2_norm,
    quadrature_weights,
    trapezoid_time_weights,
)
from .geometry import BoxRegion, classify_boundary
from .transport import (
    BoundaryTrace,
    SpaceTimeField,
    _integrate,
    boundary_trace,
    pde_residual,
    solve_forward,
    upwind_operator,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


@dataclass
class MeasurementSet:
    """Initial states, boundary traces and (optionally) interior initial rates.

    ``family`` holds ``a_1 .. a_n`` for the H-problem or a single ``a`` for
    the p-problem; ``traces[k]`` and ``initial_rates[k]`` belong to
    ``family[k]``.
    """

    family: list
    traces: list = field(default_factory=list)
    initial_rates: Optional[list] = None
    noise: float = 0.0

    def __post_init__(self):
        if self.traces and len(self.traces) != len(self.family):
            raise DataError("one trace per initial state is required")
        if self.initial_rates is not None and len(self.initial_rates) != len(self.family):
            raise DataError("one initial rate per initial state is required")


@dataclass
class ReconstructionResult:
    estimate: object
    residual: Array
    error_l2: Optional[float]
    conditioning: float
    relative_error: Optional[float] = None


def _region_mask(grid: Grid, region) -> Array:
    m = grid.node_mask()
    if region is not None:
        m = m & region.contains(grid.points()).reshape(grid.shape)
    return m


def _rates(meas: MeasurementSet):
    if meas.initial_rates is None or any(r is None for r in meas.initial_rates):
        raise DataError("interior initial-rate data are required for reconstruction")
    return meas.initial_rates


def reconstruct_H(meas: MeasurementSet, p: Optional[ScalarField], region=None, det_threshold: float = 1e-3,
                  truth: Optional[VectorField] = None) -> ReconstructionResult:
    """Solve ``(grad a_1, ..., grad a_n)^T H = -(u_t(., 0) + p a_k)_k`` at every node."""
    rates = _rates(meas)
    g = meas.family[0].grid
    n = g.dim
    if len(meas.family) != n:
        raise IllPosedFamilyError(f"need {n} initial states, got {len(meas.family)}", None)
    mask = _region_mask(g, region)
    for r in rates:
        mask = mask & np.isfinite(r.values)
    if not mask.any():
        raise DataError("no node carries initial-rate data")
    A = gradient_matrix(meas.family)[mask]  # rows grad a_k
    pv = np.zeros(g.shape) if p is None else p.values
    rhs = np.stack([-(r.values + pv * a.values)[mask] for r, a in zip(rates, meas.family)], axis=-1)
    dets = np.abs(np.linalg.det(A))
    bad = dets < det_threshold
    if bad.any():
        i = int(np.argmax(bad))
        node = g.points()[mask.ravel()][i]
        raise IllPosedFamilyError(f"|det| = {dets[i]:.3g} below {det_threshold} at node {node}", node)
    sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    resid = np.einsum("nkj,nj->nk", A, sol) - rhs
    vals = np.full(g.shape + (n,), np.nan)
    vals[mask] = sol
    est = VectorField(Grid(g.lower, g.upper, g.shape, mask), vals, name="H_est")
    cond = float(np.linalg.svd(A, compute_uv=False)[:, -1].min())
    res = np.full(g.shape, np.nan)
    res[mask] = np.linalg.norm(resid, axis=-1)
    err = rel = None
    if truth is not None:
        tv = truth.values if truth.values.shape == vals.shape else truth.at(g.points()).reshape(vals.shape)
        diff = VectorField(est.grid, np.where(mask[..., None], vals - tv, np.nan))
        err = l2_norm(diff, region)
        rel = err / l2_norm(VectorField(est.grid, np.where(mask[..., None], tv, np.nan)), region)
    return ReconstructionResult(est, res, err, cond, rel)


def reconstruct_p(meas: MeasurementSet, H: VectorField, region=None, a_threshold: float = 1e-3,
                  truth: Optional[ScalarField] = None) -> ReconstructionResult:
    """``p = -(u_t(., 0) + H . grad a) / a`` at every node."""
    rates = _rates(meas)
    if len(meas.family) != 1:
        raise DataError("the p-problem uses a single initial state")
    a = meas.family[0]
    g = a.grid
    mask = _region_mask(g, region) & np.isfinite(rates[0].values)
    amin = float(np.abs(a.values[mask]).min())
    if amin < a_threshold:
        raise DegenerateInitialDatumError(f"min |a| = {amin:.3g} below {a_threshold}")
    Ha = np.sum(H.values * grad(a).values, axis=-1)
    pv = -(rates[0].values + Ha) / a.values
    vals = np.where(mask, pv, np.nan)
    est = ScalarField(Grid(g.lower, g.upper, g.shape, mask), vals, name="p_est")
    err = rel = None
    if truth is not None:
        tv = truth.values
        err = l2_norm(ScalarField(est.grid, np.where(mask, vals - tv, np.nan)), region)
        rel = err / l2_norm(ScalarField(est.grid, np.where(mask, tv, np.nan)), region)
    return ReconstructionResult(est, np.zeros(g.shape), err, amin, rel)


def synthesize(H: VectorField, p: Optional[ScalarField], family: Sequence[ScalarField], T: float, dt: float,
               region=None, samples=None, substeps: int = 4) -> tuple[MeasurementSet, list]:
    """Forward solutions for each initial state, their initial rates and Gamma_+ traces.

    ``region`` is the subdomain where data are taken; the solve runs on the
    whole grid box, which must contain ``region`` with enough margin for
    the solution to be determined there.
    """
    sols = [solve_forward(H, p, a, T, dt, substeps=substeps) for a in family]
    rates = [u.initial_rate(region) for u in sols]
    traces = []
    if region is not None:
        cls = samples if samples is not None else _classify(region, H, family[0].grid)
        traces = [boundary_trace(u, cls.gamma_plus) for u in sols]
    return MeasurementSet(list(family), traces, rates), sols


def _classify(region, H, grid):
    if isinstance(region, BoxRegion):
        return classify_boundary(region, H, grid=grid)
    return classify_boundary(region, H)


# ---------------------------------------------------------------------------
# Linearized problem
# ---------------------------------------------------------------------------


def _as_source(R, f: ScalarField) -> Callable:
    if isinstance(R, SpaceTimeField):
        from .transport import _source_values

        return lambda pts, t: _source_values(R, pts, t) * f.at(pts)
    return lambda pts, t: np.asarray(R(pts, t), float) * f.at(pts)


def solve_linearized(H: VectorField, p1: Optional[ScalarField], R, f: ScalarField, T: float, dt: float,
                     region=None, inflow=None, substeps: int = 4) -> SpaceTimeField:
    """``y_t + H.grad y + p1 y = R f`` with ``y(., 0) = 0``.

    ``R`` is a callable ``R(points, t)`` or a space-time field.  The zero
    inflow datum is treated as prescribed, so every sample is determined.
    """
    zero = ScalarField.constant(f.grid, 0.0)
    return _integrate(H, p1, zero, T, dt, inflow, region, _as_source(R, f), substeps, inflow_given=True)


def solve_rate_problem(H: VectorField, p1: Optional[ScalarField], R, Rt, f: ScalarField, T: float, dt: float,
                       region=None, substeps: int = 4) -> SpaceTimeField:
    """``y1 = y_t`` solves the same equation with source ``R_t f`` and ``y1(., 0) = R(., 0) f``."""
    pts = f.grid.points()
    r0 = np.asarray(R(pts, np.zeros(len(pts))), float) if callable(R) else R.values[0].ravel()
    init = ScalarField(f.grid, (r0 * f.at(pts)).reshape(f.grid.shape))
    return _integrate(H, p1, init, T, dt, None, region, _as_source(Rt, f), substeps, inflow_given=True)


# ---------------------------------------------------------------------------
# Stability sweep
# ---------------------------------------------------------------------------


@dataclass
class StabilitySweep:
    pairs: list  # (id, tau, d, error)
    theta_hat: float
    raw_slope: float
    fit_quality: float
    bound_c: float
    held_out: list = field(default_factory=list)  # (id, tau, d, error, bound, ok)
    m0_observed: float = 0.0

    def bound(self, d: float) -> float:
        return self.bound_c * (d**self.theta_hat + d)

    @property
    def all_within_bound(self) -> bool:
        pairs_ok = all(e <= self.bound(d) * (1 + 1e-12) for _, _, d, e in self.pairs)
        return pairs_ok and all(h[-1] for h in self.held_out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "tau", "d", "error", "bound", "held_out"])
        for i, tau, d, e in self.pairs:
            w.writerow([i, repr(tau), repr(d), repr(e), repr(self.bound(d)), 0])
        for i, tau, d, e, b, _ in self.held_out:
            w.writerow([i, repr(tau), repr(d), repr(e), repr(b), 1])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"theta_hat": self.theta_hat, "raw_slope": self.raw_slope, "fit_quality": self.fit_quality,
                "bound_c": self.bound_c, "m0_observed": self.m0_observed,
                "all_within_bound": self.all_within_bound}


@dataclass
class SweepProblem:
    """Truth and perturbation direction for a sweep.

    ``kind`` is ``"H"`` (perturb the vector field, ``family`` has ``n``
    members) or ``"p"`` (perturb the damping, one initial state).
    """

    kind: str
    H: VectorField
    p: Optional[ScalarField]
    family: list
    region: object
    T: float
    dt: float
    direction: object  # VectorField for "H", ScalarField for "p"
    delta0: Optional[float] = None
    M: Optional[float] = None
    x0: Optional[Array] = None
    nu0: Optional[Array] = None
    M0: Optional[float] = None
    noise: float = 0.0

    def perturbed(self, tau: float):
        if self.kind == "H":
            return self.H + self.direction * tau, self.p
        if self.kind == "p":
            base = self.p if self.p is not None else ScalarField.constant(self.H.grid, 0.0)
            return self.H, base + self.direction * tau
        raise ParameterError(f"unknown sweep kind {self.kind!r}")


def _rate_m0(u: SpaceTimeField, region) -> float:
    """``|| u_t ||_{L2(0,T; Linf(D))}``."""
    ut = u.time_derivative().values
    mask = _region_mask(u.grid, region)
    sup = np.nanmax(np.abs(ut[:, mask]), axis=1)
    return float(np.sqrt(np.sum(trapezoid_time_weights(u.times) * sup**2)))


def _traces(prob: SweepProblem, H, p, samples, rng):
    out, m0 = [], 0.0
    for a in prob.family:
        u = solve_forward(H, p, a, prob.T, prob.dt)
        m0 = max(m0, _rate_m0(u, prob.region))
        tr = boundary_trace(u, samples)
        if prob.noise > 0:
            tr.ut = tr.ut + rng.uniform(-prob.noise, prob.noise, size=tr.ut.shape)
        out.append(tr)
    return out, m0


def _trace_rate_distance(t1: Sequence[BoundaryTrace], t2: Sequence[BoundaryTrace]) -> float:
    return float(sum(l2_norm((a - b).rate()) for a, b in zip(t1, t2)))


def stability_sweep(prob: SweepProblem, taus: Sequence[float], held_out: Sequence[float] = (),
                    seed: int = 0) -> StabilitySweep:
    """Measure ``(d, error)`` for ``H2 = H1 + tau dH`` (or ``p2 = p1 + tau dp``).

    ``d`` sums the ``L2(Gamma_+ x (0, T))`` norms of the difference of the
    time derivatives of the boundary traces over the initial states.  The
    exponent is fitted on the pairs with ``d`` below the median.
    """
    rng = np.random.default_rng(seed)
    samples = _classify(prob.region, prob.H, prob.H.grid).gamma_plus
    base, m0 = _traces(prob, prob.H, prob.p, samples, rng)

    def measure(tau):
        H2, p2 = prob.perturbed(tau)
        if prob.kind == "H" and prob.delta0 is not None:
            rep = check_admissible(H2, prob.delta0, prob.M, prob.x0, prob.nu0)
            if not rep.admissible:
                raise AdmissibilityError(f"perturbation tau={tau} leaves the admissible set: {rep}")
        tr, m = _traces(prob, H2, p2, samples, rng)
        d = _trace_rate_distance(base, tr)
        if prob.kind == "H":
            err = l2_norm(prob.H - H2, prob.region)
        else:
            base_p = prob.p if prob.p is not None else ScalarField.constant(prob.H.grid, 0.0)
            err = l2_norm(base_p - p2, prob.region)
        return d, err, m

    pairs = []
    for i, tau in enumerate(taus):
        d, e, m = measure(tau)
        m0 = max(m0, m)
        pairs.append((i, float(tau), d, e))
    if prob.M0 is not None and m0 > prob.M0:
        raise AdmissibilityError(f"a-priori bound violated: observed {m0:.4g} > M0 = {prob.M0}")
    usable = [(d, e) for _, _, d, e in pairs if d > 0 and e > 0]
    if len(usable) < 3:
        raise InsufficientRangeError("fewer than three nonzero pairs")
    ds = np.array([d for d, _ in usable])
    es = np.array([e for _, e in usable])
    if ds.max() / ds.min() < 10:
        raise InsufficientRangeError(f"d spans {ds.max() / ds.min():.3g} < one decade")
    med = np.median(ds)
    sel = ds <= med
    if sel.sum() < 3:
        sel = np.argsort(ds)[:3]
    fit = stats.linregress(np.log(ds[sel]), np.log(es[sel]))
    slope = float(fit.slope)
    theta = float(min(max(slope, 1e-6), 1.0))
    quality = float(fit.rvalue**2)
    bound_c = float(np.max(es / (ds**theta + ds)))
    sweep = StabilitySweep(pairs, theta, slope, quality, bound_c, m0_observed=m0)
    for j, tau in enumerate(held_out):
        d, e, _ = measure(tau)
        b = sweep.bound(d)
        sweep.held_out.append((len(pairs) + j, float(tau), d, e, b, bool(e <= b)))
    return sweep


# ---------------------------------------------------------------------------
# s-balancing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceResult:
    s_star: float
    bound: float
    branch: int
    theta: float
    decay: float  # exp(-beta T s / 2) M0^2 at s_star
    growth: float  # exp(C s) d^2 at s_star


def s_balance(M0: float, d: float, C: float, beta: float, T: float) -> BalanceResult:
    """Balance ``exp(-beta T s / 2) M0^2`` against ``exp(C s) d^2``."""
    if min(M0, d, C, beta, T) <= 0:
        raise ParameterError("s_balance needs positive inputs")
    bT = beta * T
    theta = bT / (2 * C + bT)
    if M0 > d:
        s = 2.0 / (C + bT / 2) * math.log(M0 / d)
        bound = 2 * C * M0 ** (4 * C / (2 * C + bT)) * d ** (2 * bT / (2 * C + bT))
        branch = 1
    else:
        s = 0.0
        bound = 2 * C * math.exp(C * s) * d**2
        branch = 2
    decay = math.exp(-bT * s / 2) * M0**2
    growth = math.exp(C * s) * d**2
    return BalanceResult(s, bound, branch, theta, decay, growth)


# ---------------------------------------------------------------------------
# Energy estimate
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    times: Array
    E: Array
    rhs_bound: float
    constant: float
    residual: float

    @property
    def holds(self) -> bool:
        return bool(np.max(self.E) <= self.rhs_bound)

    def nonincreasing(self, rtol: float = 1e-10) -> bool:
        scale = max(float(np.max(self.E)), 1e-300)
        return bool(np.all(np.diff(self.E) <= rtol * scale))


def _sup(values, mask) -> float:
    v = np.asarray(values)[..., mask] if np.ndim(values) > mask.ndim else np.asarray(values)[mask]
    return float(np.nanmax(np.abs(v))) if v.size else 0.0


def energy_check(y1: SpaceTimeField, H: VectorField, p1: Optional[ScalarField], R, Rt, f: ScalarField,
                 region=None, gamma_minus_trace: Optional[BoundaryTrace] = None,
                 residual_tol: float = 5e-2) -> EnergyReport:
    """Energy ``E(t) = int_D |y1|^2`` against its Gronwall bound.

    From ``dE/dt <= |H|_inf int_{Gamma_-} |y1|^2 + a E + |R_t|_inf^2 |f|^2``
    with ``a = sup (div H - 2 p1)_+ + 1`` and ``E(0) <= |R(., 0)|_inf^2 |f|^2``,
    the bound is ``C (|f|^2 + |y1|^2_{Gamma_- x (0,T)})`` with
    ``C = exp(a T) max(|R(., 0)|_inf^2 + T |R_t|_inf^2, |H|_inf)``.
    ``R`` and ``Rt`` are callables ``(points, t)``.
    """
    g = y1.grid
    region = BoxRegion(g.lower, g.upper) if region is None else region
    mask = _region_mask(g, region)
    pts = g.points()[mask.ravel()]
    T = float(y1.times[-1])
    # residual of the rate equation on the region
    src = _as_source(Rt, f)
    res = pde_residual(y1, H, p1, source=src)[:, mask]
    ok = np.isfinite(res)
    scale = float(np.sqrt(np.nanmean(y1.values[:, mask] ** 2)) + np.sqrt(np.mean(src(pts, 0.0) ** 2)))
    rel = float(np.sqrt(np.mean(res[ok] ** 2)) / scale) if ok.any() and scale > 0 else 0.0
    if rel > residual_tol:
        raise InvalidInputError(f"y1 does not solve the rate equation: relative residual {rel:.3g}")
    w = quadrature_weights(g, region)
    E = np.array([float(np.sum(w[mask] * y1.values[k][mask] ** 2)) for k in range(len(y1.times))])
    if not np.all(np.isfinite(E)):
        raise DataError("y1 undetermined on the region")
    divH = H.divergence().values
    pv = np.zeros(g.shape) if p1 is None else p1.values
    a = float(np.nanmax(np.maximum(divH - 2 * pv, 0.0)[mask])) + 1.0
    tt = np.repeat(y1.times, len(pts))
    pp = np.tile(pts, (len(y1.times), 1))
    rt_sup = float(np.max(np.abs(Rt(pp, tt))))
    r0_sup = float(np.max(np.abs(R(pts, np.zeros(len(pts))))))
    h_sup = float(np.nanmax(np.linalg.norm(H.values[mask], axis=-1)))
    C = math.exp(a * T) * max(r0_sup**2 + T * rt_sup**2, h_sup)
    if gamma_minus_trace is None:
        cls = _classify(region, H, g)
        gamma_minus_trace = boundary_trace(y1, cls.gamma_minus)
    fnorm2 = l2_norm(f, region) ** 2
    gnorm2 = l2_norm(gamma_minus_trace) ** 2
    return EnergyReport(y1.times, E, C * (fnorm2 + gnorm2), C, rel)


# ---------------------------------------------------------------------------
# Case experiments
# ---------------------------------------------------------------------------


@dataclass
class LinearizedInstance:
    """Resolution-independent description of a linearized experiment.

    Callables take ``points`` (and ``t``) arrays.  ``outer`` is the solve
    box and ``inner`` the subdomain ``D`` where data and norms are taken.
    """

    H: Callable
    Hjac: Callable
    p1: Callable
    R: Callable
    Rt: Callable
    f: Callable
    outer: tuple
    inner: tuple
    T: float
    eps0: float

    def discretize(self, h: float, dt: Optional[float] = None):
        g = Grid.from_spacing(self.outer[0], self.outer[1], h)
        H = VectorField.from_function(g, self.H, self.Hjac)
        if dt is None:
            hmax = float(np.max(np.linalg.norm(H.values, axis=-1)))
            K = math.ceil(self.T * hmax / float(g.spacing.min()))
            dt = self.T / K
        return (g, H, ScalarField.from_function(g, self.p1), ScalarField.from_function(g, self.f),
                BoxRegion(*self.inner), dt)


def random_instance(rng: np.random.Generator, dim: int = 2) -> LinearizedInstance:
    """Smooth random coefficients on ``D = (-0.2, 0.2)^n`` inside a box with margin."""
    c = rng.uniform(0.6, 1.0, size=dim) * rng.choice([-1, 1], size=dim)
    c[0] = abs(c[0])
    A = rng.uniform(-0.3, 0.3, size=(dim, dim))
    q = rng.uniform(0.0, 0.5, size=3)
    k = rng.uniform(1.0, 3.0, size=dim)
    ph = rng.uniform(0, 2 * np.pi, size=dim)
    fa = rng.uniform(0.5, 1.5)
    T = 0.25

    def H(x):
        return c + x @ A.T

    def Hjac(x):
        return np.broadcast_to(A, (len(x), dim, dim)).copy()

    def p1(x):
        return q[0] + q[1] * np.sin(x[:, 0])

    def R(x, t):
        t = np.broadcast_to(t, len(x))
        return 1.0 + 0.3 * np.cos(x[:, 0]) + q[2] * t

    def Rt(x, t):
        return np.full(len(x), q[2])

    def f(x):
        return fa * np.prod(np.cos(k * x + ph), axis=1) + 0.5

    return LinearizedInstance(H, Hjac, p1, R, Rt, f, (-0.6 * np.ones(dim), 0.6 * np.ones(dim)),
                              (-0.2 * np.ones(dim), 0.2 * np.ones(dim)), T, T / 32)


def _space_time_norms(y: SpaceTimeField, region, k_end: Optional[int] = None):
    """Per-level ``||y(t)||`` and ``||y_t(t)||`` over the region."""
    w = quadrature_weights(y.grid, region)
    used = w > 0
    v = y.values[: k_end]
    yt = np.gradient(y.values, y.times, axis=0, edge_order=2)[: k_end]
    a = np.sqrt(np.sum(w[used] * v[:, used] ** 2, axis=1))
    b = np.sqrt(np.sum(w[used] * yt[:, used] ** 2, axis=1))
    return a, b


def lipschitz_sides(y: SpaceTimeField, f: ScalarField, H: VectorField, region, case: str) -> tuple[float, float]:
    """Left and right sides of the Lipschitz inequality for the given data set.

    ``PropIV`` (data on ``D x {0, T}`` and ``Gamma_+``) and ``CaseV`` (its
    time-reversed twin on ``Gamma_-`` with the slice at ``t = 0``) use
    ``|f| + |y|_{H1(0,T;L2)}`` against ``|y_t|_{Gamma} + |y(., t*)|_{H1(D)}``.
    ``PropVI`` uses ``|f| + |y|_{W1,inf(0,T;L2)}`` against ``|y_t|_{dD}``.
    """
    g = y.grid
    cls = _classify(region, H, g)
    tw = trapezoid_time_weights(y.times)
    a, b = _space_time_norms(y, region)
    fn = l2_norm(f, region)
    if case in ("PropIV", "CaseV"):
        lhs = fn + math.sqrt(float(np.sum(tw * (a**2 + b**2))))
        sheet = cls.gamma_plus if case == "PropIV" else cls.gamma_minus
        k = -1 if case == "PropIV" else 0
        slab = y.slice(k)
        gy = grad(ScalarField(g, y.values[k]))
        h1 = math.sqrt(l2_norm(slab, region) ** 2 + l2_norm(gy, region) ** 2)
        rhs = l2_norm(boundary_trace(y, sheet).rate()) + h1
        return lhs, rhs
    if case == "PropVI":
        lhs = fn + float(np.max(a)) + float(np.max(b))
        rhs = l2_norm(boundary_trace(y, cls.samples).rate())
        return lhs, rhs
    raise UnsupportedCaseError(f"no Lipschitz inequality for case {case!r}")


CASES = ("baseline", "PropII", "PropIV", "PropVI")


def case_experiment(case: str, instance: LinearizedInstance, h: float, dt: Optional[float] = None) -> dict:
    """Reconstruct ``f`` from the case's data and evaluate the case's inequality.

    ``f`` is recovered from ``y_t(x, 0) = R(x, 0) f(x)``.  ``PropII`` adds
    the recovery error of ``y`` on ``(0, eps)`` with ``eps = 2 eps0``.
    """
    if case in ("II", "CaseII"):
        raise UnsupportedCaseError("Case II (data on D x {0} and Gamma_-): no positive result is known")
    if case not in CASES:
        raise UnsupportedCaseError(f"unknown case {case!r}")
    g, H, p1, f, D, dt = instance.discretize(h, dt)
    y = solve_linearized(H, p1, instance.R, f, instance.T, dt)
    pts = g.points()
    rate = y.initial_rate(D)
    r0 = np.asarray(instance.R(pts, np.zeros(len(pts))), float).reshape(g.shape)
    f_est = ScalarField(rate.grid, rate.values / r0)
    mask = rate.grid.node_mask()
    err = l2_norm(ScalarField(rate.grid, np.where(mask, f_est.values - f.values, np.nan)), D)
    out = {"case": case, "h": h, "dt": dt, "f_error": err, "f_norm": l2_norm(f, D)}
    if case == "PropII":
        eps = 2 * instance.eps0
        k_end = int(round(eps / dt)) + 1
        f_fill = ScalarField(g, np.where(mask, f_est.values, f.values))
        y_est = solve_linearized(H, p1, instance.R, f_fill, instance.T, dt)
        diff = SpaceTimeField(g, y.times, y.values - y_est.values, y.determined)
        a, b = _space_time_norms(diff, D, k_end)
        tw = trapezoid_time_weights(y.times[:k_end])
        out["eps"] = eps
        out["y_h1_error"] = math.sqrt(float(np.sum(tw * (a**2 + b**2))))
    if case in ("PropIV", "PropVI"):
        lhs, rhs = lipschitz_sides(y, f, H, D, case)
        out.update(lhs=lhs, rhs=rhs, lipschitz_constant=lhs / rhs)
    return out


# ---------------------------------------------------------------------------
# Non-uniqueness example
# ---------------------------------------------------------------------------


def default_profile(eta):
    return np.maximum(np.asarray(eta, float) - 1.0, 0.0) ** 2


def nonuniqueness_demo(g: Callable = default_profile, h: float = 1 / 128) -> dict:
    """``u(x, t) = g(x + t)`` on ``(0, 1)^2`` solves ``u_t - u_x = 0``.

    Both ``u(., 0)`` and ``u(0, .)`` vanish, yet ``u(., 1)`` does not.
    The residual is the one-step upwind residual of the sampled closed
    form.
    """
    probe = np.linspace(-1.0, 1.0, 2001)
    if np.any(np.abs(g(probe)) > 0):
        raise InvalidProfileError("g must vanish for eta <= 1")
    tail = np.linspace(1.0, 2.0, 2001)
    if not np.any(np.abs(g(tail)) > 0):
        raise InvalidProfileError("g must not vanish identically on (1, 2]")
    n = int(round(1 / h))
    x = np.linspace(0.0, 1.0, n + 1)
    t = np.linspace(0.0, 1.0, 2 * n + 1)  # dt = h / 2 keeps the upwind residual nontrivial
    dt = t[1] - t[0]
    U = g(x[None, :] + t[:, None])
    grid = Grid([0.0], [1.0], (n + 1,))
    Hv = -np.ones((n + 1, 1))
    inside = np.ones(n + 1, dtype=bool)
    res = np.zeros((2 * n, n + 1))
    for k in range(2 * n):
        def ghost(j, off, k=k):
            return g(x + off * h + t[k])

        Lu, _ = upwind_operator(U[k], inside, grid, Hv, ghost)
        res[k] = (U[k + 1] - U[k]) / dt + Lu
    tw = trapezoid_time_weights(t)
    xw = trapezoid_time_weights(x)
    return {
        "h": h,
        "initial_norm": float(np.sqrt(np.sum(xw * U[0] ** 2))),
        "x0_norm": float(np.sqrt(np.sum(tw * U[:, 0] ** 2))),
        "residual_inf": float(np.max(np.abs(res))),
        "final_norm": float(np.sqrt(np.sum(xw * U[-1] ** 2))),
        "sample_u_0.5_0.8": float(g(np.array([1.3]))[0]),
    }
