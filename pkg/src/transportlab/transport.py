"""Forward solution of du/dt + H.grad u + p u = s by characteristics.

Because ``H`` does not depend on time, the backward characteristic through a
node is the same curve for every time level; each node is traced once over
``[0, T]`` and the solution at ``(x, t_k)`` is read off the stored path.
An explicit first-order upwind scheme is provided as an independent oracle.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigurationError, DataError, DomainError, RunawayError
from .fields import Grid, ScalarField, VectorField, interpolate, pack_block, unpack_block
from .geometry import BoundarySamples, BoxRegion

logger = logging.getLogger(__name__)

Array = np.ndarray

EXIT_NONE = "time-horizon"
EXIT_INITIAL = "initial-plane"


def _eval(f, pts: Array) -> Array:
    """Evaluate a field at points, clamping into the grid box for sampled data."""
    if f.func is None:
        g = f.grid
        pts = np.clip(pts, g.lower, g.upper)
    return f.at(pts)


def _rk4(H: VectorField, X: Array, step: float) -> Array:
    k1 = _eval(H, X)
    k2 = _eval(H, X + 0.5 * step * k1)
    k3 = _eval(H, X + 0.5 * step * k2)
    k4 = _eval(H, X + step * k3)
    return X + step * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


# ---------------------------------------------------------------------------
# Single characteristics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CharacteristicPath:
    """Time-stamped positions of ``dX/ds = H(X)`` from an anchor.

    ``exit`` is ``"initial-plane"``, ``"gamma1"``, ``"gamma2"`` or
    ``"time-horizon"``.
    """

    anchor: Array
    t0: float
    times: Array
    positions: Array
    exit: str
    exit_time: float


def _exit_fraction(H, Xa, Xb_level, region, step, iters=48):
    """Bisection for the fraction of a step at which the level set is crossed."""
    lo = np.zeros(len(Xa))
    hi = np.ones(len(Xa))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lev = region.level(_rk4(H, Xa, mid[:, None] * step))
        out = lev > 0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
    return hi


def trace_characteristic(H: VectorField, x, t0: float, t1: float, region=None, step: Optional[float] = None,
                         max_steps: int = 1_000_000) -> CharacteristicPath:
    """Integrate the characteristic through ``(x, t0)`` towards time ``t1``.

    Classical RK4 with a fixed step; stops at the first exit from
    ``region`` or at ``t = 0``.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    span = t1 - t0
    direction = 1.0 if span >= 0 else -1.0
    horizon = abs(span)
    if t0 + span < 0:
        horizon = t0
    if step is None:
        step = horizon / max(64, math.ceil(horizon / 1e-3)) if horizon > 0 else 1.0
    nsteps = math.ceil(horizon / step - 1e-9) if horizon > 0 else 0
    if nsteps > max_steps:
        raise RunawayError(f"{nsteps} steps exceed the cap {max_steps}")
    step = horizon / nsteps if nsteps else 0.0
    times = [t0]
    pos = [x[0].copy()]
    X = x.copy()
    exit_tag = EXIT_INITIAL if t0 + span <= 0 and direction < 0 else EXIT_NONE
    exit_time = t0 + direction * horizon
    for i in range(nsteps):
        Xn = _rk4(H, X, direction * step)
        if region is not None and region.level(Xn)[0] > 1e-12:
            th = _exit_fraction(H, X, None, region, direction * step)[0]
            Xe = _rk4(H, X, direction * step * th)
            t_e = t0 + direction * step * (i + th)
            times.append(t_e)
            pos.append(Xe[0])
            return CharacteristicPath(x[0], t0, np.array(times), np.array(pos),
                                      str(region.sheet_of(Xe)[0]), t_e)
        X = Xn
        times.append(t0 + direction * step * (i + 1))
        pos.append(X[0].copy())
    return CharacteristicPath(x[0], t0, np.array(times), np.array(pos), exit_tag, exit_time)


# ---------------------------------------------------------------------------
# Space-time fields and traces
# ---------------------------------------------------------------------------


class SpaceTimeField:
    """Samples on ``grid`` nodes at ``times``; ``values`` is ``(K+1,) + grid.shape``.

    ``determined`` flags samples whose backward characteristic reaches
    prescribed data.  Nodes outside the solution region hold NaN.
    """

    def __init__(self, grid: Grid, times: Array, values: Array, determined: Optional[Array] = None,
                 region=None, meta: Optional[dict] = None):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.times),) + grid.shape:
            raise DomainError("values must have shape (ntimes,) + grid.shape")
        self.determined = np.isfinite(self.values) if determined is None else np.asarray(determined, bool)
        if np.any(~np.isfinite(self.values[self.determined])):
            raise DataError("non-finite values on determined samples")
        self.region = region
        self.meta = meta or {}

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @classmethod
    def from_function(cls, grid: Grid, times, func: Callable[[Array, float], Array], region=None):
        pts = grid.points()
        inside = np.ones(grid.size, bool) if region is None else region.contains(pts)
        vals = np.full((len(times),) + grid.shape, np.nan)
        for k, t in enumerate(times):
            v = np.full(grid.size, np.nan)
            v[inside] = func(pts[inside], t)
            vals[k] = v.reshape(grid.shape)
        return cls(grid, np.asarray(times, float), vals, region=region)

    def masked_values(self) -> Array:
        return np.where(self.determined, self.values, np.nan)

    def at(self, points: Array, k: int) -> Array:
        return interpolate(self.grid, self.masked_values()[k], points)

    def time_derivative(self) -> "SpaceTimeField":
        """Centred differences in time, second-order one-sided at both ends."""
        d = np.gradient(self.values, self.times, axis=0, edge_order=2)
        det = self.determined.copy()
        det[1:-1] &= self.determined[:-2] & self.determined[2:]
        det[0] &= self.determined[1] & self.determined[2]
        det[-1] &= self.determined[-2] & self.determined[-3]
        return SpaceTimeField(self.grid, self.times, d, det, self.region, dict(self.meta))

    def initial_rate(self, region=None) -> ScalarField:
        """``du/dt`` at ``t = 0`` from the first three levels (second order)."""
        u = self.values
        rate = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * self.dt)
        need = self.grid.node_mask() if region is None else region.contains(self.grid.points()).reshape(self.grid.shape)
        ok = self.determined[0] & self.determined[1] & self.determined[2]
        if np.any(need & ~ok):
            raise DataError("solution not determined on the first three time levels over the region")
        rate = np.where(need, rate, np.nan)
        return ScalarField(Grid(self.grid.lower, self.grid.upper, self.grid.shape, need), rate)

    def slice(self, k: int) -> ScalarField:
        mask = self.determined[k]
        return ScalarField(Grid(self.grid.lower, self.grid.upper, self.grid.shape, mask),
                           np.where(mask, self.values[k], np.nan))

    def reversed(self) -> "SpaceTimeField":
        """``v(x, t) = u(x, T - t)``."""
        return SpaceTimeField(self.grid, self.times, self.values[::-1].copy(), self.determined[::-1].copy(),
                              self.region, dict(self.meta))

    def to_bytes(self) -> bytes:
        return pack_block(self.grid, np.nan_to_num(self.values), self.times, self.determined)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SpaceTimeField":
        grid, values, times, mask = unpack_block(data)
        values = np.where(mask, values, np.nan) if mask is not None else values
        return cls(grid, times, values, mask)


@dataclass
class BoundaryTrace:
    """Values of ``u`` and ``du/dt`` at boundary samples over time.

    ``u`` and ``ut`` have shape ``(ntimes, npoints)``.
    """

    points: Array
    normals: Array
    weights: Array
    sheet: Array
    times: Array
    u: Array
    ut: Array
    partial: bool = False

    @classmethod
    def from_function(cls, samples: BoundarySamples, times, func, dfunc=None) -> "BoundaryTrace":
        times = np.asarray(times, float)
        u = np.stack([func(samples.points, t) for t in times])
        if dfunc is None:
            ut = np.gradient(u, times, axis=0, edge_order=2)
        else:
            ut = np.stack([dfunc(samples.points, t) for t in times])
        return cls(samples.points, samples.normals, samples.weights, samples.sheet, times, u, ut)

    def select(self, mask) -> "BoundaryTrace":
        m = np.asarray(mask, bool)
        return BoundaryTrace(self.points[m], self.normals[m], self.weights[m], self.sheet[m], self.times,
                             self.u[:, m], self.ut[:, m], self.partial)

    def rate(self) -> "BoundaryTrace":
        """Trace whose ``u`` is this trace's ``du/dt`` (for norms of the rate)."""
        return BoundaryTrace(self.points, self.normals, self.weights, self.sheet, self.times, self.ut,
                             np.gradient(self.ut, self.times, axis=0, edge_order=2), self.partial)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        return BoundaryTrace(self.points, self.normals, self.weights, self.sheet, self.times,
                             self.u - other.u, self.ut - other.ut, self.partial or other.partial)

    def value_at(self, points: Array, t: Array) -> Array:
        """Nearest sample in space, linear in time."""
        from scipy.spatial import cKDTree

        idx = cKDTree(self.points).query(points)[1]
        out = np.empty(len(points))
        for i, (j, tt) in enumerate(zip(idx, np.broadcast_to(t, len(points)))):
            out[i] = np.interp(tt, self.times, self.u[:, j])
        return out

    def to_csv(self) -> str:
        n = self.points.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"x{i + 1}" for i in range(n)] + ["u", "u_t", "sheet"])
        for k, t in enumerate(self.times):
            for j in range(len(self.weights)):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in self.points[j]]
                           + [repr(float(self.u[k, j])), repr(float(self.ut[k, j])), self.sheet[j]])
        return buf.getvalue()


def boundary_trace(u: SpaceTimeField, sheet: BoundarySamples, dt: Optional[float] = None) -> BoundaryTrace:
    """Interpolate ``u`` onto the sheet samples; ``du/dt`` by time differences."""
    masked = u.masked_values()
    vals = np.stack([interpolate(u.grid, masked[k], sheet.points) for k in range(len(u.times))])
    partial = bool(np.any(~np.isfinite(vals)))
    if partial:
        warnings.warn("undetermined cells adjacent to the sheet: trace is partial", RuntimeWarning, stacklevel=2)
    times = u.times
    ut = np.gradient(vals, times, axis=0, edge_order=2)
    return BoundaryTrace(sheet.points, sheet.normals, sheet.weights, sheet.sheet, times, vals, ut, partial)


# ---------------------------------------------------------------------------
# Characteristic solver
# ---------------------------------------------------------------------------


@dataclass
class _Flow:
    positions: Array  # (K+1, N, n) backward positions at each level (frozen after exit)
    pint: Array  # (K+1, N) integral of p along the backward path
    exit_time: Array  # (N,) inf when no exit within T
    exit_point: Array
    exit_pint: Array
    exit_sheet: Array


def _backward_flow(H, p, X0, dt, K, substeps, region, max_steps):
    N, n = X0.shape
    step = dt / substeps
    if K * substeps > max_steps:
        raise RunawayError(f"{K * substeps} sub-steps exceed the cap {max_steps}")
    positions = np.empty((K + 1, N, n))
    pint = np.zeros((K + 1, N))
    X = X0.copy()
    P = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    exit_time = np.full(N, np.inf)
    exit_point = X0.copy()
    exit_pint = np.zeros(N)
    positions[0] = X
    for k in range(K):
        for s in range(substeps):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            Xa = X[idx]
            Xn = _rk4(H, Xa, -step)
            out = region.level(Xn) > 1e-12
            keep = idx[~out]
            mid = 0.5 * (Xa[~out] + Xn[~out])
            P[keep] += (_eval(p, mid) if p is not None else 0.0) * step
            X[keep] = Xn[~out]
            if np.any(out):
                gone = idx[out]
                th = _exit_fraction(H, Xa[out], None, region, -step)
                Xe = _rk4(H, Xa[out], -(th * step)[:, None])
                midp = 0.5 * (Xa[out] + Xe)
                pe = P[gone] + (_eval(p, midp) if p is not None else 0.0) * th * step
                exit_time[gone] = (k * substeps + s + th) * step
                exit_point[gone] = Xe
                exit_pint[gone] = pe
                X[gone] = Xe
                P[gone] = pe
                alive[gone] = False
        positions[k + 1] = X
        pint[k + 1] = P
    sheets = np.full(N, "", dtype=object)
    ex = np.isfinite(exit_time)
    if ex.any():
        sheets[ex] = region.sheet_of(exit_point[ex])
    return _Flow(positions, pint, exit_time, exit_point, exit_pint, sheets)


def _check_inputs(H, p, a, dt, T):
    g = a.grid
    if dt <= 0 or T <= 0:
        raise ConfigurationError("dt and T must be positive")
    for f in (H, p, a):
        if f is not None and np.any(~np.isfinite(f.values[f.grid.node_mask()])):
            raise DataError("NaN in coefficients")
    hmax = float(np.nanmax(np.linalg.norm(H.values, axis=-1)))
    if dt * hmax > g.spacing.min() * (1 + 1e-9):
        raise ConfigurationError(f"CFL violation: dt*max|H| = {dt * hmax:.4g} > h = {g.spacing.min():.4g}")
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(T, 1):
        raise ConfigurationError("T must be an integer multiple of dt")
    return K


InflowSpec = Union[None, float, Callable[[Array, Array], Array], BoundaryTrace]


def _inflow_values(inflow, points, times):
    if callable(inflow):
        return np.asarray(inflow(points, times), dtype=float)
    if isinstance(inflow, BoundaryTrace):
        return inflow.value_at(points, times)
    return np.full(len(points), float(inflow))


def _source_values(source, points, t):
    if isinstance(source, SpaceTimeField):
        k = np.rint(t / source.dt).astype(int)
        out = np.empty(len(points))
        for kk in np.unique(k):
            sel = k == kk
            out[sel] = interpolate(source.grid, source.values[kk], points[sel])
        return out
    return np.asarray(source(points, t), dtype=float)


def _integrate(H, p, initial, T, dt, inflow=None, region=None, source=None, substeps=4,
               max_steps=10_000_000, inflow_given=None) -> SpaceTimeField:
    grid = initial.grid
    K = _check_inputs(H, p, initial, dt, T)
    region = BoxRegion(grid.lower, grid.upper) if region is None else region
    pts = grid.points()
    inside = region.contains(pts)
    X0 = pts[inside]
    flow = _backward_flow(H, p, X0, dt, K, substeps, region, max_steps)
    times = np.linspace(0.0, T, K + 1)
    N = len(X0)
    vals = np.empty((K + 1, N))
    det = np.empty((K + 1, N), dtype=bool)
    if inflow_given is None:
        inflow_given = inflow is not None
    g_default = 0.0 if inflow is None else inflow
    for k, t in enumerate(times):
        from_init = flow.exit_time >= t - 1e-14
        v = np.empty(N)
        if from_init.any():
            v[from_init] = _eval(initial, flow.positions[k, from_init]) * np.exp(-flow.pint[k, from_init])
        rest = ~from_init
        if rest.any():
            gv = _inflow_values(g_default, flow.exit_point[rest], t - flow.exit_time[rest])
            v[rest] = gv * np.exp(-flow.exit_pint[rest])
        if source is not None and k > 0:
            v += _duhamel(source, flow, times, k)
        vals[k] = v
        det[k] = from_init | inflow_given
    full = np.full((K + 1, grid.size), np.nan)
    full[:, inside] = vals
    dmask = np.zeros((K + 1, grid.size), dtype=bool)
    dmask[:, inside] = det
    meta = {
        "exit_time": flow.exit_time,
        "exit_sheet": flow.exit_sheet,
        "inside": inside.reshape(grid.shape),
        "substeps": substeps,
    }
    return SpaceTimeField(grid, times, full.reshape((K + 1,) + grid.shape), dmask.reshape((K + 1,) + grid.shape),
                          region, meta)


def _duhamel(source, flow, times, k):
    """Trapezoid in sigma of S(X(-sigma), t_k - sigma) exp(-P(sigma)) up to exit."""
    dt = times[1] - times[0]
    t = times[k]
    N = flow.positions.shape[1]
    total = np.zeros(N)
    # integrand at sigma_j = j dt, j = 0..k, for paths still inside
    vals = np.empty((k + 1, N))
    for j in range(k + 1):
        vals[j] = _source_values(source, flow.positions[j], np.full(N, t - times[j])) * np.exp(-flow.pint[j])
    sig = times[: k + 1]
    ends = np.minimum(flow.exit_time, t)
    for j in range(k):
        a, b = sig[j], sig[j + 1]
        full = ends >= b - 1e-14
        total += np.where(full, 0.5 * dt * (vals[j] + vals[j + 1]), 0.0)
        part = (ends > a) & ~full
        if part.any():
            # partial interval ending at the exit point
            ve = _source_values(source, flow.exit_point[part], t - flow.exit_time[part]) * np.exp(-flow.exit_pint[part])
            total[part] += 0.5 * (ends[part] - a) * (vals[j, part] + ve)
    return total


def solve_forward(H: VectorField, p: Optional[ScalarField], a: ScalarField, T: float, dt: float,
                  inflow: InflowSpec = None, region=None, substeps: int = 4, source=None,
                  max_steps: int = 10_000_000) -> SpaceTimeField:
    """Solve du/dt + H.grad u + p u = source with u(., 0) = a.

    Each node's backward characteristic is integrated with RK4 on
    ``dt / substeps`` steps; the damping integral uses the midpoint rule on
    the same steps.  Without ``inflow`` the zero inflow datum fills the
    values but samples fed from the cut boundary are marked undetermined.
    ``inflow`` may be a constant, a callable ``g(points, times)`` or a
    :class:`BoundaryTrace`.
    """
    return _integrate(H, p, a, T, dt, inflow, region, source, substeps, max_steps)


# ---------------------------------------------------------------------------
# Upwind oracle
# ---------------------------------------------------------------------------


def _shift(a, axis, k, fill):
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, None), slice(None, -k)
    else:
        src[axis], dst[axis] = slice(None, k), slice(-k, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def upwind_operator(values: Array, inside: Array, grid: Grid, Hvals: Array, ghost=None):
    """``H . grad u`` with one-sided differences taken against the flow.

    ``ghost(axis, offset)`` returns values at the neighbour positions
    ``x + offset * h_axis * e_axis`` (zero when ``None``).  Returns
    ``(Lu, complete)`` where ``complete`` flags nodes whose every upwind
    neighbour was available inside the region.
    """
    n = grid.dim
    h = grid.spacing
    Lu = np.zeros(values.shape)
    complete = inside.copy()
    for j in range(n):
        hj = Hvals[..., j]
        for k, sign in ((-1, 1.0), (1, -1.0)):
            # upwind neighbour sits at index i - 1 when h_j > 0
            nb = _shift(values, j, k, np.nan)
            nb_in = _shift(inside, j, k, False)
            use = (hj > 0) if k == -1 else (hj < 0)
            if ghost is not None and np.any(use & ~nb_in):
                nb = np.where(nb_in, nb, ghost(j, k))
            else:
                nb = np.where(nb_in, nb, 0.0)
            diff = sign * (values - nb) / h[j]
            Lu += np.where(use, hj * diff, 0.0)
            complete &= ~(use & ~nb_in)
    return Lu, complete


def solve_forward_fd(H: VectorField, p: Optional[ScalarField], a: ScalarField, T: float, dt: float,
                     inflow: InflowSpec = None, region=None) -> SpaceTimeField:
    """Explicit first-order upwind solution on the grid nodes of the region.

    Time steps are sub-cycled so that ``dt_sub * sum_j |h_j| / h_j <= 1``.
    Ghost values at missing upwind neighbours come from ``inflow`` (zero if
    absent, in which case contaminated nodes are marked undetermined).
    """
    grid = a.grid
    K = _check_inputs(H, p, a, dt, T)
    region = BoxRegion(grid.lower, grid.upper) if region is None else region
    pts = grid.points()
    inside = region.contains(pts).reshape(grid.shape)
    Hv = H.values
    pv = p.values if p is not None else np.zeros(grid.shape)
    courant = float(np.max(np.sum(np.abs(Hv) / grid.spacing, axis=-1)))
    nsub = max(1, math.ceil(dt * courant - 1e-12))
    step = dt / nsub
    u = np.where(inside, a.values, np.nan)
    det = inside.copy()
    times = np.linspace(0.0, T, K + 1)
    out = np.full((K + 1,) + grid.shape, np.nan)
    dmask = np.zeros((K + 1,) + grid.shape, dtype=bool)
    out[0], dmask[0] = u, det
    t = 0.0
    for k in range(K):
        for _ in range(nsub):
            ghost = None
            if inflow is not None:
                def ghost(j, k, t=t):
                    shifted = pts.copy()
                    shifted[:, j] += k * grid.spacing[j]
                    return _inflow_values(inflow, shifted, np.full(len(pts), t)).reshape(grid.shape)
            Lu, complete = upwind_operator(np.nan_to_num(u), inside, grid, Hv, ghost)
            u_new = u - step * (Lu + pv * u)
            if inflow is None:
                # determinacy travels with the stencil
                d_nb = np.ones(grid.shape, dtype=bool)
                for j in range(grid.dim):
                    hj = Hv[..., j]
                    d_nb &= np.where(hj > 0, _shift(det, j, -1, False), True)
                    d_nb &= np.where(hj < 0, _shift(det, j, 1, False), True)
                det = det & d_nb & complete
            u = np.where(inside, u_new, np.nan)
            t += step
        out[k + 1] = u
        dmask[k + 1] = det if inflow is None else inside
    return SpaceTimeField(grid, times, out, dmask, region, {"substeps": nsub})


def pde_residual(u: SpaceTimeField, H: VectorField, p: Optional[ScalarField], source=None) -> Array:
    """``du/dt + H.grad u + p u - source`` by centred differences.

    Defined on interior time levels at nodes whose centred space-time stencil
    is fully determined; NaN elsewhere.
    """
    g = u.grid
    vals = u.masked_values()
    res = np.full(vals.shape, np.nan)
    dt = u.dt
    ut = (vals[2:] - vals[:-2]) / (2 * dt)
    total = ut.copy()
    for j in range(g.dim):
        d = (_shift(vals, j + 1, 1, np.nan) - _shift(vals, j + 1, -1, np.nan)) / (2 * g.spacing[j])
        total = total + H.values[..., j][None] * d[1:-1]
    if p is not None:
        total = total + p.values[None] * vals[1:-1]
    if source is not None:
        pts = g.points()
        S = np.stack([_source_values(source, pts, np.full(len(pts), t)).reshape(g.shape) for t in u.times[1:-1]])
        total = total - S
    res[1:-1] = total
    return res
