"""Grid-sampled scalar and vector fields with differentiation and quadrature.

A field may carry the analytic function it was sampled from.  Point
evaluation then uses the function directly and falls back to multilinear
interpolation of the node values otherwise.
"""

from __future__ import annotations

import csv
import io
import itertools
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArityError, DomainError, ResolutionError

Array = np.ndarray

_MAGIC = b"TLF1"


@dataclass(frozen=True)
class Grid:
    """Uniform lattice over an axis-aligned box.

    ``mask`` (optional, same shape as the lattice) flags nodes inside the
    region of interest; ``None`` means every node.
    """

    lower: Array
    upper: Array
    shape: tuple
    mask: Optional[Array] = None

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if any(s < 2 for s in self.shape) or np.any(self.upper <= self.lower):
            raise DomainError("grid needs at least two nodes per axis and positive extent")

    @classmethod
    def from_spacing(cls, lower, upper, h) -> "Grid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), lower.shape)
        n = np.rint((upper - lower) / h).astype(int) + 1
        upper = lower + (n - 1) * h
        return cls(lower, upper, tuple(n))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> Array:
        return (self.upper - self.lower) / (np.asarray(self.shape) - 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, i: int) -> Array:
        return np.linspace(self.lower[i], self.upper[i], self.shape[i])

    def points(self) -> Array:
        mesh = np.meshgrid(*[self.axis(i) for i in range(self.dim)], indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def node_mask(self) -> Array:
        return np.ones(self.shape, dtype=bool) if self.mask is None else self.mask

    def restrict(self, region, tol: float = 1e-12) -> "Grid":
        """Same lattice with the mask set to the nodes inside ``region``."""
        inside = region.contains(self.points(), tol).reshape(self.shape)
        return Grid(self.lower, self.upper, self.shape, inside)

    def cell_fractions(self, region, sub: int = 4) -> Array:
        """Fraction of each cell inside ``region`` by per-axis sub-sampling."""
        n = self.dim
        h = self.spacing
        offs = (np.arange(sub) + 0.5) / sub
        local = np.array(list(itertools.product(offs, repeat=n)))
        cshape = tuple(s - 1 for s in self.shape)
        mesh = np.meshgrid(*[self.axis(i)[:-1] for i in range(n)], indexing="ij")
        corners = np.column_stack([m.ravel() for m in mesh])
        frac = np.zeros(len(corners))
        for off in local:
            frac += region.contains(corners + off * h)
        return (frac / len(local)).reshape(cshape)


def interpolate(grid: Grid, values: Array, points: Array, clamp_tol: float = 1e-9) -> Array:
    """Multilinear interpolation; NaN corners are dropped and weights renormalised.

    ``values`` has shape ``grid.shape + trailing``; returns
    ``(N,) + trailing``.  Points outside the box by more than ``clamp_tol``
    relative raise :class:`DomainError`.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = grid.dim
    h = grid.spacing
    rel = (points - grid.lower) / h
    span = np.asarray(grid.shape) - 1
    if np.any(rel < -clamp_tol * span) or np.any(rel > span * (1 + clamp_tol)):
        raise DomainError("point outside the grid box")
    rel = np.clip(rel, 0, span)
    idx = np.minimum(np.floor(rel).astype(int), span - 1)
    frac = rel - idx
    trailing = values.shape[n:]
    acc = np.zeros((len(points),) + trailing)
    wsum = np.zeros(len(points))
    for corner in itertools.product((0, 1), repeat=n):
        c = np.asarray(corner)
        w = np.prod(np.where(c == 1, frac, 1 - frac), axis=1)
        v = values[tuple((idx + c).T)]
        ok = np.all(np.isfinite(v.reshape(len(points), -1)), axis=1)
        w = np.where(ok, w, 0.0)
        acc += w.reshape((-1,) + (1,) * len(trailing)) * np.where(
            ok.reshape((-1,) + (1,) * len(trailing)), v, 0.0)
        wsum += w
    good = wsum > 1e-14
    out = np.full(acc.shape, np.nan)
    out[good] = acc[good] / wsum[good].reshape((-1,) + (1,) * len(trailing))
    return out


class ScalarField:
    """One value per grid node, optionally backed by an analytic function."""

    def __init__(self, grid: Grid, values: Array, func: Optional[Callable[[Array], Array]] = None, name: str = ""):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise DomainError(f"values shape {values.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.values = values
        self.func = func
        self.name = name
        m = grid.node_mask()
        if not np.all(np.isfinite(values[m])):
            raise DomainError("non-finite values on masked nodes")

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[Array], Array], name: str = "") -> "ScalarField":
        vals = np.asarray(func(grid.points()), dtype=float).reshape(grid.shape)
        return cls(grid, vals, func, name)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls.from_function(grid, lambda x: np.full(len(x), float(c)), name=f"const({c})")

    def at(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        if self.func is not None:
            return np.asarray(self.func(points), dtype=float).reshape(len(points))
        return interpolate(self.grid, self.values, points)

    def with_values(self, values: Array) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            f = None
            if self.func is not None and other.func is not None:
                f1, f2 = self.func, other.func
                f = lambda x: f1(x) + f2(x)  # noqa: E731
            return ScalarField(self.grid, self.values + other.values, f)
        f = None if self.func is None else (lambda x, f1=self.func: f1(x) + other)
        return ScalarField(self.grid, self.values + other, f)

    def __mul__(self, alpha):
        f = None if self.func is None else (lambda x, f1=self.func: f1(x) * alpha)
        return ScalarField(self.grid, self.values * alpha, f)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other


class VectorField:
    """``n`` components per node; ``values`` has shape ``grid.shape + (n,)``.

    ``jac`` (optional) returns the analytic Jacobian ``d h_k / d x_j`` as an
    ``(N, n, n)`` array indexed ``[.., k, j]``.
    """

    def __init__(self, grid: Grid, values: Array, func=None, jac=None, name: str = ""):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape + (grid.dim,):
            raise DomainError("vector values must have shape grid.shape + (n,)")
        self.grid = grid
        self.values = values
        self.func = func
        self.jac = jac
        self.name = name
        m = grid.node_mask()
        if not np.all(np.isfinite(values[m])):
            raise DomainError("non-finite values on masked nodes")

    @classmethod
    def from_function(cls, grid: Grid, func, jac=None, name: str = "") -> "VectorField":
        vals = np.asarray(func(grid.points()), dtype=float).reshape(grid.shape + (grid.dim,))
        return cls(grid, vals, func, jac, name)

    @classmethod
    def constant(cls, grid: Grid, vec: Sequence[float]) -> "VectorField":
        v = np.asarray(vec, dtype=float)
        n = grid.dim
        return cls.from_function(grid, lambda x: np.tile(v, (len(x), 1)),
                                 jac=lambda x: np.zeros((len(x), n, n)), name=f"const({v.tolist()})")

    @property
    def dim(self) -> int:
        return self.grid.dim

    def at(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        if self.func is not None:
            return np.asarray(self.func(points), dtype=float).reshape(len(points), self.dim)
        return interpolate(self.grid, self.values, points)

    def component(self, k: int) -> ScalarField:
        f = None
        if self.func is not None:
            func = self.func
            f = lambda x, k=k: func(x)[:, k]  # noqa: E731
        return ScalarField(self.grid, self.values[..., k], f)

    def divergence(self) -> ScalarField:
        n = self.dim
        if self.jac is not None:
            jac = self.jac
            return ScalarField.from_function(self.grid, lambda x: np.trace(jac(x), axis1=1, axis2=2))
        total = np.zeros(self.grid.shape)
        for k in range(n):
            total += grad(self.component(k)).values[..., k]
        return ScalarField(self.grid, total)

    def __add__(self, other):
        f = j = None
        if self.func is not None and other.func is not None:
            f1, f2 = self.func, other.func
            f = lambda x: f1(x) + f2(x)  # noqa: E731
            if self.jac is not None and other.jac is not None:
                j1, j2 = self.jac, other.jac
                j = lambda x: j1(x) + j2(x)  # noqa: E731
        return VectorField(self.grid, self.values + other.values, f, j)

    def __mul__(self, alpha):
        f = None if self.func is None else (lambda x, f1=self.func: f1(x) * alpha)
        j = None if self.jac is None else (lambda x, j1=self.jac: j1(x) * alpha)
        return VectorField(self.grid, self.values * alpha, f, j)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + other * -1.0


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def _masked_derivative(values: Array, mask: Array, axis: int, h: float) -> Array:
    v = np.moveaxis(values, axis, 0)
    m = np.moveaxis(mask, axis, 0)
    n = v.shape[0]
    if n < 3:
        raise ResolutionError("need three nodes along every axis")
    out = np.full(v.shape, np.nan)

    def sh(a, k, fill):
        # a[i + k] with out-of-range entries set to ``fill``
        r = np.full_like(a, fill)
        if k > 0:
            r[:-k] = a[k:]
        elif k < 0:
            r[-k:] = a[:k]
        else:
            r[:] = a
        return r

    mp1, mm1 = sh(m, 1, False), sh(m, -1, False)
    mp2, mm2 = sh(m, 2, False), sh(m, -2, False)
    vp1, vm1 = sh(v, 1, 0.0), sh(v, -1, 0.0)
    vp2, vm2 = sh(v, 2, 0.0), sh(v, -2, 0.0)
    central = m & mp1 & mm1
    fwd = m & ~central & mp1 & mp2
    bwd = m & ~central & ~fwd & mm1 & mm2
    out = np.where(central, (vp1 - vm1) / (2 * h), out)
    out = np.where(fwd, (-3 * v + 4 * vp1 - vp2) / (2 * h), out)
    out = np.where(bwd, (3 * v - 4 * vm1 + vm2) / (2 * h), out)
    bad = m & ~(central | fwd | bwd)
    if np.any(bad):
        raise ResolutionError("region thinner than the difference stencil")
    return np.moveaxis(out, 0, axis)


def grad(a: ScalarField) -> VectorField:
    """Gradient by centred differences, second-order one-sided at mask edges."""
    g = a.grid
    mask = g.node_mask()
    comps = [_masked_derivative(a.values, mask, i, g.spacing[i]) for i in range(g.dim)]
    vals = np.stack(comps, axis=-1)
    vals[~mask] = np.nan
    return VectorField(g, vals)


def jacobian_values(H: VectorField) -> Array:
    """Finite-difference Jacobian at nodes, shape ``grid.shape + (n, n)``."""
    n = H.dim
    return np.stack([grad(H.component(k)).values for k in range(n)], axis=-2)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def quadrature_weights(grid: Grid, region=None, sub: int = 4) -> Array:
    """Node weights for integrals over ``region`` (or the whole box).

    Each cell contributes (fraction inside) x (cell volume), shared equally
    among its corners that lie inside.  On a box aligned with the lattice
    this is the composite trapezoid rule.
    """
    n = grid.dim
    h = grid.spacing
    vol = float(np.prod(h))
    if region is None:
        frac = np.ones(tuple(s - 1 for s in grid.shape))
        inside = np.ones(grid.shape, dtype=bool)
    else:
        frac = grid.cell_fractions(region, sub)
        inside = region.contains(grid.points()).reshape(grid.shape)
    count = np.zeros(frac.shape)
    corners = list(itertools.product((0, 1), repeat=n))
    cshape = frac.shape
    views = []
    for c in corners:
        sl = tuple(slice(ci, ci + cs) for ci, cs in zip(c, cshape))
        views.append(sl)
        count += inside[sl]
    share = np.where(count > 0, frac * vol / np.maximum(count, 1), 0.0)
    w = np.zeros(grid.shape)
    for sl in views:
        w[sl] += share * inside[sl]
    return w


def trapezoid_time_weights(times: Array) -> Array:
    w = np.zeros(len(times))
    dt = np.diff(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def l2_norm(field, region=None, weight: Optional[Array] = None) -> float:
    """L2 norm by composite trapezoid quadrature.

    ``field`` may be a :class:`ScalarField` or :class:`VectorField` (spatial
    integral over ``region``), a space-time field (space and time), or a
    boundary trace (surface and time).  ``weight`` is multiplied pointwise
    into ``|field|^2`` before summation and must broadcast against the
    sampled values.
    """
    from .transport import BoundaryTrace, SpaceTimeField

    if isinstance(field, BoundaryTrace):
        sq = field.u**2
        wt = trapezoid_time_weights(field.times)[:, None] * field.weights[None, :]
        if weight is not None:
            sq = sq * weight
        return float(np.sqrt(np.sum(wt * sq)))
    if isinstance(field, SpaceTimeField):
        w = quadrature_weights(field.grid, region)
        if not np.any(w > 0):
            raise DomainError("empty region")
        sq = field.values**2
        if weight is not None:
            sq = sq * weight
        tw = trapezoid_time_weights(field.times)
        used = w > 0
        return float(np.sqrt(np.sum(tw[:, None] * (sq[:, used] * w[used]))))
    w = quadrature_weights(field.grid, region)
    if not np.any(w > 0):
        raise DomainError("empty region")
    vals = field.values
    sq = np.sum(vals**2, axis=-1) if isinstance(field, VectorField) else vals**2
    if weight is not None:
        sq = sq * weight
    used = w > 0
    return float(np.sqrt(np.sum(sq[used] * w[used])))


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    """C^1 norm uses max_k (sup|h_k| + max_j sup|d_j h_k|)."""

    c1_norm: float
    flux_at_x0: float
    min_modulus: float
    delta0: float
    M: float

    @property
    def admissible(self) -> bool:
        return self.c1_norm <= self.M and self.flux_at_x0 > self.delta0 and self.min_modulus > self.delta0


def c1_norm(H: VectorField) -> float:
    mask = H.grid.node_mask()
    vals = H.values[mask]
    jac = jacobian_values(H)[mask]
    per_comp = np.abs(vals).max(axis=0) + np.abs(jac).max(axis=(0, 2))
    return float(per_comp.max())


def check_admissible(H: VectorField, delta0: float, M: float, x0, nu0) -> AdmissibilityReport:
    """Evaluate the admissible-set conditions on the masked nodes of ``H``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    nu0 = np.asarray(nu0, dtype=float)
    mask = H.grid.node_mask()
    flux = float(H.at(x0)[0] @ nu0)
    modulus = float(np.linalg.norm(H.values[mask], axis=-1).min())
    return AdmissibilityReport(c1_norm(H), flux, modulus, delta0, M)


@dataclass(frozen=True)
class FamilyCheck:
    min_abs_det: float
    location: Array
    c0: float


def gradient_matrix(family: Sequence[ScalarField]) -> Array:
    """Rows are the gradients of the family members: shape ``grid.shape + (n, n)``."""
    return np.stack([grad(a).values for a in family], axis=-2)


def check_initial_family(family: Sequence[ScalarField], region=None) -> FamilyCheck:
    """Minimal ``|det(grad a_1, ..., grad a_n)|`` and minimal singular value."""
    if not family:
        raise ArityError("empty family")
    g = family[0].grid
    if len(family) != g.dim:
        raise ArityError(f"need exactly {g.dim} fields, got {len(family)}")
    G = gradient_matrix(family)
    mask = g.node_mask() if region is None else region.contains(g.points()).reshape(g.shape)
    mats = G[mask]
    dets = np.abs(np.linalg.det(mats))
    svals = np.linalg.svd(mats, compute_uv=False)[:, -1]
    i = int(np.argmin(dets))
    loc = g.points()[mask.ravel()][i]
    return FamilyCheck(float(dets[i]), loc, float(svals.min()))


def random_admissible_field(rng: np.random.Generator, grid: Grid, delta0: float, M: float, nu0,
                            x0=None, max_tries: int = 1000) -> VectorField:
    """Random smooth field in the admissible set over ``grid``.

    Affine part plus one sinusoidal mode, rejected until the node-level
    admissibility report passes with a small safety margin.
    """
    n = grid.dim
    nu0 = np.asarray(nu0, dtype=float)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    for _ in range(max_tries):
        base = rng.normal(size=n)
        base -= (base @ nu0) * nu0
        base *= rng.uniform(0, 0.4 * M) / max(np.linalg.norm(base), 1e-12)
        base += nu0 * rng.uniform(delta0 * 1.05, 0.8 * M)
        A = rng.uniform(-1, 1, size=(n, n)) * rng.uniform(0, 0.1 * M)
        amp = rng.uniform(0, 0.05 * M, size=n)
        freq = rng.uniform(0.5, 3.0, size=n)
        phase = rng.uniform(0, 2 * np.pi, size=n)
        kdir = rng.normal(size=n)
        kdir /= np.linalg.norm(kdir)

        def func(x, base=base, A=A, amp=amp, freq=freq, phase=phase, kdir=kdir):
            s = np.sin(np.outer((x - x0) @ kdir, freq) + phase)
            return base + (x - x0) @ A.T + amp * s

        def jac(x, A=A, amp=amp, freq=freq, phase=phase, kdir=kdir):
            c = np.cos(np.outer((x - x0) @ kdir, freq) + phase)
            return A[None] + (amp * freq * c)[:, :, None] * kdir[None, None, :]

        H = VectorField.from_function(grid, func, jac, name="random")
        rep = check_admissible(H, delta0, M, x0, nu0)
        if rep.c1_norm <= 0.98 * M and rep.flux_at_x0 > 1.02 * delta0 and rep.min_modulus > 1.02 * delta0:
            return H
    raise DomainError("could not draw an admissible field; widen M or shrink the grid")


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def to_csv(field) -> str:
    """Node coordinates followed by the value(s), one row per node."""
    g = field.grid
    pts = g.points()
    vals = field.values.reshape(g.size, -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"x{i + 1}" for i in range(g.dim)]
    header += ["value"] if vals.shape[1] == 1 else [f"h{k + 1}" for k in range(vals.shape[1])]
    w.writerow(header)
    for p, v in zip(pts, vals):
        w.writerow([repr(float(c)) for c in p] + [repr(float(c)) for c in v])
    return buf.getvalue()


def from_csv(text: str, dim: int):
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    pts, vals = data[:, :dim], data[:, dim:]
    axes = [np.unique(pts[:, i]) for i in range(dim)]
    grid = Grid([a[0] for a in axes], [a[-1] for a in axes], tuple(len(a) for a in axes))
    order = np.lexsort(pts.T[::-1])
    vals = vals[order]
    if vals.shape[1] == 1:
        return ScalarField(grid, vals[:, 0].reshape(grid.shape))
    return VectorField(grid, vals.reshape(grid.shape + (dim,)))


def pack_block(grid: Grid, values: Array, times: Optional[Array] = None, mask: Optional[Array] = None) -> bytes:
    """Binary block: header (magic, dim, ncomp, ntime, shape, lower, spacing) then LE doubles.

    With ``times`` the time samples follow the header and ``values`` carries
    a leading time axis; an optional determinacy mask follows the payload
    as one byte per sample.
    """
    n = grid.dim
    ncomp = 1 if values.ndim == n + (0 if times is None else 1) else values.shape[-1]
    nt = 0 if times is None else len(times)
    head = _MAGIC + struct.pack("<III", n, ncomp, nt)
    head += struct.pack(f"<{n}Q", *grid.shape)
    head += struct.pack(f"<{n}d", *grid.lower) + struct.pack(f"<{n}d", *grid.spacing)
    body = b""
    if times is not None:
        body += np.asarray(times, dtype="<f8").tobytes()
    body += np.ascontiguousarray(values, dtype="<f8").tobytes()
    if mask is not None:
        body += np.ascontiguousarray(mask, dtype=np.uint8).tobytes()
    return head + body


def unpack_block(data: bytes):
    """Inverse of :func:`pack_block`: returns ``(grid, values, times, mask)``."""
    if data[:4] != _MAGIC:
        raise DomainError("not a field block")
    n, ncomp, nt = struct.unpack_from("<III", data, 4)
    off = 16
    shape = struct.unpack_from(f"<{n}Q", data, off)
    off += 8 * n
    lower = np.array(struct.unpack_from(f"<{n}d", data, off))
    off += 8 * n
    spacing = np.array(struct.unpack_from(f"<{n}d", data, off))
    off += 8 * n
    grid = Grid(lower, lower + spacing * (np.asarray(shape) - 1), shape)
    times = None
    if nt:
        times = np.frombuffer(data, "<f8", nt, off).copy()
        off += 8 * nt
    vshape = ((nt,) if nt else ()) + tuple(shape) + ((ncomp,) if ncomp > 1 else ())
    count = int(np.prod(vshape))
    values = np.frombuffer(data, "<f8", count, off).reshape(vshape).copy()
    off += 8 * count
    mask = None
    if off < len(data):
        mask = np.frombuffer(data, np.uint8, count, off).reshape(vshape).astype(bool)
    return grid, values, times, mask
