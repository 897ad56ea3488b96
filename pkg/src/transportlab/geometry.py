"""Boundary patches, local subdomains and inflow/outflow classification.

Coordinates are split as ``x = (x', x_n)``.  The boundary of the bounded
domain near the anchor point ``x0 = 0`` is the graph ``x_n = ell(x')`` over
the ball ``|x'| < rho0`` and the domain lies below it.  A subdomain is cut
out between that graph and a second graph ``ell - bump`` whose normals point
against every admissible field, so data on the lower sheet are never needed
to identify coefficients.

Points are always arrays of shape ``(N, n)``; ``x'`` arrays have shape
``(N, n - 1)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DomainError, InfeasibleGeometryError, ParameterError, ResolutionError

Array = np.ndarray


# ---------------------------------------------------------------------------
# Boundary samples shared by every region type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundarySamples:
    """Quadrature nodes on a region boundary.

    ``weights`` are surface-measure weights (sum to the boundary area) and
    ``sheet`` labels each node ``"gamma1"`` (observed part of the outer
    boundary) or ``"gamma2"`` (interior cut).
    """

    points: Array
    normals: Array
    weights: Array
    sheet: Array

    def __len__(self) -> int:
        return len(self.weights)

    def select(self, mask: Array) -> "BoundarySamples":
        mask = np.asarray(mask, dtype=bool)
        return BoundarySamples(self.points[mask], self.normals[mask], self.weights[mask], self.sheet[mask])

    @staticmethod
    def concat(parts: Sequence["BoundarySamples"]) -> "BoundarySamples":
        return BoundarySamples(
            np.concatenate([p.points for p in parts]),
            np.concatenate([p.normals for p in parts]),
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.sheet for p in parts]),
        )


def _trapezoid_weights(x: Array) -> Array:
    w = np.zeros_like(x, dtype=float)
    if len(x) == 1:
        w[0] = 1.0
        return w
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


class BoxRegion:
    """Axis-aligned box ``prod_i [lower_i, upper_i]``.

    ``gamma1_faces`` lists ``(axis, side)`` pairs (``side`` is ``-1`` or
    ``+1``) of faces treated as observed boundary; every other face is
    labelled ``gamma2``.
    """

    def __init__(self, lower, upper, gamma1_faces: Sequence[tuple[int, int]] = ()):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise DomainError("box bounds must satisfy lower < upper componentwise")
        self.gamma1_faces = tuple((int(a), int(s)) for a, s in gamma1_faces)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def bounds(self) -> tuple[Array, Array]:
        return self.lower.copy(), self.upper.copy()

    def level(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        return np.max(np.maximum(self.lower - points, points - self.upper), axis=1)

    def contains(self, points: Array, tol: float = 1e-12) -> Array:
        return self.level(points) <= tol

    def sheet_of(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        gaps = np.concatenate([points - self.lower, self.upper - points], axis=1)
        nearest = np.argmin(np.abs(gaps), axis=1)
        n = self.dim
        labels = np.full(len(points), "gamma2", dtype=object)
        for axis, side in self.gamma1_faces:
            idx = axis if side < 0 else axis + n
            labels[nearest == idx] = "gamma1"
        return labels

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def boundary_samples(self, count: int = 65, grid=None) -> BoundarySamples:
        """Tensor trapezoid nodes on each face.

        With ``grid`` the face nodes are the grid lines falling inside the
        box, so traces need no interpolation across cells.
        """
        n = self.dim
        if grid is not None:
            axes = []
            for i in range(n):
                c = grid.axis(i)
                sel = c[(c >= self.lower[i] - 1e-12) & (c <= self.upper[i] + 1e-12)]
                axes.append(sel)
        else:
            axes = [np.linspace(self.lower[i], self.upper[i], count) for i in range(n)]
        parts = []
        for axis in range(n):
            others = [i for i in range(n) if i != axis]
            if others:
                mesh = np.meshgrid(*[axes[i] for i in others], indexing="ij")
                coords = [m.ravel() for m in mesh]
                w = np.ones(coords[0].shape)
                wmesh = np.meshgrid(*[_trapezoid_weights(axes[i]) for i in others], indexing="ij")
                for wm in wmesh:
                    w = w * wm.ravel()
            else:
                coords, w = [], np.ones(1)
            for side, value in ((-1, self.lower[axis]), (1, self.upper[axis])):
                pts = np.zeros((len(w), n))
                for j, i in enumerate(others):
                    pts[:, i] = coords[j]
                pts[:, axis] = value
                nrm = np.zeros((len(w), n))
                nrm[:, axis] = side
                label = "gamma1" if (axis, side) in self.gamma1_faces else "gamma2"
                parts.append(BoundarySamples(pts, nrm, w.copy(), np.full(len(w), label, dtype=object)))
        return BoundarySamples.concat(parts)

    def to_dict(self) -> dict:
        return {
            "kind": "box",
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "gamma1_faces": [list(f) for f in self.gamma1_faces],
        }


# ---------------------------------------------------------------------------
# Graph patches
# ---------------------------------------------------------------------------


def _as_xprime(xprime, m: int) -> Array:
    xp = np.asarray(xprime, dtype=float)
    if m == 0:
        return np.zeros((1 if xp.ndim < 2 else xp.shape[0], 0))
    return xp.reshape(-1, m)


@dataclass(frozen=True)
class BoundaryGraph:
    """Height function ``ell`` over ``|x'| <= rho0`` with ``ell(0) = 0``.

    ``ell``, ``grad`` and ``hess`` take ``(N, n-1)`` arrays and return
    ``(N,)``, ``(N, n-1)`` and ``(N, n-1, n-1)`` arrays.  The domain lies
    below the graph (``below=True``); the opposite orientation is not
    supported by the subdomain construction.
    """

    dim: int
    rho0: float
    ell: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess: Callable[[Array], Array]
    below: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ParameterError("dimension must be 1, 2 or 3")
        if self.rho0 <= 0:
            raise ParameterError("rho0 must be positive")
        if self.dim > 1 and abs(float(self.ell(np.zeros((1, self.dim - 1)))[0])) > 1e-12:
            raise DomainError("the anchor point must lie on the graph: ell(0) = 0")

    @property
    def m(self) -> int:
        return self.dim - 1

    @classmethod
    def flat(cls, dim: int = 2, rho0: float = 1.0) -> "BoundaryGraph":
        m = dim - 1
        return cls(
            dim,
            rho0,
            lambda x: np.zeros(len(x)),
            lambda x: np.zeros((len(x), m)),
            lambda x: np.zeros((len(x), m, m)),
            name="flat",
        )

    @classmethod
    def linear(cls, slope: Sequence[float], rho0: float = 1.0) -> "BoundaryGraph":
        g = np.asarray(slope, dtype=float)
        m = len(g)
        return cls(
            m + 1,
            rho0,
            lambda x: x @ g,
            lambda x: np.tile(g, (len(x), 1)),
            lambda x: np.zeros((len(x), m, m)),
            name="linear",
            params={"slope": g.tolist()},
        )

    @classmethod
    def quadratic(cls, curvature: Sequence[float], rho0: float = 1.0) -> "BoundaryGraph":
        """``ell(x') = sum_i curvature_i * x_i'^2``."""
        k = np.asarray(curvature, dtype=float)
        m = len(k)
        return cls(
            m + 1,
            rho0,
            lambda x: (x**2) @ k,
            lambda x: 2 * x * k,
            lambda x: np.tile(np.diag(2 * k), (len(x), 1, 1)),
            name="quadratic",
            params={"curvature": k.tolist()},
        )

    @classmethod
    def sinusoidal(cls, amplitude: float, frequency: float = 1.0, dim: int = 2, rho0: float = 1.0):
        """``ell(x') = amplitude * sin(frequency * x_1')``."""
        m = dim - 1

        def ell(x):
            return amplitude * np.sin(frequency * x[:, 0])

        def grad(x):
            g = np.zeros((len(x), m))
            g[:, 0] = amplitude * frequency * np.cos(frequency * x[:, 0])
            return g

        def hess(x):
            h = np.zeros((len(x), m, m))
            h[:, 0, 0] = -amplitude * frequency**2 * np.sin(frequency * x[:, 0])
            return h

        return cls(dim, rho0, ell, grad, hess, name="sinusoidal",
                   params={"amplitude": amplitude, "frequency": frequency})

    def c2_norm(self, radius: Optional[float] = None, samples: int = 201) -> float:
        """Sup-norm convention: max of sup |ell|, sup |grad|, sup |hess entry|."""
        if self.m == 0:
            return 0.0
        xp = ball_samples(self.m, self.rho0 if radius is None else radius, samples)
        return float(max(np.abs(self.ell(xp)).max(), np.abs(self.grad(xp)).max(),
                         np.abs(self.hess(xp)).max()))


def ball_samples(m: int, radius: float, count: int) -> Array:
    """Dense deterministic sample of the closed ball ``|x'| <= radius``."""
    if m == 0:
        return np.zeros((1, 0))
    if m == 1:
        return np.linspace(-radius, radius, count).reshape(-1, 1)
    k = max(int(math.sqrt(count)), 8)
    r = np.linspace(0.0, radius, k)
    pts = [np.zeros((1, 2))]
    for ri in r[1:]:
        na = max(int(4 * k * ri / radius), 8)
        a = np.linspace(0, 2 * np.pi, na, endpoint=False)
        pts.append(np.column_stack([ri * np.cos(a), ri * np.sin(a)]))
    return np.concatenate(pts)


def eval_boundary(patch: BoundaryGraph, xprime, lower: bool = False, bump=None):
    """Boundary point and outward unit normal of the graph at ``x'``.

    With ``lower=True`` the lower sheet ``x_n = ell - bump`` of a subdomain is
    evaluated and its normal ``(grad(ell - bump), -1) / sqrt(...)`` returned.
    Returns arrays of shape ``(N, n)``.
    """
    m = patch.m
    xp = _as_xprime(xprime, m)
    if m > 0 and np.any(np.linalg.norm(xp, axis=1) > patch.rho0 * (1 + 1e-12)):
        raise DomainError(f"x' outside the base ball of radius {patch.rho0}")
    height = patch.ell(xp) if m > 0 else np.zeros(len(xp))
    g = patch.grad(xp) if m > 0 else np.zeros((len(xp), 0))
    if lower:
        if bump is None:
            raise ParameterError("the lower sheet needs a bump")
        height = height - bump.value(xp)
        g = g - bump.grad(xp)
        normal = np.column_stack([g, -np.ones(len(xp))])
    else:
        normal = np.column_stack([-g, np.ones(len(xp))])
    normal = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    point = np.column_stack([xp, height])
    return point, normal


# ---------------------------------------------------------------------------
# Bump and subdomain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    """``c * (1 - |x'|^2 / rho1^2)^3`` on the closed ball, zero outside.

    In one dimension (no ``x'``) the bump is the constant ``c``.
    """

    rho1: float
    c: float
    m: int

    def _q(self, xp):
        return np.clip(1.0 - np.sum(xp**2, axis=1) / self.rho1**2, 0.0, None)

    def value(self, xp: Array) -> Array:
        if self.m == 0:
            return np.full(len(xp), self.c)
        return self.c * self._q(xp) ** 3

    def grad(self, xp: Array) -> Array:
        if self.m == 0:
            return np.zeros((len(xp), 0))
        q = self._q(xp)
        return (-6.0 * self.c / self.rho1**2) * (q**2)[:, None] * xp

    def hess(self, xp: Array) -> Array:
        if self.m == 0:
            return np.zeros((len(xp), 0, 0))
        q = self._q(xp)
        r2 = self.rho1**2
        outer = xp[:, :, None] * xp[:, None, :]
        eye = np.eye(self.m)[None]
        return (24.0 * self.c / r2**2) * q[:, None, None] * outer - (6.0 * self.c / r2) * (q**2)[:, None, None] * eye

    def c2_norm(self, samples: int = 401) -> float:
        if self.m == 0:
            return abs(self.c)
        xp = ball_samples(self.m, self.rho1, samples)
        return float(max(np.abs(self.value(xp)).max(), np.abs(self.grad(xp)).max(),
                         np.abs(self.hess(xp)).max()))

    @classmethod
    def scaled(cls, rho1: float, m: int, target: float, samples: int = 401) -> "Bump":
        """Bump whose C^2 norm equals ``target``."""
        unit = cls(rho1, 1.0, m)
        return cls(rho1, target / unit.c2_norm(samples), m)


@dataclass
class Subdomain:
    """Region between the graph ``ell`` and ``ell - bump`` over ``|x'| < rho1``.

    ``gamma1`` and ``gamma2`` are boundary samples of the upper (observed)
    and lower sheets.  ``constants`` records the numerically fitted geometry
    constants of the construction.
    """

    base: BoundaryGraph
    rho1: float
    bump: Bump
    samples: int = 201
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gamma1 = self._sheet(lower=False)
        self.gamma2 = self._sheet(lower=True)
        self.diam = self._diameter()

    @property
    def dim(self) -> int:
        return self.base.dim

    def _xprime_nodes(self):
        m = self.base.m
        if m == 0:
            return np.zeros((1, 0)), np.ones(1)
        if m == 1:
            x = np.linspace(-self.rho1, self.rho1, self.samples)
            return x.reshape(-1, 1), _trapezoid_weights(x)
        k = max(int(math.sqrt(self.samples)) * 2, 16)
        x = np.linspace(-self.rho1, self.rho1, k)
        X, Y = np.meshgrid(x, x, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        w = np.outer(_trapezoid_weights(x), _trapezoid_weights(x)).ravel()
        inside = np.linalg.norm(pts, axis=1) <= self.rho1
        return pts[inside], w[inside]

    def _sheet(self, lower: bool) -> BoundarySamples:
        xp, w = self._xprime_nodes()
        pts, nrm = eval_boundary(self.base, xp, lower=lower, bump=self.bump)
        if self.base.m > 0:
            g = self.base.grad(xp) - (self.bump.grad(xp) if lower else 0.0)
            w = w * np.sqrt(1.0 + np.sum(g**2, axis=1))
        label = "gamma2" if lower else "gamma1"
        return BoundarySamples(pts, nrm, w, np.full(len(w), label, dtype=object))

    def _diameter(self) -> float:
        pts = np.concatenate([self.gamma1.points, self.gamma2.points])
        if len(pts) > 4000:
            step = len(pts) // 4000 + 1
            pts = pts[::step]
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0

    def diameter(self) -> float:
        return self.diam

    def height(self, xp):
        return self.base.ell(xp) if self.base.m > 0 else np.zeros(len(xp))

    def level(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        xp, xn = points[:, :-1], points[:, -1]
        top = self.height(xp)
        parts = [xn - top, top - self.bump.value(xp) - xn]
        if self.base.m > 0:
            parts.append(np.linalg.norm(xp, axis=1) - self.rho1)
        return np.max(np.vstack(parts), axis=0)

    def contains(self, points: Array, tol: float = 1e-12) -> Array:
        return self.level(points) <= tol

    def sheet_of(self, points: Array) -> Array:
        points = np.atleast_2d(points)
        xp, xn = points[:, :-1], points[:, -1]
        top = self.height(xp)
        up = np.abs(xn - top)
        down = np.abs(xn - (top - self.bump.value(xp)))
        return np.where(up <= down, "gamma1", "gamma2").astype(object)

    def bounds(self) -> tuple[Array, Array]:
        pts = np.concatenate([self.gamma1.points, self.gamma2.points])
        return pts.min(axis=0), pts.max(axis=0)

    def boundary_samples(self, count: Optional[int] = None, grid=None) -> BoundarySamples:
        return BoundarySamples.concat([self.gamma1, self.gamma2])

    def to_dict(self) -> dict:
        return {
            "kind": "subdomain",
            "dim": self.dim,
            "graph": self.base.name,
            "graph_params": self.base.params,
            "rho0": self.base.rho0,
            "rho1": self.rho1,
            "bump_c": self.bump.c,
            "diam": self.diam,
            "constants": self.constants,
            "gamma1": {"points": self.gamma1.points.tolist(), "normals": self.gamma1.normals.tolist()},
            "gamma2": {"points": self.gamma2.points.tolist(), "normals": self.gamma2.normals.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, H=None) -> str:
        """Rows ``sheet, x_1..x_n, nu_1..nu_n, flux`` (flux blank without ``H``)."""
        n = self.dim
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sheet"] + [f"x{i + 1}" for i in range(n)] + [f"nu{i + 1}" for i in range(n)] + ["flux"])
        for sheet in (self.gamma1, self.gamma2):
            flux = np.sum(H.at(sheet.points) * sheet.normals, axis=1) if H is not None else None
            for i in range(len(sheet)):
                row = [sheet.sheet[i]] + [repr(float(v)) for v in sheet.points[i]]
                row += [repr(float(v)) for v in sheet.normals[i]]
                row.append("" if flux is None else repr(float(flux[i])))
                writer.writerow(row)
        return buf.getvalue()


def worst_case_margins(patch: BoundaryGraph, bump: Bump, delta0: float, M: float, samples: int = 201):
    """Lower bound of ``H.nu`` on the upper sheet and upper bound on the lower.

    Valid for every field with ``H(0).nu(0) > delta0`` and C^1 norm at most
    ``M``: ``|H(x) - H(0)| <= n M |x|`` and ``|H(0)| <= sqrt(n) M``.
    """
    n = patch.dim
    xp = ball_samples(patch.m, bump.rho1, samples)
    p1, nu1 = eval_boundary(patch, xp)
    p2, nu2 = eval_boundary(patch, xp, lower=True, bump=bump)
    _, nu0 = eval_boundary(patch, np.zeros((1, patch.m)))
    lip = n * M
    hmax = math.sqrt(n) * M
    lower1 = delta0 - hmax * np.linalg.norm(nu1 - nu0, axis=1) - lip * np.linalg.norm(p1, axis=1)
    upper2 = -delta0 + hmax * np.linalg.norm(nu2 + nu0, axis=1) + lip * np.linalg.norm(p2, axis=1)
    return float(lower1.min()), float(upper2.max())


def _margins_ok(patch, rho1, delta0, M, samples):
    bump = Bump.scaled(rho1, patch.m, delta0 / M)
    lo1, up2 = worst_case_margins(patch, bump, delta0, M, samples)
    return lo1 > delta0 / 2 and up2 <= -delta0 / 4, bump


def _one_dim_subdomain(patch, delta0, M, eps, samples):
    c_max = min(delta0 / M, 3 * delta0 / (4 * M))
    r = c_max
    if not eps < r:
        raise InfeasibleGeometryError(f"eps={eps} must be below r={r:.6g}", r)
    c = min(c_max, 0.999 * eps)
    sub = Subdomain(patch, 0.0, Bump(0.0, c, 0), samples, {"r": r})
    return sub


def lemma_radius(patch: BoundaryGraph, delta0: float, M: float, samples: int = 201):
    """Largest base radius ``rho1`` meeting the worst-case margins and its ``r``."""
    if patch.m == 0:
        c = min(delta0 / M, 3 * delta0 / (4 * M))
        return 0.0, c
    hi = min(patch.rho0, 1.0) * (1 - 1e-9)
    ok, _ = _margins_ok(patch, hi, delta0, M, samples)
    if ok:
        rho = hi
    else:
        lo = 0.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if _margins_ok(patch, mid, delta0, M, samples)[0]:
                lo = mid
            else:
                hi = mid
        rho = lo
    bump = Bump.scaled(rho, patch.m, delta0 / M)
    r = Subdomain(patch, rho, bump, samples).diam
    return rho, r


def construct_subdomain(
    patch: BoundaryGraph,
    delta0: float,
    M: float,
    eps: float,
    T: Optional[float] = None,
    beta: Optional[float] = None,
    samples: int = 201,
    min_rho: float = 0.0,
) -> Subdomain:
    """Build a subdomain of diameter below ``eps`` attached to the patch.

    ``rho1`` is first pushed as far as the worst-case flux margins over the
    admissible set allow (this fixes ``r``), then shrunk by bisection until
    the diameter drops below ``eps``.  When ``T`` and ``beta`` are given,
    ``eps`` must also satisfy the smallness conditions used for the weight
    separation.
    """
    if delta0 <= 0 or M <= 0 or eps <= 0:
        raise ParameterError("delta0, M and eps must be positive")
    if T is not None:
        if beta is None:
            beta = delta0**2 / 4
        bound = min(delta0**2 / (2 * M**2), 1.0, beta * T / (4 * M))
        if not eps < bound:
            raise ParameterError(f"eps={eps} violates the time-horizon bound {bound:.6g}")
    if patch.m == 0:
        return _one_dim_subdomain(patch, delta0, M, eps, samples)
    rho_star, r = lemma_radius(patch, delta0, M, samples)
    if not eps < r:
        raise InfeasibleGeometryError(f"eps={eps} must be below r={r:.6g}", r)
    lo, hi = 0.0, rho_star
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        sub = Subdomain(patch, mid, Bump.scaled(mid, patch.m, delta0 / M), samples)
        if sub.diam < eps:
            lo = mid
        else:
            hi = mid
    rho1 = lo
    if rho1 <= min_rho or rho1 <= 0:
        raise ResolutionError(f"rho1={rho1:.3g} collapsed below the resolution {min_rho:.3g}")
    bump = Bump.scaled(rho1, patch.m, delta0 / M)
    lo1, up2 = worst_case_margins(patch, bump, delta0, M, samples)
    if not (lo1 > delta0 / 2 and up2 <= -delta0 / 4):
        raise InfeasibleGeometryError("flux margins fail after shrinking; refine samples", r)
    g_norm = _difference_c2_norm(patch, bump, samples)
    consts = {
        "r": r,
        "rho_star": rho_star,
        "worst_gamma1": lo1,
        "worst_gamma2": up2,
        "c2_norm_bump": bump.c2_norm(),
        "c2_norm_lower_graph": g_norm,
        "normal_lipschitz_C": 2 * patch.m * g_norm,
    }
    return Subdomain(patch, rho1, bump, samples, consts)


def _difference_c2_norm(patch, bump, samples):
    xp = ball_samples(patch.m, bump.rho1, samples)
    return float(max(
        np.abs(patch.ell(xp) - bump.value(xp)).max(),
        np.abs(patch.grad(xp) - bump.grad(xp)).max(),
        np.abs(patch.hess(xp) - bump.hess(xp)).max(),
    ))


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryClassification:
    """Outflow (``flux >= 0`` strictly positive here) and inflow samples.

    A node with zero flux goes to ``gamma_minus``.  ``margin_plus`` is the
    smallest flux over the observed sheet, ``margin_minus`` the largest over
    the cut sheet.
    """

    samples: BoundarySamples
    flux: Array
    plus: Array
    margin_plus: float
    margin_minus: float

    @property
    def gamma_plus(self) -> BoundarySamples:
        return self.samples.select(self.plus)

    @property
    def gamma_minus(self) -> BoundarySamples:
        return self.samples.select(~self.plus)

    @property
    def flux_plus(self) -> Array:
        return self.flux[self.plus]

    @property
    def flux_minus(self) -> Array:
        return self.flux[~self.plus]


def classify_boundary(region, H, samples: int = 65, grid=None) -> BoundaryClassification:
    """Split boundary samples of ``region`` by the sign of ``H.nu``."""
    if samples < 10:
        raise ParameterError("need at least 10 samples per sheet")
    bs = region.boundary_samples(samples, grid=grid) if isinstance(region, BoxRegion) else region.boundary_samples()
    values = H.at(bs.points)
    if not np.all(np.isfinite(values)):
        raise DomainError("H is not evaluable at every boundary sample")
    flux = np.sum(values * bs.normals, axis=1)
    plus = flux > 0
    g1 = bs.sheet == "gamma1"
    g2 = ~g1
    mp = float(flux[g1].min()) if g1.any() else float("nan")
    mm = float(flux[g2].max()) if g2.any() else float("nan")
    return BoundaryClassification(bs, flux, plus, mp, mm)
