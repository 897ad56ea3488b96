import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transportlab.errors import DomainError, InfeasibleGeometryError, ParameterError
from transportlab.fields import Grid, VectorField, random_admissible_field
from transportlab.geometry import (
    BoundaryGraph,
    BoxRegion,
    Bump,
    classify_boundary,
    construct_subdomain,
    eval_boundary,
    lemma_radius,
)


def test_flat_normal_is_vertical():
    _, nu = eval_boundary(BoundaryGraph.flat(2), np.zeros((1, 1)))
    assert np.allclose(nu, [[0.0, 1.0]])


def test_linear_graph_normal():
    patch = BoundaryGraph.linear([1.0])
    _, nu = eval_boundary(patch, np.array([[0.3], [-0.7]]))
    assert np.allclose(nu, np.tile([-1.0, 1.0], (2, 1)) / math.sqrt(2))


def test_quadratic_normal_against_tangent():
    patch = BoundaryGraph.quadratic([1.0])
    x, nu = eval_boundary(patch, np.array([[0.5]]))
    assert np.allclose(nu, [[-1.0, 1.0]] / np.sqrt(2))
    h = 1e-5
    xa, _ = eval_boundary(patch, np.array([[0.5 - h]]))
    xb, _ = eval_boundary(patch, np.array([[0.5 + h]]))
    tangent = (xb - xa)[0]
    assert abs(tangent @ nu[0]) < 1e-9


def test_eval_boundary_outside_patch():
    with pytest.raises(DomainError):
        eval_boundary(BoundaryGraph.flat(2, rho0=0.5), np.array([[0.6]]))


def test_graph_derivatives_match_differences():
    patch = BoundaryGraph.sinusoidal(0.1, 2.0, dim=2)
    x = np.linspace(-0.8, 0.8, 17).reshape(-1, 1)
    h = 1e-4
    fd = (patch.ell(x + h) - patch.ell(x - h)) / (2 * h)
    assert np.allclose(fd, patch.grad(x)[:, 0], atol=1e-7)
    fd2 = (patch.grad(x + h)[:, 0] - patch.grad(x - h)[:, 0]) / (2 * h)
    assert np.allclose(fd2, patch.hess(x)[:, 0, 0], atol=1e-6)
    assert patch.ell(np.zeros((1, 1)))[0] == 0.0


def test_bump_boundary_behaviour():
    b = Bump.scaled(0.2, 1, 0.5)
    edge = np.array([[0.2], [-0.2]])
    assert np.allclose(b.value(edge), 0)
    assert np.allclose(b.hess(edge), 0)
    assert np.all(b.value(np.array([[0.0], [0.1]])) > 0)
    assert b.c2_norm() <= 0.5 + 1e-12


def test_flat_subdomain():
    sub = construct_subdomain(BoundaryGraph.flat(2), 1.0, 2.0, 0.1)
    assert sub.diam < 0.1
    assert np.allclose(sub.gamma1.points[:, 1], 0.0)
    assert sub.bump.c2_norm() <= 0.5 + 1e-12
    assert sub.contains(np.array([[0.0, -1e-4]]))[0]


def test_infeasible_diameter():
    _, r = lemma_radius(BoundaryGraph.flat(2), 1.0, 2.0)
    with pytest.raises(InfeasibleGeometryError) as exc:
        construct_subdomain(BoundaryGraph.flat(2), 1.0, 2.0, 10 * r)
    assert exc.value.r == pytest.approx(r)


def test_time_horizon_bound_is_enforced():
    with pytest.raises(ParameterError):
        construct_subdomain(BoundaryGraph.flat(2), 1.0, 2.0, 0.1, T=1.0, beta=0.25)


@pytest.fixture(scope="module")
def sinusoidal_subdomain():
    return construct_subdomain(BoundaryGraph.sinusoidal(0.1, 1.0, dim=2), 1.0, 2.0, 0.05)


def test_unit_normals_and_sheet_matching(sinusoidal_subdomain):
    sub = sinusoidal_subdomain
    for sheet in (sub.gamma1, sub.gamma2):
        assert np.allclose(np.linalg.norm(sheet.normals, axis=1), 1.0, atol=1e-12)
    xp = np.array([[sub.rho1], [-sub.rho1]])
    _, n1 = eval_boundary(sub.base, xp)
    _, n2 = eval_boundary(sub.base, xp, lower=True, bump=sub.bump)
    assert np.allclose(n2, -n1, atol=1e-10)


def test_diameter_bound(sinusoidal_subdomain):
    sub = sinusoidal_subdomain
    assert sub.diam < 0.05
    # the width is 2 rho1, so the diameter is at least that; the bump height adds at most rho1
    assert sub.diam <= 2 * sub.rho1 * math.sqrt(1 + 0.25) + 1e-12


def test_normal_lipschitz_bound(sinusoidal_subdomain):
    sub = sinusoidal_subdomain
    C = sub.constants["normal_lipschitz_C"]
    nu = sub.gamma2.normals
    spread = np.max(np.linalg.norm(nu[:, None, :] - nu[None, :, :], axis=-1))
    assert spread <= C * 2 * sub.rho1 + 1e-12


def test_classification_flat_sheet():
    sub = construct_subdomain(BoundaryGraph.flat(2), 1.0, 2.0, 0.1)
    g = Grid([-0.1, -0.1], [0.1, 0.05], (9, 9))
    up = classify_boundary(sub, VectorField.constant(g, [0.0, 1.0]))
    g1 = up.samples.sheet == "gamma1"
    assert np.all(up.plus[g1]) and np.allclose(up.flux[g1], 1.0)
    down = classify_boundary(sub, VectorField.constant(g, [0.0, -1.0]))
    assert not np.any(down.plus[g1])
    assert len(up.gamma_plus) + len(up.gamma_minus) == len(up.samples)


def test_classification_ties_go_to_minus():
    box = BoxRegion([0.0, 0.0], [1.0, 1.0])
    g = Grid([0.0, 0.0], [1.0, 1.0], (5, 5))
    cls = classify_boundary(box, VectorField.constant(g, [1.0, 0.0]))
    tangential = np.isclose(cls.flux, 0.0)
    assert tangential.any() and not np.any(cls.plus[tangential])


def test_classification_reproduces_normals(sinusoidal_subdomain):
    sub = sinusoidal_subdomain
    g = Grid([-0.05, -0.05], [0.05, 0.05], (9, 9))
    cls = classify_boundary(sub, VectorField.constant(g, [0.0, 1.0]))
    both = np.concatenate([cls.gamma_plus.normals, cls.gamma_minus.normals])
    ref = np.concatenate([sub.gamma1.normals, sub.gamma2.normals])
    assert sorted(map(tuple, np.round(both, 12))) == sorted(map(tuple, np.round(ref, 12)))


def test_classification_needs_samples():
    box = BoxRegion([0.0, 0.0], [1.0, 1.0])
    g = Grid([0.0, 0.0], [1.0, 1.0], (5, 5))
    with pytest.raises(ParameterError):
        classify_boundary(box, VectorField.constant(g, [1.0, 0.0]), samples=5)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_fields_meet_margins(sinusoidal_subdomain, seed):
    sub = sinusoidal_subdomain
    lo, hi = sub.bounds()
    g = Grid(lo - 0.01, hi + 0.01, (9, 9))
    rng = np.random.default_rng(seed)
    H = random_admissible_field(rng, g, 1.0, 2.0, [0.0, 1.0], x0=np.zeros(2))
    cls = classify_boundary(sub, H)
    assert cls.margin_plus > 0.5
    assert cls.margin_minus <= -0.25


def test_one_dimensional_subdomain():
    patch = BoundaryGraph.flat(1)
    sub = construct_subdomain(patch, 1.0, 2.0, 0.1)
    assert sub.diam == pytest.approx(sub.bump.c)
    assert sub.diam < 0.1


def test_subdomain_serialisation(sinusoidal_subdomain):
    sub = sinusoidal_subdomain
    text = sub.to_csv()
    header = text.splitlines()[0].split(",")
    assert header == ["sheet", "x1", "x2", "nu1", "nu2", "flux"]
    assert '"rho1"' in sub.to_json()
