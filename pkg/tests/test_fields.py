import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transportlab.errors import ArityError, DomainError
from transportlab.fields import (
    Grid,
    ScalarField,
    VectorField,
    check_admissible,
    check_initial_family,
    from_csv,
    grad,
    interpolate,
    jacobian_values,
    l2_norm,
    pack_block,
    quadrature_weights,
    to_csv,
    unpack_block,
)
from transportlab.geometry import BoxRegion


@pytest.fixture
def g2():
    return Grid([0.0, 0.0], [1.0, 1.0], (33, 33))


def test_grid_points_order():
    g = Grid([0.0, 0.0], [1.0, 2.0], (3, 2))
    pts = g.points()
    assert pts.shape == (6, 2)
    assert np.allclose(pts[1], [0.0, 2.0])


def test_grid_rejects_degenerate_axis():
    with pytest.raises(DomainError):
        Grid([0.0], [1.0], (1,))


def test_constant_field_admissible(g2):
    rep = check_admissible(VectorField.constant(g2, [1.0, 0.0]), 0.5, 2.0, [0.5, 0.5], [1.0, 0.0])
    assert rep.admissible
    assert rep.flux_at_x0 == pytest.approx(1.0)
    assert rep.min_modulus == pytest.approx(1.0)
    assert rep.c1_norm == pytest.approx(1.0)


def test_small_modulus_rejected(g2):
    rep = check_admissible(VectorField.constant(g2, [0.3, 0.0]), 0.5, 2.0, [0.5, 0.5], [1.0, 0.0])
    assert not rep.admissible
    assert rep.min_modulus == pytest.approx(0.3)


def test_c1_norm_of_oscillating_field():
    g = Grid([0.0, 0.0], [1.0, 1.0], (1001, 3))
    H = VectorField.from_function(g, lambda x: np.stack([1 + 0.4 * np.sin(5 * x[:, 0]), 0 * x[:, 0]], axis=1))
    jac = jacobian_values(H)
    assert np.abs(jac[..., 0, 0]).max() == pytest.approx(2.0, rel=1e-4)
    rep = check_admissible(H, 0.5, 1.0, [0.5, 0.5], [1.0, 0.0])
    # sum convention: sup|h_1| + sup|d_1 h_1| = 1.4 + 2
    assert rep.c1_norm == pytest.approx(3.4, rel=1e-4)
    assert not rep.admissible


def test_identity_family(g2):
    fam = [ScalarField.from_function(g2, lambda x, k=k: x[:, k]) for k in range(2)]
    chk = check_initial_family(fam)
    assert chk.min_abs_det == pytest.approx(1.0)
    assert chk.c0 == pytest.approx(1.0)


def test_dependent_family(g2):
    a = ScalarField.from_function(g2, lambda x: x[:, 0])
    assert check_initial_family([a, a]).min_abs_det == pytest.approx(0.0)


def test_curved_family_has_unit_det(g2):
    fam = [ScalarField.from_function(g2, lambda x: x[:, 0] + 0.1 * x[:, 1] ** 2),
           ScalarField.from_function(g2, lambda x: x[:, 1])]
    assert check_initial_family(fam).min_abs_det == pytest.approx(1.0, abs=1e-12)


def test_family_arity(g2):
    with pytest.raises(ArityError):
        check_initial_family([ScalarField.constant(g2, 1.0)])


def test_family_permutation_invariance(g2):
    fam = [ScalarField.from_function(g2, lambda x: x[:, 0] + 0.3 * x[:, 1] ** 2),
           ScalarField.from_function(g2, lambda x: x[:, 1] + np.sin(x[:, 0]))]
    assert check_initial_family(fam).min_abs_det == pytest.approx(check_initial_family(fam[::-1]).min_abs_det)


def test_grad_of_square():
    g = Grid([0.0], [1.0], (65,))
    d = grad(ScalarField.from_function(g, lambda x: x[:, 0] ** 2)).values[..., 0]
    assert d[32] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(d, 2 * g.axis(0), atol=1e-12)


def test_grad_of_constant(g2):
    assert np.allclose(grad(ScalarField.constant(g2, 3.0)).values, 0.0)


def test_grad_of_sine_taylor_remainder():
    h = 1 / 32
    g = Grid([-0.5], [0.5], (33,))
    d = grad(ScalarField.from_function(g, lambda x: np.sin(x[:, 0]))).values[16, 0]
    assert abs(d - 1.0) <= h**2 / 6 * (1 + 1e-6)


def test_grad_linearity(g2):
    a = ScalarField.from_function(g2, lambda x: np.sin(3 * x[:, 0]) * x[:, 1])
    b = ScalarField.from_function(g2, lambda x: np.exp(x[:, 0] - x[:, 1]))
    lhs = grad(a * 2.5 + b).values
    rhs = 2.5 * grad(a).values + grad(b).values
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_grad_refinement():
    def err(n):
        g = Grid([0.0, 0.0], [1.0, 1.0], (n, n))
        d = grad(ScalarField.from_function(g, lambda x: np.sin(2 * x[:, 0]) * np.cos(x[:, 1])))
        exact = 2 * np.cos(2 * g.points()[:, 0]) * np.cos(g.points()[:, 1])
        return np.abs(d.values[..., 0].ravel() - exact).max()

    assert math.log2(err(17) / err(33)) > 1.8


def test_l2_norm_examples():
    g = Grid([0.0, 0.0], [0.2, 0.2], (21, 21))
    D = BoxRegion([0.0, 0.0], [0.1, 0.1])
    assert l2_norm(ScalarField.constant(g, 1.0), D) == pytest.approx(0.1)
    assert l2_norm(ScalarField.constant(g, 0.0), D) == 0.0
    g1 = Grid([0.0], [1.0], (129,))
    val = l2_norm(ScalarField.from_function(g1, lambda x: x[:, 0]), BoxRegion([0.0], [1.0]))
    assert val == pytest.approx(1 / math.sqrt(3), abs=1e-4)


def test_quadrature_matches_trapezoid_on_aligned_box():
    g = Grid([0.0, 0.0], [1.0, 1.0], (5, 5))
    w = quadrature_weights(g, BoxRegion([0.0, 0.0], [0.5, 1.0]))
    assert w.sum() == pytest.approx(0.5)
    assert w[0, 0] == pytest.approx(0.25**2 / 4)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_l2_homogeneity_and_triangle(alpha, seed):
    g = Grid([0.0, 0.0], [1.0, 1.0], (9, 9))
    rng = np.random.default_rng(seed)
    f = ScalarField(g, rng.normal(size=g.shape))
    h = ScalarField(g, rng.normal(size=g.shape))
    assert l2_norm(f * alpha) == pytest.approx(abs(alpha) * l2_norm(f), rel=1e-12, abs=1e-14)
    assert l2_norm(f + h) <= l2_norm(f) + l2_norm(h) + 1e-12


def test_interpolate_bilinear_exact(g2):
    vals = (2 * g2.points()[:, 0] - g2.points()[:, 1] + 0.5).reshape(g2.shape)
    pts = np.array([[0.31, 0.77], [0.999, 0.001]])
    assert np.allclose(interpolate(g2, vals, pts), 2 * pts[:, 0] - pts[:, 1] + 0.5)


def test_interpolate_outside_box(g2):
    with pytest.raises(DomainError):
        interpolate(g2, np.zeros(g2.shape), np.array([[1.5, 0.5]]))


def test_csv_round_trip(g2):
    f = ScalarField.from_function(g2, lambda x: np.cos(x[:, 0]) + x[:, 1])
    back = from_csv(to_csv(f), 2)
    assert np.array_equal(back.values, f.values)
    H = VectorField.from_function(g2, lambda x: np.stack([x[:, 1], -x[:, 0]], axis=1))
    assert np.array_equal(from_csv(to_csv(H), 2).values, H.values)


def test_block_round_trip(g2):
    vals = np.random.default_rng(0).normal(size=(3,) + g2.shape)
    mask = vals > 0
    grid, v, t, m = unpack_block(pack_block(g2, vals, np.array([0.0, 0.5, 1.0]), mask))
    assert grid.shape == g2.shape
    assert np.array_equal(v, vals) and np.array_equal(m, mask) and np.allclose(t, [0, 0.5, 1])


def test_block_magic_checked():
    with pytest.raises(DomainError):
        unpack_block(b"XXXX" + bytes(32))


def test_arithmetic_keeps_analytic_form(g2):
    a = VectorField.constant(g2, [1.0, 0.0])
    b = VectorField.from_function(g2, lambda x: np.stack([x[:, 1], x[:, 0]], 1),
                                  lambda x: np.tile([[0.0, 1.0], [1.0, 0.0]], (len(x), 1, 1)))
    c = a + b * 0.5
    pt = np.array([[0.123, 0.456]])
    assert np.allclose(c.at(pt), [[1 + 0.228, 0.0615]])
    assert np.allclose(c.jac(pt), [[[0, 0.5], [0.5, 0]]])
    assert np.allclose((c - a).values, 0.5 * b.values)
