import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transportlab.errors import (
    DegenerateInitialDatumError,
    IllPosedFamilyError,
    InsufficientRangeError,
    InvalidInputError,
    InvalidProfileError,
    ParameterError,
    UnsupportedCaseError,
)
from transportlab.fields import Grid, ScalarField, VectorField
from transportlab.geometry import BoxRegion
from transportlab.inverse import (
    MeasurementSet,
    SweepProblem,
    case_experiment,
    energy_check,
    lipschitz_sides,
    nonuniqueness_demo,
    random_instance,
    reconstruct_H,
    reconstruct_p,
    s_balance,
    solve_linearized,
    solve_rate_problem,
    stability_sweep,
    synthesize,
)

D = BoxRegion([-0.2, -0.2], [0.2, 0.2])


@pytest.fixture(scope="module")
def box():
    return Grid.from_spacing([-0.5, -0.5], [0.5, 0.5], 1 / 32)


def linear_family(g):
    return [ScalarField.from_function(g, lambda x, k=k: x[:, k]) for k in range(2)]


def test_reconstruct_constant_field_exactly(box):
    H = VectorField.constant(box, [1.0, 0.5])
    meas, _ = synthesize(H, None, linear_family(box), 4 / 64, 1 / 64, region=D)
    res = reconstruct_H(meas, None, D, truth=H)
    assert res.error_l2 < 1e-10
    assert res.conditioning == pytest.approx(1.0)


def test_reconstruct_p_constant(box):
    H = VectorField.constant(box, [1.0, 0.0])
    p = ScalarField.constant(box, 0.7)
    a = ScalarField.from_function(box, lambda x: 2 + np.sin(x[:, 0]))
    meas, _ = synthesize(H, p, [a], 4 / 128, 1 / 128, region=D)
    res = reconstruct_p(meas, H, D, truth=p)
    assert res.relative_error < 1e-3
    assert res.conditioning > 1.0


def test_ill_posed_family_names_node(box):
    a = ScalarField.from_function(box, lambda x: x[:, 0])
    H = VectorField.constant(box, [1.0, 0.0])
    meas, _ = synthesize(H, None, [a, a], 4 / 64, 1 / 64, region=D)
    with pytest.raises(IllPosedFamilyError) as exc:
        reconstruct_H(meas, None, D)
    assert exc.value.node is not None


def test_degenerate_initial_datum(box):
    H = VectorField.constant(box, [1.0, 0.0])
    a = ScalarField.from_function(box, lambda x: x[:, 0])
    meas, _ = synthesize(H, None, [a], 4 / 64, 1 / 64, region=D)
    with pytest.raises(DegenerateInitialDatumError):
        reconstruct_p(meas, H, D)


@settings(max_examples=20, deadline=None)
@given(eps=st.floats(1e-6, 1e-1), seed=st.integers(0, 1000))
def test_noise_enters_linearly(eps, seed):
    g = Grid([0.0, 0.0], [1.0, 1.0], (9, 9))
    fam = linear_family(g)
    xi = np.random.default_rng(seed).uniform(-1, 1, size=(2,) + g.shape)
    clean = [ScalarField(g, np.full(g.shape, -1.0)), ScalarField(g, np.full(g.shape, -0.5))]
    noisy = [ScalarField(g, c.values + eps * x) for c, x in zip(clean, xi)]
    base = reconstruct_H(MeasurementSet(fam, [], clean), None).estimate.values
    pert = reconstruct_H(MeasurementSet(fam, [], noisy), None).estimate.values
    assert np.allclose(base, [1.0, 0.5])
    # unit Jacobian family: the estimate moves by exactly the noise
    assert np.allclose(pert - base, -eps * np.moveaxis(xi, 0, -1), atol=1e-12)


def test_linearized_zero_source(box):
    H = VectorField.constant(box, [1.0, 0.3])
    y = solve_linearized(H, None, lambda x, t: np.ones(len(x)), ScalarField.constant(box, 0.0), 0.25, 1 / 64)
    assert np.all(y.values == 0.0) and y.determined.all()


def test_linearized_one_dimensional_closed_form():
    g = Grid([0.0], [1.0], (65,))
    y = solve_linearized(VectorField.constant(g, [1.0]), None, lambda x, t: np.ones(len(x)),
                         ScalarField.constant(g, 1.0), 0.5, 1 / 64)
    x = g.axis(0)
    for k, t in enumerate(y.times):
        assert np.allclose(y.values[k], np.minimum(t, x), atol=1e-12)


def test_rate_problem_matches_time_derivative(box):
    inst = random_instance(np.random.default_rng(3))
    g, H, p1, f, D_, dt = inst.discretize(1 / 32)
    y = solve_linearized(H, p1, inst.R, f, inst.T, dt)
    y1 = solve_rate_problem(H, p1, inst.R, inst.Rt, f, inst.T, dt)
    mask = D_.contains(g.points()).reshape(g.shape)
    yt = y.time_derivative().values
    k = len(y.times) // 2
    assert np.abs(yt[k][mask] - y1.values[k][mask]).max() < 5e-2 * np.abs(y1.values[k][mask]).max()


def test_s_balance_examples():
    r = s_balance(math.e, 1.0, 1.0, 1.0, 2.0)
    assert r.s_star == pytest.approx(1.0)
    assert r.theta == pytest.approx(0.5)
    r = s_balance(100.0, 1.0, 1.0, 1.0, 2.0)
    assert r.s_star == pytest.approx(4.60517, rel=1e-5)
    assert r.decay == pytest.approx(r.growth)
    assert r.bound == pytest.approx(2 * 100.0 ** (4 / 4) * 1.0)
    small = s_balance(1.0, 2.0, 1.0, 1.0, 2.0)
    assert small.branch == 2 and small.s_star == 0.0


@settings(max_examples=40, deadline=None)
@given(M0=st.floats(1.5, 1e3), ratio=st.floats(1e-4, 0.5), C=st.floats(0.1, 10), bT=st.floats(0.1, 4))
def test_s_balance_is_optimal(M0, ratio, C, bT):
    d = M0 * ratio
    r = s_balance(M0, d, C, bT, 1.0)

    def worst(s):
        return max(math.exp(-bT * s / 2) * M0**2, math.exp(C * s) * d**2)

    best = worst(r.s_star)
    assert best <= worst(0.9 * r.s_star) * (1 + 1e-12)
    assert best <= worst(1.1 * r.s_star) * (1 + 1e-12)


def test_s_balance_rejects_nonpositive():
    with pytest.raises(ParameterError):
        s_balance(1.0, 0.0, 1.0, 1.0, 1.0)


def energy_setup(q=0.0, fval=1.0, p=0.5):
    g = Grid.from_spacing([-0.5, -0.5], [0.5, 0.5], 1 / 32)
    H = VectorField.constant(g, [1.0, 0.3])
    p1 = ScalarField.constant(g, p)
    f = ScalarField.constant(g, fval)

    def R(x, t):
        return 1.0 + q * np.broadcast_to(t, len(x))

    def Rt(x, t):
        return np.full(len(x), q)

    y1 = solve_rate_problem(H, p1, R, Rt, f, 0.25, 1 / 64)
    return y1, H, p1, R, Rt, f


def test_energy_zero_data():
    rep = energy_check(*energy_setup(fval=0.0), region=D)
    assert np.all(rep.E == 0.0) and rep.holds


def test_energy_decays_without_source():
    rep = energy_check(*energy_setup(q=0.0), region=D)
    assert rep.holds
    assert rep.nonincreasing(1e-8)


def test_energy_bound_with_source():
    rep = energy_check(*energy_setup(q=0.8), region=D)
    assert rep.holds and rep.residual < 5e-2


def test_energy_rejects_wrong_solution():
    y1, H, p1, R, Rt, f = energy_setup()
    y1.values[:] = np.random.default_rng(0).normal(size=y1.values.shape)
    with pytest.raises(InvalidInputError):
        energy_check(y1, H, p1, R, Rt, f, region=D)


@pytest.fixture(scope="module")
def instance():
    return random_instance(np.random.default_rng(11))


def test_baseline_recovers_source(instance):
    out = case_experiment("baseline", instance, 1 / 32)
    assert out["f_error"] < 1e-2 * out["f_norm"]


def test_prop_ii_reports_slab_error(instance):
    out = case_experiment("PropII", instance, 1 / 32)
    assert out["eps"] == pytest.approx(2 * instance.eps0)
    assert out["y_h1_error"] < 1e-2


@pytest.mark.parametrize("case", ["PropIV", "PropVI"])
def test_lipschitz_constant_is_finite(instance, case):
    out = case_experiment(case, instance, 1 / 32)
    assert 0 < out["lipschitz_constant"] < 1e3


def test_case_ii_unsupported(instance):
    with pytest.raises(UnsupportedCaseError):
        case_experiment("CaseII", instance, 1 / 32)
    with pytest.raises(UnsupportedCaseError):
        case_experiment("PropIX", instance, 1 / 32)


def test_case_v_is_reversed_prop_iv(instance):
    g, H, p1, f, D_, dt = instance.discretize(1 / 32)
    y = solve_linearized(H, p1, instance.R, f, instance.T, dt)
    lhs5, rhs5 = lipschitz_sides(y, f, H, D_, "CaseV")
    lhs4, rhs4 = lipschitz_sides(y.reversed(), f, -H, D_, "PropIV")
    assert lhs5 == pytest.approx(lhs4, rel=1e-10)
    assert rhs5 == pytest.approx(rhs4, rel=1e-10)


def test_nonuniqueness_demo():
    out = nonuniqueness_demo()
    assert out["initial_norm"] == 0.0 and out["x0_norm"] == 0.0
    assert out["final_norm"] > 0.4
    assert out["residual_inf"] <= out["h"]
    assert out["sample_u_0.5_0.8"] == pytest.approx(0.09)


def test_nonuniqueness_invalid_profiles():
    with pytest.raises(InvalidProfileError):
        nonuniqueness_demo(lambda e: np.zeros_like(np.asarray(e, float)))
    with pytest.raises(InvalidProfileError):
        nonuniqueness_demo(lambda e: np.asarray(e, float) ** 2)


def test_sweep_needs_range(box):
    H = VectorField.constant(box, [1.0, 0.5])
    prob = SweepProblem("p", H, ScalarField.constant(box, 0.5), [ScalarField.constant(box, 1.0)], D, 4 / 64,
                        1 / 64, ScalarField.constant(box, 1.0))
    with pytest.raises(InsufficientRangeError):
        stability_sweep(prob, [0.1, 0.11, 0.12])


def test_sweep_p_exponent(box):
    H = VectorField.constant(box, [1.0, 0.5])
    prob = SweepProblem("p", H, ScalarField.constant(box, 0.5), [ScalarField.constant(box, 1.0)], D, 4 / 64,
                        1 / 64, ScalarField.from_function(box, lambda x: 1 + 0.5 * np.sin(x[:, 0])))
    sweep = stability_sweep(prob, [2.0**-k for k in range(1, 7)], held_out=[0.1])
    assert 0 < sweep.theta_hat <= 1
    assert sweep.all_within_bound
    assert sweep.to_csv().splitlines()[0] == "id,tau,d,error,bound,held_out"
