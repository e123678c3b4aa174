import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma as gamma_fn

from fracstep.kernel import (PI_A, AlikhanovWeights, RecurrenceSpec, SchemeParams,
                             a_coeff, a_coeff_quadrature, apply_discrete_derivative,
                             assemble_weights, audit_properties, b_coeff,
                             b_coeff_quadrature, power_difference,
                             recurrence_to_csv, solve_scalar_recurrence,
                             weight_rows, weights_to_csv)
from fracstep.mesh import TemporalMesh, build_graded_mesh


def uniform(T, N):
    return build_graded_mesh(T, N, 1.0)


def test_scheme_params_defaults_and_bounds():
    p = SchemeParams(0.5)
    assert p.sigma == 0.75 and p.sigma_is_canonical
    assert not SchemeParams(0.5, 0.9).sigma_is_canonical
    with pytest.raises(ValueError):
        SchemeParams(1.2)
    with pytest.raises(ValueError):
        SchemeParams(0.5, 0.3)


def test_star_points_interleave():
    mesh = build_graded_mesh(1.0, 16, 2.0)
    p = SchemeParams(0.4)
    ts = p.star_points(mesh)
    assert np.all(ts > mesh.points[:-1])
    assert np.all(ts <= mesh.points[1:])


def test_power_difference_stable_tiny_gap():
    # first-order expansion p * gap * x^{p-1} dominates for tiny gaps
    x, gap, p = 0.8, 1e-12, 0.5
    expected = p * gap * x ** (p - 1.0)
    assert power_difference(x, gap, p) == pytest.approx(expected, rel=1e-10)
    # full-gap edge: x^p - 0^p
    assert power_difference(2.0, 2.0, 0.5) == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_diagonal_a_coefficient_value():
    # unit steps, sigma = 0.75, alpha = 0.5: a_{k,k} = 0.75^0.5 / Gamma(1.5)
    mesh = uniform(8.0, 8)
    p = SchemeParams(0.5, 0.75)
    val = a_coeff(3, 3, mesh, p)
    assert val == pytest.approx(0.75 ** 0.5 / gamma_fn(1.5), rel=1e-12)
    assert val == pytest.approx(0.9772050238058398, rel=1e-6)


def test_diagonal_a_vanishes_with_step():
    points = [0.0, 1.0, 1.0 + 1e-10]
    mesh = TemporalMesh.from_points(points)
    val = a_coeff(1, 1, mesh, SchemeParams(0.5, 0.75))
    assert 0.0 < val < 1e-4


def test_a_b_closed_vs_quadrature_sampled():
    for alpha, r in [(0.3, 1.0), (0.5, 2.0), (0.7, 3.0)]:
        mesh = build_graded_mesh(1.0, 16, r)
        p = SchemeParams(alpha)
        for k in (1, 5, 15):
            for j in range(k):
                assert a_coeff(k, j, mesh, p) == pytest.approx(
                    a_coeff_quadrature(k, j, mesh, p), rel=1e-12)
                assert b_coeff(k, j, mesh, p) == pytest.approx(
                    b_coeff_quadrature(k, j, mesh, p), rel=1e-12)


def test_b_positive_and_flattening():
    mesh = uniform(64.0, 64)
    p = SchemeParams(0.5)
    vals = [b_coeff(k, 0, mesh, p) for k in (2, 8, 32)]
    assert all(v > 0.0 for v in vals)
    assert vals[2] < vals[1] < vals[0]  # kernel flattens far from the cell
    assert vals[2] < 1e-2


def test_coefficient_index_validation():
    mesh = uniform(1.0, 4)
    p = SchemeParams(0.5)
    with pytest.raises(ValueError):
        a_coeff(2, 3, mesh, p)
    with pytest.raises(ValueError):
        b_coeff(0, 0, mesh, p)
    with pytest.raises(ValueError):
        assemble_weights(5, mesh, p)
    with pytest.raises(ValueError):
        assemble_weights(1, mesh, p, method="magic")


def test_first_row_single_weight():
    mesh = build_graded_mesh(1.0, 8, 2.0)
    alpha = 0.4
    p = SchemeParams(alpha)
    row = assemble_weights(1, mesh, p)
    tau1 = mesh.steps[0]
    expected = p.sigma ** (1 - alpha) * tau1 ** (-alpha) / gamma_fn(2 - alpha)
    assert row.g == pytest.approx([expected], rel=1e-14)


def test_constant_history_annihilated():
    mesh = build_graded_mesh(1.0, 12, 2.0)
    row = assemble_weights(12, mesh, SchemeParams(0.3))
    assert apply_discrete_derivative(row, np.full(13, 5.0)) == 0.0


def test_quadrature_row_matches_closed_row():
    mesh = build_graded_mesh(1.0, 24, 3.0)
    p = SchemeParams(0.3)
    for n in (1, 2, 9, 24):
        closed = assemble_weights(n, mesh, p)
        ref = assemble_weights(n, mesh, p, method="quadrature")
        assert closed.method == "closed-form" and ref.method == "quadrature"
        assert closed.g == pytest.approx(ref.g, rel=1e-11)


def test_linear_exactness():
    for alpha, r in [(0.3, 2.0), (0.7, 1.0)]:
        mesh = build_graded_mesh(1.0, 32, r)
        p = SchemeParams(alpha)
        ts = p.star_points(mesh)
        for n in (1, 7, 32):
            row = assemble_weights(n, mesh, p)
            got = apply_discrete_derivative(row, mesh.points[: n + 1])
            want = ts[n - 1] ** (1 - alpha) / gamma_fn(2 - alpha)
            assert got == pytest.approx(want, abs=1e-12)


@given(alpha=st.floats(0.05, 0.95),
       c=st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)),
       r=st.floats(1.0, 4.0))
@settings(max_examples=25, deadline=None)
def test_quadratic_exactness_property(alpha, c, r):
    c0, c1, c2 = c
    mesh = build_graded_mesh(1.0, 24, r)
    p = SchemeParams(alpha)
    ts = p.star_points(mesh)
    u = c0 + c1 * mesh.points + c2 * mesh.points ** 2
    want = (c1 * ts ** (1 - alpha) / gamma_fn(2 - alpha)
            + 2 * c2 * ts ** (2 - alpha) / gamma_fn(3 - alpha))
    for n in (1, 11, 24):
        row = assemble_weights(n, mesh, p)
        got = apply_discrete_derivative(row, u[: n + 1])
        assert abs(got - want[n - 1]) <= 1e-10 * (1.0 + abs(c2))


def test_history_length_checked():
    mesh = uniform(1.0, 4)
    row = assemble_weights(3, mesh, SchemeParams(0.5))
    with pytest.raises(ValueError):
        apply_discrete_derivative(row, np.zeros(3))


def test_nodewise_application():
    mesh = build_graded_mesh(1.0, 6, 2.0)
    row = assemble_weights(6, mesh, SchemeParams(0.5))
    hist = np.outer(mesh.points, np.array([1.0, 2.0, -1.0]))  # linear per node
    out = apply_discrete_derivative(row, hist)
    single = apply_discrete_derivative(row, mesh.points)
    assert out == pytest.approx(single * np.array([1.0, 2.0, -1.0]), rel=1e-13)


def test_expanded_coefficients_sign_structure():
    mesh = build_graded_mesh(1.0, 20, 2.0)
    p = SchemeParams(0.3)
    for n in (2, 10, 20):
        pc = assemble_weights(n, mesh, p).p_coefficients()
        assert pc[-1] > 0.0
        assert np.all(pc[:-1] < 0.0)
        assert abs(pc.sum()) <= 1e-12 * pc[-1]


@pytest.mark.parametrize("alpha,r,N", [(0.5, 2.0, 128), (0.3, 1.0, 64)])
def test_audit_passes_on_graded(alpha, r, N):
    report = audit_properties(build_graded_mesh(1.0, N, r), SchemeParams(alpha))
    assert report.hypothesis_ok and report.all_passed
    assert report.p3.worst_margin > 0.0
    assert report.p4.passed


def test_audit_gates_on_ratio_hypothesis():
    # shrinking steps break rho_j >= 0.618 before any weight is formed
    mesh = TemporalMesh.from_points([0.0, 0.4, 0.6, 0.7, 0.75])
    report = audit_properties(mesh, SchemeParams(0.5))
    assert not report.hypothesis_ok
    assert not report.p1.evaluated and not report.p2.evaluated and not report.p3.evaluated
    assert report.p4.evaluated and not report.p4.passed
    assert not report.all_passed


def test_audit_gates_on_noncanonical_sigma():
    report = audit_properties(build_graded_mesh(1.0, 16, 2.0), SchemeParams(0.5, 0.9))
    assert not report.hypothesis_ok
    assert not report.p2.evaluated


def test_recurrence_zero_rhs_stays_zero():
    mesh = build_graded_mesh(1.0, 32, 2.0)
    spec = RecurrenceSpec(mesh, SchemeParams(0.5), gamma=-0.5)
    res = solve_scalar_recurrence(spec, rhs=np.zeros(32))
    assert np.all(res.v == 0.0)


def test_recurrence_rejects_gamma_zero():
    mesh = build_graded_mesh(1.0, 8, 2.0)
    with pytest.raises(ValueError):
        RecurrenceSpec(mesh, SchemeParams(0.5), gamma=0.0)


def test_recurrence_rejects_negative_lambda():
    mesh = build_graded_mesh(1.0, 8, 2.0)
    with pytest.raises(ValueError):
        RecurrenceSpec(mesh, SchemeParams(0.5), gamma=-0.5, lambda1=-1.0)


def test_recurrence_step_size_condition():
    # lambda1 tau^alpha beyond 1/(2 Gamma(2-alpha)) must be refused
    mesh = build_graded_mesh(1.0, 4, 1.0)
    spec = RecurrenceSpec(mesh, SchemeParams(0.5), gamma=-0.5, lambda1=50.0)
    with pytest.raises(ValueError, match="step-size"):
        solve_scalar_recurrence(spec)


def test_recurrence_nonnegative_march():
    mesh = build_graded_mesh(1.0, 128, 2.0)
    spec = RecurrenceSpec(mesh, SchemeParams(0.5), gamma=-0.5,
                          lambda1=0.5, lambda2=0.5)
    res = solve_scalar_recurrence(spec)
    assert np.all(res.v >= 0.0)
    assert res.constant == pytest.approx(res.ratios.max())
    assert spec.admissible


def test_recurrence_constant_roughly_stable():
    p = SchemeParams(0.5)
    consts = []
    for N in (32, 64, 128):
        mesh = build_graded_mesh(1.0, N, 2.0)
        spec = RecurrenceSpec(mesh, p, gamma=p.alpha - 1.0)
        consts.append(solve_scalar_recurrence(spec).constant)
    for c0, c1 in zip(consts, consts[1:]):
        assert 0.5 <= c1 / c0 <= 2.0


def test_csv_dumps(tmp_path):
    mesh = build_graded_mesh(1.0, 6, 2.0)
    p = SchemeParams(0.5)
    rows = weight_rows(mesh, p)
    wpath = tmp_path / "weights.csv"
    weights_to_csv(rows, wpath)
    lines = wpath.read_text().strip().splitlines()
    assert lines[0] == "n,j,g,a,b,method"
    assert len(lines) == 1 + sum(r.n for r in rows)

    res = solve_scalar_recurrence(RecurrenceSpec(mesh, p, gamma=-0.5))
    rpath = tmp_path / "rec.csv"
    recurrence_to_csv(res, rpath)
    lines = rpath.read_text().strip().splitlines()
    assert lines[0] == "j,t_j,v_j,V_j,ratio"
    assert len(lines) == 1 + mesh.N
