import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from xadm.chart_geometry import DriftField, fibonacci_directions
from xadm.errors import LimitNotResolved, ParameterError
from xadm.level_set_flow import sample_F
from xadm.mass_functionals import sweep_radii, x_adm_mass
from xadm.presets import get_preset
from xadm import theorem_checks as tc


@given(st.floats(-1e3, 1e3), st.floats(0, 1e2))
def test_verdict_invariant(margin, tol):
    v = tc.Verdict.from_margin("x", margin, tol)
    assert v.passed == (margin >= -tol)
    assert v.status == ("pass" if v.passed else "fail")


def test_hypothesis_audit_examples():
    flat = get_preset("euclidean")
    v = tc.hypothesis_audit(flat.chart, flat.drift, 1.0)
    assert v.passed and v.details["min_r_x_k"] == 0
    s = get_preset("schwarzschild")
    v = tc.hypothesis_audit(s.chart, s.drift, 1.0)
    assert v.passed and v.details["h2_spherical_free_declared"] is True


def test_hypothesis_audit_bump_matches_symbolic_minimum():
    inst = get_preset("weighted_conformal", conformal=False, amplitude=0.5, width=1.0)
    v = tc.hypothesis_audit(inst.chart, inst.drift, -2.0)
    xs = sp.symbols("x0:3")
    f = 0.5 * sp.exp(-sum(c**2 for c in xs))
    expr = 2 * sum(sp.diff(f, c, 2) for c in xs) - sp.Rational(1, 2) * sum(sp.diff(f, c) ** 2 for c in xs)
    fn = sp.lambdify(xs, expr, "numpy")
    radii = tc.default_sample_radii(inst.chart)
    pts = (radii[:, None, None] * fibonacci_directions(48)[None]).reshape(-1, 3)
    ref = np.min(fn(*pts.T))
    assert v.details["min_r_x_k"] == pytest.approx(ref, rel=1e-10)
    assert ref < 0 and not v.passed


def test_monotonicity_examples(radial_solution):
    _, flat = radial_solution("euclidean")
    samples, _ = sample_F(flat, np.geomspace(0.2, 200, 40))
    v = tc.monotonicity_check(samples, flat.solver_residual)
    assert v.passed
    _, s = radial_solution("schwarzschild")
    samples, _ = sample_F(s, np.geomspace(0.2, 200, 40))
    v = tc.monotonicity_check(samples, s.solver_residual)
    assert v.passed and v.margin > 0 and v.details["n_samples"] == 40
    with pytest.raises(ParameterError):
        tc.monotonicity_check(samples[:2], s.solver_residual)


def test_negative_control(radial_solution):
    _, u = radial_solution("schwarzschild", m=-1.0)
    samples, _ = sample_F(u, tc.default_t_grid())
    v = tc.monotonicity_check(samples, u.solver_residual)
    assert not v.passed
    assert -v.margin > 10 * v.tolerance


def test_limits(radial_solution):
    for name in ("euclidean", "schwarzschild", "weighted_conformal"):
        _, u = radial_solution(name)
        samples, _ = sample_F(u, tc.default_t_grid())
        v = tc.limit_zero_check(samples, u)
        assert v.passed, name
    _, u = radial_solution("euclidean")
    samples, _ = sample_F(u, [2.0, 3.0, 4.0])
    with pytest.raises(LimitNotResolved):
        tc.limit_zero_check(samples, u)


def test_limit_infinity(radial_solution):
    radii = sweep_radii(10, 1e3)
    inst, u = radial_solution("schwarzschild")
    samples, _ = sample_F(u, tc.default_t_grid())
    m = x_adm_mass(inst.chart, inst.drift, radii)
    v = tc.limit_infinity_check(samples, m, u.B, u.tau, True)
    assert v.passed and v.details["F_inf"] == pytest.approx(8 * np.pi / u.B, rel=0.01)
    inst, u = radial_solution("reissner_nordstrom")
    samples, _ = sample_F(u, tc.default_t_grid())
    m = x_adm_mass(inst.chart, inst.drift, radii)
    v = tc.limit_infinity_check(samples, m, u.B, u.tau, False)
    assert v.passed and m.extrapolated == pytest.approx(0.5, rel=0.01)


def test_positivity_composition():
    flat = get_preset("euclidean")
    r = tc.positivity_verdict(flat.chart, flat.drift, 1.0)
    assert r.verdict.passed and r.mass.extrapolated == 0
    neg = get_preset("schwarzschild", m=-1.0)
    r = tc.positivity_verdict(neg.chart, neg.drift, 1.0)
    assert not r.verdict.passed
    assert set(r.verdict.details["failed"]) >= {"monotonicity", "mass_sign"}


def test_positivity_deterministic():
    s = get_preset("schwarzschild")
    a = tc.positivity_verdict(s.chart, s.drift, 1.0, t_grid=np.geomspace(0.1, 100, 12))
    b = tc.positivity_verdict(s.chart, s.drift, 1.0, t_grid=np.geomspace(0.1, 100, 12))
    assert [v.to_json() for v in a.sub_verdicts] == [v.to_json() for v in b.sub_verdicts]


def test_rigidity(radial_solution):
    _, flat = radial_solution("euclidean")
    rep = tc.rigidity_residual(flat)
    assert rep.vector_residual <= 1e-8 and rep.conformal_scalar_residual <= 1e-8
    _, wc = radial_solution("weighted_conformal")
    rep = tc.rigidity_residual(wc)
    assert rep.vector_residual <= 1e-4 and rep.conformal_scalar_residual <= 1e-3
    _, s = radial_solution("schwarzschild")
    rep = tc.rigidity_residual(s)
    assert rep.vector_residual > 1e-2
    v = tc.rigidity_verdict(s, m_X=1.0)
    assert v.passed and v.status == "non-rigid"


def test_boundary_variant_examples():
    ext = get_preset("euclidean_exterior")
    v = tc.boundary_variant(ext.chart, ext.drift, 1.0)
    assert v.passed and abs(v.details["boundary_integral_16pi_minus"]) < 1e-10
    assert abs(v.details["m_X"]) < 1e-8
    s = get_preset("schwarzschild_exterior")
    v = tc.boundary_variant(s.chart, s.drift, 1.0)
    assert v.passed and v.details["m_X"] == pytest.approx(1.0, rel=5e-3)
    neg = get_preset("schwarzschild_exterior", m=-1.0, r0=1.0)
    v = tc.boundary_variant(neg.chart, neg.drift, 1.0)
    assert v.status == "hypothesis not met" and not v.passed and "m_X" not in v.details
    ext = get_preset("euclidean_exterior", r0=1.0)
    v = tc.boundary_variant(ext.chart, DriftField.coulomb(0.5), 1.0)
    assert v.status == "hypothesis not met"
    with pytest.raises(ParameterError):
        tc.boundary_variant(get_preset("euclidean").chart, DriftField.zero_field(), 1.0)


def test_coarea_crosscheck(radial_solution):
    _, s = radial_solution("schwarzschild")
    v = tc.coarea_crosscheck(s, ts=(10.0,))
    assert v.passed
    assert v.details["levels"][0]["orders"][-1] >= 1.8
    _, flat = radial_solution("euclidean")
    assert tc.coarea_crosscheck(flat, ts=(3.0,)).passed
