import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import sph_harm_y

from xadm.chart_geometry import Chart, DriftField
from xadm.errors import LimitNotResolved, ParameterError
from xadm.mass_functionals import (default_quadrature, extrapolate, mass_integrand, mass_linearity_check,
                                   sphere_integral, sweep_radii, total_charge, x_adm_mass)
from xadm.presets import get_preset

RADII = sweep_radii(10.0, 1e3)


def test_quadrature_moments():
    q = default_quadrature()
    assert q.weights.sum() == pytest.approx(4 * np.pi, abs=1e-12)
    assert np.allclose(q.weights @ q.directions, 0, atol=1e-10)
    second = np.einsum("n,ni,nj->ij", q.weights, q.directions, q.directions)
    assert np.allclose(second, 4 * np.pi / 3 * np.eye(3), atol=1e-10)


@pytest.mark.parametrize("l", range(0, 24, 3))
def test_quadrature_integrates_harmonics(l):
    q = default_quadrature(23)
    d = q.directions
    theta = np.arccos(np.clip(d[:, 2], -1, 1))
    phi = np.arctan2(d[:, 1], d[:, 0])
    for m in (0, l // 2, l):
        val = q.weights @ sph_harm_y(l, m, theta, phi)
        exact = np.sqrt(4 * np.pi) if (l, m) == (0, 0) else 0.0
        assert abs(val - exact) < 1e-10


def test_sphere_integral_examples():
    assert sphere_integral(lambda x: np.ones(len(x)), 2.0) == pytest.approx(16 * np.pi, rel=1e-13)
    assert abs(sphere_integral(lambda x: x[:, 0] / np.linalg.norm(x, axis=1), 3.0)) < 1e-12
    val = sphere_integral(lambda x: x[:, 0] ** 2 / np.sum(x * x, axis=1), 1.0)
    assert val == pytest.approx(4 * np.pi / 3, abs=1e-12)


def test_integrand_examples():
    flat = get_preset("euclidean")
    pts = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 7.0]])
    assert np.all(mass_integrand(flat.chart, flat.drift, pts) == 0)
    c = 0.7
    r = np.linalg.norm(pts, axis=1)
    assert np.allclose(mass_integrand(flat.chart, DriftField.coulomb(c), pts), 2 * c / r**2, rtol=1e-13)


def test_flat_and_schwarzschild_mass():
    flat = get_preset("euclidean")
    m0 = x_adm_mass(flat.chart, flat.drift, RADII)
    assert m0.kind == "adm" and abs(m0.extrapolated) < 1e-10
    s = get_preset("schwarzschild", m=1.0)
    ms = x_adm_mass(s.chart, s.drift, RADII)
    assert ms.extrapolated == pytest.approx(1.0, rel=5e-3)
    tail = np.abs(ms.values - ms.extrapolated)[-4:]
    assert np.all(np.diff(tail) < 0)


def test_coulomb_drift_mass_exact_per_radius():
    flat = get_preset("euclidean")
    c = 0.3
    m = x_adm_mass(flat.chart, DriftField.coulomb(c), RADII)
    assert m.kind == "x_adm"
    assert np.allclose(m.values, c / 2, rtol=1e-13)


def test_total_charge_examples():
    Q = 0.5
    coul = lambda x: Q * x / np.linalg.norm(x, axis=-1, keepdims=True) ** 3  # noqa: E731
    q = total_charge(coul, RADII)
    assert np.allclose(q.values, Q, rtol=1e-13) and q.kind == "charge"
    assert total_charge(lambda x: np.zeros_like(x), RADII).extrapolated == 0

    def perturbed(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        curl = np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1) / r**4
        return coul(x) + curl

    assert total_charge(perturbed, RADII).extrapolated == pytest.approx(Q, abs=1e-6)


def test_rn_chain_m_adm_minus_charge():
    inst = get_preset("reissner_nordstrom", m=1.0, q=0.5)
    q = total_charge(inst.charge_field, RADII)
    m_adm = x_adm_mass(inst.chart, DriftField.zero_field(), RADII).extrapolated
    m_x = x_adm_mass(inst.chart, inst.drift, RADII).extrapolated
    assert q.extrapolated == pytest.approx(0.5, abs=1e-6)
    assert m_x == pytest.approx(m_adm - q.extrapolated, abs=1e-6)
    assert m_adm >= abs(q.extrapolated)


def test_linearity():
    s = get_preset("schwarzschild")
    assert mass_linearity_check(s.chart, DriftField.zero_field(), DriftField.zero_field(), RADII) == 0
    X1, X2 = DriftField.coulomb(0.4, 0.5), DriftField.coulomb(-1.3, 2.0)
    assert mass_linearity_check(s.chart, X1, X2, RADII) <= 1e-8


@settings(max_examples=12, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.1, 3))
def test_linearity_random_flat(c1, c2, s1, s2):
    flat = get_preset("euclidean")
    res = mass_linearity_check(flat.chart, DriftField.coulomb(c1, s1), DriftField.coulomb(c2, s2), RADII)
    assert res <= 1e-8


def test_rotation_invariance():
    rng = np.random.default_rng(7)
    Rm, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    R = jnp.asarray(Rm)

    def metric(x):
        y = x @ R  # y = R^T x
        s = jnp.sum(y * y, axis=-1)
        aniso = 0.3 * y[..., 0] ** 2 / (1 + s) ** 1.5
        base = (1 + 0.5 / jnp.sqrt(1 + s)) ** 4
        gy = base[..., None, None] * jnp.eye(3) + aniso[..., None, None] * jnp.diag(jnp.array([1.0, 0.0, 0.0]))
        return jnp.einsum("ia,...ab,jb->...ij", R, gy, R)

    def metric0(x):
        s = jnp.sum(x * x, axis=-1)
        aniso = 0.3 * x[..., 0] ** 2 / (1 + s) ** 1.5
        base = (1 + 0.5 / jnp.sqrt(1 + s)) ** 4
        return base[..., None, None] * jnp.eye(3) + aniso[..., None, None] * jnp.diag(jnp.array([1.0, 0.0, 0.0]))

    z = DriftField.zero_field()
    a = x_adm_mass(Chart("rot", metric), z, RADII, tau=1.0)
    b = x_adm_mass(Chart("orig", metric0), z, RADII, tau=1.0)
    assert a.extrapolated == pytest.approx(b.extrapolated, abs=1e-10)


def test_sweep_errors():
    flat = get_preset("euclidean")
    with pytest.raises(ParameterError):
        x_adm_mass(flat.chart, flat.drift, [10, 20, 30, 40])
    r = np.geomspace(10, 1e3, 8)
    with pytest.raises(LimitNotResolved):
        extrapolate(r, np.sin(r), 1.0, "adm")
