import jax.numpy as jnp
import numpy as np
import pytest
import sympy as sp

from xadm.chart_geometry import (Chart, DriftField, curvature_at, curvature_fields, decay_audit, metric_jet,
                                 validate_k)
from xadm.errors import DomainError, ParameterError
from xadm.presets import get_preset


def isotropic(m):
    return Chart("iso", lambda x: (1 + m / (2 * jnp.linalg.norm(x, axis=-1)))[..., None, None] ** 4
                 * jnp.eye(3), inner_radius=0.1)


def sym_conformal_jet(m, point):
    xs = sp.symbols("x0:3")
    r = sp.sqrt(sum(c**2 for c in xs))
    phi4 = (1 + m / (2 * r)) ** 4
    sub = dict(zip(xs, point))
    return np.array([[float(sp.diff(phi4, xs[a]).subs(sub)) for a in range(3)]])


def test_flat_jet_is_trivial():
    inst = get_preset("euclidean")
    g, dg, ddg = metric_jet(inst.chart, np.array([1.3, -0.2, 4.0]), 2)
    assert np.array_equal(g, np.eye(3))
    assert np.all(dg == 0) and np.all(ddg == 0)


def test_isotropic_first_derivatives_match_sympy():
    chart = isotropic(1.0)
    x = np.array([2.0, 0.0, 0.0])
    _, dg = metric_jet(chart, x, 1)
    ref = sym_conformal_jet(1.0, x)[0]
    for a in range(3):
        assert np.allclose(dg[..., a], ref[a] * np.eye(3), atol=1e-8)


def test_fd_jets_converge_at_second_order():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 3))
    A = A + A.T

    def metric(x):
        s = jnp.sin(0.7 * x[..., 0]) * jnp.cos(0.4 * x[..., 1]) + 0.3 * x[..., 2] ** 2 / (1 + x[..., 2] ** 2)
        return jnp.eye(3) + 0.1 * s[..., None, None] * A

    analytic = Chart("rand", metric)
    x = np.array([0.4, -0.3, 0.8])
    ref = metric_jet(analytic, x, 2)
    errs = []
    for h in (0.02, 0.01, 0.005):
        fd = metric_jet(analytic, x, 2, h=h)
        errs.append([np.max(np.abs(fd[n] - ref[n])) for n in (1, 2)])
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(np.abs(orders - 2.0) < 0.3), orders


def test_domain_and_definiteness_errors():
    with pytest.raises(DomainError):
        metric_jet(isotropic(1.0), np.array([0.01, 0, 0]), 0)
    bad = Chart("bad", lambda x: jnp.broadcast_to(jnp.diag(jnp.array([1.0, -1.0, 1.0])), x.shape[:-1] + (3, 3)))
    with pytest.raises(DomainError, match="positive definite"):
        metric_jet(bad, np.array([1.0, 0, 0]), 0)


def test_flat_curvature_zero_for_admissible_k():
    inst = get_preset("euclidean")
    for k in (-5.0, -2.0, 0.5, 1.0, np.inf):
        rep = curvature_at(inst.chart, np.array([1.0, 2.0, 3.0]), inst.drift, k)
        assert rep.scalar == 0 and rep.r_x_k == 0 and np.all(rep.christoffel == 0)


@pytest.mark.parametrize("k", [-1.0, -0.5, 0.0, -1.999])
def test_excluded_k_interval(k):
    with pytest.raises(ParameterError, match=r"\(-2, 0\]"):
        validate_k(k)


def test_schwarzschild_scalar_flat_and_symmetric():
    chart = isotropic(1.0)
    rep = curvature_at(chart, np.array([3.0, 0.0, 0.0]), DriftField.zero_field(), 1.0)
    assert abs(rep.scalar) < 1e-6
    assert np.allclose(rep.christoffel, np.swapaxes(rep.christoffel, 1, 2), atol=0)
    assert np.allclose(rep.ricci, rep.ricci.T, atol=1e-10)


def test_divergence_free_drift_gives_minus_half_norm_squared():
    inst = get_preset("euclidean")
    c = 0.8
    X = DriftField.constant([c, 0.0, 0.0])
    rep = curvature_at(inst.chart, np.array([2.0, 1.0, 0.0]), X, -2.0)
    assert rep.r_x_k == pytest.approx(-c * c / 2, abs=1e-14)


def test_curvature_batch_matches_pointwise():
    inst = get_preset("reissner_nordstrom")
    pts = np.array([[3.0, 1.0, 0.5], [10.0, -2.0, 4.0]])
    cf = curvature_fields(inst.chart, inst.drift, pts, 1.0)
    for n, p in enumerate(pts):
        rep = curvature_at(inst.chart, p, inst.drift, 1.0)
        assert rep.r_x_k == pytest.approx(cf["r_x_k"][n], rel=1e-12, abs=1e-15)


def test_decay_audit_examples():
    radii = np.geomspace(10, 1e3, 6)
    flat = get_preset("euclidean")
    a = decay_audit(flat.chart, flat.drift, radii)
    assert a.metric_verdict == "exactly flat" and a.passed
    s = decay_audit(isotropic(1.0), DriftField.zero_field(), radii)
    assert s.tau_fit == pytest.approx(1.0, abs=0.05)
    c = decay_audit(flat.chart, DriftField.coulomb(1.0), radii)
    assert c.tau0_fit == pytest.approx(1.0, abs=0.05)
    assert s.tau_capped and s.tau_used == pytest.approx(1 - 1e-6)
    with pytest.raises(ParameterError):
        decay_audit(flat.chart, flat.drift, [1.0, 2.0])
