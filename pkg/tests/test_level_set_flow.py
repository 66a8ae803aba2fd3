import numpy as np
import pytest

from xadm.errors import DomainError, ParameterError
from xadm.green_potential import solve_grid
from xadm.level_set_flow import (F_of_t, coarea_bulk, euclidean_comparison, extract_level, march_tetrahedra,
                                 mean_curvature, normal_consistency, read_mesh, sample_F, sphere_mesh,
                                 trapezoid_F, write_mesh)
from xadm.presets import get_preset


def test_flat_level_geometry(radial_solution):
    _, u = radial_solution("euclidean")
    s = extract_level(u, 5.0)
    assert s.meta["radius"] == pytest.approx(5.0, rel=1e-12)
    assert s.total_area == pytest.approx(100 * np.pi, rel=1e-12)
    assert np.allclose(s.grad_norm, 1 / 25, rtol=1e-10)
    assert np.allclose(s.H * 5.0, 2.0, atol=1e-10)
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0, atol=1e-10)
    assert s.weights.sum() == pytest.approx(s.total_area, rel=1e-14)
    assert s.is_regular and s.connected_component_count == 1
    assert mean_curvature(u, np.array([[4.0, 0, 0]]))[0] == pytest.approx(0.5, abs=1e-12)


def test_flat_F_vanishes(radial_solution):
    _, u = radial_solution("euclidean")
    for t in (0.1, 1.0, 7.3, 100.0):
        f = F_of_t(u, t)
        assert abs(f.F) < 1e-9
        assert f.term_linear == pytest.approx(4 * np.pi * t)
        assert f.F == f.term_linear + f.term_grad2 + f.term_H + f.term_X


def test_schwarzschild_mean_curvature_matches_conformal_formula(radial_solution):
    _, u = radial_solution("schwarzschild")
    m = 1.0
    for r in (3.0, 10.0, 80.0):
        phi = 1 + m / (2 * r)
        expected = phi**-2 * 2 / r + 4 * phi**-3 * (-m / (2 * r * r))
        assert mean_curvature(u, np.array([[0, r, 0]]))[0] == pytest.approx(expected, abs=1e-6)


def test_far_field_mean_curvature(radial_solution):
    _, u = radial_solution("reissner_nordstrom")
    r = np.geomspace(50, 5e3, 6)
    dev = np.abs(mean_curvature(u, np.stack([r, 0 * r, 0 * r], 1)) - 2 / r)
    slope = np.polyfit(np.log(r), np.log(dev), 1)[0]
    assert slope <= -1.9


@pytest.mark.parametrize("name", ["schwarzschild", "reissner_nordstrom", "weighted_conformal"])
def test_two_form_identity(radial_solution, name):
    _, u = radial_solution(name)
    for t in (0.3, 2.0, 40.0):
        f = F_of_t(u, t)
        assert f.identity_residual <= 1e-9 * (1 + abs(f.F))


def test_area_growth(radial_solution):
    _, u = radial_solution("schwarzschild")
    ts = np.geomspace(20, 400, 8)
    ratio = np.array([extract_level(u, t).total_area / (4 * np.pi * u.B**2 * t * t) for t in ts])
    slope = np.polyfit(np.log(ts), np.log(np.abs(ratio - 1)), 1)[0]
    assert slope == pytest.approx(-u.tau, abs=0.1)


def test_schwarzschild_F_limit(radial_solution):
    _, u = radial_solution("schwarzschild")
    samples, skipped = sample_F(u, np.geomspace(0.2, 200, 40))
    assert not skipped
    F = np.array([s.F for s in samples])
    assert np.all(np.diff(F) > 0)
    assert F[-1] == pytest.approx(8 * np.pi / u.B, rel=0.02)


def test_euclidean_comparison(radial_solution):
    _, flat = radial_solution("euclidean")
    c = euclidean_comparison(flat, 5.0)
    assert abs(c.div_integral) < 1e-12 and abs(c.flux_integral) < 1e-12
    assert c.willmore_bar == pytest.approx(16 * np.pi, rel=1e-12) and c.max_H_difference < 1e-12
    _, u = radial_solution("schwarzschild")
    c = euclidean_comparison(u, 50.0)
    assert abs(c.div_integral) <= 1e-6 * c.euclid_area
    res = [abs(euclidean_comparison(u, t).decomposition_residual) for t in (50.0, 100.0, 200.0)]
    slope = np.polyfit(np.log([50.0, 100.0, 200.0]), np.log(res), 1)[0]
    assert slope <= -1.8


def test_coarea_order(radial_solution):
    _, u = radial_solution("schwarzschild")
    bulk = coarea_bulk(u, 10.0)
    errs = [abs(trapezoid_F(u, 10.0, n) - bulk) for n in (20, 40, 80)]
    assert errs[-1] / abs(bulk) < 1e-3
    assert np.log2(errs[1] / errs[2]) >= 1.8
    _, flat = radial_solution("euclidean")
    assert abs(coarea_bulk(flat, 3.0)) < 1e-10


def test_normal_consistency_integrated_order(radial_solution):
    _, u = radial_solution("schwarzschild")
    d = [normal_consistency(u, sphere_mesh(u, 5.0, n))["integrated_relative_difference"] for n in (500, 2000)]
    assert d[1] < d[0] and np.log2(d[0] / d[1]) >= 1.0


def test_mesh_roundtrip(tmp_path, radial_solution):
    _, u = radial_solution("schwarzschild")
    s = extract_level(u, 4.0, with_mesh=True)
    path = tmp_path / "level.mesh"
    write_mesh(s, path)
    v, f, sc = read_mesh(path)
    assert np.array_equal(v, s.mesh[0]) and np.array_equal(f, s.mesh[1])
    assert sc.shape == (len(f), 3) and np.all(sc[:, 2] > 0)


def test_level_errors(radial_solution):
    _, u = radial_solution("euclidean")
    with pytest.raises(ParameterError):
        extract_level(u, -1.0)
    ext = get_preset("euclidean_exterior")
    from xadm.green_potential import solve_radial

    ue = solve_radial(ext.chart, ext.drift)
    _, skipped = sample_F(ue, [0.5, 2.0])
    assert [d["t"] for d in skipped] == [0.5]


def test_marching_tetrahedra_sphere():
    n, h = 40, 0.1
    origin = np.full(3, -2.0)
    ax = origin[0] + h * np.arange(n)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    vals = np.sqrt(X**2 + Y**2 + Z**2)
    verts, faces, _ = march_tetrahedra(vals, origin, h, 1.3)
    r = np.linalg.norm(verts, axis=1)
    assert np.allclose(r, 1.3, atol=h * h)
    a = verts[faces]
    area = 0.5 * np.linalg.norm(np.cross(a[:, 1] - a[:, 0], a[:, 2] - a[:, 0]), axis=1).sum()
    assert area == pytest.approx(4 * np.pi * 1.3**2, rel=0.02)


@pytest.mark.slow
def test_grid_levels():
    s = get_preset("schwarzschild")
    ug = solve_grid(s.chart, s.drift, n=96)
    from xadm.green_potential import solve_radial

    ur = solve_radial(s.chart, s.drift)
    sg = extract_level(ug, 3.0)
    sr = extract_level(ur, 3.0)
    assert sg.total_area == pytest.approx(sr.total_area, rel=5e-3)
    assert sg.connected_component_count == 1 and sg.is_regular
    with pytest.raises(DomainError):
        extract_level(ug, 0.2)
    with pytest.raises(DomainError):
        extract_level(ug, 50.0)
