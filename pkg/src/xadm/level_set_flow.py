"""Level sets {u = 1 - 1/t}, their geometry, and the functional F(t).

Radial potentials give exact coordinate spheres integrated with the product
sphere rule.  Grid potentials are triangulated by marching tetrahedra (six
Kuhn tetrahedra per cell).  Each triangle carries three quadrature points at
its edge midpoints; every point is pushed onto the level set along the
Euclidean normal and its weight is corrected by the parallel-surface factor
1 + d * Hbar, so the rule integrates over the true level set rather than the
piecewise-flat mesh.

All geometry comes from the metric: the area element is
sqrt(det g) |dbar u|_{g^-1} / |dbar u|_e dsigma_e, and

    H = 1/2 g(X, grad u)/|grad u| - Hess u(grad u, grad u)/|grad u|^3,

which is the mean curvature with respect to nu = grad u/|grad u| after the
drift equation has been used to remove the Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy import integrate
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

from .chart_geometry import christoffel, det3, drift_jet, inverse_metric, metric_jet
from .errors import DomainError, ParameterError
from .green_potential import PotentialField
from .mass_functionals import default_quadrature

# ---------------------------------------------------------------------------
# data types


@dataclass
class LevelSurface:
    """Quadrature representation of the level set {u = 1 - 1/t}.

    Per-element arrays share the leading axis.  ``normals`` are g-unit
    vectors nu^i; ``euclid_normals`` and ``euclid_weights`` describe the same
    points with the flat metric.  ``mesh`` is ``(vertices, faces)`` when a
    triangulation exists.
    """

    t: float
    kind: str
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    grad_norm: np.ndarray
    H: np.ndarray
    X_nu: np.ndarray
    euclid_normals: np.ndarray
    euclid_weights: np.ndarray
    u_values: np.ndarray
    regular_threshold: float
    connected_component_count: int
    hcirc2: np.ndarray | None = None
    mesh: tuple | None = None
    face_of_element: np.ndarray | None = None
    quad_error: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def level(self) -> float:
        return 1.0 - 1.0 / self.t

    @property
    def total_area(self) -> float:
        return float(np.sum(self.weights))

    @property
    def euclid_area(self) -> float:
        return float(np.sum(self.euclid_weights))

    @property
    def min_grad(self) -> float:
        return float(np.min(self.grad_norm))

    @property
    def is_regular(self) -> bool:
        return self.min_grad >= self.regular_threshold

    @property
    def n_elements(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True)
class FSample:
    t: float
    term_linear: float
    term_grad2: float
    term_H: float
    term_X: float
    F: float
    willmore_XM: float
    willmore_residual: float
    area: float
    identity_residual: float
    quad_error: float
    min_grad: float
    kind: str

    def as_row(self) -> dict:
        return {"t": self.t, "F": self.F, "term_linear": self.term_linear, "term_grad2": self.term_grad2,
                "term_H": self.term_H, "term_X": self.term_X, "area": self.area, "XM": self.willmore_XM,
                "willmore_residual": self.willmore_residual}


# ---------------------------------------------------------------------------
# pointwise geometry


def _pointwise(u: PotentialField, x, du=None, ddu=None):
    """Metric data plus first and second derivatives of u at points x."""
    g, dg = metric_jet(u.chart, x, 1)
    ginv = inverse_metric(g)
    gam = christoffel(ginv, dg)
    du = u.gradient(x) if du is None else du
    ddu = u.hessian(x) if ddu is None else ddu
    hess = ddu - np.einsum("nkij,nk->nij", gam, du)
    up = np.einsum("nij,nj->ni", ginv, du)
    gn = np.sqrt(np.einsum("ni,ni->n", du, up))
    xv = drift_jet(u.X, x, 0)[0]
    return {"g": g, "dg": dg, "ginv": ginv, "du": du, "ddu": ddu, "hess": hess, "up": up, "gn": gn, "X": xv}


def _mean_curvature_from(d):
    gn = d["gn"]
    xdu = np.einsum("ni,ni->n", d["X"], d["du"])
    return 0.5 * xdu / gn - np.einsum("ni,nij,nj->n", d["up"], d["hess"], d["up"]) / gn**3


def mean_curvature(u: PotentialField, x) -> np.ndarray:
    """H of the level set of u through each point (nu = grad u/|grad u|)."""
    x = np.atleast_2d(np.asarray(x, float))
    d = _pointwise(u, x)
    if np.any(d["gn"] < u.regular_threshold):
        raise DomainError("|grad u| below the regular-value threshold at a requested point")
    return _mean_curvature_from(d)


def _euclid_mean_curvature(du, ddu):
    ne = np.linalg.norm(du, axis=-1)
    nb = du / ne[:, None]
    return (np.trace(ddu, axis1=1, axis2=2) - np.einsum("ni,nij,nj->n", nb, ddu, nb)) / ne


def _hcirc2(d, H):
    """|h - H/2 g_Sigma|^2 with h = Hess u restricted to the level set over |grad u|."""
    gn = d["gn"]
    nu_up = d["up"] / gn[:, None]
    nu_dn = d["du"] / gn[:, None]
    proj = np.eye(3)[None] - np.einsum("ni,nj->nij", nu_up, nu_dn)  # Pi^i_j
    h = np.einsum("nia,nij,njb->nab", proj, d["hess"], proj) / gn[:, None, None]
    ginv = d["ginv"]
    hh = np.einsum("nac,nbd,nab,ncd->n", ginv, ginv, h, h)
    return hh - 0.5 * H**2


def _surface_from_points(u, t, kind, x, nbar, dsig, n_components, mesh=None, face_of=None,
                         with_hcirc=False, quad_error=0.0, meta=None, derivs=(None, None), values=None):
    d = _pointwise(u, x, *derivs)
    g = d["g"]
    sq = np.sqrt(det3(g))
    conorm = np.sqrt(np.einsum("ni,nij,nj->n", nbar, d["ginv"], nbar))
    H = _mean_curvature_from(d)
    gn = d["gn"]
    return LevelSurface(
        t=float(t), kind=kind, points=x, weights=sq * conorm * dsig, normals=d["up"] / gn[:, None],
        grad_norm=gn, H=H, X_nu=np.einsum("ni,ni->n", d["X"], d["du"]) / gn,
        euclid_normals=nbar, euclid_weights=dsig, u_values=u.value(x) if values is None else values,
        regular_threshold=u.regular_threshold, connected_component_count=n_components,
        hcirc2=_hcirc2(d, H) if with_hcirc else None, mesh=mesh, face_of_element=face_of,
        quad_error=quad_error, meta=meta or {},
    )


# ---------------------------------------------------------------------------
# extraction


def _check_t(t):
    if not (np.isfinite(t) and t > 0):
        raise ParameterError(f"t must be positive and finite, got {t}")


def extract_level(u: PotentialField, t: float, degree: int = 23, with_mesh: bool = False) -> LevelSurface:
    """Level set {u = 1 - 1/t} with per-element geometry."""
    _check_t(t)
    if u.kind == "grid":
        return _extract_grid(u, t)
    r = u.radius_of_level(t)
    q = default_quadrature(degree)
    x = u.pole + r * q.directions
    du = u.gradient(x)
    nbar = du / np.linalg.norm(du, axis=-1)[:, None]
    mesh = None
    if with_mesh:
        hull = ConvexHull(q.directions)
        mesh = (x.copy(), _orient(x, hull.simplices, x - u.pole))
    return _surface_from_points(u, t, u.kind, x, nbar, r * r * q.weights, 1, mesh=mesh, with_hcirc=True,
                                quad_error=0.0, meta={"radius": r, "degree": degree})


def _orient(vertices, faces, outward):
    """Flip faces whose geometric normal points against ``outward`` (evaluated at centroids)."""
    faces = np.array(faces, dtype=np.int64)
    p = vertices[faces]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    ref = outward[faces].mean(axis=1) if outward.shape[0] == vertices.shape[0] else outward
    flip = np.einsum("ni,ni->n", nrm, ref) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


_KUHN = np.array([[[0, 0, 0]] + [list(v) for v in np.cumsum(np.eye(3, dtype=int)[list(p)], axis=0)]
                  for p in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]])
_OTHERS = np.array([[j for j in range(4) if j != lone] for lone in range(4)])


def march_tetrahedra(values, origin, h, level, cell_mask=None):
    """Isosurface of a nodal field by six-tetrahedra decomposition.

    Returns ``(vertices, faces, crossing_cells)``.  Vertices sit on grid
    edges at the linear-interpolation zero and are shared between
    neighbouring triangles, keyed by the edge's node pair.
    """
    f = np.asarray(values, float) - level
    shape = np.array(f.shape)
    lo = np.full(shape - 1, np.inf)
    hi = np.full(shape - 1, -np.inf)
    for c in np.ndindex(2, 2, 2):
        s = f[c[0]:shape[0] - 1 + c[0], c[1]:shape[1] - 1 + c[1], c[2]:shape[2] - 1 + c[2]]
        lo, hi = np.minimum(lo, s), np.maximum(hi, s)
    crossing = (lo < 0) & (hi >= 0)
    if cell_mask is not None:
        crossing &= cell_mask
    cells = np.argwhere(crossing)
    strides = np.array([shape[1] * shape[2], shape[2], 1])
    flat = f.ravel()
    tri_edges = []  # each entry (T, 3, 2) of node ids
    for tet in _KUHN:
        P = cells[:, None, :] + tet[None]
        ids = P @ strides
        v = flat[ids]
        neg = v < 0
        cnt = neg.sum(axis=1)
        for k in (1, 3):
            sel = np.nonzero(cnt == k)[0]
            if sel.size == 0:
                continue
            lone = np.argmax(neg[sel] if k == 1 else ~neg[sel], axis=1)
            oth = _OTHERS[lone]
            a = ids[sel, lone]
            e = np.stack([np.stack([a, ids[sel, oth[:, m]]], axis=-1) for m in range(3)], axis=1)
            tri_edges.append(e)
        sel = np.nonzero(cnt == 2)[0]
        if sel.size:
            order = np.argsort(~neg[sel], axis=1, kind="stable")
            a, b, c, d = (ids[sel, order[:, j]] for j in range(4))
            ac, ad, bd, bc = (np.stack(p, axis=-1) for p in ((a, c), (a, d), (b, d), (b, c)))
            tri_edges.append(np.stack([ac, ad, bd], axis=1))
            tri_edges.append(np.stack([ac, bd, bc], axis=1))
    if not tri_edges:
        return np.zeros((0, 3)), np.zeros((0, 3), np.int64), cells
    E = np.concatenate(tri_edges)
    E = np.sort(E, axis=-1)
    keys = E[..., 0] * flat.size + E[..., 1]
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    na, nb = uniq // flat.size, uniq % flat.size
    fa, fb = flat[na], flat[nb]
    s = fa / (fa - fb)
    xa = origin + h * np.stack(np.unravel_index(na, f.shape), axis=-1)
    xb = origin + h * np.stack(np.unravel_index(nb, f.shape), axis=-1)
    verts = xa + s[:, None] * (xb - xa)
    faces = inv.reshape(-1, 3)
    area2 = np.linalg.norm(np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]]),
                           axis=1)
    faces = faces[area2 > 1e-14 * h * h]
    return verts, faces, cells


def count_components(n_vertices, faces) -> int:
    if len(faces) == 0:
        return 0
    i = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    j = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    adj = coo_matrix((np.ones(i.size), (i, j)), shape=(n_vertices, n_vertices))
    used = np.unique(faces)
    n, labels = connected_components(adj, directed=False)
    return int(np.unique(labels[used]).size)


def _project(u, p, level, steps=2):
    """Move points onto {u = level} along the Euclidean gradient; returns (points, signed distance)."""
    x = p.copy()
    for _ in range(steps):
        du = u.gradient(x)
        ne2 = np.einsum("ni,ni->n", du, du)
        x = x + ((level - u.value(x)) / ne2)[:, None] * du
    return x, np.einsum("ni,ni->n", x - p, du) / np.sqrt(ne2)


def _extract_grid(u: PotentialField, t: float) -> LevelSurface:
    grid = u.grid
    level = 1.0 - 1.0 / t
    verts, faces, cells = march_tetrahedra(grid.node_u, grid.origin, grid.h, level)
    if faces.shape[0] == 0:
        raise DomainError(f"level t={t} does not intersect the grid")
    corner_r = np.linalg.norm(grid.origin + grid.h * (cells[:, None, :] + np.array(list(np.ndindex(2, 2, 2)))[None])
                              - grid.o, axis=-1)
    if np.any(corner_r >= grid.r_out):
        raise DomainError(f"level t={t} intersects the outer boundary of the solved ball (r_out={grid.r_out})")
    if np.any(corner_r < 4 * grid.h):
        raise DomainError(f"level t={t} comes within 4h of the pole; refine the grid or use larger t")
    faces = _orient(verts, faces, u.gradient(verts))
    tri = verts[faces]
    avec = 0.5 * np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    mids = np.stack([0.5 * (tri[:, 0] + tri[:, 1]), 0.5 * (tri[:, 1] + tri[:, 2]), 0.5 * (tri[:, 2] + tri[:, 0])],
                    axis=1).reshape(-1, 3)
    face_of = np.repeat(np.arange(faces.shape[0]), 3)
    x, dist = _project(u, mids, level)
    du, ddu = u.gradient(x), u.hessian(x)
    nbar = du / np.linalg.norm(du, axis=-1)[:, None]
    hbar = _euclid_mean_curvature(du, ddu)
    dsig = np.abs(np.einsum("ni,ni->n", avec[face_of], nbar)) * (1.0 + dist * hbar) / 3.0
    n_comp = count_components(verts.shape[0], faces)
    surf = _surface_from_points(u, t, "grid", x, nbar, dsig, n_comp, mesh=(verts, faces), face_of=face_of,
                                meta={"h": grid.h, "n_faces": int(faces.shape[0])}, derivs=(du, ddu),
                                values=np.full(x.shape[0], level))
    # quadrature error estimate: same integrand with one centroid point per face
    cen, dist_c = _project(u, tri.mean(axis=1), level)
    duc, dduc = u.gradient(cen), u.hessian(cen)
    nbc = duc / np.linalg.norm(duc, axis=-1)[:, None]
    dsc = np.abs(np.einsum("ni,ni->n", avec, nbc)) * (1.0 + dist_c * _euclid_mean_curvature(duc, dduc))
    coarse = _surface_from_points(u, t, "grid", cen, nbc, dsc, n_comp, derivs=(duc, dduc),
                                  values=np.full(cen.shape[0], level))
    surf.quad_error = abs(_F_terms(surf)[4] - _F_terms(coarse)[4])
    return surf


# ---------------------------------------------------------------------------
# F(t)


def _F_terms(s: LevelSurface):
    t, w = s.t, s.weights
    lin = 4 * np.pi * t
    grad2 = t**3 * np.dot(w, s.grad_norm**2)
    hterm = -(t**2) * np.dot(w, s.grad_norm * s.H)
    xterm = t**2 * np.dot(w, s.X_nu * s.grad_norm)
    return lin, grad2, hterm, xterm, lin + grad2 + hterm + xterm


def F_from_surface(s: LevelSurface) -> FSample:
    if not s.is_regular:
        raise DomainError(f"level t={s.t} is not a regular value (min |grad u| = {s.min_grad:.3e})")
    lin, grad2, hterm, xterm, F = _F_terms(s)
    t, w = s.t, s.weights
    # on the level set 1 - u = 1/t exactly
    xm = 0.25 * t * (16 * np.pi - np.dot(w, s.H**2) + 4 * t * np.dot(w, s.X_nu * s.grad_norm))
    res = 0.25 * t * np.dot(w, (2 * t * s.grad_norm - s.H) ** 2)
    ident = abs(F - (xm + res)) / (1.0 + abs(F))
    return FSample(t=s.t, term_linear=lin, term_grad2=float(grad2), term_H=float(hterm), term_X=float(xterm),
                   F=float(F), willmore_XM=float(xm), willmore_residual=float(res), area=s.total_area,
                   identity_residual=float(ident), quad_error=float(s.quad_error), min_grad=s.min_grad, kind=s.kind)


def F_of_t(u: PotentialField, t: float, **kw) -> FSample:
    return F_from_surface(extract_level(u, t, **kw))


def sample_F(u: PotentialField, ts) -> tuple[list, list]:
    """F on a t-grid; levels that are not regular or not representable are skipped and listed."""
    samples, skipped = [], []
    for t in ts:
        try:
            samples.append(F_of_t(u, float(t)))
        except (DomainError, ParameterError) as exc:
            skipped.append({"t": float(t), "reason": str(exc)})
    return samples, skipped


def default_t_grid(n: int = 48, lo: float = 0.05, hi: float = 500.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


# ---------------------------------------------------------------------------
# Euclidean comparison


@dataclass(frozen=True)
class EuclideanComparison:
    t: float
    euclid_area: float
    willmore_bar: float  # int Hbar^2 dsigma_e
    willmore_g: float  # int H^2 dA_g
    div_integral: float  # int divbar_Sigma omega^T dsigma_e
    flux_integral: float  # int (d_j g_jk - d_k g_jj) nubar^k + 2 X.nubar dsigma_e
    nice_integral: float  # int [Hbar^2 - 2/|x| div omega^T - 2/|x| (d_i g_ik - d_k g_ii) nubar^k] dsigma_e
    decomposition_residual: float  # willmore_g - nice_integral
    max_H_difference: float  # max |H - Hbar| over elements
    XM_euclid: float  # (t/4)(16 pi - willmore_bar) + (div + flux)/(2B)


def euclidean_comparison(u: PotentialField, t: float, surface: LevelSurface | None = None) -> EuclideanComparison:
    s = surface if surface is not None else extract_level(u, t)
    x = s.points
    if u.chart.inner_radius > 0 and np.any(np.linalg.norm(x, axis=-1) < u.chart.inner_radius):
        raise DomainError("level leaves the chart region")
    g, dg = metric_jet(u.chart, x, 1)
    gam = g - np.eye(3)
    du, ddu = u.gradient(x), u.hessian(x)
    ne = np.linalg.norm(du, axis=-1)
    nb = du / ne[:, None]
    eta = np.eye(3)[None] - np.einsum("ni,nj->nij", nb, nb)
    hbar = _euclid_mean_curvature(du, ddu)
    dnu = np.einsum("nkl,nil->nik", eta, ddu) / ne[:, None, None]  # d_i nubar^k
    omega = np.einsum("njk,nk->nj", gam, nb)
    domega = np.einsum("njki,nk->nij", dg, nb) + np.einsum("njk,nik->nij", gam, dnu)  # d_i omega_j
    div_tan = np.einsum("nij,nij->n", eta, domega) - np.einsum("nj,nj->n", omega, nb) * hbar
    flux_g = np.einsum("njkj,nk->n", dg, nb) - np.einsum("njjk,nk->n", dg, nb)
    xv = drift_jet(u.X, x, 0)[0]
    w = s.euclid_weights
    r = np.linalg.norm(x - u.pole, axis=-1)
    willmore_bar = float(np.dot(w, hbar**2))
    div_int = float(np.dot(w, div_tan))
    flux = float(np.dot(w, flux_g + 2 * np.einsum("ni,ni->n", xv, nb)))
    nice = float(np.dot(w, hbar**2 - 2.0 / r * div_tan - 2.0 / r * flux_g))
    willmore_g = float(np.dot(s.weights, s.H**2))
    B = u.B
    return EuclideanComparison(
        t=float(s.t), euclid_area=float(np.sum(w)), willmore_bar=willmore_bar, willmore_g=willmore_g,
        div_integral=div_int, flux_integral=flux, nice_integral=nice, decomposition_residual=willmore_g - nice,
        max_H_difference=float(np.max(np.abs(s.H - hbar))),
        XM_euclid=0.25 * s.t * (16 * np.pi - willmore_bar) + (div_int + flux) / (2 * B),
    )


# ---------------------------------------------------------------------------
# coarea


def bulk_integrand(u: PotentialField, x) -> np.ndarray:
    """Integrand (times |grad u|/(1-u)^2) whose integral over {u < 1 - 1/t} gives int F - 2 pi t^2."""
    x = np.atleast_2d(np.asarray(x, float))
    d = _pointwise(u, x)
    gn = d["gn"]
    one_minus_u = 1.0 - u.value(x)
    xdu = np.einsum("ni,ni->n", d["X"], d["du"])
    hess_nn = np.einsum("ni,nij,nj->n", d["up"], d["hess"], d["up"])  # g(grad|grad u|, grad u) |grad u|
    inner = gn**2 / one_minus_u**3 + hess_nn / (gn**2 * one_minus_u**2) + 0.5 * xdu / one_minus_u**2
    return inner * gn / one_minus_u**2


def coarea_bulk(u: PotentialField, t: float, epsrel: float = 1e-11) -> float:
    """Bulk form of int_{t0}^t F: 2 pi (t^2 - t0^2) plus the volume integral over the sublevel set.

    ``t0`` is 1 for a boundary sphere.  For a pole the volume integral starts
    at the innermost solved radius r_lo, so t0 = 1/(1 - u(r_lo)); the part
    of int F over (0, t0) is dropped since F tends to 0 there.  Radial kinds
    only.
    """
    _check_t(t)
    if u.kind == "grid":
        raise ParameterError("coarea_bulk is implemented for radial potentials only")
    r_t = u.radius_of_level(t)
    r_lo = u.r_range[0]
    t0 = 1.0 if u.boundary_radius is not None else 1.0 / float(u.v_r(np.array(r_lo)))
    if r_t <= r_lo:
        return 0.0
    n = np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0)

    def integrand(lr):
        r = np.exp(lr)
        x = u.pole + r * n
        g = u.chart.g(x[None])[0]
        return float(4 * np.pi * r**3 * np.sqrt(det3(g)) * bulk_integrand(u, x[None])[0])

    val, _ = integrate.quad(integrand, np.log(r_lo), np.log(r_t), epsabs=0.0, epsrel=epsrel, limit=400)
    return 2 * np.pi * (t * t - t0 * t0) + val


def trapezoid_F(u: PotentialField, t: float, n: int) -> float:
    """int_{t0}^t F by the trapezoid rule on n uniform intervals (F(0) = 0 at a pole)."""
    t0 = 1.0 if u.boundary_radius is not None else 0.0
    ts = np.linspace(t0, t, n + 1)
    vals = [0.0 if tt == 0 else F_of_t(u, tt, degree=7).F for tt in ts]
    return float(integrate.trapezoid(vals, ts))


# ---------------------------------------------------------------------------
# discrete mean curvature (independent estimator)


def _mesh_area_fn(chart):
    def area(V, faces):
        P = V[faces]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        g = chart.metric(P.mean(axis=1))
        a = jnp.einsum("ni,nij,nj->n", e1, g, e1)
        b = jnp.einsum("ni,nij,nj->n", e1, g, e2)
        c = jnp.einsum("ni,nij,nj->n", e2, g, e2)
        return 0.5 * jnp.sqrt(jnp.maximum(a * c - b * b, 0.0))

    return area


def discrete_mean_curvature(u: PotentialField, vertices, faces):
    """Vertex mean curvature from the first variation of the metric area of the mesh.

    H_v = (dA/dx_v . nu_v) / A_v, A_v one third of the adjacent face areas.
    Returns (H_discrete, H_formula, A_v) at the vertices.
    """
    area = _mesh_area_fn(u.chart)
    V = jnp.asarray(vertices)
    F = jnp.asarray(faces)
    grad = np.asarray(jax.grad(lambda V: jnp.sum(area(V, F)))(V))
    fa = np.asarray(area(V, F))
    Av = np.zeros(len(vertices))
    np.add.at(Av, np.asarray(faces).ravel(), np.repeat(fa / 3.0, 3))
    d = _pointwise(u, np.asarray(vertices))
    nu = d["up"] / d["gn"][:, None]
    used = Av > 0
    Hd = np.einsum("ni,ni->n", grad, nu)[used] / Av[used]
    return Hd, _mean_curvature_from(d)[used], Av[used]


def normal_consistency(u: PotentialField, surface: LevelSurface) -> dict:
    """Compare H from the drift identity with the discrete first-variation estimator."""
    if surface.mesh is None:
        surface = extract_level(u, surface.t, with_mesh=True)
    Hd, Hf, Av = discrete_mean_curvature(u, *surface.mesh)
    scale = float(np.dot(np.abs(Hf), Av))
    return {
        "integrated_formula": float(np.dot(Hf, Av)),
        "integrated_discrete": float(np.dot(Hd, Av)),
        "integrated_relative_difference": float(abs(np.dot(Hd - Hf, Av)) / scale),
        "l1_relative_difference": float(np.dot(np.abs(Hd - Hf), Av) / scale),
        "n_vertices": int(Av.size),
    }


def sphere_mesh(u: PotentialField, t: float, n_points: int) -> LevelSurface:
    """Radial level set triangulated from Fibonacci directions (for refinement studies)."""
    from .chart_geometry import fibonacci_directions

    r = u.radius_of_level(t)
    dirs = np.asarray(fibonacci_directions(n_points))
    hull = ConvexHull(dirs)
    x = u.pole + r * dirs
    faces = _orient(x, hull.simplices, dirs)
    s = extract_level(u, t)
    s.mesh = (x, faces)
    return s


# ---------------------------------------------------------------------------
# export


def face_scalars(s: LevelSurface) -> dict:
    """Per-face H, |grad u| and area (area-weighted averages of the quadrature points)."""
    verts, faces = s.mesh
    nf = faces.shape[0]
    if s.face_of_element is None:
        d = _pointwise_face_values(s)
        return d
    w = s.weights
    out = {}
    area = np.bincount(s.face_of_element, weights=w, minlength=nf)
    out["area"] = area
    for name, arr in (("H", s.H), ("grad_norm", s.grad_norm)):
        out[name] = np.bincount(s.face_of_element, weights=w * arr, minlength=nf) / np.where(area > 0, area, 1)
    return out


def _pointwise_face_values(s):
    verts, faces = s.mesh
    P = verts[faces]
    e = np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1) * 0.5
    scale = s.total_area / e.sum()
    return {"area": e * scale, "H": np.full(len(faces), float(np.mean(s.H))),
            "grad_norm": np.full(len(faces), float(np.mean(s.grad_norm)))}


def write_mesh(s: LevelSurface, path) -> None:
    """Plain-text indexed triangle list.

    Layout: comment header, ``vertices N`` then N lines ``x y z``, ``faces M``
    then M lines ``i j k H grad_norm area`` (0-based indices).
    """
    if s.mesh is None:
        raise ParameterError("surface has no triangulation; extract with with_mesh=True")
    verts, faces = s.mesh
    fs = face_scalars(s)
    with open(path, "w") as fh:
        fh.write(f"# xadm level-set mesh t={s.t:.17g} kind={s.kind}\n")
        fh.write(f"vertices {len(verts)}\n")
        for v in verts:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        fh.write(f"faces {len(faces)}\n")
        for k, f in enumerate(faces):
            fh.write(f"{f[0]} {f[1]} {f[2]} {fs['H'][k]:.17g} {fs['grad_norm'][k]:.17g} {fs['area'][k]:.17g}\n")


def read_mesh(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    nv = int(lines[0].split()[1])
    verts = np.array([[float(a) for a in ln.split()] for ln in lines[1:1 + nv]])
    nf = int(lines[1 + nv].split()[1])
    rows = [ln.split() for ln in lines[2 + nv:2 + nv + nf]]
    faces = np.array([[int(a) for a in r[:3]] for r in rows], dtype=np.int64)
    scalars = np.array([[float(a) for a in r[3:]] for r in rows])
    return verts, faces, scalars
