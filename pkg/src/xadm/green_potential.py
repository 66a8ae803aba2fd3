"""The potential u = 1 - 4 pi G_o of the drift Laplacian L_X = Delta - 1/2 X.grad.

Two solver paths share one :class:`PotentialField` interface:

* ``solve_radial`` for g = Phi(r) delta, X = chi(r) x.  With
  P = r^2 sqrt(Phi) u' the equation L_X u = 0 becomes P' = 1/2 chi r Phi P,
  so P = exp(1/2 int chi s Phi ds) with P(0) = 1 (unit flux at the pole) and
  1 - u(r) = int_r^oo P / (s^2 sqrt(Phi)) ds.  Both quadratures are done as
  ODEs in log r with dense output.
* ``solve_grid`` for general charts (see ``_grid``).

The module also hosts the pole expansion, the barrier pair and the
far-field fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ._ledger import LAYOUT, compute_ledger, evaluate_series
from ._normal_coords import NormalFrame, build_normal_frame
from .chart_geometry import (Chart, DriftField, christoffel, decay_audit, drift_jet, fibonacci_directions,
                             inverse_metric, metric_jet)
from .errors import LimitNotResolved, ParameterError, SolverError

# ---------------------------------------------------------------------------
# jax helpers


def inv3(g):
    """Adjugate inverse for a single 3x3 jax matrix."""
    c = jnp.array([
        [g[1, 1] * g[2, 2] - g[1, 2] * g[2, 1], g[0, 2] * g[2, 1] - g[0, 1] * g[2, 2], g[0, 1] * g[1, 2] - g[0, 2] * g[1, 1]],
        [g[1, 2] * g[2, 0] - g[1, 0] * g[2, 2], g[0, 0] * g[2, 2] - g[0, 2] * g[2, 0], g[0, 2] * g[1, 0] - g[0, 0] * g[1, 2]],
        [g[1, 0] * g[2, 1] - g[1, 1] * g[2, 0], g[0, 1] * g[2, 0] - g[0, 0] * g[2, 1], g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]],
    ])
    det = g[0, 0] * c[0, 0] + g[0, 1] * c[1, 0] + g[0, 2] * c[2, 0]
    return c / det


def drift_laplacian(chart: Chart, X: DriftField, F):
    """Return x -> (L_X F)(x) for a scalar jax function F of one point."""
    gfun = lambda p: chart.metric(p[None])[0]  # noqa: E731

    def L(x):
        g = gfun(x)
        dg = jax.jacfwd(gfun)(x)
        ginv = inv3(g)
        low = 0.5 * (jnp.einsum("jli->lij", dg) + jnp.einsum("ilj->lij", dg) - jnp.einsum("ijl->lij", dg))
        gam = jnp.einsum("kl,lij->kij", ginv, low)
        grad = jax.grad(F)(x)
        hess = jax.hessian(F)(x)
        xv = X.components(x[None])[0]
        return (jnp.einsum("ij,ij->", ginv, hess) - jnp.einsum("ij,kij,k->", ginv, gam, grad)
                - 0.5 * jnp.dot(xv, grad))

    return L


# ---------------------------------------------------------------------------
# pole expansion


def _monomial_table(T: np.ndarray):
    """Symmetric-tensor contraction T.y^k as (exponents, coefficients)."""
    T = np.asarray(T, float)
    if T.ndim == 0:
        return np.zeros((1, 3), int), np.array([float(T)])
    acc: dict = {}
    for idx in np.ndindex(*T.shape):
        key = (idx.count(0), idx.count(1), idx.count(2))
        acc[key] = acc.get(key, 0.0) + T[idx]
    mons = np.array(list(acc.keys()), int)
    return mons, np.array(list(acc.values()))


@dataclass(frozen=True, eq=False)
class PoleExpansion:
    """Truncated series w for 4 pi G near the pole, in normal coordinates at o."""

    o: np.ndarray
    frame: NormalFrame
    coefficients: dict
    intermediates: dict
    variant: str
    truncation_order: int = 3
    jet_scale: float = 0.0

    def series_normal(self, y):
        return evaluate_series(self.coefficients, y)

    def w(self, x):
        return evaluate_series(self.coefficients, self.frame.y_of_x(x))

    @cached_property
    def _poly_terms(self):
        terms = []
        for name, (pw, rank) in LAYOUT.items():
            mons, coef = _monomial_table(self.coefficients[name])
            keep = np.abs(coef) > 0
            if keep.any():
                terms.append((name, pw - rank, mons[keep], coef[keep]))
        return terms

    def w_normal_jax(self, y, names=None, leading: bool = True):
        """Series in normal coordinates; ``names`` restricts to a subset of terms."""
        rho = jnp.sqrt(jnp.dot(y, y))
        total = 1.0 / rho if leading else 0.0
        for name, m, mons, coef in self._poly_terms:
            if names is None or name in names:
                total = total + rho**m * jnp.dot(coef, jnp.prod(y[None, :] ** mons, axis=-1))
        return total

    def w_jax(self, x):
        return self.w_normal_jax(self.frame.y_of_x_jax(x))

    def residual_fn(self, chart: Chart, X: DriftField):
        key = ("residual", id(chart), id(X))
        cache = self.__dict__.setdefault("_fn_cache", {})
        if key not in cache:
            cache[key] = jax.jit(jax.vmap(drift_laplacian(chart, X, self.w_jax)))
        return cache[key]

    def ray_residuals(self, chart: Chart, X: DriftField, n_rays: int = 20, radii=None):
        """L_X w along rays into o: shape (n_rays, len(radii))."""
        radii = np.geomspace(1e-3, 1e-1, 9) if radii is None else np.asarray(radii, float)
        dirs = fibonacci_directions(n_rays)
        pts = self.o + (radii[None, :, None] * dirs[:, None, :]).reshape(-1, 3)
        vals = np.asarray(self.residual_fn(chart, X)(jnp.asarray(pts)))
        return radii, vals.reshape(n_rays, radii.size)

    def suggested_inner_radius(self, tol: float = 1e-6) -> float:
        """|x|^4 * (largest 4th-order jet) < tol."""
        if self.jet_scale <= 0:
            return np.inf
        return float((tol / self.jet_scale) ** 0.25)


def pole_expansion(chart: Chart, X: DriftField, o=(0.0, 0.0, 0.0), variant: str = "corrected") -> PoleExpansion:
    """Normal-coordinate jets at o followed by the closed-form ledger."""
    frame = build_normal_frame(chart, X, o)
    jets = frame.ledger_jets()
    led = compute_ledger(jets, variant)
    scale = float(max(np.max(np.abs(jets["d4g"])), np.max(np.abs(jets["d3X"])), np.max(np.abs(jets["d3G"]))))
    return PoleExpansion(np.asarray(o, float), frame, led["coefficients"], led["intermediates"], variant,
                         jet_scale=scale)


# ---------------------------------------------------------------------------
# potential field


@dataclass(eq=False)
class PotentialField:
    """u = 1 - 4 pi G with point-wise value / gradient / Hessian access.

    ``kind`` is "radial" (ODE profile), "closed_form" (user functions of r)
    or "grid".  Radial kinds store v = 1 - u as a function of r.
    """

    kind: str
    chart: Chart
    X: DriftField
    pole: np.ndarray
    tau: float
    regular_threshold: float
    far_fit: tuple = (np.nan, np.nan, np.nan)
    pole_expansion: PoleExpansion | None = None
    boundary_radius: float | None = None
    r_range: tuple = (0.0, np.inf)
    solver_residual: float = 0.0
    meta: dict = field(default_factory=dict)
    # radial access: v(r), v'(r), v''(r)
    _v: object = None
    _dv: object = None
    _d2v: object = None
    grid: object = None

    # radial helpers -----------------------------------------------------------
    def v_r(self, r):
        return self._v(np.asarray(r, float))

    def dv_r(self, r):
        return self._dv(np.asarray(r, float))

    def d2v_r(self, r):
        return self._d2v(np.asarray(r, float))

    @property
    def B(self) -> float:
        return float(self.far_fit[1])

    @property
    def A(self) -> float:
        return float(self.far_fit[0])

    def radius_of_level(self, t: float) -> float:
        """Radial kinds: the r with 1 - u(r) = 1/t."""
        if self.kind == "grid":
            raise ParameterError("radius_of_level needs a radial representation")
        lo, hi = self.r_range
        target = 1.0 / t
        f = lambda lr: self.v_r(np.exp(lr)) - target  # noqa: E731
        a, b = np.log(lo), np.log(hi)
        if abs(f(a)) <= 1e-12 * target:  # the boundary level itself
            return float(lo)
        if f(a) < 0 or f(b) > 0:
            raise ParameterError(f"level t={t} is outside the solved range of u")
        return float(np.exp(brentq(f, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)))

    # pointwise access ---------------------------------------------------------
    def value(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if self.kind == "grid":
            return self.grid.value(x)
        return 1.0 - self.v_r(np.linalg.norm(x - self.pole, axis=-1))

    def gradient(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if self.kind == "grid":
            return self.grid.gradient(x)
        d = x - self.pole
        r = np.linalg.norm(d, axis=-1)
        return -(self.dv_r(r) / r)[:, None] * d

    def hessian(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if self.kind == "grid":
            return self.grid.hessian(x)
        d = x - self.pole
        r = np.linalg.norm(d, axis=-1)
        n = d / r[:, None]
        nn = n[:, :, None] * n[:, None, :]
        dv, d2v = self.dv_r(r), self.d2v_r(r)
        return -(d2v[:, None, None] * nn + (dv / r)[:, None, None] * (np.eye(3) - nn))

    def pde_residual(self, x):
        """g^{ij} u_ij - g^{ij} Gamma^k_ij u_k - 1/2 X^k u_k at x."""
        x = np.atleast_2d(np.asarray(x, float))
        g, dg = metric_jet(self.chart, x, 1)
        ginv = inverse_metric(g)
        gam = christoffel(ginv, dg)
        xv = drift_jet(self.X, x, 0)[0]
        du, ddu = self.gradient(x), self.hessian(x)
        return (np.einsum("nij,nij->n", ginv, ddu) - np.einsum("nij,nkij,nk->n", ginv, gam, du)
                - 0.5 * np.einsum("nk,nk->n", xv, du))


# ---------------------------------------------------------------------------
# radial path


def _radial_functions(chart: Chart, X: DriftField):
    """Vectorized Phi(r), Phi'(r), chi(r) along a generic direction."""
    n = jnp.asarray(np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0))

    def phi(r):
        return chart.metric(r[..., None] * n)[..., 0, 0]

    def chi(r):
        return jnp.sum(X.components(r[..., None] * n) * n, axis=-1) / r

    dphi = jax.vmap(jax.grad(lambda r: phi(r)))
    return jax.jit(phi), jax.jit(lambda r: dphi(jnp.atleast_1d(r))), jax.jit(chi)


def check_radial_symmetry(chart: Chart, X: DriftField, radii=(0.3, 1.0, 3.0, 10.0, 30.0)):
    """Verify g = Phi(r) delta and X parallel to x on a few shells."""
    if not (chart.radial and X.radial):
        raise ParameterError("solve_radial needs a chart and drift flagged radial")
    dirs = fibonacci_directions(16)
    for r in radii:
        if r < chart.inner_radius:
            continue
        pts = r * dirs
        g = chart.g(pts)
        phi = g[:, 0, 0]
        if np.max(np.abs(g - phi[:, None, None] * np.eye(3))) > 1e-12 * np.max(np.abs(phi)) or np.ptp(phi) > 1e-12 * np.max(phi):
            raise ParameterError(f"chart {chart.name!r} is not radially conformally flat at r={r}")
        xv = X(pts)
        perp = xv - np.sum(xv * dirs, axis=1)[:, None] * dirs
        along = np.sum(xv * dirs, axis=1)
        if np.max(np.abs(perp)) > 1e-12 * (1 + np.max(np.abs(xv))) or np.ptp(along) > 1e-12 * (1 + np.max(np.abs(along))):
            raise ParameterError(f"drift {X.name!r} is not radial at r={r}")


def solve_radial(chart: Chart, X: DriftField, r_min: float = 1e-4, r_max: float = 1e8, rtol: float = 1e-13,
                 boundary: bool | None = None, fit_radii=None, with_pole_expansion: bool = False) -> PotentialField:
    """ODE path for spherically symmetric data.

    With ``boundary`` (default: when the chart has a boundary sphere) the
    pole is replaced by the Dirichlet condition u = 0 on |x| = r0.
    """
    check_radial_symmetry(chart, X)
    if boundary is None:
        boundary = chart.boundary_radius is not None
    if boundary:
        if chart.boundary_radius is None:
            raise ParameterError("boundary solve needs a chart with a boundary sphere")
        r_lo = float(chart.boundary_radius)
    else:
        if chart.inner_radius > 0:
            raise ParameterError("a pole solve needs a chart defined on all of R^3")
        r_lo = r_min
    phi, dphi, chi = _radial_functions(chart, X)
    t0, t1 = np.log(r_lo), np.log(r_max)

    def rhs_lnP(t, y):
        r = np.exp(t)
        return [0.5 * float(chi(r)) * r * r * float(phi(r))]

    lnP0 = 0.0 if boundary else 0.25 * float(chi(r_lo)) * float(phi(r_lo)) * r_lo**2
    s1 = solve_ivp(rhs_lnP, (t0, t1), [lnP0], method="DOP853", rtol=rtol, atol=1e-15, dense_output=True)
    if not s1.success:
        raise SolverError(f"flux ODE failed: {s1.message}")

    def P(r):
        return np.exp(s1.sol(np.log(r))[0])

    def rhs_I(t, y):
        r = np.exp(t)
        return [-P(r) / (r * np.sqrt(float(phi(r))))]

    tail = P(r_max) / (r_max * np.sqrt(float(phi(r_max))))
    s2 = solve_ivp(rhs_I, (t1, t0), [tail], method="DOP853", rtol=rtol, atol=1e-300, dense_output=True)
    if not s2.success:
        raise SolverError(f"potential ODE failed: {s2.message}")
    norm = 1.0 / s2.sol(t0)[0] if boundary else 1.0

    def v(r):
        r = np.asarray(r, float)
        return norm * s2.sol(np.log(r))[0] if r.ndim else float(norm * s2.sol(np.log(r))[0])

    def dv(r):
        r = np.asarray(r, float)
        return -norm * P(r) / (r * r * np.sqrt(np.asarray(phi(jnp.asarray(r)))))

    def d2v(r):
        r = np.asarray(r, float)
        ph = np.asarray(phi(jnp.asarray(r)))
        dph = np.asarray(dphi(jnp.asarray(r))).reshape(np.shape(r))
        ch = np.asarray(chi(jnp.asarray(r)))
        return dv(r) * (0.5 * ch * r * ph - 2.0 / r - 0.5 * dph / ph)

    rr = np.geomspace(r_lo, r_max, 2000)
    vv = v(rr)
    if np.any(np.diff(vv) >= 0) or np.any(vv <= 0):
        raise SolverError("radial potential is not strictly monotone; check the drift/metric model")
    audit = decay_audit(chart, X, np.geomspace(max(30.0, 10 * r_lo), 3e3, 6))
    pe = None
    if with_pole_expansion and not boundary:
        pe = pole_expansion(chart, X)
    field_ = PotentialField(
        kind="radial", chart=chart, X=X, pole=np.zeros(3), tau=audit.tau_used,
        regular_threshold=1e-8, pole_expansion=pe, boundary_radius=r_lo if boundary else None,
        r_range=(r_lo, r_max), solver_residual=rtol,
        meta={"P_inf": float(P(r_max)), "tau_capped": audit.tau_capped, "norm": norm, "steps": (s1.t.size, s2.t.size)},
        _v=v, _dv=dv, _d2v=d2v,
    )
    radii = np.geomspace(1e4, 1e6, 17) if fit_radii is None else fit_radii
    field_.far_fit = far_field_fit(field_, radii)
    if not field_.B > 0:
        raise SolverError(f"far-field constant B={field_.B} is not positive")
    return field_


def closed_form_potential(chart: Chart, X: DriftField, v, dv, d2v, B: float, r_range=(1e-6, 1e12),
                          boundary_radius=None, tau=1.0 - 1e-6) -> PotentialField:
    """Wrap exact radial functions v = 1 - u as a PotentialField."""
    f = PotentialField("closed_form", chart, X, np.zeros(3), tau, 1e-8, (B / (4 * np.pi), B, 0.0),
                       boundary_radius=boundary_radius, r_range=r_range, _v=v, _dv=dv, _d2v=d2v)
    return f


# ---------------------------------------------------------------------------
# far field


def sphere_average(u: PotentialField, r: float, n_dirs: int = 96) -> float:
    if u.kind != "grid":
        return float(u.v_r(np.array(r)))
    from .mass_functionals import default_quadrature

    q = default_quadrature(15)
    vals = 1.0 - u.value(u.pole + r * q.directions)
    return float(np.dot(q.weights, vals) / (4 * np.pi))


def far_field_fit(u: PotentialField, radii, tol: float = 1e-3):
    """Fit of sphere-averaged (1 - u)|x| to B + c |x|^-tau; returns (A, B, residual)."""
    radii = np.asarray(radii, float)
    y = np.array([sphere_average(u, r) * r for r in radii])
    tau = u.tau if np.isfinite(u.tau) else 1.0 - 1e-6
    M = np.stack([np.ones_like(radii), radii ** (-tau)], axis=1)
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    resid = float(np.sqrt(np.mean((M @ coef - y) ** 2)))
    if resid > tol * max(1.0, abs(coef[0])):
        raise LimitNotResolved(f"far-field model violated (rms {resid:.3e})",
                               {"radii": radii.tolist(), "values": y.tolist()})
    B = float(coef[0])
    return (B / (4 * np.pi), B, resid)


def pole_consistency(u: PotentialField, radii=None, n_dirs: int = 24) -> dict:
    """Shell maxima of d = (1 - u) - w near the pole, after removing the fitted constant.

    d carries the regular part of 4 pi G, so only its variation is fitted:
    max |d - d0| ~ C r^q.  Reported, not enforced.
    """
    pe = u.pole_expansion or pole_expansion(u.chart, u.X, u.pole)
    radii = np.geomspace(2e-3, 0.2, 10) if radii is None else np.asarray(radii, float)
    dirs = fibonacci_directions(n_dirs)
    pts = u.pole + (radii[:, None, None] * dirs[None]).reshape(-1, 3)
    d = ((1.0 - u.value(pts)) - pe.w(pts)).reshape(radii.size, n_dirs)
    d0 = float(d[0].mean())
    dev = np.max(np.abs(d - d0), axis=1)
    ok = dev > 1e-13
    q = float(np.polyfit(np.log(radii[ok]), np.log(dev[ok]), 1)[0]) if ok.sum() >= 3 else float("inf")
    return {"q_fit": q, "constant": d0, "max_deviation": float(dev.max()), "radii": radii.tolist()}


# ---------------------------------------------------------------------------
# barriers


@dataclass(frozen=True)
class BarrierPair:
    epsilon: float
    validated_radius: float
    tested_radii: tuple
    worst_plus: float  # max of L_X phi_+ on the validated shell (should be < 0)
    worst_minus: float  # min of L_X phi_- on the validated shell (should be > 0)

    def phi_plus(self, r):
        return 1.0 / r - r ** (-1.0 - self.epsilon)

    def phi_minus(self, r):
        return 1.0 / r + r ** (-1.0 - self.epsilon)

    def sandwich_constants(self, g_min: float, g_max: float) -> tuple:
        """(c_-, c_+) with c_- phi_- <= G <= c_+ phi_+ on |x| >= R by the maximum principle."""
        R = self.validated_radius
        return g_min / self.phi_minus(R), g_max / self.phi_plus(R)

    def literal_constants(self, g_min: float, g_max: float) -> tuple:
        """The printed form, with phi(R) multiplying instead of dividing."""
        R = self.validated_radius
        return self.phi_minus(R) * g_min, self.phi_plus(R) * g_max


def barrier_operator_values(chart: Chart, X: DriftField, pts, epsilon: float):
    """L_X phi_+ and L_X phi_- at points (closed-form derivatives of phi)."""
    pts = np.atleast_2d(np.asarray(pts, float))
    r = np.linalg.norm(pts, axis=-1)
    n = pts / r[:, None]
    g, dg = metric_jet(chart, pts, 1)
    ginv = inverse_metric(g)
    gam = christoffel(ginv, dg)
    xv = drift_jet(X, pts, 0)[0]
    out = []
    for sign in (-1.0, 1.0):  # phi_+ has the minus sign
        p1 = -r**-2 + sign * (-(1 + epsilon)) * r ** (-2 - epsilon)
        p2 = 2 * r**-3 + sign * (1 + epsilon) * (2 + epsilon) * r ** (-3 - epsilon)
        grad = p1[:, None] * n
        nn = n[:, :, None] * n[:, None, :]
        hess = p2[:, None, None] * nn + (p1 / r)[:, None, None] * (np.eye(3) - nn)
        val = (np.einsum("nij,nij->n", ginv, hess) - np.einsum("nij,nkij,nk->n", ginv, gam, grad)
               - 0.5 * np.einsum("nk,nk->n", xv, grad))
        out.append(val)
    return out[0], out[1]


def barrier_pair(chart: Chart, X: DriftField, epsilon: float = 0.25, r_start: float = 2.0, r_cap: float = 1e5,
                 n_dirs: int = 96, n_shell: int = 13, tau_fit: float | None = None) -> BarrierPair:
    """Doubling search for the smallest tested R with L_X phi_+ < 0 < L_X phi_- on R <= |x| <= 8R."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if tau_fit is None:
        tau_fit = decay_audit(chart, X, np.geomspace(max(50.0, 2 * chart.inner_radius), 5e3, 6)).tau_fit
    if epsilon >= tau_fit:
        raise ParameterError(f"epsilon={epsilon} must be smaller than the fitted decay order tau={tau_fit:.4g}")
    dirs = fibonacci_directions(n_dirs)
    R = max(r_start, 1.0 + 1e-9, chart.inner_radius * 1.0001)
    tested = []
    while R <= r_cap:
        radii = np.geomspace(R, 8 * R, n_shell)
        pts = (radii[:, None, None] * dirs[None]).reshape(-1, 3)
        lp, lm = barrier_operator_values(chart, X, pts, epsilon)
        tested.append(R)
        if np.all(lp < 0) and np.all(lm > 0):
            return BarrierPair(epsilon, float(R), tuple(tested), float(lp.max()), float(lm.min()))
        R *= 2.0
    raise SolverError(f"barrier validation failed: no radius below {r_cap} (decay of g or X too weak)",
                      history=tested)


def sandwich_check(u: PotentialField, bp: BarrierPair, radii, n_dirs: int = 64, literal: bool = False) -> dict:
    """Count violations of c_- phi_- <= G <= c_+ phi_+ at sampled points (G = (1-u)/4pi)."""
    R = bp.validated_radius
    dirs = fibonacci_directions(n_dirs)
    g_on_R = (1.0 - u.value(u.pole + R * dirs)) / (4 * np.pi)
    consts = (bp.literal_constants if literal else bp.sandwich_constants)(g_on_R.min(), g_on_R.max())
    radii = np.asarray(radii, float)
    pts = u.pole + (radii[:, None, None] * dirs[None]).reshape(-1, 3)
    r = np.repeat(radii, n_dirs)
    G = (1.0 - u.value(pts)) / (4 * np.pi)
    lower = consts[0] * bp.phi_minus(r)
    upper = consts[1] * bp.phi_plus(r)
    scale = np.maximum(np.abs(G), 1e-300)
    slack = np.minimum((G - lower) / scale, (upper - G) / scale)
    tol = 1e-12 if u.kind != "grid" else 0.0
    return {
        "c_minus": float(consts[0]), "c_plus": float(consts[1]),
        "violations": int(np.sum(slack < -tol)), "n_points": int(slack.size),
        "min_relative_slack": float(slack.min()),
    }


# ---------------------------------------------------------------------------
# grid path


def _fit_matrix(radii, tau, n_terms=2):
    return np.stack([radii ** (-k * tau) for k in range(n_terms)], axis=1)


def solve_grid(chart: Chart, X: DriftField, n: int = 96, r_out: float = 12.0, o=(0.0, 0.0, 0.0),
               tol: float = 1e-10, fit_fraction=(0.45, 0.95), n_fit: int = 10, n_terms: int = 3,
               damping: float = 0.5, b_tol: float = 1e-6, max_iter: int = 2000,
               variant: str = "corrected") -> PotentialField:
    """Grid path: regular-part solve plus the outer-constant fixed point.

    Outer data are 4 pi G = sum_k c_k |x|^(-1-k tau) with c_0 = B.  The fixed
    point c <- c + damping * (fit(u_c) - c) is iterated until |dB| < b_tol;
    u is affine in c, so the iteration needs no further linear solves.
    """
    from . import _grid
    from .mass_functionals import default_quadrature

    if chart.boundary_radius is not None:
        raise ParameterError("the grid path solves the pole problem only; use solve_radial for a boundary sphere")
    if n_terms < 1:
        raise ParameterError("n_terms must be at least 1")
    o = np.asarray(o, float)
    pe = pole_expansion(chart, X, o, variant)
    audit = decay_audit(chart, X, np.geomspace(50.0, 5e3, 6))
    tau = audit.tau_used
    sols, geom, info = _grid.solve_regular_part(chart, X, pe, n, r_out, tau, tol, n_terms)
    h = geom["h"]
    radii = np.linspace(fit_fraction[0], fit_fraction[1], n_fit) * r_out
    q = default_quadrature(15)
    # sphere averages of r * (4 pi G) for every basis solution
    avg = np.zeros((len(sols), radii.size))
    for k, sol in enumerate(sols):
        coef = ndimage_filter(sol)
        for j, r in enumerate(radii):
            pts = o + r * q.directions
            vals = map_coords(coef, ((pts - geom["origin"]) / h).T)
            if k == 0:
                vals = vals + geom["singular"].value(pts)
            avg[k, j] = r * np.dot(q.weights, vals) / (4 * np.pi)
    Mfit = _fit_matrix(radii, tau, n_terms)
    pinv = np.linalg.pinv(Mfit)
    F0, K = pinv @ avg[0], pinv @ avg[1:].T  # fit(c) = F0 + K c
    c = F0.copy()
    history = []
    converged = False
    for _ in range(max_iter):
        new = c + damping * (F0 + K @ c - c)
        history.append(float(new[0]))
        if np.all(np.abs(new - c) < b_tol * np.maximum(1.0, np.abs(new))):
            c, converged = new, True
            break
        c = new
    if not converged:
        raise SolverError("outer-constant fixed point did not converge", history=history)
    f = sols[0] + sum(ck * s_ for ck, s_ in zip(c, sols[1:]))
    y = avg[0] + c @ avg[1:]
    resid = float(np.sqrt(np.mean((Mfit @ (pinv @ y) - y) ** 2)))
    grid = _grid.GridData.build(geom["origin"], h, n, o, r_out, f, geom["inside"], geom["singular"])
    info.update(fixed_point_iterations=len(history), B_history=history, outer_coefficients=c.tolist(),
                fit_radii=radii.tolist(), tau_capped=audit.tau_capped,
                contraction=float(np.max(np.abs(np.linalg.eigvals(np.eye(n_terms) + damping * (K - np.eye(n_terms)))))))
    B = float(c[0])
    if not B > 0:
        raise SolverError(f"far-field constant B={B} is not positive")
    return PotentialField(
        kind="grid", chart=chart, X=X, pole=o, tau=tau, regular_threshold=1e-8,
        far_fit=(B / (4 * np.pi), B, resid), pole_expansion=pe, r_range=(2 * h, r_out),
        solver_residual=max(info["residuals"]), meta=info, grid=grid,
    )


def ndimage_filter(a):
    from scipy import ndimage

    return ndimage.spline_filter(a, order=3)


def map_coords(coef, idx):
    from scipy import ndimage

    return ndimage.map_coordinates(coef, idx, order=3, prefilter=False, mode="nearest")
