"""Pass/fail audits built on the solvers and the level-set functional.

Every check returns a :class:`Verdict` whose ``passed`` flag is exactly
``margin >= -tolerance``; the tolerance formula is stored next to it so
that any slack can be traced back to solver or quadrature residuals.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .chart_geometry import (Chart, DriftField, christoffel, christoffel_derivative, curvature_fields, decay_audit, drift_jet,
                             fibonacci_directions, inverse_metric, metric_jet, ricci_tensor, validate_k)
from .errors import LimitNotResolved, ParameterError
from .green_potential import PotentialField, solve_grid, solve_radial
from .level_set_flow import FSample, coarea_bulk, default_t_grid, extract_level, sample_F, trapezoid_F
from .mass_functionals import MassEstimate, sweep_radii, x_adm_mass


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    tolerance: float
    tolerance_formula: str = ""
    status: str = ""
    evidence: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @classmethod
    def from_margin(cls, name, margin, tolerance, formula="", status=None, **kw):
        margin, tolerance = float(margin), float(tolerance)
        passed = bool(margin >= -tolerance)
        return cls(name, passed, margin, tolerance, formula, status or ("pass" if passed else "fail"), **kw)

    def to_json(self) -> dict:
        d = asdict(self)
        d["details"] = _jsonable(d["details"])
        return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# hypotheses


def default_sample_radii(chart: Chart, n: int = 40, r_max: float = 2e3) -> np.ndarray:
    lo = max(0.05, 1.001 * chart.inner_radius, 1.001 * (chart.boundary_radius or 0.0))
    return np.geomspace(lo, r_max, n)


def hypothesis_audit(chart: Chart, X: DriftField, k: float, radii=None, n_dirs: int = 48,
                     tail_radius: float = 20.0) -> Verdict:
    """min R_X^(k) on shells, far-field decay of |R + 2 div X|, decay orders and the declared H2 flag."""
    k = validate_k(k)
    radii = default_sample_radii(chart) if radii is None else np.asarray(radii, float)
    dirs = fibonacci_directions(n_dirs)
    pts = (radii[:, None, None] * dirs[None]).reshape(-1, 3)
    cf = curvature_fields(chart, X, pts, k)
    rxk = cf["r_x_k"]
    scale = max(np.max(np.abs(cf["scalar"])), np.max(np.abs(cf["div_x"])), np.max(cf["x_norm2"]), 1e-300)
    tol = 1e-12 + 1e-8 * scale
    rk_min = float(np.min(rxk))
    worst = pts[int(np.argmin(rxk))]

    shell = np.max(np.abs(cf["scalar"] + 2 * cf["div_x"]).reshape(radii.size, n_dirs), axis=1)
    tail = radii >= tail_radius
    floor = 1e-12 * max(scale, 1.0)
    if tail.sum() >= 3 and np.all(shell[tail] <= floor):
        exponent, integrable = -np.inf, True
    elif tail.sum() >= 3:
        m = tail & (shell > floor)
        exponent = float(np.polyfit(np.log(radii[m]), np.log(shell[m]), 1)[0]) if m.sum() >= 3 else -np.inf
        integrable = exponent < -3.0
    else:
        exponent, integrable = float("nan"), False
    audit = decay_audit(chart, X, np.geomspace(max(50.0, 2 * chart.inner_radius), 5e3, 6))
    ok_other = integrable and audit.passed and chart.h2_spherical_free
    margin = rk_min if ok_other else -np.inf
    return Verdict.from_margin(
        "hypothesis_audit", margin, tol, "1e-12 + 1e-8 * max(|R|, |div X|, |X|^2) over the samples",
        details={
            "k": k, "min_r_x_k": rk_min, "argmin_point": worst, "n_samples": int(pts.shape[0]),
            "r_range": [float(radii[0]), float(radii[-1])],
            "l1_tail_exponent": exponent, "l1_integrable": integrable,
            "tau_fit": audit.tau_fit, "tau0_fit": audit.tau0_fit, "decay_audit_passed": audit.passed,
            "h2_spherical_free_declared": chart.h2_spherical_free,
        })


# ---------------------------------------------------------------------------
# monotonicity and limits


def tol_mono(samples, solver_residual: float, c: float = 10.0) -> float:
    area = max(s.area for s in samples)
    quad = max(s.quad_error for s in samples)
    return c * (area * solver_residual + quad)


def monotonicity_check(samples: list[FSample], solver_residual: float, c: float = 10.0) -> Verdict:
    """Worst adjacent difference F(t_{i+1}) - F(t_i) against tol_mono."""
    samples = sorted(samples, key=lambda s: s.t)
    if len(samples) < 3:
        raise ParameterError("monotonicity_check needs at least 3 regular samples")
    F = np.array([s.F for s in samples])
    ts = np.array([s.t for s in samples])
    diffs = np.diff(F)
    tol = tol_mono(samples, solver_residual, c)
    i = int(np.argmin(diffs))
    return Verdict.from_margin(
        "monotonicity", float(diffs[i]), tol,
        f"tol_mono = {c:g} * (max area * solver_residual + max quadrature error)",
        details={"worst_interval": [float(ts[i]), float(ts[i + 1])], "n_samples": len(samples),
                 "n_decreases": int(np.sum(diffs < -tol)), "largest_decrease_over_tol": float(-diffs[i] / tol),
                 "solver_residual": solver_residual})


def limit_zero_check(samples: list[FSample], u: PotentialField | None = None, tol: float = 1e-2,
                     n_fit: int = 4, t_resolve: float = 0.2) -> Verdict:
    """F(t) -> 0 as t -> 0+, plus the bulk quotient (int_0^t F)/t -> 0 when u is radial.

    Raises LimitNotResolved when no regular sample lies below ``t_resolve``
    (grid solutions cannot represent the small spheres around the pole).
    """
    samples = sorted(samples, key=lambda s: s.t)[:max(n_fit, 3)]
    if not samples or samples[0].t > t_resolve:
        raise LimitNotResolved(f"smallest regular level t={samples[0].t if samples else None} exceeds {t_resolve}",
                               {"t_min": samples[0].t if samples else None, "t_resolve": t_resolve})
    ts = np.array([s.t for s in samples])
    F = np.array([s.F for s in samples])
    a, b = np.polyfit(ts, F, 1)[::-1]
    trend = bool(np.all(np.abs(F[:-1]) <= np.abs(F[1:]) + tol * 1e-6)) if F.size > 1 else True
    details = {"t": ts, "F": F, "fitted_limit": float(a), "abs_F_decreasing_toward_0": trend}
    worst = max(abs(F[0]), abs(a))
    if u is not None and u.kind != "grid" and u.boundary_radius is None:
        quot = [coarea_bulk(u, t) / t for t in ts[:3]]
        details["bulk_over_t"] = quot
        worst = max(worst, abs(quot[0]))
    margin = -worst if trend else -np.inf
    return Verdict.from_margin("limit_zero", margin, tol, f"fixed absolute tolerance {tol:g}", details=details)


def fit_F_infinity(samples: list[FSample], tau: float, n_fit: int = 12):
    samples = sorted(samples, key=lambda s: s.t)[-n_fit:]
    ts = np.array([s.t for s in samples])
    F = np.array([s.F for s in samples])
    M = np.stack([np.ones_like(ts), ts ** (1.0 - 2.0 * tau)], axis=1)
    coef, *_ = np.linalg.lstsq(M, F, rcond=None)
    rms = float(np.sqrt(np.mean((M @ coef - F) ** 2)))
    return float(coef[0]), float(coef[1]), rms, ts


def limit_infinity_check(samples: list[FSample], mass: MassEstimate, B: float, tau: float, equality: bool,
                         rel_tol: float = 0.01, abs_tol: float = 1e-8) -> Verdict:
    """lim F <= 8 pi m_X / B, with equality when the stronger decay holds."""
    F_inf, c, rms, ts = fit_F_infinity(samples, tau)
    target = 8 * np.pi * mass.extrapolated / B
    tol = rel_tol * abs(target) + abs_tol + 3 * rms
    margin = -abs(F_inf - target) if equality else target - F_inf
    return Verdict.from_margin(
        "limit_infinity", margin, tol,
        f"{rel_tol:g} * |8 pi m_X / B| + {abs_tol:g} + 3 * fit rms",
        details={"F_inf": F_inf, "target_8pi_mX_over_B": target, "m_X": mass.extrapolated, "B": B,
                 "fit_exponent": 1.0 - 2.0 * tau, "fit_coefficient": c, "fit_rms": rms,
                 "t_fit_range": [float(ts[0]), float(ts[-1])], "equality_tested": equality})


# ---------------------------------------------------------------------------
# full chain


def solve_potential(chart: Chart, X: DriftField, path: str = "auto", grid_n: int = 64, grid_r_out: float = 12.0,
                    **kw) -> PotentialField:
    if path == "auto":
        path = "radial" if chart.radial and X.radial else "grid"
    if path == "radial":
        return solve_radial(chart, X, **kw)
    if path == "grid":
        return solve_grid(chart, X, n=grid_n, r_out=grid_r_out, **kw)
    raise ParameterError(f"unknown solver path {path!r}")


@dataclass
class ChainResult:
    verdict: Verdict
    sub_verdicts: list
    samples: list
    skipped: list
    mass: MassEstimate | None
    potential: PotentialField | None


def positivity_verdict(chart: Chart, X: DriftField, k: float, path: str = "auto", t_grid=None,
                       mass_radii=None, mono_c: float = 10.0, zero_tol: float = 1e-2, limit_rel_tol: float = 0.01,
                       mass_tol: float = 1e-6, equality: bool | None = None, **solve_kw) -> ChainResult:
    """Hypotheses, solve, monotonicity, both limits and the sign of m_X; passes only if all of them pass."""
    subs = [hypothesis_audit(chart, X, k)]
    u = solve_potential(chart, X, path, **solve_kw)
    ts = default_t_grid() if t_grid is None else np.asarray(t_grid, float)
    samples, skipped = sample_F(u, ts)
    radii = sweep_radii(10.0, 1e3) if mass_radii is None else np.asarray(mass_radii, float)
    mass = x_adm_mass(chart, X, radii)
    if len(samples) >= 3:
        subs.append(monotonicity_check(samples, u.solver_residual, mono_c))
        if chart.boundary_radius is None:  # with a boundary the flow starts at t = 1, not 0
            try:
                subs.append(limit_zero_check(samples, u, zero_tol))
            except LimitNotResolved as exc:
                subs.append(Verdict("limit_zero", True, 0.0, 0.0, "not evaluated", "not resolved",
                                    details={"reason": str(exc), **exc.diagnostics}))
        eq = chart.strong_decay if equality is None else equality
        subs.append(limit_infinity_check(samples, mass, u.B, u.tau, eq, limit_rel_tol))
    else:
        subs.append(Verdict("monotonicity", False, -np.inf, 0.0, status="fail",
                            details={"reason": "fewer than 3 regular samples"}))
    mtol = mass_tol + 3 * mass.residual
    subs.append(Verdict.from_margin("mass_sign", mass.extrapolated, mtol, f"{mass_tol:g} + 3 * sweep fit rms",
                                    details={"m_X": mass.extrapolated, "kind": mass.kind}))
    all_ok = all(v.passed for v in subs)
    margin = min(v.margin for v in subs) if all_ok else min(-np.inf if not v.passed else v.margin for v in subs)
    top = Verdict("positivity", all_ok, float(mass.extrapolated) if all_ok else float(margin), mtol,
                  "passes iff every sub-verdict passes", "pass" if all_ok else "fail",
                  details={"m_X": mass.extrapolated, "B": u.B, "failed": [v.name for v in subs if not v.passed],
                           "n_regular_samples": len(samples), "n_skipped": len(skipped)})
    if all_ok and top.margin < -top.tolerance:
        top.passed, top.status = False, "fail"
    if not all_ok:
        top.margin = -np.inf
    return ChainResult(top, subs, samples, skipped, mass, u)


# ---------------------------------------------------------------------------
# rigidity


def _log_ratio(u: PotentialField, x):
    """-f = log(|grad u|^2 / (1 - u)^4) at points."""
    g = metric_jet(u.chart, x, 0)[0]
    du = u.gradient(x)
    gn2 = np.einsum("ni,nij,nj->n", du, inverse_metric(g), du)
    return np.log(gn2) - 4 * np.log(1.0 - u.value(x))


def rigidity_sample_points(u: PotentialField, n_r: int = 24, n_dirs: int = 32):
    if u.kind == "grid":
        lo, hi = 4 * u.grid.h, 0.9 * u.grid.r_out
    else:
        lo, hi = max(0.2, 1.05 * u.r_range[0]), 1e3
    radii = np.geomspace(lo, hi, n_r)
    return u.pole + (radii[:, None, None] * fibonacci_directions(n_dirs)[None]).reshape(-1, 3)


@dataclass(frozen=True)
class RigidityReport:
    vector_residual: float
    conformal_scalar_residual: float
    n_samples: int
    n_excluded: int
    step_fraction: float


def rigidity_residual(u: PotentialField, X: DriftField | None = None, points=None,
                      step_fraction: float = 8e-2) -> RigidityReport:
    """sup |X + grad log(|grad u|^2/(1-u)^4)|_g and sup |scalar curvature of e^{-f} g|.

    The conformal curvature uses R~ = e^f (R + 2 Lap f - |grad f|^2/2) with
    f = -log(|grad u|^2/(1-u)^4); derivatives of f are centred differences
    with steps ``step_fraction * |x|`` and twice that, Richardson-combined.
    """
    X = u.X if X is None else X
    x = rigidity_sample_points(u) if points is None else np.atleast_2d(np.asarray(points, float))
    g, dg, ddg = metric_jet(u.chart, x, 2)
    ginv = inverse_metric(g)
    gam = christoffel(ginv, dg)
    du, ddu = u.gradient(x), u.hessian(x)
    up = np.einsum("nij,nj->ni", ginv, du)
    gn2 = np.einsum("ni,ni->n", du, up)
    keep = np.sqrt(gn2) >= u.regular_threshold
    hess = ddu - np.einsum("nkij,nk->nij", gam, du)
    cov = 2 * np.einsum("nkj,nj->nk", hess, up) / gn2[:, None] + 4 * du / (1.0 - u.value(x))[:, None]
    vec = drift_jet(X, x, 0)[0] + np.einsum("nij,nj->ni", ginv, cov)
    vnorm = np.sqrt(np.einsum("ni,nij,nj->n", vec, g, vec))

    # conformal scalar curvature by finite differences of f
    R = np.einsum("nij,nij->n", ginv, ricci_tensor(gam, christoffel_derivative(ginv, dg, ddg)))
    s = step_fraction * np.linalg.norm(x - u.pole, axis=-1)
    f0 = -_log_ratio(u, x)
    d1, h1 = _fd_derivatives(u, x, f0, s)
    d2, h2 = _fd_derivatives(u, x, f0, 2 * s)
    df, d2f = (4 * d1 - d2) / 3, (4 * h1 - h2) / 3  # Richardson: fourth order
    lap = np.einsum("nij,nij->n", ginv, d2f) - np.einsum("nij,nkij,nk->n", ginv, gam, df)
    grad2 = np.einsum("ni,nij,nj->n", df, ginv, df)
    rt = np.exp(f0) * (R + 2 * lap - 0.5 * grad2)
    return RigidityReport(float(np.max(vnorm[keep])), float(np.max(np.abs(rt[keep]))), int(keep.sum()),
                          int((~keep).sum()), step_fraction)


def _fd_derivatives(u, x, f0, s):
    """Centred second-order gradient and Hessian of f with per-point step s."""
    df = np.zeros((x.shape[0], 3))
    d2f = np.zeros((x.shape[0], 3, 3))
    E = np.eye(3)
    fp = [-_log_ratio(u, x + s[:, None] * E[i]) for i in range(3)]
    fm = [-_log_ratio(u, x - s[:, None] * E[i]) for i in range(3)]
    for i in range(3):
        df[:, i] = (fp[i] - fm[i]) / (2 * s)
        d2f[:, i, i] = (fp[i] - 2 * f0 + fm[i]) / s**2
        for j in range(i + 1, 3):
            pp = -_log_ratio(u, x + s[:, None] * (E[i] + E[j]))
            pm = -_log_ratio(u, x + s[:, None] * (E[i] - E[j]))
            mp = -_log_ratio(u, x - s[:, None] * (E[i] - E[j]))
            mm = -_log_ratio(u, x - s[:, None] * (E[i] + E[j]))
            d2f[:, i, j] = d2f[:, j, i] = (pp - pm - mp + mm) / (4 * s**2)
    return df, d2f


def rigidity_verdict(u: PotentialField, vector_tol: float = 1e-4, scalar_tol: float = 1e-3,
                     m_X: float | None = None, mass_tol: float = 1e-6) -> Verdict:
    """Residual bounds for the equality case.

    Given ``m_X`` above ``mass_tol`` the implication is vacuous: residuals are
    still reported, the verdict passes with status ``non-rigid``.
    """
    rep = rigidity_residual(u)
    margin = min(vector_tol - rep.vector_residual, scalar_tol - rep.conformal_scalar_residual)
    details = asdict(rep)
    if m_X is not None:
        details["m_X"] = m_X
        if m_X > mass_tol:
            return Verdict.from_margin("rigidity", 0.0, 0.0, "not tested: m_X > 0", status="non-rigid",
                                       details=details)
    return Verdict.from_margin("rigidity", margin, 0.0,
                               f"vector residual <= {vector_tol:g} and conformal residual <= {scalar_tol:g}",
                               details=details)


# ---------------------------------------------------------------------------
# boundary variant


def boundary_variant(chart: Chart, X: DriftField, k: float, mass_radii=None, tol: float = 1e-8) -> Verdict:
    """16 pi - int (H - g(X, nu))^2 >= 0 on the boundary, then F(1) <= 8 pi m_X / B and m_X >= 0."""
    validate_k(k)
    if chart.boundary_radius is None:
        raise ParameterError("boundary_variant needs a chart with a boundary sphere")
    u = solve_radial(chart, X, boundary=True)
    s = extract_level(u, 1.0)
    Q = 16 * np.pi - float(np.dot(s.weights, (s.H - s.X_nu) ** 2))
    radii = sweep_radii(max(10.0, 2 * chart.boundary_radius), max(1e3, 200 * chart.boundary_radius))
    if mass_radii is not None:
        radii = np.asarray(mass_radii, float)
    hyp = hypothesis_audit(chart, X, k)
    details = {"boundary_integral_16pi_minus": Q, "boundary_radius": chart.boundary_radius, "B": u.B,
               "hypotheses": hyp.to_json()}
    if Q < -tol or not hyp.passed:
        details["reason"] = ("boundary condition 16 pi - int (H - g(X,nu))^2 >= 0 fails" if Q < -tol
                             else "interior hypotheses fail") + "; no mass claim"
        margin = Q if Q < -tol else hyp.margin
        return Verdict.from_margin("boundary_variant", margin, tol, f"absolute {tol:g}", status="hypothesis not met",
                                   details=details)
    from .level_set_flow import F_from_surface

    F1 = F_from_surface(s).F
    mass = x_adm_mass(chart, X, radii)
    target = 8 * np.pi * mass.extrapolated / u.B
    mtol = tol + 3 * mass.residual
    steps = {"F1_minus_Q_over_4": F1 - Q / 4, "target_minus_F1": target - F1, "m_X": mass.extrapolated}
    details.update(steps, F1=F1, target_8pi_mX_over_B=target)
    return Verdict.from_margin("boundary_variant", min(steps.values()), mtol, f"{tol:g} + 3 * sweep fit rms",
                               details=details)


# ---------------------------------------------------------------------------
# coarea


def coarea_crosscheck(u: PotentialField, ts=(10.0,), n_grid=(20, 40, 80), rel_tol: float = 1e-3) -> Verdict:
    """Bulk integral against the trapezoid rule for int F at each t; reports the refinement order."""
    rows = []
    worst = 0.0
    for t in ts:
        bulk = coarea_bulk(u, float(t))
        errs = [abs(trapezoid_F(u, float(t), n) - bulk) for n in n_grid]
        scale = max(abs(bulk), 1e-6 * 2 * np.pi * t * t)
        orders = [float(np.log2(errs[i] / errs[i + 1])) if errs[i + 1] > 0 else float("inf")
                  for i in range(len(errs) - 1)]
        rows.append({"t": float(t), "bulk": bulk, "errors": errs, "relative_error": errs[-1] / scale,
                     "orders": orders, "n_grid": list(n_grid)})
        worst = max(worst, errs[-1] / scale)
    return Verdict.from_margin("coarea_crosscheck", -worst, rel_tol,
                               f"relative {rel_tol:g} of max(|bulk|, 1e-6 * 2 pi t^2)", details={"levels": rows})
