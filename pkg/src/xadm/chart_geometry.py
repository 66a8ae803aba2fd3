"""Coordinate charts of asymptotically flat 3-metrics, drift fields and
pointwise curvature.

Metric and drift callables take points of shape ``(..., 3)`` and return
``(..., 3, 3)`` and ``(..., 3)`` arrays.  They are written with
``jax.numpy`` so that derivative jets come from forward-mode automatic
differentiation; charts flagged ``jet_mode="fd"`` use centered finite
differences instead.  Derivative tables always carry the derivative axes
last, e.g. ``dg[..., i, j, a] = d_a g_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DomainError, ParameterError

Array = np.ndarray

# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class Chart:
    """Asymptotically flat chart on ``{|x| >= inner_radius}``.

    ``radial`` declares g = Phi(|x|) delta (conformally flat, spherically
    symmetric about the origin), which enables the ODE path of the solver.
    ``boundary_radius`` marks an inner boundary sphere for the
    manifold-with-boundary variant.
    """

    name: str
    metric: Callable
    inner_radius: float = 0.0
    declared_tau: float = 1.0
    boundary_radius: float | None = None
    h2_spherical_free: bool = True
    jet_mode: str = "analytic"
    radial: bool = False
    strong_decay: bool = False
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.jet_mode not in ("analytic", "fd"):
            raise ParameterError(f"jet_mode must be 'analytic' or 'fd', got {self.jet_mode!r}")
        if not self.declared_tau > 0.5:
            raise ParameterError("declared_tau must exceed 1/2")

    def g(self, x) -> Array:
        return np.asarray(self.metric(jnp.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class DriftField:
    """Vector field X with decay X = O(|x|^(-1-tau0)).

    ``radial`` declares X = chi(|x|) x.  ``zero`` short-circuits evaluation.
    """

    name: str
    components: Callable
    declared_tau0: float = 1.0
    radial: bool = True
    zero: bool = False
    jet_mode: str = "analytic"
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, x) -> Array:
        return np.asarray(self.components(jnp.asarray(x, dtype=float)))

    def __add__(self, other: "DriftField") -> "DriftField":
        f1, f2 = self.components, other.components
        return DriftField(
            name=f"{self.name}+{other.name}",
            components=lambda x: f1(x) + f2(x),
            declared_tau0=min(self.declared_tau0, other.declared_tau0),
            radial=self.radial and other.radial,
            zero=self.zero and other.zero,
            jet_mode="fd" if "fd" in (self.jet_mode, other.jet_mode) else "analytic",
        )

    def scaled(self, s: float) -> "DriftField":
        f = self.components
        return DriftField(
            name=f"{s}*{self.name}",
            components=lambda x: s * f(x),
            declared_tau0=self.declared_tau0,
            radial=self.radial,
            zero=self.zero or s == 0,
            jet_mode=self.jet_mode,
        )

    # constructors ---------------------------------------------------------
    @classmethod
    def zero_field(cls) -> "DriftField":
        return cls("zero", lambda x: jnp.zeros_like(x), declared_tau0=np.inf, radial=True, zero=True)

    @classmethod
    def gradient_of_weight(cls, f: Callable, chart: Chart | None = None, tau0: float = 1.0,
                           radial: bool = True, name: str = "grad_f") -> "DriftField":
        """X^i = g^{ij} d_j f; flat raising when ``chart`` is None."""
        grad = jax.grad(lambda p: f(p))

        def comps(x):
            x = jnp.asarray(x)
            flat = x.reshape(-1, 3)
            df = jax.vmap(grad)(flat)
            if chart is not None:
                ginv = jnp.linalg.inv(chart.metric(flat))
                df = jnp.einsum("nij,nj->ni", ginv, df)
            return df.reshape(x.shape)

        return cls(name, comps, declared_tau0=tau0, radial=radial)

    @classmethod
    def electric(cls, field_fn: Callable, tau0: float = 1.0, radial: bool = True,
                 name: str = "electric") -> "DriftField":
        """X = -2E for an electric field E."""
        return cls(name, lambda x: -2.0 * field_fn(x), declared_tau0=tau0, radial=radial)

    @classmethod
    def coulomb(cls, c: float, softening: float = 0.0) -> "DriftField":
        """X = c x / (|x|^2 + s^2)^(3/2)."""

        def comps(x):
            r2 = jnp.sum(x * x, axis=-1, keepdims=True)
            return c * x / (r2 + softening**2) ** 1.5

        return cls(f"coulomb(c={c},s={softening})", comps, declared_tau0=1.0, radial=True, zero=(c == 0))

    @classmethod
    def constant(cls, v) -> "DriftField":
        v = jnp.asarray(v, dtype=float)
        return cls("constant", lambda x: jnp.broadcast_to(v, jnp.shape(x)), declared_tau0=-1.0 + 1e-9,
                   radial=False, zero=bool(np.all(np.asarray(v) == 0)))


@dataclass(frozen=True)
class CurvatureReport:
    point: Array
    christoffel: Array  # [k, i, j]
    ricci: Array
    scalar: float
    div_x: float
    x_norm2: float
    k: float
    r_x_k: float


@dataclass(frozen=True)
class DecayAudit:
    radii: Array
    deviations: dict
    slopes: dict
    tau_fit: float
    tau0_fit: float
    tau_used: float
    tau_capped: bool
    metric_verdict: str
    drift_verdict: str
    passed: bool
    tolerance: float


# ---------------------------------------------------------------------------
# jets


def fd_step(x) -> Array:
    """Documented finite-difference step h = max(1e-4, 1e-3 |x|)."""
    return np.maximum(1e-4, 1e-3 * np.linalg.norm(np.asarray(x, dtype=float), axis=-1))


def _nest_jacfwd(fn, order):
    for _ in range(order):
        fn = jax.jacfwd(fn)
    return fn


def _analytic_jets(owner, fn, order):
    key = ("jets", order)
    if key not in owner._cache:
        single = lambda p: fn(p)  # noqa: E731
        fns = [_nest_jacfwd(single, n) for n in range(order + 1)]
        owner._cache[key] = jax.jit(jax.vmap(lambda p: tuple(f(p) for f in fns)))
    return owner._cache[key]


def _fd_jets(fn, pts, order, h=None):
    """Centered difference jets, second order accurate for every derivative."""
    pts = np.asarray(pts, dtype=float)
    hh = fd_step(pts) if h is None else np.broadcast_to(np.asarray(h, dtype=float), pts.shape[:1])
    base = np.asarray(fn(jnp.asarray(pts)))
    out = [base]
    eye = np.eye(3)
    for n in range(1, order + 1):
        tab = np.zeros(base.shape + (3,) * n)
        done = {}
        for axes in product(range(3), repeat=n):
            key = tuple(sorted(axes))
            if key in done:
                tab[(Ellipsis,) + axes] = done[key]
                continue
            acc = 0.0
            for signs in product((1.0, -1.0), repeat=n):
                shift = sum(s * eye[a] for s, a in zip(signs, key))
                val = np.asarray(fn(jnp.asarray(pts + hh[:, None] * shift)))
                acc = acc + np.prod(signs) * val
            res = acc / (2.0 * hh.reshape((-1,) + (1,) * (base.ndim - 1))) ** n
            done[key] = res
            tab[(Ellipsis,) + axes] = res
        out.append(tab)
    return out


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _check_domain(chart: Chart, pts):
    if chart.inner_radius > 0:
        r = np.linalg.norm(pts, axis=-1)
        bad = np.nonzero(r < chart.inner_radius * (1 - 1e-12))[0]
        if bad.size:
            raise DomainError(f"point {pts[bad[0]].tolist()} lies inside the excluded ball "
                              f"|x| < {chart.inner_radius}")


def check_positive_definite(g, pts):
    """Leading principal minors test; raises with the first offending point."""
    m1 = g[..., 0, 0]
    m2 = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    m3 = det3(g)
    ok = (m1 > 0) & (m2 > 0) & (m3 > 0) & np.all(np.isfinite(g), axis=(-1, -2))
    if not np.all(ok):
        k = int(np.nonzero(~ok.ravel())[0][0])
        raise DomainError(f"metric not positive definite at {np.asarray(pts).reshape(-1, 3)[k].tolist()}")


def metric_jet(chart: Chart, x, order: int = 2, h=None, check: bool = True) -> list:
    """Return ``[g, dg, ..., d^order g]`` at ``x`` (single point or batch)."""
    if not 0 <= order <= 4:
        raise ParameterError("metric jet order must be in 0..4")
    pts, single = _as_batch(x)
    _check_domain(chart, pts)
    if chart.jet_mode == "fd" or h is not None:
        jets = _fd_jets(chart.metric, pts, order, h)
    else:
        jets = [np.asarray(j) for j in _analytic_jets(chart, chart.metric, order)(jnp.asarray(pts))]
    if check:
        check_positive_definite(jets[0], pts)
    return [j[0] for j in jets] if single else jets


def drift_jet(X: DriftField, x, order: int = 1, h=None) -> list:
    """Return ``[X, dX, ..., d^order X]``, ``dX[..., i, a] = d_a X^i``."""
    if not 0 <= order <= 3:
        raise ParameterError("drift jet order must be in 0..3")
    pts, single = _as_batch(x)
    if X.zero:
        jets = [np.zeros(pts.shape[:1] + (3,) + (3,) * n) for n in range(order + 1)]
    elif X.jet_mode == "fd" or h is not None:
        jets = _fd_jets(X.components, pts, order, h)
    else:
        jets = [np.asarray(j) for j in _analytic_jets(X, X.components, order)(jnp.asarray(pts))]
    return [j[0] for j in jets] if single else jets


# ---------------------------------------------------------------------------
# pointwise tensors (batched over leading axes)


def det3(g):
    return (g[..., 0, 0] * (g[..., 1, 1] * g[..., 2, 2] - g[..., 1, 2] * g[..., 2, 1])
            - g[..., 0, 1] * (g[..., 1, 0] * g[..., 2, 2] - g[..., 1, 2] * g[..., 2, 0])
            + g[..., 0, 2] * (g[..., 1, 0] * g[..., 2, 1] - g[..., 1, 1] * g[..., 2, 0]))


def inverse_metric(g):
    """Adjugate over determinant; exact for 3x3, no iteration."""
    g = np.asarray(g)
    adj = np.empty_like(g)
    for i in range(3):
        for j in range(3):
            r = [a for a in range(3) if a != j]
            c = [b for b in range(3) if b != i]
            minor = (g[..., r[0], c[0]] * g[..., r[1], c[1]] - g[..., r[0], c[1]] * g[..., r[1], c[0]])
            adj[..., i, j] = (-1) ** (i + j) * minor
    return adj / det3(g)[..., None, None]


def christoffel(ginv, dg):
    """Gamma^k_ij from the inverse metric and dg[..., i, j, a]."""
    low = 0.5 * (np.einsum("...jla->...lja", dg) + np.einsum("...ila->...lai", dg)
                 - np.einsum("...ijl->...lij", dg))
    # low[..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    return np.einsum("...kl,...lij->...kij", ginv, low)


def christoffel_derivative(ginv, dg, ddg):
    """d_a Gamma^k_ij, returned as [..., k, i, j, a]."""
    dginv = -np.einsum("...km,...mna,...nl->...kla", ginv, dg, ginv)
    low = 0.5 * (np.einsum("...jla->...lja", dg) + np.einsum("...ila->...lai", dg)
                 - np.einsum("...ijl->...lij", dg))
    return np.einsum("...kla,...lij->...kija", dginv, low) + np.einsum("...kl,...lija->...kija", ginv, _dlow(ddg))


def _dlow(ddg):
    """d_a of 1/2 (d_i g_jl + d_j g_il - d_l g_ij) as [..., l, i, j, a]."""
    t1 = np.einsum("...jlia->...lija", ddg)
    t2 = np.einsum("...ilja->...lija", ddg)
    t3 = np.einsum("...ijla->...lija", ddg)
    return 0.5 * (t1 + t2 - t3)


def ricci_tensor(gam, dgam):
    """Ric_ij = d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik."""
    term1 = np.einsum("...kijk->...ij", dgam)
    term2 = np.einsum("...kikj->...ij", dgam)
    term3 = np.einsum("...kkl,...lij->...ij", gam, gam)
    term4 = np.einsum("...kjl,...lik->...ij", gam, gam)
    return term1 - term2 + term3 - term4


def validate_k(k: float) -> float:
    k = float(k)
    if -2.0 < k <= 0.0:
        raise ParameterError(f"k={k} is excluded: k must lie outside the interval (-2, 0]")
    return k


def _kfactor(k):
    return 1.0 if np.isinf(k) else 1.0 + 1.0 / k


def curvature_fields(chart: Chart, X: DriftField, pts, k: float = 1.0) -> dict:
    """Batched scalar quantities: R, div X, |X|^2, R_X^(k) at ``pts``."""
    k = validate_k(k)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    g, dg, ddg = metric_jet(chart, pts, 2)
    ginv = inverse_metric(g)
    gam = christoffel(ginv, dg)
    dgam = christoffel_derivative(ginv, dg, ddg)
    ric = ricci_tensor(gam, dgam)
    scal = np.einsum("...ij,...ij->...", ginv, ric)
    xv, dx = drift_jet(X, pts, 1)
    divx = np.einsum("...ii->...", dx) + np.einsum("...iij,...j->...", gam, xv)
    xn2 = np.einsum("...ij,...i,...j->...", g, xv, xv)
    return {
        "scalar": scal,
        "div_x": divx,
        "x_norm2": xn2,
        "r_x_k": scal + 2.0 * divx - _kfactor(k) * xn2,
        "christoffel": gam,
        "ricci": ric,
    }


def curvature_at(chart: Chart, x, X: DriftField, k: float = 1.0) -> CurvatureReport:
    """Levi-Civita curvature and R_X^(k) = R + 2 div X - (1 + 1/k)|X|^2 at one point."""
    f = curvature_fields(chart, X, np.asarray(x, dtype=float)[None, :], k)
    return CurvatureReport(
        point=np.asarray(x, dtype=float),
        christoffel=f["christoffel"][0],
        ricci=f["ricci"][0],
        scalar=float(f["scalar"][0]),
        div_x=float(f["div_x"][0]),
        x_norm2=float(f["x_norm2"][0]),
        k=float(k),
        r_x_k=float(f["r_x_k"][0]),
    )


# ---------------------------------------------------------------------------
# decay audit


def fibonacci_directions(n: int) -> Array:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5**0.5) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


FLOOR = 1e-13


def _slope(radii, dev):
    mask = dev > FLOOR
    if mask.sum() < 3:
        return None
    return float(np.polyfit(np.log(radii[mask]), np.log(dev[mask]), 1)[0])


def decay_audit(chart: Chart, X: DriftField, radii, n_dirs: int = 64, tolerance: float = 0.05,
                tau_cap: float = 1.0 - 1e-6) -> DecayAudit:
    """Log-log fit of shell suprema of g - delta, dg, ddg, X, dX.

    tau is read off as -slope(g - delta); tau0 as -slope(X) - 1, so that
    X ~ |x|^-2 reports tau0 = 1.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3 or np.any(np.diff(radii) <= 0):
        raise ParameterError("decay_audit needs at least 3 increasing radii")
    dirs = fibonacci_directions(n_dirs)
    dev = {k: np.zeros(radii.size) for k in ("g", "dg", "ddg", "X", "dX")}
    for n, r in enumerate(radii):
        pts = r * dirs
        g, dg, ddg = metric_jet(chart, pts, 2)
        xv, dx = drift_jet(X, pts, 1)
        dev["g"][n] = np.max(np.abs(g - np.eye(3)))
        dev["dg"][n] = np.max(np.abs(dg))
        dev["ddg"][n] = np.max(np.abs(ddg))
        dev["X"][n] = np.max(np.abs(xv))
        dev["dX"][n] = np.max(np.abs(dx))
    slopes = {k: _slope(radii, v) for k, v in dev.items()}
    if slopes["g"] is None:
        tau_fit, mverdict = np.inf, "exactly flat"
    else:
        est = [-slopes["g"]]
        if slopes["dg"] is not None:
            est.append(-slopes["dg"] - 1.0)
        if slopes["ddg"] is not None:
            est.append(-slopes["ddg"] - 2.0)
        tau_fit = float(min(est))
        mverdict = "pass" if tau_fit >= chart.declared_tau - tolerance else "fail"
    if slopes["X"] is None:
        tau0_fit, dverdict = np.inf, "exactly zero"
    else:
        est = [-slopes["X"] - 1.0]
        if slopes["dX"] is not None:
            est.append(-slopes["dX"] - 2.0)
        tau0_fit = float(min(est))
        dverdict = "pass" if tau0_fit >= X.declared_tau0 - tolerance else "fail"
    tau_eff = min(tau_fit, tau0_fit, chart.declared_tau, X.declared_tau0)
    capped = tau_eff > tau_cap
    return DecayAudit(
        radii=radii,
        deviations=dev,
        slopes=slopes,
        tau_fit=tau_fit,
        tau0_fit=tau0_fit,
        tau_used=float(min(tau_eff, tau_cap)),
        tau_capped=bool(capped),
        metric_verdict=mverdict,
        drift_verdict=dverdict,
        passed=mverdict != "fail" and dverdict != "fail",
        tolerance=tolerance,
    )
