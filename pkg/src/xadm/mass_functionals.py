"""X-ADM mass, ADM mass and total charge from coordinate-sphere sweeps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chart_geometry import Chart, DriftField, decay_audit, drift_jet, metric_jet
from .errors import LimitNotResolved, ParameterError


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre in cos(theta) times the trapezoid rule in phi.

    Exact for spherical harmonics of degree <= ``degree``.
    """

    degree: int
    directions: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, degree: int = 23) -> "SphereQuadrature":
        if degree < 1:
            raise ParameterError("quadrature degree must be positive")
        n_theta = degree // 2 + 1
        n_phi = degree + 1
        z, wz = np.polynomial.legendre.leggauss(n_theta)
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        s = np.sqrt(1 - z**2)
        dirs = np.stack(
            [np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)), np.outer(z, np.ones(n_phi))], axis=-1
        ).reshape(-1, 3)
        w = np.outer(wz, np.full(n_phi, 2 * np.pi / n_phi)).ravel()
        return cls(degree, dirs, w)


_DEFAULT_QUAD: dict = {}


def default_quadrature(degree: int = 23) -> SphereQuadrature:
    if degree not in _DEFAULT_QUAD:
        _DEFAULT_QUAD[degree] = SphereQuadrature.build(degree)
    return _DEFAULT_QUAD[degree]


@dataclass(frozen=True)
class MassEstimate:
    kind: str  # "x_adm" | "adm" | "charge"
    radii: np.ndarray
    values: np.ndarray
    extrapolated: float
    model: dict = field(default_factory=dict)
    residual: float = 0.0

    @property
    def per_radius(self):
        return list(zip(self.radii.tolist(), self.values.tolist()))

    def table(self):
        """Rows (r, value, |value - extrapolated|)."""
        return [(float(r), float(v), abs(float(v) - self.extrapolated)) for r, v in zip(self.radii, self.values)]


def sweep_radii(r_min: float, r_max: float, per_decade: int = 8) -> np.ndarray:
    n = int(round(per_decade * np.log10(r_max / r_min))) + 1
    return np.geomspace(r_min, r_max, max(n, 2))


def mass_integrand(chart: Chart, X: DriftField, x) -> np.ndarray:
    """(d_j g_ij - d_i g_jj + 2 X^i) x^i/|x| with Euclidean summation."""
    x = np.asarray(x, dtype=float)
    g, dg = metric_jet(chart, x, 1, check=False)
    xv = drift_jet(X, x, 0)[0]
    vec = np.einsum("...ijj->...i", dg) - np.einsum("...jji->...i", dg) + 2.0 * xv
    return np.einsum("...i,...i->...", vec, x) / np.linalg.norm(x, axis=-1)


def sphere_integral(fn: Callable, r: float, quad: SphereQuadrature | None = None) -> float:
    """Sum of w_k f(r n_k) r^2; ``fn`` is evaluated on all nodes at once."""
    quad = quad or default_quadrature()
    vals = np.asarray(fn(r * quad.directions), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = int(np.nonzero(~np.isfinite(vals))[0][0])
        raise LimitNotResolved(f"non-finite integrand at direction {quad.directions[bad].tolist()}, r={r}")
    return float(np.dot(quad.weights, vals) * r * r)


def extrapolate(radii, values, p: float, kind: str, tail_tol: float = 1e-2) -> MassEstimate:
    """Least squares on c0 + c1 r^-p."""
    radii, values = np.asarray(radii, float), np.asarray(values, float)
    A = np.stack([np.ones_like(radii), radii ** (-p)], axis=1)
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    fit = A @ coef
    resid = float(np.sqrt(np.mean((fit - values) ** 2)))
    scale = max(1.0, abs(coef[0]))
    dev = np.abs(values - coef[0])
    # tail must approach the limit; oscillation above tolerance is not resolved
    tail = dev[-3:]
    growing = np.any(np.diff(tail) > tail_tol * scale)
    if resid > tail_tol * scale or growing:
        raise LimitNotResolved(
            f"{kind} sweep did not settle (fit rms {resid:.3e}, tail {tail.tolist()})",
            {"radii": radii.tolist(), "values": values.tolist(), "c0": float(coef[0]), "c1": float(coef[1]), "p": p},
        )
    return MassEstimate(kind, radii, values, float(coef[0]), {"c0": float(coef[0]), "c1": float(coef[1]), "p": p}, resid)


def _check_radii(chart: Chart | None, radii):
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4 or radii.max() / radii.min() < 10 * (1 - 1e-12):
        raise ParameterError("a mass sweep needs at least 4 radii spanning one decade")
    if chart is not None and radii.min() <= chart.inner_radius:
        raise ParameterError("sweep radii must exceed the chart's inner radius")
    return radii


def _exponent(chart: Chart, X: DriftField, radii, tau: float | None) -> float:
    if tau is None:
        tau = decay_audit(chart, X, radii[-4:] if radii.size >= 4 else radii).tau_used
        if not np.isfinite(tau):
            tau = 1.0 - 1e-6
    return min(2 * tau - 1.0, tau)


def x_adm_mass(chart: Chart, X: DriftField, radii, quad: SphereQuadrature | None = None,
               tau: float | None = None) -> MassEstimate:
    """(1/16 pi) times the sphere integral per radius, extrapolated in r."""
    radii = _check_radii(chart, radii)
    vals = np.array([sphere_integral(lambda p: mass_integrand(chart, X, p), r, quad) for r in radii]) / (16 * np.pi)
    return extrapolate(radii, vals, _exponent(chart, X, radii, tau), "adm" if X.zero else "x_adm")


def total_charge(E, radii, quad: SphereQuadrature | None = None, p: float = 1.0) -> MassEstimate:
    """(1/4 pi) times the flux of E through coordinate spheres."""
    radii = _check_radii(None, radii)
    fn = E if not isinstance(E, DriftField) else E.__call__

    def integrand(x):
        ev = np.asarray(fn(x), dtype=float)
        return np.einsum("...i,...i->...", ev, x) / np.linalg.norm(x, axis=-1)

    vals = np.array([sphere_integral(integrand, r, quad) for r in radii]) / (4 * np.pi)
    return extrapolate(radii, vals, p, "charge")


def mass_linearity_check(chart: Chart, X1: DriftField, X2: DriftField, radii,
                         quad: SphereQuadrature | None = None) -> float:
    """|m_{X1+X2} - m_{X1} - m_{X2} + m_ADM| with a shared extrapolation exponent."""
    radii = _check_radii(chart, radii)
    zero = DriftField.zero_field()
    tau = decay_audit(chart, zero, radii[-4:]).tau_used
    tau = 1.0 - 1e-6 if not np.isfinite(tau) else tau
    m = {name: x_adm_mass(chart, Xf, radii, quad, tau=tau).extrapolated
         for name, Xf in (("sum", X1 + X2), ("x1", X1), ("x2", X2), ("adm", zero))}
    return abs(m["sum"] - m["x1"] - m["x2"] + m["adm"])
