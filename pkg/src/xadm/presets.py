"""Named chart/drift presets.

Every preset returns a :class:`PresetInstance` holding the chart, its natural
drift field and metadata (symmetry, decay orders, whether the stronger decay
of the equality remark holds, the expected status of the hypotheses).

Point-mass charts need a regular pole, so the Schwarzschild and
Reissner-Nordstrom presets replace 1/r by the Newtonian potential of a
smooth compact mass distribution with density proportional to
(1 - r^2/a^2)^4.  Outside r = a the metric is exactly the textbook one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax.numpy as jnp
import numpy as np

from .chart_geometry import Chart, DriftField
from .errors import ParameterError

# ---------------------------------------------------------------------------
# smooth core potential


def core_potential(s, a):
    """rho_a as a function of s = r^2; equals 1/r for r >= a and is C^5 there."""
    a = float(a)
    inner = (693.0 / (256 * a) - 1155.0 * s / (256 * a**3) + 693.0 * s**2 / (128 * a**5)
             - 495.0 * s**3 / (128 * a**7) + 385.0 * s**4 / (256 * a**9) - 63.0 * s**5 / (256 * a**11))
    s_out = jnp.where(s < a * a, a * a, s)
    return jnp.where(s < a * a, inner, 1.0 / jnp.sqrt(s_out))


def core_mass_over_r3(s, a):
    """M(r)/r^3 with M = -r^2 rho'(r) the enclosed mass fraction (smooth in s)."""
    a = float(a)
    drho_ds = (-1155.0 / (256 * a**3) + 2 * 693.0 * s / (128 * a**5) - 3 * 495.0 * s**2 / (128 * a**7)
               + 4 * 385.0 * s**3 / (256 * a**9) - 5 * 63.0 * s**4 / (256 * a**11))
    s_out = jnp.where(s < a * a, a * a, s)
    return jnp.where(s < a * a, -2.0 * drho_ds, s_out ** -1.5)


def charge_fraction_over_r3(s, a, power=6):
    """Q(r)/r^3 with Q = M(r) * (1 - (1 - r^2/a^2)^power) for r < a, 1 outside."""
    a = float(a)
    sig = jnp.where(s < a * a, 1.0 - (1.0 - s / (a * a)) ** power, 1.0)
    return core_mass_over_r3(s, a) * sig


def _r2(x):
    return jnp.sum(x * x, axis=-1)


def _conformal(psi4_fn):
    def metric(x):
        f = psi4_fn(_r2(x))
        return f[..., None, None] * jnp.eye(3)

    return metric


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class PresetInstance:
    name: str
    chart: Chart
    drift: DriftField
    params: dict
    default_k: float
    hypotheses_expected: str  # "hold" | "violated" | "unknown"
    symmetric: bool
    strong_decay: bool
    charge_field: Callable | None = None
    closed_form_u: Callable | None = None
    notes: str = ""


@dataclass(frozen=True)
class ChartPreset:
    name: str
    builder: Callable
    parameters: dict  # name -> (default, lo, hi, description)
    description: str
    symmetric: bool
    default_path: str
    extra: dict = field(default_factory=dict)

    def build(self, **params) -> PresetInstance:
        full = {k: v[0] for k, v in self.parameters.items()}
        for k, v in params.items():
            if k not in self.parameters:
                raise ParameterError(f"preset {self.name!r} has no parameter {k!r}; "
                                     f"known: {sorted(self.parameters)}")
            full[k] = v
        for k, (_, lo, hi, _) in self.parameters.items():
            v = full[k]
            if isinstance(v, bool) or lo is None:
                continue
            if not (lo <= float(v) <= hi):
                raise ParameterError(f"preset {self.name!r}: parameter {k}={v} outside [{lo}, {hi}]")
        return self.builder(**full)


def _euclidean():
    chart = Chart("euclidean", lambda x: jnp.broadcast_to(jnp.eye(3), x.shape[:-1] + (3, 3)),
                  declared_tau=1.0, radial=True, strong_decay=True)
    return PresetInstance("euclidean", chart, DriftField.zero_field(), {}, 1.0, "hold", True, True,
                          closed_form_u=lambda r: 1.0 - 1.0 / r)


def _euclidean_exterior(r0):
    chart = Chart("euclidean_exterior", lambda x: jnp.broadcast_to(jnp.eye(3), x.shape[:-1] + (3, 3)),
                  inner_radius=r0, boundary_radius=r0, declared_tau=1.0, radial=True,
                  strong_decay=True, params={"r0": r0})
    return PresetInstance("euclidean_exterior", chart, DriftField.zero_field(), {"r0": r0}, 1.0, "hold",
                          True, True, closed_form_u=lambda r: 1.0 - r0 / r)


def _schwarzschild(m, core):
    psi4 = lambda s: (1.0 + 0.5 * m * core_potential(s, core)) ** 4  # noqa: E731
    chart = Chart("schwarzschild", _conformal(psi4), declared_tau=1.0, radial=True, strong_decay=True,
                  params={"m": m, "core": core})
    return PresetInstance("schwarzschild", chart, DriftField.zero_field(), {"m": m, "core": core}, 1.0,
                          "hold" if m >= 0 else "violated", True, True,
                          notes="regular core of radius `core`; exact isotropic Schwarzschild outside")


def _schwarzschild_exterior(m, r0):
    if r0 <= abs(m) / 2:
        raise ParameterError("schwarzschild_exterior needs r0 > |m|/2")
    psi4 = lambda s: (1.0 + 0.5 * m / jnp.sqrt(s)) ** 4  # noqa: E731
    chart = Chart("schwarzschild_exterior", _conformal(psi4), inner_radius=r0, boundary_radius=r0,
                  declared_tau=1.0, radial=True, strong_decay=True, params={"m": m, "r0": r0})
    return PresetInstance("schwarzschild_exterior", chart, DriftField.zero_field(), {"m": m, "r0": r0}, 1.0,
                          "hold" if m >= 0 else "violated", True, True)


def _reissner_nordstrom(m, q, core):
    def psi4(s):
        rho = core_potential(s, core)
        return ((1.0 + 0.5 * m * rho) ** 2 - 0.25 * q * q * rho * rho) ** 2

    def efield(x):
        return q * charge_fraction_over_r3(_r2(x), core)[..., None] * x

    chart = Chart("reissner_nordstrom", _conformal(psi4), declared_tau=1.0, radial=True, strong_decay=True,
                  params={"m": m, "q": q, "core": core})
    drift = DriftField.electric(efield, tau0=1.0, radial=True, name=f"-2E(q={q})")
    ok = m >= abs(q)
    return PresetInstance("reissner_nordstrom", chart, drift, {"m": m, "q": q, "core": core}, -2.0,
                          "hold" if ok else "unknown", True, True, charge_field=efield,
                          notes="E = q x/|x|^3 outside the core; smooth charge fraction inside")


def _weighted_conformal(amplitude, width, conformal):
    A, s2 = float(amplitude), float(width) ** 2

    def f(r2):
        return A * jnp.exp(-r2 / s2)

    if conformal:
        metric = _conformal(lambda r2: jnp.exp(f(r2)))

        def comps(x):
            r2 = _r2(x)
            return (jnp.exp(-f(r2)) * f(r2) * (-2.0 / s2))[..., None] * x
    else:
        metric = lambda x: jnp.broadcast_to(jnp.eye(3), x.shape[:-1] + (3, 3))  # noqa: E731

        def comps(x):
            r2 = _r2(x)
            return (f(r2) * (-2.0 / s2))[..., None] * x

    params = {"amplitude": amplitude, "width": width, "conformal": conformal}
    chart = Chart("weighted_conformal", metric, declared_tau=1.0, radial=True, strong_decay=True, params=params)
    drift = DriftField("grad_f", comps, declared_tau0=1.0, radial=True, zero=(A == 0))
    return PresetInstance("weighted_conformal", chart, drift, params, -2.0,
                          "hold" if conformal else "unknown", True, True,
                          notes="f = A exp(-|x|^2/w^2); conformal=True gives g = e^f delta, X = grad_g f")


def _perturbed_flat(amplitude, tau):
    A, t = float(amplitude), float(tau)

    def metric(x):
        r2 = _r2(x)
        fac = A / (1.0 + r2) ** (1.0 + 0.5 * t)
        return jnp.eye(3) + fac[..., None, None] * x[..., :, None] * x[..., None, :]

    params = {"amplitude": amplitude, "tau": tau}
    chart = Chart("perturbed_flat", metric, declared_tau=t, radial=False, strong_decay=t >= 1.0, params=params)
    return PresetInstance("perturbed_flat", chart, DriftField.zero_field(), params, 1.0, "unknown", False,
                          t >= 1.0, notes="g = delta + A x_i x_j/(1+|x|^2)^(1+tau/2); grid path only")


PRESETS: dict[str, ChartPreset] = {
    p.name: p
    for p in [
        ChartPreset("euclidean", _euclidean, {}, "flat R^3", True, "radial"),
        ChartPreset("euclidean_exterior", _euclidean_exterior,
                    {"r0": (1.0, 1e-3, 1e3, "radius of the boundary sphere")},
                    "flat exterior of a coordinate sphere (boundary variant)", True, "radial"),
        ChartPreset("schwarzschild", _schwarzschild,
                    {"m": (1.0, -1.0, 10.0, "ADM mass (m<0 is the negative control)"),
                     "core": (2.0, 0.5, 50.0, "radius of the smooth mass core")},
                    "time-symmetric Schwarzschild slice with a smooth core", True, "radial"),
        ChartPreset("schwarzschild_exterior", _schwarzschild_exterior,
                    {"m": (1.0, -1.0, 10.0, "ADM mass"), "r0": (10.0, 1e-3, 1e4, "boundary radius")},
                    "isotropic Schwarzschild outside a coordinate sphere", True, "radial"),
        ChartPreset("reissner_nordstrom", _reissner_nordstrom,
                    {"m": (1.0, 0.0, 10.0, "ADM mass"), "q": (0.5, -10.0, 10.0, "charge"),
                     "core": (8.0, 1.0, 100.0, "radius of the smooth core")},
                    "time-symmetric charged slice with X = -2E", True, "radial"),
        ChartPreset("weighted_conformal", _weighted_conformal,
                    {"amplitude": (0.5, -5.0, 5.0, "weight amplitude A"),
                     "width": (1.0, 0.05, 100.0, "Gaussian width w"),
                     "conformal": (True, None, None, "g = e^f delta when true, flat otherwise")},
                    "weighted mass setting, X = grad f", True, "radial"),
        ChartPreset("perturbed_flat", _perturbed_flat,
                    {"amplitude": (0.01, -0.5, 0.5, "perturbation amplitude"),
                     "tau": (0.75, 0.51, 2.0, "decay order")},
                    "non-symmetric perturbation of the flat metric", False, "grid"),
    ]
}

DRIFTS = {
    "zero": lambda **kw: DriftField.zero_field(),
    "coulomb": lambda c=1.0, softening=0.5: DriftField.coulomb(c, softening),
}


def get_preset(name: str, **params) -> PresetInstance:
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name].build(**params)


def make_drift(name: str, inst: PresetInstance, **params) -> DriftField:
    """``auto`` returns the preset's natural drift."""
    if name == "auto":
        return inst.drift
    if name not in DRIFTS:
        raise ParameterError(f"unknown drift preset {name!r}; known: {sorted(DRIFTS) + ['auto']}")
    return DRIFTS[name](**params)


def list_presets() -> list[dict]:
    rows = []
    for p in PRESETS.values():
        inst = p.build()
        rows.append({
            "name": p.name,
            "description": p.description,
            "parameters": {k: {"default": v[0], "min": v[1], "max": v[2], "doc": v[3]}
                           for k, v in p.parameters.items()},
            "symmetric": p.symmetric,
            "default_path": p.default_path,
            "declared_tau": inst.chart.declared_tau,
            "declared_tau0": inst.drift.declared_tau0,
            "strong_decay": inst.strong_decay,
            "default_k": inst.default_k,
            "hypotheses_expected": inst.hypotheses_expected,
            "has_boundary": inst.chart.boundary_radius is not None,
        })
    return rows


