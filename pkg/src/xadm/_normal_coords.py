"""Riemannian normal coordinates at a point, as truncated Taylor maps.

The chart point is x = o + P E(y) where P normalizes g(o) to the identity
and E is the exponential map, expanded to degree 5 by solving the geodesic
equation order by order:

    n (n - 1) E_n = - [Gamma(E)(V, V)]_{degree n},   V = sum_m m E_m.

Metric, inverse metric, Christoffel symbols and drift are then re-expanded
in y.  Only the 1-jet conditions g(0) = I, dg(0) = 0 matter for the pole
ledger; the higher-degree terms of E bring y close to true normal
coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from ._taylor import Taylor, matrix_inverse, monomials
from .chart_geometry import Chart, DriftField, drift_jet, metric_jet

EXP_DEGREE = 5


def christoffel_series(g: Taylor) -> Taylor:
    """Gamma^k_ij series from a metric series (one degree lower)."""
    ginv = matrix_inverse(g)
    dg = g.gradient()  # [i, j, a] = d_a g_ij
    c = dg.coef
    low = 0.5 * (np.einsum("jliA->lijA", c) + np.einsum("iljA->lijA", c) - np.einsum("ijlA->lijA", c))
    return ginv.truncate(dg.deg).einsum("kl,lij->kij", Taylor(low, dg.deg))


@dataclass(frozen=True)
class NormalFrame:
    o: np.ndarray
    P: np.ndarray
    Pinv: np.ndarray
    E: Taylor  # zeta -> normal coords inverse: zeta = E(y)
    metric: Taylor  # g~_ab(y), degree 4
    inverse_metric: Taylor  # degree 4
    christoffel: Taylor  # degree 3
    drift: Taylor  # degree 3

    def ledger_jets(self) -> dict:
        """Derivative tensors at y = 0 with derivative axes first."""

        def first(t, n, comp_axes):
            T = t.derivative_tensor(n)
            return np.moveaxis(T, tuple(range(comp_axes, comp_axes + n)), tuple(range(n)))

        gi, G, X = self.inverse_metric, self.christoffel, self.drift
        return {
            "X0": X.coef[..., 0].copy(),
            "dX": first(X, 1, 1), "ddX": first(X, 2, 1), "d3X": first(X, 3, 1),
            "ddg": first(gi, 2, 2), "d3g": first(gi, 3, 2), "d4g": first(gi, 4, 2),
            "dG": first(G, 1, 3), "ddG": first(G, 2, 3), "d3G": first(G, 3, 3),
        }

    # coordinate maps --------------------------------------------------------
    def zeta_of_y(self, y):
        return self.E(y)

    def y_of_x(self, x, iters: int = 30, tol: float = 1e-15):
        """Newton inversion of x = o + P E(y), vectorized."""
        x = np.atleast_2d(np.asarray(x, float))
        zeta = (x - self.o) @ self.Pinv.T
        y = zeta.copy()
        jac = self.E.gradient()
        for _ in range(iters):
            r = self.E(y) - zeta
            if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(zeta))):
                break
            J = jac(y)  # [..., i, a]
            y = y - np.linalg.solve(J, r[..., None])[..., 0]
        return y

    def y_of_x_jax(self, x, iters: int = 8):
        """Differentiable Newton inversion for a single point."""
        zeta = self.Pinv @ (x - jnp.asarray(self.o))
        mons = jnp.asarray(np.array(monomials(self.E.deg)))
        coef = jnp.asarray(self.E.coef)
        jcoef = jnp.asarray(self.E.gradient().coef)
        jmons = jnp.asarray(np.array(monomials(self.E.deg - 1)))

        def E(y):
            return coef @ jnp.prod(y[None, :] ** mons, axis=-1)

        def J(y):
            return jcoef @ jnp.prod(y[None, :] ** jmons, axis=-1)

        y = zeta
        for _ in range(iters):
            y = y - jnp.linalg.solve(J(y), E(y) - zeta)
        return y


def build_normal_frame(chart: Chart, X: DriftField, o) -> NormalFrame:
    o = np.asarray(o, dtype=float)
    gj = metric_jet(chart, o, 4)
    xj = drift_jet(X, o, 3)
    g0 = gj[0]
    L = np.linalg.cholesky(g0)
    P = np.linalg.inv(L).T  # P^T g0 P = I
    Pinv = np.linalg.inv(P)
    deg = EXP_DEGREE

    g_z = Taylor.from_derivatives(gj, 4)
    x_z = Taylor.from_derivatives(xj, 3)
    lin = Taylor(np.einsum("ia,aK->iK", P, Taylor.coordinates(4).coef), 4)
    g_zeta = Taylor(np.einsum("ia,ijK,jb->abK", P, g_z.compose(lin, 4).coef, P), 4)
    x_zeta = Taylor(np.einsum("ai,iK->aK", Pinv, x_z.compose(lin.truncate(3), 3).coef), 3)
    gam_zeta = christoffel_series(g_zeta)  # degree 3

    E = Taylor.coordinates(deg)
    degs = np.array([sum(m) for m in monomials(deg)])
    for n in range(2, deg + 1):
        V = Taylor(np.zeros_like(E.coef), deg)
        for m in range(1, n):
            V = V + E.homogeneous(m).scale(m)
        G = gam_zeta.compose(E, deg)
        Q = G.einsum("kij,i->kj", V).einsum("kj,j->k", V)
        E = E + Taylor(-(Q.coef * (degs == n)) / (n * (n - 1)), deg)

    J = E.gradient()  # [i, a] = d_a E^i, degree 4
    g_y = J.einsum("ia,ij->aj", g_zeta.compose(E, 4)).einsum("aj,jb->ab", J)
    ginv_y = matrix_inverse(g_y)
    gam_y = christoffel_series(g_y)
    Jinv = matrix_inverse(J.truncate(3))
    x_y = Jinv.einsum("ai,i->a", x_zeta.compose(E.truncate(3), 3))
    return NormalFrame(o, P, Pinv, E, g_y, ginv_y, gam_y, x_y)
