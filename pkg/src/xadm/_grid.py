"""Finite-difference solve of L_X (4 pi G) = -4 pi delta_o on a Cartesian ball.

The singular part is removed first: 4 pi G = S + f, where S holds the
non-smooth low-order terms of the pole series (see ``SingularPart``).  The
regular part solves

    d_i(a^{ij} d_j f) - 1/2 b^i d_i f = -sqrt(g) L_X S,
    a^{ij} = sqrt(g) g^{ij},   b^i = sqrt(g) X^i,

with second-order central differences (diagonal terms at face midpoints,
mixed terms from node values).  Because the source side is evaluated by
automatic differentiation, f only has to be C^{1,1} at the pole.  On the outer sphere f takes the far-field ansatz
B/|x| + C/|x|^(1+tau); by linearity f = f0 + B f1 + C f2 and the outer
constants are fixed afterwards without further solves.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import jax
import jax.numpy as jnp
import numpy as np
import pyamg
import scipy.sparse as sp
from scipy import ndimage

from .chart_geometry import Chart, DriftField, det3, inverse_metric
from ._taylor import Taylor, monomials
from .errors import ParameterError, SolverError


@dataclass
class GridData:
    """Node values of f on the cube plus spline coefficients for evaluation."""

    origin: np.ndarray  # coordinates of node (0, 0, 0)
    h: float
    n: int
    o: np.ndarray
    r_out: float
    f: np.ndarray
    inside: np.ndarray
    singular: object  # S: numpy value/gradient/hessian callables
    _coef: dict

    @classmethod
    def build(cls, origin, h, n, o, r_out, f, inside, singular):
        grads = np.gradient(f, h)
        coef = {"f": ndimage.spline_filter(f, order=3)}
        for i in range(3):
            coef[f"d{i}"] = ndimage.spline_filter(grads[i], order=3)
            hi = np.gradient(grads[i], h)
            for j in range(i, 3):
                coef[f"d{i}{j}"] = ndimage.spline_filter(hi[j], order=3)
        return cls(np.asarray(origin), h, n, np.asarray(o), r_out, f, inside, singular, coef)

    def _interp(self, key, x):
        idx = ((x - self.origin) / self.h).T
        return ndimage.map_coordinates(self._coef[key], idx, order=3, prefilter=False, mode="nearest")

    @cached_property
    def node_u(self):
        """u at every grid node (the pole itself is never a node)."""
        ax = [self.origin[k] + self.h * np.arange(self.n) for k in range(3)]
        pts = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        return (1.0 - self.singular.value(pts)).reshape(self.f.shape) - self.f

    def in_domain(self, x):
        return np.linalg.norm(np.atleast_2d(x) - self.o, axis=-1) <= self.r_out

    def value(self, x):
        return 1.0 - self.singular.value(x) - self._interp("f", x)

    def gradient(self, x):
        df = np.stack([self._interp(f"d{i}", x) for i in range(3)], axis=-1)
        return -(self.singular.gradient(x) + df)

    def hessian(self, x):
        H = np.empty(x.shape[:1] + (3, 3))
        for i in range(3):
            for j in range(i, 3):
                H[:, i, j] = H[:, j, i] = self._interp(f"d{i}{j}", x)
        return -(self.singular.hessian(x) + H)


def _poly_eval_jax(t: Taylor):
    """Return zeta -> t(zeta) for a vector-valued Taylor polynomial (jax)."""
    mons = np.array(monomials(t.deg))
    coef = np.asarray(t.coef)

    def ev(z):
        return coef @ jnp.prod(z[None, :] ** mons, axis=-1)

    return ev


class SingularPart:
    """Non-smooth part of 4 pi G written in the linear coordinates zeta = P^-1 (x - o).

    With y = zeta + Y2(zeta) + Y3(zeta) the inverse exponential map, the
    1/rho, rho^0 and rho^1 terms of the series are re-expanded in zeta.  The
    difference to 4 pi G is then C^{1,1} at o and smooth elsewhere, which is
    what a second-order stencil needs; no cutoff is involved.
    """

    def __init__(self, pole, chunk: int = 4096):
        self.o = np.asarray(pole.o, float)
        self.chunk = chunk
        o = jnp.asarray(self.o)
        Pinv = jnp.asarray(pole.frame.Pinv)
        E = pole.frame.E.truncate(3)
        ident = Taylor.coordinates(3)
        nonlin = E - ident
        Y = ident
        for _ in range(3):
            Y = ident - nonlin.compose(Y, 3)
        Y2, Y3 = _poly_eval_jax(Y.homogeneous(2)), _poly_eval_jax(Y.homogeneous(3))
        b0 = jnp.asarray(np.asarray(pole.coefficients["b0"], float))

        def lead(x):
            z = Pinv @ (x - o)
            r2 = z @ z
            rho = jnp.sqrt(r2)
            y2, y3 = Y2(z), Y3(z)
            zy2 = z @ y2
            inv = (1.0 - zy2 / r2 - (2.0 * (z @ y3) + y2 @ y2) / (2.0 * r2) + 1.5 * zy2**2 / r2**2) / rho
            first = (b0 @ z + b0 @ y2) / rho - (b0 @ z) * zy2 / (rho * r2)
            return inv + first + pole.w_normal_jax(z, ("a1", "c1", "e1"), leading=False)

        self.lead_fn = lead
        self._fns = [jax.jit(jax.vmap(f)) for f in (lead, jax.grad(lead), jax.hessian(lead))]

    def _apply(self, k, x, shape):
        x = np.atleast_2d(np.asarray(x, float))
        out = np.zeros(x.shape[:1] + shape)
        buf = np.tile(self.o + 1.0, (self.chunk, 1))  # fixed shape: one compilation per function
        for s in range(0, x.shape[0], self.chunk):
            m = min(self.chunk, x.shape[0] - s)
            buf[:m] = x[s:s + m]
            out[s:s + m] = np.asarray(self._fns[k](jnp.asarray(buf)))[:m]
        return out

    def value(self, x):
        return self._apply(0, x, ())

    def gradient(self, x):
        return self._apply(1, x, (3,))

    def hessian(self, x):
        return self._apply(2, x, (3, 3))

    def source(self, chart: Chart, X: DriftField, x):
        """-L_X S at the points."""
        from .chart_geometry import christoffel, drift_jet, metric_jet

        x = np.atleast_2d(np.asarray(x, float))
        out = np.empty(x.shape[0])
        step = 65536
        for k in range(0, x.shape[0], step):
            xs = x[k:k + step]
            g, dg = metric_jet(chart, xs, 1)
            ginv = inverse_metric(g)
            gam = christoffel(ginv, dg)
            du, ddu = self.gradient(xs), self.hessian(xs)
            val = np.einsum("nij,nij->n", ginv, ddu) - np.einsum("nij,nkij,nk->n", ginv, gam, du)
            if not X.zero:
                val -= 0.5 * np.einsum("nk,nk->n", drift_jet(X, xs, 0)[0], du)
            out[k:k + step] = -val
        return out


def _coefficients(chart: Chart, X: DriftField, pts):
    g = np.asarray(chart.metric(jnp.asarray(pts)))
    sq = np.sqrt(det3(g))
    a = sq[..., None, None] * inverse_metric(g)
    b = sq[..., None] * np.asarray(X.components(jnp.asarray(pts))) if not X.zero else None
    return a, b, sq


def assemble(chart: Chart, X: DriftField, origin, h, n, inside):
    """Sparse matrix on inside nodes and the Dirichlet coupling matrix to outside nodes."""
    ax = origin[0] + h * np.arange(n), origin[1] + h * np.arange(n), origin[2] + h * np.arange(n)
    nodes = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    a_node, b_node, sq = _coefficients(chart, X, nodes.reshape(-1, 3))
    a_node = a_node.reshape(n, n, n, 3, 3)
    idx_all = np.arange(n**3).reshape(n, n, n)
    P = np.argwhere(inside)
    lin = idx_all[inside]
    rows, cols, vals = [], [], []

    def add(offset, coef):
        q = P + np.asarray(offset)
        rows.append(lin)
        cols.append(idx_all[q[:, 0], q[:, 1], q[:, 2]])
        vals.append(coef)

    diag = np.zeros(lin.size)
    for i in range(3):
        e = np.zeros(3, int)
        e[i] = 1
        for s in (1, -1):
            mid = nodes[tuple(P.T)] + 0.5 * s * h * e
            a_mid, _, _ = _coefficients(chart, DriftField.zero_field(), mid)
            c = a_mid[:, i, i] / h**2
            add(s * e, c)
            diag -= c
        for j in range(3):
            if j == i:
                continue
            f = np.zeros(3, int)
            f[j] = 1
            for si in (1, -1):
                q = P + si * e
                aij = a_node[q[:, 0], q[:, 1], q[:, 2], i, j]
                for sj in (1, -1):
                    add(si * e + sj * f, si * sj * aij / (4 * h**2))
        if b_node is not None:
            bi = b_node.reshape(n, n, n, 3)[tuple(P.T)][:, i]
            add(e, -0.25 * bi / h)
            add(-e, 0.25 * bi / h)
    rows.append(lin)
    cols.append(lin)
    vals.append(diag)
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    full = sp.csr_matrix((vals, (rows, cols)), shape=(n**3, n**3))
    A = full[lin][:, lin]
    out_idx = idx_all[~inside]
    D = full[lin][:, out_idx]
    return A.tocsr(), D.tocsr(), nodes, sq.reshape(n, n, n), out_idx


def solve_regular_part(chart: Chart, X: DriftField, pole, n: int, r_out: float, tau: float, tol: float = 1e-10,
                       n_terms: int = 3):
    """Basis solutions on the full cube: [source with zero outer data, then outer data |x|^(-1-k tau)]."""
    if n < 16:
        raise ParameterError("grid resolution must be at least 16")
    o = np.asarray(pole.o, float)
    h = 2 * r_out / (n - 4)
    L = r_out + 1.5 * h
    origin = o - L
    ax = origin[0] + h * np.arange(n)
    nodes_r = np.sqrt(sum(np.meshgrid(*(((ax - o[k]) ** 2) for k in range(3)), indexing="ij")))
    inside = nodes_r < r_out
    if chart.inner_radius > 0 and np.any(np.linalg.norm(o) - L < chart.inner_radius):
        raise ParameterError("the grid cube overlaps the chart's excluded ball")
    A, D, nodes, sq, out_idx = assemble(chart, X, origin, h, n, inside)
    sing = SingularPart(pole)
    pts_in = nodes[inside]
    src = sing.source(chart, X, pts_in) * sq[inside]
    if not np.all(np.isfinite(src)):
        raise SolverError("non-finite source term near the pole (is a node too close to o?)")
    r_outside = nodes_r[~inside]
    s_outside = sing.value(nodes[~inside])
    bdata = [-s_outside] + [r_outside ** (-1.0 - k * tau) for k in range(n_terms)]
    symmetric = X.zero and abs(A - A.T).max() < 1e-12 * abs(A).max()
    M = (-A).tocsr()
    ml = pyamg.ruge_stuben_solver(M, max_coarse=500)
    sols, info = [], {"n_unknowns": int(M.shape[0]), "h": h, "symmetric": bool(symmetric), "residuals": []}
    for k in range(len(bdata)):
        rhs = src if k == 0 else np.zeros_like(src)
        rhs = -(rhs - D @ bdata[k])  # negated system
        if not np.any(rhs):
            x = np.zeros_like(rhs)
            res = [0.0]
        else:
            res = []
            x = ml.solve(rhs, tol=tol, accel="cg" if symmetric else "bicgstab", maxiter=400, residuals=res)
        rel = float(np.linalg.norm(rhs - M @ x) / max(np.linalg.norm(rhs), 1e-300))
        if not np.isfinite(rel) or rel > 1e3 * tol:
            raise SolverError(f"linear solve did not converge (relative residual {rel:.2e})", history=res)
        info["residuals"].append(rel)
        full = np.zeros((n, n, n))
        full[inside] = x
        full[~inside] = bdata[k]
        sols.append(full)
    geom = {"origin": origin, "h": h, "n": n, "inside": inside, "nodes_r": nodes_r, "singular": sing}
    return sols, geom, info
