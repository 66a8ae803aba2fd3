"""Closed-form coefficients of the pole series w.

Inputs are derivative tensors at the pole in coordinates where
g^{ij}(o) = delta, d g(o) = 0 and Gamma(o) = 0.  Derivative indices come
first, matching the ledger: ``dX[a, k] = d_a X^k``,
``ddg[a, b, i, j] = d_a d_b g^{ij}``, ``dG[a, k, i, j] = d_a Gamma^k_ij``.

``variant="literal"`` reproduces the combined ledger verbatim.  The default
``"corrected"`` changes two drift coefficients that multiply X(o): the
B-tilde contribution to d2 enters with weight -1/2, and the X e1
contribution to f2 with weight +3/2, which is what the per-term expansion
of L_X[|x| (a1 + c1 + e1)] produces.  Both variants agree whenever X(o) = 0.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np


def traces(T: np.ndarray) -> np.ndarray:
    """Sum over every placement of a contracted pair (i, i) among the slots."""
    r = T.ndim
    out = 0.0
    for p, q in combinations(range(r), 2):
        out = out + np.trace(T, axis1=p, axis2=q)
    return out


def insert_vec(v: np.ndarray, T: np.ndarray) -> np.ndarray:
    """v^i contracted with each slot of T in turn, free slots kept in order."""
    return sum(np.tensordot(v, T, axes=([0], [p])) for p in range(T.ndim))


def insert_mat(M: np.ndarray, T: np.ndarray) -> np.ndarray:
    """M[a, k] contracted with each slot of T; result [a, remaining slots]."""
    return sum(np.tensordot(M, T, axes=([1], [p])) for p in range(T.ndim))


def insert_pair(H: np.ndarray, T: np.ndarray) -> np.ndarray:
    """H[a, b, i, j] contracted with every ordered slot pair (p<q) of T."""
    return sum(np.tensordot(H, T, axes=([2, 3], [p, q])) for p, q in combinations(range(T.ndim), 2))


def outer(*ts):
    out = ts[0]
    for t in ts[1:]:
        out = np.multiply.outer(out, t)
    return out


def compute_ledger(jets: dict, variant: str = "corrected") -> dict:
    """Return coefficients and every intermediate tensor of the ledger.

    ``jets`` keys: X0, dX, ddX, d3X, ddg, d3g, d4g, dG, ddG, d3G.
    """
    if variant not in ("corrected", "literal"):
        raise ValueError("variant must be 'corrected' or 'literal'")
    X = np.asarray(jets["X0"], float)
    dX, ddX, d3X = jets["dX"], jets["ddX"], jets["d3X"]
    ddg, d3g, d4g = jets["ddg"], jets["d3g"], jets["d4g"]
    dG, ddG, d3G = jets["dG"], jets["ddG"], jets["d3G"]
    I = np.eye(3)

    # delta^{ij} contractions
    dT = np.einsum("akii->ak", dG)
    ddT = np.einsum("abkii->abk", ddG)
    d3T = np.einsum("abckii->abck", d3G)
    tr2 = np.einsum("abii->ab", ddg)
    tr3 = np.einsum("abcii->abc", d3g)
    tr4 = np.einsum("abcdii->abcd", d4g)

    t = {}
    t["A_hat"] = 0.5 * (dX + 2 * dT - tr2)
    t["B_hat"] = 1.5 * ddg
    t["C_hat"] = 0.5 * (0.5 * ddX + ddT - tr3 / 3.0)
    t["D_hat"] = 0.5 * d3g
    t["E_hat"] = 0.5 * (d3X / 6.0 + d3T / 3.0 + np.einsum("abij,ckij->abck", ddg, dG) - tr4 / 12.0)
    t["F_hat"] = d4g / 8.0

    c = {}
    b0 = 0.25 * X
    c["b0"] = b0
    t["A_star"] = -(0.5 * np.einsum("i,ai->a", b0, dX) + np.einsum("k,ak->a", b0, dT))
    t["B_star"] = outer(0.5 * dX + dT - 0.5 * tr2, b0) - np.einsum("i,abic->abc", b0, ddg)
    t["C_star"] = outer(1.5 * ddg, b0)
    t["D_star"] = -0.5 * (0.5 * np.einsum("i,abi->ab", b0, ddX) + np.einsum("k,abk->ab", b0, ddT))
    t["E_star"] = outer(0.25 * ddX + 0.5 * ddT - tr3 / 6.0, b0) - np.einsum("i,abcid->abcd", b0, d3g) / 3.0
    t["F_star"] = outer(0.5 * d3g, b0)

    e1 = t["B_hat"] / 18.0
    c1 = 0.25 * (2 * traces(e1) + t["A_hat"] + 0.5 * outer(b0, X))
    a1 = -np.trace(c1) + 0.25 * b0 @ X
    c.update(e1=e1, c1=c1, a1=a1)

    t["A_tilde"] = 2 * (-2 * c1 + traces(e1))
    t["B_tilde"] = -outer(X, c1) + insert_vec(X, e1)
    csym = c1 + c1.T
    t["C_tilde"] = (0.5 * np.einsum("abij,ij->ab", ddg, a1 * I + 2 * c1) - a1 * dT
                    - dT @ csym - 0.5 * a1 * dX - 0.5 * dX @ csym)
    t["D_tilde"] = (-0.5 * a1 * ddg - np.einsum("abci,id->abcd", ddg, csym) - 0.5 * outer(tr2, c1)
                    + insert_pair(ddg, e1) + outer(dT, c1) - insert_mat(dT, e1)
                    + 0.5 * outer(dX, c1) - 0.5 * insert_mat(dX, e1))
    ins = sum(np.tensordot(ddg, e1, axes=([2], [p])) for p in range(4))
    t["E_tilde"] = 3 * (0.5 * outer(ddg, c1) - ins - 0.5 * outer(tr2, e1) + outer(dT, e1) + 0.5 * outer(dX, e1))

    if variant == "literal":
        kx_e, kb = -3.0, 1.0
    else:
        kx_e, kb = 1.5, -0.5
    f2 = (t["D_hat"] + t["C_star"] + kx_e * outer(X, e1)) / 24.0
    d2 = (2 * traces(f2) + t["C_hat"] + t["B_star"] + kb * t["B_tilde"]) / 6.0
    b2 = 0.25 * (0.5 * a1 * X + 0.5 * X @ csym - t["A_star"] - 2 * traces(d2))
    c.update(f2=f2, d2=d2, b2=b2)

    t["A_sstar"] = 2 * (2 * b2 + traces(d2))
    t["B_sstar"] = 2 * (-3 * d2 + traces(f2))
    t["C_sstar"] = -0.5 * (outer(X, b2) + insert_vec(X, d2))
    t["D_sstar"] = -0.5 * (-outer(X, d2) + insert_vec(X, f2))

    l3 = outer(ddg, e1) / 8.0
    h3 = (t["F_hat"] + t["F_star"] + t["E_tilde"] + 1.5 * outer(X, f2) + 2 * traces(l3)) / 30.0
    e3 = (t["E_hat"] + t["E_star"] + t["D_tilde"] + t["D_sstar"] + 2 * traces(h3)) / 8.0
    c3 = -(t["D_star"] + t["C_tilde"] + t["C_sstar"] + 2 * traces(e3)) / 6.0
    a3 = X @ b2 / 24.0 - np.trace(c3) / 6.0
    c.update(l3=l3, h3=h3, e3=e3, c3=c3, a3=a3)

    t["A_bullet"] = 2 * (3 * c3 + traces(e3))
    t["B_bullet"] = 2 * (-4 * e3 + traces(h3))
    t["C_bullet"] = 2 * (-15 * h3 + traces(l3))
    return {"coefficients": c, "intermediates": t, "variant": variant}


ORDER = ("b0", "e1", "c1", "a1", "f2", "d2", "b2", "l3", "h3", "e3", "c3", "a3")

# (power of |x|, rank of the angular tensor) for every coefficient
LAYOUT = {
    "b0": (0, 1), "a1": (1, 0), "c1": (1, 2), "e1": (1, 4),
    "b2": (2, 1), "d2": (2, 3), "f2": (2, 5),
    "a3": (3, 0), "c3": (3, 2), "e3": (3, 4), "h3": (3, 6), "l3": (3, 8),
}


def contract_direction(T: np.ndarray, n: np.ndarray) -> np.ndarray:
    """T_{i1..ik} n^{i1} ... n^{ik} for directions n of shape (N, 3)."""
    out = np.broadcast_to(T, n.shape[:1] + T.shape)
    for _ in range(T.ndim):
        out = np.einsum("n...i,ni->n...", out, n)
    return out


def evaluate_series(coeffs: dict, y: np.ndarray) -> np.ndarray:
    """w(y) in the frame where the ledger was computed (numpy)."""
    y = np.atleast_2d(np.asarray(y, float))
    rho = np.linalg.norm(y, axis=-1)
    n = y / rho[:, None]
    w = 1.0 / rho
    for name, (pw, rank) in LAYOUT.items():
        T = np.asarray(coeffs[name], float)
        w = w + rho**pw * (contract_direction(T, n) if rank else T)
    return w
