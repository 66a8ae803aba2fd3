"""Truncated Taylor polynomials in three variables.

A polynomial is stored as a coefficient array whose last axis runs over the
monomials of total degree <= ``deg`` (graded order); any leading axes are
tensor components.  Products use a precomputed structure tensor so that
matrix-valued series can be multiplied with a single einsum.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def monomials(deg: int) -> tuple[tuple[int, int, int], ...]:
    out = []
    for d in range(deg + 1):
        for a in range(d, -1, -1):
            for b in range(d - a, -1, -1):
                out.append((a, b, d - a - b))
    return tuple(out)


@lru_cache(maxsize=None)
def _index(deg: int) -> dict:
    return {m: k for k, m in enumerate(monomials(deg))}


@lru_cache(maxsize=None)
def _product_table(deg: int) -> np.ndarray:
    mons = monomials(deg)
    idx = _index(deg)
    n = len(mons)
    table = np.zeros((n, n, n))
    for i, a in enumerate(mons):
        for j, b in enumerate(mons):
            c = (a[0] + b[0], a[1] + b[1], a[2] + b[2])
            if sum(c) <= deg:
                table[i, j, idx[c]] = 1.0
    return table


@lru_cache(maxsize=None)
def _degrees(deg: int) -> np.ndarray:
    return np.array([sum(m) for m in monomials(deg)])


class Taylor:
    """Truncated polynomial with tensor-valued coefficients."""

    __slots__ = ("coef", "deg")

    def __init__(self, coef, deg: int):
        self.coef = np.asarray(coef, dtype=float)
        self.deg = deg
        if self.coef.shape[-1] != len(monomials(deg)):
            raise ValueError("coefficient axis does not match degree")

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, shape, deg):
        return cls(np.zeros(tuple(shape) + (len(monomials(deg)),)), deg)

    @classmethod
    def constant(cls, value, deg):
        value = np.asarray(value, dtype=float)
        p = cls.zeros(value.shape, deg)
        p.coef[..., 0] = value
        return p

    @classmethod
    def coordinates(cls, deg):
        """The identity map y -> y as a vector-valued polynomial."""
        p = cls.zeros((3,), deg)
        idx = _index(deg)
        for i in range(3):
            e = [0, 0, 0]
            e[i] = 1
            p.coef[i, idx[tuple(e)]] = 1.0
        return p

    @classmethod
    def from_derivatives(cls, tensors, deg):
        """Build from derivative tensors ``tensors[n]`` of shape comp + (3,)*n.

        Derivative axes are the trailing ones.
        """
        comp = np.asarray(tensors[0]).shape
        p = cls.zeros(comp, deg)
        for k, m in enumerate(monomials(deg)):
            n = sum(m)
            if n >= len(tensors):
                continue
            t = np.asarray(tensors[n])
            axes = (0,) * m[0] + (1,) * m[1] + (2,) * m[2]
            val = t[(Ellipsis,) + axes] if n else t
            p.coef[..., k] = val / (factorial(m[0]) * factorial(m[1]) * factorial(m[2]))
        return p

    # algebra ------------------------------------------------------------
    @property
    def shape(self):
        return self.coef.shape[:-1]

    def truncate(self, deg):
        if deg >= self.deg:
            return self
        n = len(monomials(deg))
        return Taylor(self.coef[..., :n].copy(), deg)

    def lift(self, deg):
        if deg <= self.deg:
            return self.truncate(deg)
        out = Taylor.zeros(self.shape, deg)
        out.coef[..., : self.coef.shape[-1]] = self.coef
        return out

    def __add__(self, other):
        if isinstance(other, Taylor):
            d = min(self.deg, other.deg)
            return Taylor(self.truncate(d).coef + other.truncate(d).coef, d)
        out = Taylor(self.coef.copy(), self.deg)
        out.coef[..., 0] += other
        return out

    __radd__ = __add__

    def __neg__(self):
        return Taylor(-self.coef, self.deg)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s):
        return Taylor(self.coef * s, self.deg)

    def einsum(self, spec: str, other: "Taylor") -> "Taylor":
        """Component einsum combined with polynomial multiplication.

        ``spec`` names only the component axes, e.g. ``"ij,jk->ik"``.
        """
        d = min(self.deg, other.deg)
        a, b = self.truncate(d), other.truncate(d)
        lhs, out = spec.split("->")
        s1, s2 = lhs.split(",")
        full = f"{s1}A,{s2}B,ABC->{out}C"
        return Taylor(np.einsum(full, a.coef, b.coef, _product_table(d)), d)

    def mul(self, other: "Taylor") -> "Taylor":
        """Scalar polynomial times tensor polynomial (or elementwise)."""
        return self.einsum("...,...->...", other) if self.shape == other.shape else _bmul(self, other)

    def homogeneous(self, n):
        mask = _degrees(self.deg) == n
        return Taylor(self.coef * mask, self.deg)

    def diff(self, axis: int) -> "Taylor":
        mons = monomials(self.deg)
        idx = _index(self.deg)
        out = Taylor.zeros(self.shape, self.deg)
        for k, m in enumerate(mons):
            if m[axis] == 0:
                continue
            lower = list(m)
            lower[axis] -= 1
            out.coef[..., idx[tuple(lower)]] += m[axis] * self.coef[..., k]
        return out.truncate(self.deg - 1) if self.deg > 0 else out

    def gradient(self) -> "Taylor":
        """Append a trailing derivative axis."""
        parts = [self.diff(a) for a in range(3)]
        return Taylor(np.stack([p.coef for p in parts], axis=-2), parts[0].deg)

    def derivative_tensor(self, n: int) -> np.ndarray:
        """n-th derivative at the origin, derivative axes trailing."""
        out = np.zeros(self.shape + (3,) * n)
        idx = _index(self.deg)
        for axes in np.ndindex(*((3,) * n)):
            m = (axes.count(0), axes.count(1), axes.count(2))
            if sum(m) > self.deg:
                continue
            c = self.coef[..., idx[m]]
            out[(Ellipsis,) + axes] = c * factorial(m[0]) * factorial(m[1]) * factorial(m[2])
        return out

    def compose(self, inner: "Taylor", deg: int | None = None) -> "Taylor":
        """self(inner(y)) where ``inner`` is a 3-vector series with no constant term."""
        if deg is None:
            deg = inner.deg
        if np.any(np.abs(inner.coef[..., 0]) > 0):
            raise ValueError("inner series must vanish at the origin")
        inner = inner.lift(deg) if inner.deg < deg else inner.truncate(deg)
        comps = [Taylor(inner.coef[i], deg) for i in range(3)]
        one = Taylor.constant(1.0, deg)
        powers = []
        for c in comps:
            pw = [one]
            for _ in range(self.deg):
                pw.append(pw[-1].einsum(",->", c))
            powers.append(pw)
        out = Taylor.zeros(self.shape, deg)
        for k, m in enumerate(monomials(self.deg)):
            if sum(m) > deg:
                continue
            term = powers[0][m[0]].einsum(",->", powers[1][m[1]]).einsum(",->", powers[2][m[2]])
            out.coef += np.multiply.outer(self.coef[..., k], term.coef)
        return out

    def __call__(self, y):
        """Evaluate at points ``y`` of shape (..., 3)."""
        y = np.asarray(y, dtype=float)
        mons = np.array(monomials(self.deg))
        vals = np.prod(y[..., None, :] ** mons, axis=-1)
        return np.tensordot(vals, self.coef, axes=([-1], [-1])) if self.shape == () else np.einsum(
            "...k,ck->...c", vals, self.coef.reshape(-1, self.coef.shape[-1])
        ).reshape(y.shape[:-1] + self.shape)


def _bmul(a: Taylor, b: Taylor) -> Taylor:
    if a.shape == ():
        return a.einsum(",...->...", b)
    if b.shape == ():
        return b.einsum(",...->...", a)
    raise ValueError("incompatible shapes for mul")


def matrix_inverse(m: Taylor) -> Taylor:
    """Inverse of a matrix series with invertible constant term (Neumann series)."""
    m0inv = np.linalg.inv(m.coef[..., 0])
    n = m.shape[0]
    rest = Taylor(np.einsum("ij,jkA->ikA", m0inv, m.coef), m.deg) - Taylor.constant(np.eye(n), m.deg)
    out = Taylor.constant(np.eye(n), m.deg)
    term = Taylor.constant(np.eye(n), m.deg)
    for _ in range(m.deg):
        term = -term.einsum("ij,jk->ik", rest)
        out = out + term
    return Taylor(np.einsum("ijA,jk->ikA", out.coef, m0inv), m.deg)


def symmetric_index_tuples(n: int):
    return list(combinations_with_replacement(range(3), n))
