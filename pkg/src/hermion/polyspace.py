"""Scaled tensor-product polynomials in (xi, eta, zeta).

A polynomial is stored as a dense ``(d+1, d+1, d+1)`` coefficient tensor
indexed ``c[k, l, s]`` for the monomial ``xi**k * eta**l * zeta**s`` with
``xi = (x - x_c) / dx``, ``eta = (y - y_c) / dy`` and ``zeta = (t - t_c) / dt``.

Besides the value types, the module provides the coefficient-space linear
operators (derivatives, truncated products, the divergence-free expansion)
as dense matrices acting on flattened tensors; the correction-function
assembly is built from those.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np
from numpy.polynomial import polynomial as npoly

AXES = {"x": 0, "y": 1, "t": 2}


class ContractError(ValueError):
    """Raised when operands violate a documented precondition."""


@dataclass(frozen=True)
class SpaceTimePoly:
    coeffs: np.ndarray
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]):
            raise ContractError(f"coefficient tensor must be cubic, got {c.shape}")
        if min(self.scales) <= 0:
            raise ContractError("scales must be strictly positive")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "scales", tuple(float(v) for v in self.scales))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def zeros(cls, d, center=(0.0, 0.0, 0.0), scales=(1.0, 1.0, 1.0)):
        return cls(np.zeros((d + 1,) * 3), center, scales)

    def local(self, x, y, t):
        xc, yc, tc = self.center
        dx, dy, dt = self.scales
        return (np.asarray(x) - xc) / dx, (np.asarray(y) - yc) / dy, (np.asarray(t) - tc) / dt

    def __call__(self, x, y, t):
        return eval_poly(self, x, y, t)

    def same_frame(self, other) -> bool:
        return np.allclose(self.center[: len(other.center)], other.center[: len(self.center)]) and np.allclose(
            self.scales[: len(other.scales)], other.scales[: len(self.scales)]
        )


@dataclass(frozen=True)
class MaterialPoly:
    """Spatial polynomial for 1/mu or 1/eps, coefficients ``c[k, l]``."""

    coeffs: np.ndarray
    center: tuple[float, float] = (0.0, 0.0)
    scales: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ContractError(f"material tensor must be square, got {c.shape}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "scales", tuple(float(v) for v in self.scales))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def constant(cls, value, d, center=(0.0, 0.0), scales=(1.0, 1.0)):
        c = np.zeros((d + 1, d + 1))
        c[0, 0] = value
        return cls(c, center, scales)

    def same_frame(self, other) -> bool:
        return SpaceTimePoly.same_frame(self, other)

    def __call__(self, x, y):
        xi = (np.asarray(x) - self.center[0]) / self.scales[0]
        eta = (np.asarray(y) - self.center[1]) / self.scales[1]
        return npoly.polyval2d(xi, eta, self.coeffs)


def eval_poly(P: SpaceTimePoly, x, y, t):
    xi, eta, zeta = P.local(x, y, t)
    return npoly.polyval3d(xi, eta, zeta, P.coeffs)


def diff_poly(P: SpaceTimePoly, axis: str, order: int = 1) -> SpaceTimePoly:
    """Exact derivative; orders above the degree give the zero polynomial."""
    if order == 0:
        return P
    ax = AXES[axis]
    d = P.degree
    out = np.zeros_like(P.coeffs)
    if order <= d:
        k = np.arange(d + 1 - order)
        fall = np.array([factorial(i + order) / factorial(i) for i in k])
        src = np.take(P.coeffs, k + order, axis=ax)
        shape = [1, 1, 1]
        shape[ax] = len(k)
        idx = [slice(None)] * 3
        idx[ax] = slice(0, d + 1 - order)
        out[tuple(idx)] = src * fall.reshape(shape) / P.scales[ax] ** order
    return SpaceTimePoly(out, P.center, P.scales)


def truncated_product(P, Q: SpaceTimePoly, d: int | None = None) -> SpaceTimePoly:
    """Product of ``P`` (material or space-time) and ``Q`` with every
    monomial of degree above ``d`` in some variable discarded."""
    if not P.same_frame(Q):
        raise ContractError("truncated_product operands must share center and scales")
    d = Q.degree if d is None else d
    n = d + 1
    q = np.zeros((n, n, n))
    m = min(n, Q.degree + 1)
    q[:m, :m, :m] = Q.coeffs[:m, :m, :m]
    out = np.zeros((n, n, n))
    pc = P.coeffs
    if pc.ndim == 2:
        for i in range(min(n, pc.shape[0])):
            for j in range(min(n, pc.shape[1])):
                if pc[i, j] != 0.0:
                    out[i:, j:, :] += pc[i, j] * q[: n - i, : n - j, :]
    else:
        for i, j, s in zip(*np.nonzero(pc)):
            if i < n and j < n and s < n:
                out[i:, j:, s:] += pc[i, j, s] * q[: n - i, : n - j, : n - s]
    return SpaceTimePoly(out, Q.center, Q.scales)


# ----------------------------------------------------------------------
# divergence-free magnetic parametrisation


def divfree_layout(d: int):
    """Index lists of the free magnetic parameters.

    Returns ``(hx_free, hy_free)``: the ``(k, l, s)`` triples of ``H_x`` and
    ``H_y`` that are independent once ``dx*d_x H_x + ... = 0`` is imposed on
    the coefficients.  ``H_x`` keeps its ``k = 0`` slab; ``H_y`` keeps every
    coefficient except ``(d, l >= 1, s)``.
    """
    hx = [(0, l, s) for l in range(d + 1) for s in range(d + 1)]
    hy = [
        (k, l, s)
        for k in range(d + 1)
        for l in range(d + 1)
        for s in range(d + 1)
        if not (k == d and l >= 1)
    ]
    return hx, hy


def n_divfree(d: int) -> int:
    return (d + 1) * (d * d + 2 * d + 2)


def n_unknowns(d: int) -> int:
    """Electric tensor plus free magnetic parameters for one subdomain."""
    return (d + 1) ** 3 + n_divfree(d)


@dataclass
class DivFreeMagneticCoeffs:
    values: np.ndarray
    degree: int
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_divfree(self.degree),):
            raise ContractError(
                f"expected {n_divfree(self.degree)} free parameters, got {self.values.shape}"
            )

    @classmethod
    def zeros(cls, d, **kw):
        return cls(np.zeros(n_divfree(d)), d, **kw)

    def set(self, field_name: str, k: int, l: int, s: int, value: float):
        hx, hy = divfree_layout(self.degree)
        table = hx if field_name == "Hx" else hy
        offset = 0 if field_name == "Hx" else len(hx)
        self.values[offset + table.index((k, l, s))] = value
        return self


def divfree_matrix(d: int, dx_over_dy: float = 1.0) -> np.ndarray:
    """Dense map from free magnetic parameters to flattened (H_x, H_y) tensors.

    The ``(l+1)/k`` index factors are formed as exact rationals and
    converted once, so the divergence identity holds to a single rounding.
    """
    n = (d + 1) ** 3
    hx_free, hy_free = divfree_layout(d)
    E = np.zeros((2 * n, len(hx_free) + len(hy_free)))
    flat = lambda k, l, s: (k * (d + 1) + l) * (d + 1) + s  # noqa: E731
    for col, (k, l, s) in enumerate(hx_free):
        E[flat(k, l, s), col] = 1.0
    off = len(hx_free)
    for col, (k, l, s) in enumerate(hy_free):
        E[n + flat(k, l, s), off + col] = 1.0
        # H_y(k, l, s) with l >= 1 fixes H_x(k+1, l-1, s)
        if l >= 1 and k + 1 <= d:
            ratio = Fraction(l, k + 1)
            E[flat(k + 1, l - 1, s), off + col] = -dx_over_dy * float(ratio)
    return E


def expand_divfree(r: DivFreeMagneticCoeffs) -> tuple[SpaceTimePoly, SpaceTimePoly]:
    d = r.degree
    dx, dy = r.scales[0], r.scales[1]
    full = divfree_matrix(d, dx / dy) @ r.values
    n = (d + 1) ** 3
    shape = (d + 1,) * 3
    return (
        SpaceTimePoly(full[:n].reshape(shape), r.center, r.scales),
        SpaceTimePoly(full[n:].reshape(shape), r.center, r.scales),
    )


def divergence_tensor(Px: SpaceTimePoly, Py: SpaceTimePoly) -> np.ndarray:
    """Coefficients of ``d_x Px + d_y Py`` (physical units)."""
    return diff_poly(Px, "x").coeffs + diff_poly(Py, "y").coeffs


# ----------------------------------------------------------------------
# coefficient-space matrices on flattened (d+1)^3 tensors


def flat_index(d: int) -> np.ndarray:
    n1 = d + 1
    return np.arange(n1**3).reshape(n1, n1, n1)


def derivative_matrix(d: int, axis: str, scale: float) -> np.ndarray:
    """Matrix of the first derivative along ``axis`` with physical scale."""
    n1 = d + 1
    ax = AXES[axis]
    idx = flat_index(d)
    D = np.zeros((n1**3, n1**3))
    for k in range(d):
        dst = np.take(idx, k, axis=ax).ravel()
        src = np.take(idx, k + 1, axis=ax).ravel()
        D[dst, src] = (k + 1) / scale
    return D


def product_matrix(mat: np.ndarray, d: int) -> np.ndarray:
    """Matrix of ``Q -> truncated_product(P, Q, d)`` for a spatial ``P``."""
    n1 = d + 1
    idx = flat_index(d)
    M = np.zeros((n1**3, n1**3))
    pc = np.asarray(mat, dtype=float)
    for i in range(min(n1, pc.shape[0])):
        for j in range(min(n1, pc.shape[1])):
            v = pc[i, j]
            if v == 0.0:
                continue
            dst = idx[i:, j:, :].ravel()
            src = idx[: n1 - i, : n1 - j, :].ravel()
            M[dst, src] += v
    return M


def monomials(d: int, xi, eta, zeta) -> np.ndarray:
    """Row vectors of ``xi^k eta^l zeta^s`` in flat order, shape (npts, n)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    p = np.arange(d + 1)
    vx = xi[:, None] ** p
    vy = eta[:, None] ** p
    vt = zeta[:, None] ** p
    return np.einsum("pi,pj,pk->pijk", vx, vy, vt).reshape(len(xi), -1)


def scaled_derivative_rows(d: int, m: int, xi, eta, zeta, ratio_x: float, ratio_y: float):
    """Functionals giving node data ``d^{k+l}/dx^k dy^l P * hx^k hy^l/(k! l!)``.

    ``ratio_x = h_x / dx`` converts from the polynomial's scale to the mesh
    scale.  Output shape ``(npts, m+1, m+1, n)``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    p = np.arange(d + 1)

    def shifted(v, ratio):
        # B[pt, k, a] = C(a, k) v^(a-k) ratio^k
        B = np.zeros((len(v), m + 1, d + 1))
        for k in range(m + 1):
            for a in range(k, d + 1):
                B[:, k, a] = comb(a, k) * v ** (a - k) * ratio**k
        return B

    Bx = shifted(xi, ratio_x)
    By = shifted(eta, ratio_y)
    vt = zeta[:, None] ** p
    out = np.einsum("pka,plb,ps->pklabs", Bx, By, vt)
    return out.reshape(len(xi), m + 1, m + 1, -1)
