"""Hermite-Taylor base scheme for TM_z Maxwell (and an advection kernel).

Node data are scaled derivatives ``d^{k+l}U/dx^k dy^l * h^k h^l / (k! l!)``
for ``k, l = 0..m``.  A half step gathers the four corner blocks of the
source-mesh cell around each target node, builds the degree ``2m+1``
tensor-product Hermite interpolant centred at the target node, extends it
in time with the Taylor recursion of the PDE and evaluates it at
``t + dt/2``.  Because the interpolant is centred on the target node, the
evaluated data are just the time-summed spatial coefficients ``k, l <= m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, comb

import numpy as np

FIELDS = ("Hx", "Hy", "Ez")
VAR_FIELDS = ("Bx", "By", "Dz")


@dataclass
class FieldState:
    """Per-node derivative data for one mesh parity at one time.

    ``data`` has shape ``(nx, ny, 3, m+1, m+1)``; the field axis is ordered
    ``(Hx, Hy, Ez)`` or ``(Bx, By, Dz)`` in variable-coefficient mode.
    Nodes without data hold NaN.
    """

    parity: int
    t: float
    data: np.ndarray

    @property
    def m(self) -> int:
        return self.data.shape[-1] - 1

    def copy(self):
        return FieldState(self.parity, self.t, self.data.copy())


@dataclass
class HermiteTaylorTensor:
    coeffs: np.ndarray  # (..., 2m+2, 2m+2, q+1)
    center: tuple[float, float, float]
    scales: tuple[float, float, float]


@lru_cache(maxsize=None)
def hermite_matrix_1d(m: int) -> np.ndarray:
    """``c = H @ [a_left(0..m), a_right(0..m)]`` for nodes at xi = -1/2, +1/2."""
    K = 2 * m + 2
    V = np.zeros((K, K))
    for side, x0 in enumerate((-0.5, 0.5)):
        for k in range(m + 1):
            row = side * (m + 1) + k
            for n in range(k, K):
                V[row, n] = comb(n, k) * x0 ** (n - k)
    H = np.linalg.solve(V, np.eye(K))
    H.setflags(write=False)
    return H


def hermite_interpolate_cell(corner_data, m: int) -> np.ndarray:
    """Tensor-product Hermite interpolant of degree 2m+1 per variable.

    ``corner_data`` has shape ``(..., 2, 2, m+1, m+1)`` indexed
    ``[x_side, y_side, k, l]`` (side 0 = left/bottom), or ``(4, m+1, m+1)``
    ordered left-bottom, right-bottom, left-top, right-top.  Returns the
    ``(..., 2m+2, 2m+2)`` coefficients, which are scaled derivatives at the
    cell centre.
    """
    a = np.asarray(corner_data, dtype=float)
    if a.ndim == 3 and a.shape[0] == 4:
        a = a.reshape(2, 2, m + 1, m + 1).transpose(1, 0, 2, 3)
    H = hermite_matrix_1d(m)
    K = 2 * m + 2
    # flatten (side, derivative) per direction
    D = a.transpose(*range(a.ndim - 4), -4, -2, -3, -1).reshape(*a.shape[:-4], K, K)
    return np.einsum("ia,...ab,jb->...ij", H, D, H)


def _dx(c, scale):
    out = np.zeros_like(c)
    K = c.shape[-2]
    k = np.arange(1, K)
    out[..., :-1, :] = c[..., 1:, :] * (k / scale)[:, None]
    return out


def _dy(c, scale):
    out = np.zeros_like(c)
    K = c.shape[-1]
    l = np.arange(1, K)
    out[..., :, :-1] = c[..., :, 1:] * (l / scale)
    return out


def batch_truncated_product(P, Q):
    """Spatial truncated product for batched ``(..., K, K)`` tensors."""
    K = Q.shape[-1]
    out = np.zeros(np.broadcast_shapes(P.shape, Q.shape))
    for i in range(K):
        for j in range(K):
            out[..., i:, j:] += P[..., i, j, None, None] * Q[..., : K - i, : K - j]
    return out


def taylor_extend_advection(c0, dt, dx, dy, q=None):
    """Extend spatial coefficients of ``u_t - u_x - u_y = 0`` in time.

    ``c0`` is ``(K, K)`` (or batched); returns ``(..., K, K, q+1)``.
    """
    c0 = np.asarray(c0, dtype=float)
    K = c0.shape[-1]
    q = 2 * (K - 1) if q is None else q
    out = np.zeros(c0.shape + (q + 1,))
    out[..., 0] = c0
    for s in range(1, q + 1):
        prev = out[..., s - 1]
        out[..., s] = (dt / s) * (_dx(prev, dx) + _dy(prev, dy))
    return out


def taylor_extend_maxwell(fields, dt, dx, dy, materials, q=None, source=None):
    """Time extension of the three interpolants via the Maxwell recursion.

    ``fields`` is a tuple of three ``(..., K, K)`` arrays.  ``materials`` is
    either ``("const", mu, eps)`` with scalars or per-batch arrays, for the
    fields ``(Hx, Hy, Ez)``, or ``("var", inv_mu, inv_eps)`` with
    ``(..., K, K)`` Taylor coefficients of ``1/mu`` and ``1/eps``, for the
    fields ``(Bx, By, Dz)``.  ``source`` optionally holds the ``(..., K, K,
    q)`` scaled space-time coefficients of the Ampere-law source ``f`` in
    ``eps dE/dt - curl H = f`` (or ``dD/dt - curl H = f``).

    Returns three arrays ``(..., K, K, q+1)``.
    """
    f1, f2, f3 = (np.asarray(f, dtype=float) for f in fields)
    K = f1.shape[-1]
    q = 2 * (K - 1) if q is None else q
    kind = materials[0]
    out = [np.zeros(f1.shape + (q + 1,)) for _ in range(3)]
    out[0][..., 0], out[1][..., 0], out[2][..., 0] = f1, f2, f3
    if kind == "const":
        inv_mu = 1.0 / np.asarray(materials[1], dtype=float)
        inv_eps = 1.0 / np.asarray(materials[2], dtype=float)
        if inv_mu.ndim:
            inv_mu = inv_mu[..., None, None]
            inv_eps = inv_eps[..., None, None]
    for s in range(q):
        a, b, c = out[0][..., s], out[1][..., s], out[2][..., s]
        fac = dt / (s + 1)
        if kind == "const":
            e = c
            hx, hy = a, b
            out[0][..., s + 1] = -fac * inv_mu * _dy(e, dy)
            out[1][..., s + 1] = fac * inv_mu * _dx(e, dx)
            amp = _dx(hy, dx) - _dy(hx, dy)
            if source is not None:
                amp = amp + source[..., s]
            out[2][..., s + 1] = fac * inv_eps * amp
        else:
            inv_mu, inv_eps = materials[1], materials[2]
            e = batch_truncated_product(inv_eps, c)
            hx = batch_truncated_product(inv_mu, a)
            hy = batch_truncated_product(inv_mu, b)
            out[0][..., s + 1] = -fac * _dy(e, dy)
            out[1][..., s + 1] = fac * _dx(e, dx)
            amp = _dx(hy, dx) - _dy(hx, dy)
            if source is not None:
                amp = amp + source[..., s]
            out[2][..., s + 1] = fac * amp
    return tuple(out)


def evaluate_center(tensor, zeta, m):
    """Scaled derivatives through order ``m`` at the centre, time ``zeta``."""
    q = tensor.shape[-1] - 1
    w = zeta ** np.arange(q + 1)
    return np.tensordot(tensor[..., : m + 1, : m + 1, :], w, axes=([-1], [0]))


def compute_time_step(h, c_max, cfl, t0, tf):
    """Uniform step with ``c_max * dt <= cfl * h``; returns ``(dt, n_steps)``."""
    span = tf - t0
    if span <= 0:
        return float("nan"), 0
    x = span * c_max / (cfl * h)
    n = ceil(x - 1e-9 * x)
    return span / n, n


# ----------------------------------------------------------------------
# half-step drivers


def gather_corners(src: np.ndarray, corners) -> np.ndarray:
    """``src`` is (nx, ny, 3, m+1, m+1); returns (ntarget, 3, 2, 2, m+1, m+1)."""
    ci, cj = corners  # each (ntarget, 2, 2)
    g = src[ci, cj]  # (nt, 2, 2, 3, m+1, m+1)
    return g.transpose(0, 3, 1, 2, 4, 5)


@lru_cache(maxsize=64)
def constant_step_matrix(m: int, mu: float, eps: float, dt_over_h: float) -> np.ndarray:
    """Linear map from gathered corner data to target data for constant media.

    Shape ``(3*(m+1)^2, 3*4*(m+1)^2)``; the half step advances by
    ``dt_over_h * h / 2`` (``dt_over_h`` is the full-step ratio).
    """
    nb = 3 * 4 * (m + 1) ** 2
    basis = np.eye(nb).reshape(nb, 3, 2, 2, m + 1, m + 1)
    coef = hermite_interpolate_cell(basis, m)  # (nb, 3, K, K)
    ext = taylor_extend_maxwell(
        (coef[:, 0], coef[:, 1], coef[:, 2]), dt_over_h, 1.0, 1.0, ("const", mu, eps)
    )
    cols = [evaluate_center(e, 0.5, m) for e in ext]  # each (nb, m+1, m+1)
    A = np.stack(cols, axis=1).reshape(nb, -1).T
    A.setflags(write=False)
    return A


def advance_half_step(
    state: FieldState,
    targets,
    corners,
    dt: float,
    h: float,
    materials,
    target_shape,
    t_source_fn=None,
):
    """Advance BM targets from ``state`` to the other parity at ``t + dt/2``.

    ``targets`` is the flat index array of BM target nodes and ``corners``
    the matching ``(ci, cj)`` source indices.  ``materials`` is
    ``("const", mu, eps)`` with scalars or per-target arrays, or
    ``("var", inv_mu, inv_eps)`` with per-target ``(n, K, K)`` Taylor
    coefficients.  ``t_source_fn(t)`` returns per-target ``(n, K, K, q)``
    source coefficients or ``None``.  Non-target nodes are set to NaN.
    """
    m = state.m
    out = np.full(target_shape + (3, m + 1, m + 1), np.nan)
    flat = out.reshape(-1, 3, m + 1, m + 1)
    g = gather_corners(state.data, corners)
    if np.isnan(g).any():
        bad = np.unique(np.nonzero(np.isnan(g))[0])
        raise RuntimeError(
            f"{len(bad)} BM targets read unset corner data (first target {targets[bad[0]]})"
        )
    kind = materials[0]
    source = t_source_fn(state.t) if t_source_fn is not None else None
    if kind == "const" and source is None:
        mu = np.broadcast_to(np.asarray(materials[1], dtype=float), (len(targets),))
        eps = np.broadcast_to(np.asarray(materials[2], dtype=float), (len(targets),))
        pairs, inverse = np.unique(np.stack([mu, eps], axis=1), axis=0, return_inverse=True)
        inverse = inverse.ravel()
        gflat = g.reshape(len(targets), -1)
        for p, (mu_p, eps_p) in enumerate(pairs):
            sel = np.nonzero(inverse == p)[0]
            A = constant_step_matrix(m, float(mu_p), float(eps_p), dt / h)
            flat[targets[sel]] = (gflat[sel] @ A.T).reshape(len(sel), 3, m + 1, m + 1)
    else:
        coef = hermite_interpolate_cell(g, m)  # (n, 3, K, K)
        ext = taylor_extend_maxwell(
            (coef[:, 0], coef[:, 1], coef[:, 2]), dt, h, h, materials, source=source
        )
        flat[targets] = np.stack([evaluate_center(e, 0.5, m) for e in ext], axis=1)
    return FieldState(1 - state.parity, state.t + dt / 2, out)
