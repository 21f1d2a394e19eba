"""Discrete correction function method: assembly, factorization and CF updates.

Each patch owns one least-squares system ``M c = b`` per target parity with
``M = [G; B; S]``: governing-equation rows, rows matching the base method at
BM nodes inside the patch box, and surface-condition rows.  ``M`` never
changes, so it is factorized once and folded into an *output operator*
mapping the time-dependent parts of ``b`` straight to CF node data.

Unknowns per side: the full electric (or displacement) tensor followed by
the divergence-free magnetic parameters.  The patch frame has spatial
scales ``(beta h, beta h)``, time scale ``dt/2`` and ``zeta in [-1, 0]``
with ``zeta = 0`` at the target time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg

from . import conditions as cnd
from .polyspace import (
    derivative_matrix,
    divfree_matrix,
    monomials,
    n_divfree,
    product_matrix,
    scaled_derivative_rows,
)

log = logging.getLogger(__name__)


class RankError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefQuantities:
    L0: float
    c0: float = 1.0
    Z0: float = 1.0
    H0: float = 1.0


# ----------------------------------------------------------------------
# per-side coefficient-space operators


def expansion_matrix(d: int, dx_over_dy: float = 1.0) -> np.ndarray:
    """Side unknowns ``[E (n); r (free magnetic)]`` to full ``[F1; F2; F3]``."""
    n = (d + 1) ** 3
    nf = n_divfree(d)
    E = np.zeros((3 * n, n + nf))
    E[2 * n:, :n] = np.eye(n)
    E[: 2 * n, n:] = divfree_matrix(d, dx_over_dy)
    return E


def _field_select(d, f):
    n = (d + 1) ** 3
    S = np.zeros((n, 3 * n))
    S[:, f * n:(f + 1) * n] = np.eye(n)
    return S


def _first_order_map(d, materials, scales):
    """``dU/dt = T U`` in coefficient space (source excluded)."""
    n = (d + 1) ** 3
    Dx = derivative_matrix(d, "x", scales[0])
    Dy = derivative_matrix(d, "y", scales[1])
    T = np.zeros((3 * n, 3 * n))
    if materials[0] == "const":
        _, mu, eps = materials
        T[:n, 2 * n:] = -Dy / mu
        T[n:2 * n, 2 * n:] = Dx / mu
        T[2 * n:, :n] = -Dy / eps
        T[2 * n:, n:2 * n] = Dx / eps
    else:
        _, inv_mu, inv_eps = materials
        Me, Mm = product_matrix(inv_eps, d), product_matrix(inv_mu, d)
        T[:n, 2 * n:] = -Dy @ Me
        T[n:2 * n, 2 * n:] = Dx @ Me
        T[2 * n:, :n] = -Dy @ Mm
        T[2 * n:, n:2 * n] = Dx @ Mm
    return T


def time_derivative_operator(d: int, j: int, materials, scales) -> np.ndarray:
    """Linear map realising ``d_t^j`` on the full ``[F1; F2; F3]`` tensor.

    The map is the ``j``-th power of the first-order curl map, which for
    divergence-free magnetic data coincides with the curl / double-curl
    conversion.  The truncated products of the variable-coefficient mode
    apply the product rule implicitly.
    """
    if j < 0 or j > d + 1:
        raise ValueError(f"time derivative order {j} is not representable with degree {d}")
    return np.linalg.matrix_power(_first_order_map(d, materials, scales), j)


def quantity_matrix(d: int, quantity: str, materials) -> np.ndarray:
    """Map from the full tensor to ``Hx, Hy, Ez, muHx`` or ``muHy``."""
    f = {"Hx": 0, "Hy": 1, "Ez": 2, "muHx": 0, "muHy": 1}[quantity]
    S = _field_select(d, f)
    if materials[0] == "const":
        _, mu, eps = materials
        return mu * S if quantity.startswith("mu") else S
    _, inv_mu, inv_eps = materials
    if quantity.startswith("mu"):
        return S
    if quantity == "Ez":
        return product_matrix(inv_eps, d) @ S
    return product_matrix(inv_mu, d) @ S


def _residual_matrix(d, materials, scales, ref):
    n = (d + 1) ** 3
    Dx = derivative_matrix(d, "x", scales[0])
    Dy = derivative_matrix(d, "y", scales[1])
    Dt = derivative_matrix(d, "t", scales[2])
    L0, Z0 = ref.L0, ref.Z0
    R = np.zeros((3 * n, 3 * n))
    if materials[0] == "const":
        _, mu, eps = materials
        R[:n, :n] = mu * L0 * Dt
        R[:n, 2 * n:] = L0 * Dy
        R[n:2 * n, n:2 * n] = mu * L0 * Dt
        R[n:2 * n, 2 * n:] = -L0 * Dx
        R[2 * n:, :n] = Z0 * L0 * Dy
        R[2 * n:, n:2 * n] = -Z0 * L0 * Dx
        R[2 * n:, 2 * n:] = eps * Z0 * L0 * Dt
    else:
        _, inv_mu, inv_eps = materials
        Me, Mm = product_matrix(inv_eps, d), product_matrix(inv_mu, d)
        R[:n, :n] = L0 * Dt
        R[:n, 2 * n:] = L0 * Dy @ Me
        R[n:2 * n, n:2 * n] = L0 * Dt
        R[n:2 * n, 2 * n:] = -L0 * Dx @ Me
        R[2 * n:, :n] = Z0 * L0 * Dy @ Mm
        R[2 * n:, n:2 * n] = -Z0 * L0 * Dx @ Mm
        R[2 * n:, 2 * n:] = Z0 * L0 * Dt
    return R


def _reduced_rows(d):
    """Coefficient equations made redundant by the divergence-free space.

    Faraday rows ``(k >= 1, d, s < d)`` and ``(d, l >= 1, s < d)`` only
    involve eliminated magnetic coefficients, as do the Ampere rows
    ``(d-1, d, d)`` and ``(d, d-1, d)``.  Everything else is kept, including
    Ampere ``(d-1, d-1, d)`` which happens to vanish for ``d >= 2``.
    """
    n1 = d + 1
    k, l, s = np.meshgrid(np.arange(n1), np.arange(n1), np.arange(n1), indexing="ij")
    k, l, s = k.ravel(), l.ravel(), s.ravel()
    f1 = (k >= 1) & (l == d) & (s < d)
    f2 = (k == d) & (l >= 1) & (s < d)
    amp = (s == d) & (((k == d - 1) & (l == d)) | ((k == d) & (l == d - 1)))
    return np.concatenate([f1, f2, amp])


def assemble_governing(d: int, materials, scales, ref: RefQuantities):
    """Governing rows over one side's reduced unknowns.

    Returns ``(G, G_f)``: ``G`` has the rows that do not vanish identically
    and ``G_f`` maps the side's Ampere source coefficients to their
    right-hand side.
    """
    if d < 1:
        raise ValueError("degree must be at least 1")
    n = (d + 1) ** 3
    R = _residual_matrix(d, materials, scales, ref)
    G = R @ expansion_matrix(d, scales[0] / scales[1])
    if materials[0] == "const":
        keep = np.any(R != 0.0, axis=1) & ~_reduced_rows(d)
    else:
        keep = np.any(G != 0.0, axis=1)
    G_f = np.zeros((3 * n, n))
    G_f[2 * n:] = ref.Z0 * ref.L0 * np.eye(n)
    return G[keep], G_f[keep]


def assemble_matching(d: int, xi, eta, zeta, omega_b: float, ref: RefQuantities, values=None,
                      dx_over_dy: float = 1.0):
    """Rows matching the base method at BM samples.

    Rows are grouped by field ``(F1, F2, F3)``, each normalised by the
    number of samples; magnetic rows carry ``Z0``.  Returns ``(B, w)`` and,
    when ``values`` (shape ``(npts, 3)``) is given, also ``b``.
    """
    npts = len(np.atleast_1d(xi))
    if npts == 0:
        raise RankError("patch has no BM samples for one of its sides")
    mono = monomials(d, xi, eta, zeta)
    E = expansion_matrix(d, dx_over_dy)
    n = mono.shape[1]
    rows, w = [], []
    for f in range(3):
        scale = ref.Z0 if f < 2 else 1.0
        wf = omega_b * scale / npts
        rows.append(wf * mono @ E[f * n:(f + 1) * n])
        w.append(np.full(npts, wf))
    B, w = np.vstack(rows), np.concatenate(w)
    if values is None:
        return B, w
    return B, w, w * np.asarray(values, float).T.ravel()


# ----------------------------------------------------------------------
# factorization


@dataclass
class PatchFactorization:
    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray
    rank: int
    cond: float
    patch_id: int = -1
    parity: int = -1
    shape: tuple = ()

    def solve(self, b):
        return solve_patch(self, b)

    def pseudo_inverse(self):
        """``X`` with ``c = X b`` for every right-hand side."""
        X = np.empty((self.r.shape[1], self.q.shape[0]))
        X[self.perm] = linalg.solve_triangular(self.r, self.q.T)
        return X


def factorize(M, patch_id=-1, parity=-1) -> PatchFactorization:
    """Column-pivoted QR; rejects numerically rank-deficient matrices."""
    M = np.asarray(M, float)
    nr, nc = M.shape
    if nr < nc:
        raise RankError(f"patch {patch_id}: {nr} rows cannot determine {nc} unknowns")
    q, r, perm = linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(nr, nc) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < nc:
        raise RankError(
            f"patch {patch_id} (parity {parity}): numerical rank {rank} < {nc} unknowns"
        )
    cond = float(diag[0] / diag[-1])
    return PatchFactorization(q, r, perm, rank, cond, patch_id, parity, (nr, nc))


def solve_patch(fact: PatchFactorization, b) -> np.ndarray:
    b = np.asarray(b, float)
    if b.shape[0] != fact.q.shape[0]:
        raise ValueError(f"rhs has {b.shape[0]} rows, system has {fact.q.shape[0]}")
    c = np.empty((fact.r.shape[1],) + b.shape[1:])
    c[fact.perm] = linalg.solve_triangular(fact.r, fact.q.T @ b)
    return c


# ----------------------------------------------------------------------
# one patch, one target parity


@dataclass
class SideSpec:
    """Data of one side of a patch: region label, materials, optional source."""

    name: str  # condition side name: one, plus, minus
    label: int
    materials: tuple  # ("const", mu, eps) or ("var", inv_mu (d+1,d+1), inv_eps)
    source: bool = False


@lru_cache(maxsize=256)
def _const_side_ops(d, mu, eps, dx, dy, dt, max_order):
    mats = ("const", mu, eps)
    T1 = _first_order_map(d, mats, (dx, dy, dt))
    pows = [np.eye(T1.shape[0])]
    for _ in range(max_order):
        pows.append(T1 @ pows[-1])
    return pows


def _side_powers(d, materials, scales, max_order):
    if materials[0] == "const":
        return _const_side_ops(d, float(materials[1]), float(materials[2]), *scales, max_order)
    T1 = _first_order_map(d, materials, scales)
    pows = [np.eye(T1.shape[0])]
    for _ in range(max_order):
        pows.append(T1 @ pows[-1])
    return pows


def assemble_surface(cond, samples, nd, sides, d, scales, center, ref: RefQuantities, provider=None):
    """Surface rows for orders ``j = 0..nd``.

    ``sides`` is a list of :class:`SideSpec`; ``samples`` are physical
    space-time samples (``x, y, t`` with ``t`` in patch units ``zeta``).
    Returns ``(S, C, b)`` where ``C`` maps stacked side source coefficients
    to the right-hand side correction (``None`` without sources) and ``b``
    is the exact-data right-hand side when ``provider`` is given.
    """
    if nd > cond.max_nd(d):
        raise ValueError(f"N_d = {nd} exceeds the limit {cond.max_nd(d)} for {cond.name} with d = {d}")
    n = (d + 1) ** 3
    nu = n + n_divfree(d)
    xi = (samples["x"] - center[0]) / scales[0]
    eta = (samples["y"] - center[1]) / scales[1]
    mono = monomials(d, xi, eta, samples["t"])
    Dy = derivative_matrix(d, "y", scales[1])
    E = expansion_matrix(d, scales[0] / scales[1])
    max_order = nd + cond.extra_order
    pos = {s.name: i for i, s in enumerate(sides)}
    pows = [_side_powers(d, s.materials, scales, max_order) for s in sides]
    any_src = any(s.source for s in sides)
    Dt3 = np.kron(np.eye(3), derivative_matrix(d, "t", scales[2]))
    src_maps = []
    for s, pw in zip(sides, pows):
        # S_{j+1} = T^j J + Dt S_j, S_0 = 0
        J = np.zeros((3 * n, n))
        J[2 * n:] = np.eye(n)
        L = [np.zeros((3 * n, n))]
        for j in range(max_order):
            L.append(pw[j] @ J + Dt3 @ L[-1])
        src_maps.append(L)

    def functional(side, quantity, nt, ny):
        k = pos[side]
        base = mono @ np.linalg.matrix_power(Dy, ny) @ quantity_matrix(d, quantity, sides[k].materials)
        out = np.zeros((mono.shape[0], nu * len(sides)))
        out[:, k * nu:(k + 1) * nu] = base @ pows[k][nt] @ E
        return out

    def src_functional(side, quantity, nt, ny):
        k = pos[side]
        out = np.zeros((mono.shape[0], n * len(sides)))
        if sides[k].source:
            base = mono @ np.linalg.matrix_power(Dy, ny) @ quantity_matrix(d, quantity, sides[k].materials)
            out[:, k * n:(k + 1) * n] = base @ src_maps[k][nt]
        return out

    S, C, b = [], [], []
    for j in range(nd + 1):
        S.append(cnd.condition_rows(cond, samples, j, functional, ref.L0, ref.Z0, ref.c0))
        if any_src:
            C.append(cnd.condition_rows(cond, samples, j, src_functional, ref.L0, ref.Z0, ref.c0))
        if provider is not None:
            b.append(cnd.condition_rhs(cond, samples, j, provider, ref.L0, ref.Z0, ref.c0))
    S = np.vstack(S)
    C = np.vstack(C) if any_src else None
    b = np.concatenate(b) if provider is not None else None
    return S, C, b


@dataclass
class PatchSystem:
    """Precomputed output operators of one (patch, target parity) system."""

    patch_id: int
    parity: int
    surface: int
    center: tuple
    n_rows: dict
    n_unknowns: int
    rank: int
    cond: float
    cf_index: np.ndarray  # flat indices of CF targets
    out_B: np.ndarray  # (n_cf * 3 * (m+1)^2, n_B)
    out_S: np.ndarray  # (n_cf * 3 * (m+1)^2, n_S)
    out_F: np.ndarray | None  # source coefficients -> output
    bm_parity: np.ndarray
    bm_index: np.ndarray
    bm_weight: np.ndarray  # (3, n_bm)
    bm_order: np.ndarray  # permutation of the field-major weighted values into B row order
    samples: dict
    div_op: np.ndarray | None = None  # weighted divergence at quadrature points per rhs
    residual: float = float("nan")
    extra: dict = field(default_factory=dict)


def cf_output_rows(d, m, sides, cf_dx, cf_dy, cf_region, scales, h):
    """Rows producing ``(3, m+1, m+1)`` scaled derivatives at CF nodes."""
    n = (d + 1) ** 3
    nu = n + n_divfree(d)
    E = expansion_matrix(d, scales[0] / scales[1])
    lab = {s.label: i for i, s in enumerate(sides)}
    K = (m + 1) ** 2
    out = np.zeros((len(cf_dx), 3, K, nu * len(sides)))
    if len(cf_dx) == 0:
        return out.reshape(0, nu * len(sides))
    rows = scaled_derivative_rows(d, m, cf_dx / scales[0], cf_dy / scales[1], np.zeros(len(cf_dx)),
                                  h / scales[0], h / scales[1]).reshape(len(cf_dx), K, n)
    for i, reg in enumerate(cf_region):
        if int(reg) not in lab:
            raise RankError(f"CF node with region {reg} has no correction polynomial in this patch")
        k = lab[int(reg)]
        for f in range(3):
            out[i, f, :, k * nu:(k + 1) * nu] = rows[i] @ E[f * n:(f + 1) * n]
    return out.reshape(len(cf_dx) * 3 * K, nu * len(sides))


def divergence_rows(d, sides, scales, n_quad=None):
    """Rows giving ``sqrt(w) div(mu H)`` at Gauss points over the patch box at ``zeta = 0``.

    The squared norm of their product with ``c`` is the L2 norm squared of
    the correction polynomials' divergence, summed over sides.
    """
    n = (d + 1) ** 3
    nu = n + n_divfree(d)
    nq = n_quad or d + 1
    g, w = legendre.leggauss(nq)
    g, w = g / 2, w / 2
    XI, ETA = np.meshgrid(g, g, indexing="ij")
    W = np.outer(w, w).ravel() * scales[0] * scales[1]
    mono = monomials(d, XI.ravel(), ETA.ravel(), np.zeros(XI.size))
    Dx = derivative_matrix(d, "x", scales[0])
    Dy = derivative_matrix(d, "y", scales[1])
    E = expansion_matrix(d, scales[0] / scales[1])
    blocks = []
    for k, s in enumerate(sides):
        # mu H for constant media, B in the variable-coefficient form
        fac = s.materials[1] if s.materials[0] == "const" else 1.0
        rows = np.sqrt(W)[:, None] * fac * (mono @ (Dx @ E[:n] + Dy @ E[n:2 * n]))
        full = np.zeros((len(W), nu * len(sides)))
        full[:, k * nu:(k + 1) * nu] = rows
        blocks.append(full)
    return np.vstack(blocks)


def build_patch_system(patch, target, cond, sides, d, m, nd, h, dt, beta, omega_b, ref,
                       samples, cf_dx, cf_dy, cf_region, provider=None, with_divergence=False,
                       keep_matrix=False):
    """Assemble, factorize and fold one (patch, parity) system.

    ``samples`` are the surface samples (physical ``x, y``, patch-time
    ``t``, normals); ``cf_*`` describe the CF nodes written by this system.
    """
    scales = (beta * h, beta * h, dt / 2)
    n = (d + 1) ** 3
    nu = n + n_divfree(d)
    ns = len(sides)
    bm = patch.bm[target]
    G_blocks, Gf_blocks, B_blocks, bm_par, bm_idx, bm_w = [], [], [], [], [], []
    for s in sides:
        G, Gf = assemble_governing(d, s.materials, scales, ref)
        G_blocks.append(G)
        Gf_blocks.append(Gf if s.source else np.zeros((G.shape[0], n)))
        sel = bm["region"] == s.label
        B, w = assemble_matching(d, bm["dx"][sel] / scales[0], bm["dy"][sel] / scales[1],
                                 bm["zeta"][sel], omega_b, ref)
        B_blocks.append(B)
        bm_par.append(bm["parity"][sel])
        bm_idx.append(bm["index"][sel])
        bm_w.append(w.reshape(3, -1))
    G = linalg.block_diag(*G_blocks)
    Gf = linalg.block_diag(*Gf_blocks)
    B = linalg.block_diag(*B_blocks)
    S, C, _ = assemble_surface(cond, samples, nd, sides, d, scales, patch.center, ref)
    M = np.vstack([G, B, S])
    fact = factorize(M, patch.id, target)
    X = fact.pseudo_inverse()
    nG, nB, nS = G.shape[0], B.shape[0], S.shape[0]
    Eout = cf_output_rows(d, m, sides, cf_dx, cf_dy, cf_region, scales, h)
    out = Eout @ X
    out_B = out[:, nG:nG + nB]
    out_S = out[:, nG + nB:]
    out_F = None
    if any(s.source for s in sides):
        out_F = out[:, :nG] @ Gf - out_S @ C
    sysm = PatchSystem(
        patch_id=patch.id, parity=target, surface=patch.surface, center=patch.center,
        n_rows=dict(G=nG, B=nB, S=nS), n_unknowns=nu * ns, rank=fact.rank, cond=fact.cond,
        cf_index=np.asarray(patch.cf[target], dtype=int), out_B=out_B, out_S=out_S, out_F=out_F,
        bm_parity=np.concatenate(bm_par), bm_index=np.concatenate(bm_idx),
        bm_weight=np.concatenate(bm_w, axis=1), bm_order=_bm_row_order([len(i) for i in bm_idx]),
        samples=samples,
    )
    if with_divergence:
        D = divergence_rows(d, sides, scales) @ X
        sysm.div_op = D
        sysm.extra["div_F"] = D[:, :nG] @ Gf - D[:, nG + nB:] @ C if out_F is not None else None
    if keep_matrix:
        sysm.extra["M"] = M
        sysm.extra["X"] = X
    return sysm


def _bm_row_order(counts):
    # B rows are grouped by side, then by field; gathered values are field-major over all sides
    total = sum(counts)
    off = np.cumsum([0] + list(counts))
    return np.concatenate([f * total + np.arange(off[k], off[k + 1])
                           for k in range(len(counts)) for f in range(3)]).astype(int)


def update_cf_nodes(data: np.ndarray, system: PatchSystem, values: np.ndarray):
    """Write ``(n_cf, 3, m+1, m+1)`` blocks into the flat node array ``data``."""
    m1 = data.shape[-1]
    flat = data.reshape(-1, 3, m1, m1)
    flat[system.cf_index] = values.reshape(len(system.cf_index), 3, m1, m1)


def gather_bm_rhs(system: PatchSystem, states) -> np.ndarray:
    """Weighted ``b_B`` from the value entries of the two parity states."""
    vals = np.empty((3, len(system.bm_index)))
    for p in (0, 1):
        sel = system.bm_parity == p
        if sel.any():
            flat = states[p].reshape(-1, 3, states[p].shape[-2], states[p].shape[-1])
            vals[:, sel] = flat[system.bm_index[sel], :, 0, 0].T
    if np.isnan(vals).any():
        raise RuntimeError(f"patch {system.patch_id}: BM sample without data")
    return (system.bm_weight * vals).ravel()[system.bm_order]


def condition_summary(systems):
    conds = np.array([s.cond for s in systems]) if systems else np.array([np.nan])
    return dict(n_systems=len(systems), cond_max=float(np.max(conds)),
                cond_median=float(np.median(conds)))


def step_coupled(primal, bm_half_step, cf_update):
    """One full step ``t_n -> t_{n+1}``.

    BM dual half step, DCFM on dual CF nodes, BM primal half step, DCFM on
    primal CF nodes.  ``bm_half_step(state, target)`` and
    ``cf_update(new, other, target)`` are supplied by the caller.
    """
    dual = bm_half_step(primal, 1)
    dual = cf_update(dual, primal, 1)
    new = bm_half_step(dual, 0)
    return cf_update(new, dual, 0)
