"""Staggered meshes, level-set surfaces, node classification and patches."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

log = logging.getLogger(__name__)

PRIMAL, DUAL = 0, 1
BM, CF, INACTIVE = 0, 1, 2
LABEL_NAMES = {BM: "BM", CF: "CF", INACTIVE: "inactive"}
PARITY_NAMES = {PRIMAL: "primal", DUAL: "dual"}


class GeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class StaggeredMesh:
    """Primal nodes at ``(x_l + i h, y_b + j h)``, dual nodes at cell centres.

    With ``periodic=True`` the last primal row/column is identified with
    the first, so both meshes hold ``nx * ny`` nodes.
    """

    xl: float
    xr: float
    yb: float
    yt: float
    nx: int
    ny: int
    periodic: bool = True

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise ValueError(f"mesh needs positive cell counts, got nx={self.nx}, ny={self.ny}")
        if not np.isclose(self.dx, self.dy, rtol=1e-12, atol=0):
            raise ValueError(f"cells must be square: dx={self.dx}, dy={self.dy}")

    @classmethod
    def from_h(cls, bounds, h, periodic=True):
        xl, xr, yb, yt = bounds
        nx = int(round((xr - xl) / h))
        ny = int(round((yt - yb) / h))
        return cls(xl, xr, yb, yt, nx, ny, periodic)

    @property
    def dx(self):
        return (self.xr - self.xl) / self.nx

    @property
    def dy(self):
        return (self.yt - self.yb) / self.ny

    @property
    def h(self):
        return self.dx

    @property
    def lengths(self):
        return self.xr - self.xl, self.yt - self.yb

    def shape(self, parity):
        if parity == DUAL or self.periodic:
            return (self.nx, self.ny)
        return (self.nx + 1, self.ny + 1)

    def coords(self, parity):
        nx, ny = self.shape(parity)
        off = 0.5 if parity == DUAL else 0.0
        x = self.xl + (np.arange(nx) + off) * self.dx
        y = self.yb + (np.arange(ny) + off) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def source_corners(self, parity):
        """Corner indices into the other mesh for every node of ``parity``.

        Returns ``(ci, cj, valid)`` with ``ci, cj`` of shape ``(nx, ny, 2, 2)``
        indexed ``[.., x_side, y_side]``.
        """
        nx, ny = self.shape(parity)
        i = np.arange(nx)[:, None, None, None]
        j = np.arange(ny)[None, :, None, None]
        sx = np.array([0, 1])[None, None, :, None]
        sy = np.array([0, 1])[None, None, None, :]
        if parity == DUAL:
            ci, cj = i + sx, j + sy
        else:
            ci, cj = i - 1 + sx, j - 1 + sy
        ci, cj = np.broadcast_arrays(ci, cj)
        sx_n, sy_n = self.shape(1 - parity)
        if self.periodic:
            return ci % sx_n, cj % sy_n, np.ones((nx, ny), bool)
        valid = ((ci >= 0) & (ci < sx_n) & (cj >= 0) & (cj < sy_n)).all(axis=(2, 3))
        return np.clip(ci, 0, sx_n - 1), np.clip(cj, 0, sy_n - 1), valid

    def displacement(self, x, y, xc, yc):
        """Displacement from ``(xc, yc)``; minimum image when periodic."""
        dx = np.asarray(x) - xc
        dy = np.asarray(y) - yc
        if self.periodic:
            Lx, Ly = self.lengths
            dx = (dx + Lx / 2) % Lx - Lx / 2
            dy = (dy + Ly / 2) % Ly - Ly / 2
        return dx, dy


# ----------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class LevelSetSurface:
    """Circle, three-star ``r = r0 + a sin(b theta)`` or vertical line.

    ``normal_sign`` orients the reported unit normal relative to
    ``grad(phi)/|grad(phi)|``.  For the line ``phi = x - x_line`` and the
    parameter is ``y`` (periodic with ``period``).
    """

    kind: str
    x0: float = 0.5
    y0: float = 0.5
    r0: float = 0.3
    a: float = 0.1
    b: float = 3.0
    x_line: float = 0.5
    normal_sign: float = 1.0
    period: float = 1.0

    @classmethod
    def circle(cls, x0, y0, r, **kw):
        return cls("circle", x0=x0, y0=y0, r0=r, a=0.0, **kw)

    @classmethod
    def three_star(cls, x0=0.5, y0=0.5, r0=0.3, a=0.1, b=3.0, **kw):
        return cls("three_star", x0=x0, y0=y0, r0=r0, a=a, b=b, **kw)

    @classmethod
    def vertical_line(cls, x_line, period=1.0, **kw):
        return cls("vertical_line", x_line=x_line, period=period, **kw)

    @property
    def closed(self):
        return self.kind != "vertical_line"

    @property
    def param_period(self):
        return 2 * np.pi if self.closed else self.period

    # radius function for the polar shapes
    def _r(self, th):
        return self.r0 + self.a * np.sin(self.b * th)

    def _dr(self, th):
        return self.a * self.b * np.cos(self.b * th)

    def phi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.closed:
            return x - self.x_line
        X, Y = x - self.x0, y - self.y0
        th = np.arctan2(Y, X)
        return X * X + Y * Y - self._r(th) ** 2

    def grad_phi(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.closed:
            return np.ones_like(x), np.zeros_like(y)
        X, Y = x - self.x0, y - self.y0
        rho2 = X * X + Y * Y
        th = np.arctan2(Y, X)
        rr = 2 * self._r(th) * self._dr(th)
        # the centre is a singular point of phi; report a zero gradient there
        rho2 = np.where(rho2 > 0.0, rho2, np.inf)
        return 2 * X + rr * Y / rho2, 2 * Y - rr * X / rho2

    def normal(self, x, y):
        gx, gy = self.grad_phi(x, y)
        g = np.hypot(gx, gy)
        return self.normal_sign * gx / g, self.normal_sign * gy / g

    def point(self, u):
        u = np.asarray(u, dtype=float)
        if not self.closed:
            return np.full_like(u, self.x_line), u
        r = self._r(u)
        return self.x0 + r * np.cos(u), self.y0 + r * np.sin(u)

    def speed(self, u):
        u = np.asarray(u, dtype=float)
        if not self.closed:
            return np.ones_like(u)
        return np.hypot(self._r(u), self._dr(u))

    def length(self):
        if not self.closed:
            return self.period
        val, _ = integrate.quad(self.speed, 0.0, 2 * np.pi, limit=200, epsabs=1e-13, epsrel=1e-13)
        return val

    def arc_length_params(self, h, u_start=0.0):
        """Parameters ``u_j`` with (near) uniform arc-length spacing ``<= h``."""
        L = self.length()
        n = int(np.ceil(L / h - 1e-9))
        if not self.closed:
            return u_start + np.arange(n) * (L / n)
        fine = np.linspace(0.0, 2 * np.pi, 2**16 + 1)
        sp = self.speed(fine)
        cum = np.concatenate([[0.0], integrate.cumulative_trapezoid(sp, fine)])
        cum *= L / cum[-1]
        u = np.interp(np.arange(n) * (L / n), cum, fine)
        return u + u_start

    def closest_param(self, x, y):
        if not self.closed:
            return float(y)
        fine = np.linspace(0.0, 2 * np.pi, 4097)[:-1]
        px, py = self.point(fine)
        u0 = fine[np.argmin((px - x) ** 2 + (py - y) ** 2)]
        dist2 = lambda u: float(np.sum((np.array(self.point(u)) - (x, y)) ** 2))  # noqa: E731
        res = optimize.minimize_scalar(dist2, bounds=(u0 - 0.01, u0 + 0.01), method="bounded",
                                       options={"xatol": 1e-14})
        return float(res.x)

    def box_interval(self, xc, yc, half):
        """Parameter interval of the surface arc inside the box, grown from
        the point closest to the box centre.  Returns ``None`` if empty."""
        inside = lambda u: bool(  # noqa: E731
            np.all(np.abs(np.array(self.point(u)) - (xc, yc)) <= half * (1 + 1e-12))
        )
        if not self.closed:
            if abs(self.x_line - xc) > half:
                return None
            return yc - half, yc + half
        u0 = self.closest_param(xc, yc)
        if not inside(u0):
            return None
        step = half / max(self.r0 + abs(self.a), 1e-12) / 64
        ends = []
        for direction in (-1.0, 1.0):
            u = u0
            while inside(u + direction * step):
                u += direction * step
                if abs(u - u0) > np.pi:
                    raise GeometryError("patch box swallows the whole surface")
            lo, hi = u, u + direction * step
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if inside(mid):
                    lo = mid
                else:
                    hi = mid
            ends.append(lo)
        return ends[0], ends[1]


# ----------------------------------------------------------------------
# classification


@dataclass
class NodeClassification:
    """Per-parity node labels (BM/CF/inactive), region tags and, for CF
    nodes, the index of the surface responsible."""

    labels: dict = field(default_factory=dict)
    regions: dict = field(default_factory=dict)
    surface_of: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def count(self, parity, label):
        return int(np.sum(self.labels[parity] == label))

    def indices(self, parity, label):
        return np.flatnonzero(self.labels[parity].ravel() == label)


def default_region(surfaces, problem_kind):
    """Region map for a single-surface problem.

    Boundary: the side where ``sign(phi) == side`` (``phi == 0`` counts as
    positive) is active (label 0), the rest inactive.  Interface: label 1 on
    the ``phi >= 0`` side and 0 on the other.
    """
    surf = surfaces[0]

    def region(x, y, side=1.0):
        p = surf.phi(x, y)
        pos = p >= 0
        if problem_kind == "boundary":
            act = pos if side > 0 else ~pos
            return np.where(act, 0, -1)
        return np.where(pos, 1, 0)

    return region


_SUB = np.linspace(0.0, 1.0, 5)


def classify_nodes(mesh: StaggeredMesh, surfaces, region=None, problem_kind="boundary"):
    """Label every node of both meshes.

    A node is BM when its source cell (the other mesh's cell whose four
    corners feed its Hermite update) lies strictly on the node's side: a 5x5
    sample lattice of the cell, corners included, carries the node's region
    everywhere and never touches a surface (``phi == 0``).  Active nodes
    failing the test are CF; everything else is inactive.
    """
    if isinstance(surfaces, LevelSetSurface):
        surfaces = [surfaces]
    if region is None:
        region = default_region(surfaces, problem_kind)
    h = mesh.h
    cls = NodeClassification()
    node_reg = {p: np.asarray(region(*mesh.coords(p))) for p in (PRIMAL, DUAL)}
    for parity in (PRIMAL, DUAL):
        X, Y = mesh.coords(parity)
        reg = node_reg[parity]
        ci, cj, valid = mesh.source_corners(parity)
        # the corner nodes themselves, in case rounding puts a lattice corner on the other side
        corner_reg = node_reg[1 - parity][np.clip(ci, 0, None), np.clip(cj, 0, None)]
        ox = X[..., None, None] - h / 2 + h * _SUB[:, None]
        oy = Y[..., None, None] - h / 2 + h * _SUB[None, :]
        ox, oy = np.broadcast_arrays(ox, oy)
        sub_reg = region(ox, oy)
        clean = (sub_reg == reg[..., None, None]).all(axis=(2, 3)) & valid
        clean &= (corner_reg == reg[..., None, None]).all(axis=(2, 3))
        crossing = np.zeros(X.shape + (len(surfaces),), bool)
        # lattice points are recomputed from the node, so "touching" needs a rounding tolerance
        tol = 1e-10 * h
        for s, surf in enumerate(surfaces):
            p = surf.phi(ox, oy)
            crossing[..., s] = ~((p > tol).all(axis=(2, 3)) | (p < -tol).all(axis=(2, 3)))
        clean &= ~crossing.any(axis=-1)
        labels = np.full(X.shape, INACTIVE, dtype=np.int8)
        active = reg >= 0
        labels[active & clean] = BM
        labels[active & ~clean & valid] = CF
        # which surface forced the CF label: the crossing one closest to the node
        surf_of = np.full(X.shape, -1, dtype=np.int16)
        cf = labels == CF
        if cf.any():
            dist = np.full(X.shape + (len(surfaces),), np.inf)
            for s, surf in enumerate(surfaces):
                gx, gy = surf.grad_phi(X, Y)
                d = np.abs(surf.phi(X, Y)) / np.maximum(np.hypot(gx, gy), 1e-300)
                dist[..., s] = np.where(crossing[..., s], d, np.inf)
            best = np.argmin(dist, axis=-1)
            has = np.isfinite(np.min(dist, axis=-1))
            surf_of[cf & has] = best[cf & has]
            orphan = cf & ~has
            if orphan.any():
                # region change without a sampled crossing: nearest surface wins
                for s, surf in enumerate(surfaces):
                    gx, gy = surf.grad_phi(X, Y)
                    dist[..., s] = np.abs(surf.phi(X, Y)) / np.maximum(np.hypot(gx, gy), 1e-300)
                surf_of[orphan] = np.argmin(dist, axis=-1)[orphan]
        cls.labels[parity] = labels
        cls.regions[parity] = reg.astype(np.int8)
        cls.surface_of[parity] = surf_of
    xs = mesh.coords(PRIMAL)[0][:, 0]
    for s, surf in enumerate(surfaces):
        if not surf.closed and np.isclose(xs, surf.x_line, rtol=0, atol=1e-12 * h).any():
            msg = f"surface {s} runs along a primal mesh line; labels follow the sign of phi"
            cls.warnings.append(msg)
            log.warning(msg)
    return cls


# ----------------------------------------------------------------------
# patches


@dataclass
class LocalPatch:
    id: int
    surface: int
    center: tuple
    center_node: tuple  # (parity, flat index)
    half: float
    cf: dict = field(default_factory=dict)  # parity -> flat indices
    bm: dict = field(default_factory=dict)  # target parity -> dict of arrays
    interval: tuple | None = None


def build_patches(mesh, surfaces, cls, beta=6, surface_index=0, sides=None):
    """Patches for one surface.

    Surface points are spaced by arc length ``<= h``; each takes the nearest
    CF node (either mesh) as patch centre, duplicate centres merge, and every
    CF node of this surface joins the patch with the nearest centre (ties go
    to the lowest id).  ``sides`` restricts BM samples to these region
    labels (default: every active label).
    """
    if isinstance(surfaces, LevelSetSurface):
        surfaces = [surfaces]
    surf = surfaces[surface_index]
    h = mesh.h
    half = beta * h / 2
    coords = {p: [c.ravel() for c in mesh.coords(p)] for p in (PRIMAL, DUAL)}
    cf_nodes = []
    for p in (PRIMAL, DUAL):
        idx = np.flatnonzero(
            (cls.labels[p].ravel() == CF) & (cls.surface_of[p].ravel() == surface_index)
        )
        cf_nodes.extend((p, int(i)) for i in idx)
    if not cf_nodes:
        return []
    cf_par = np.array([p for p, _ in cf_nodes])
    cf_idx = np.array([i for _, i in cf_nodes])
    cf_x = np.where(cf_par == PRIMAL, coords[PRIMAL][0][cf_idx], coords[DUAL][0][cf_idx])
    cf_y = np.where(cf_par == PRIMAL, coords[PRIMAL][1][cf_idx], coords[DUAL][1][cf_idx])

    us = surf.arc_length_params(h, u_start=mesh.yb if not surf.closed else 0.0)
    px, py = surf.point(us)
    centers = []
    seen = set()
    for x, y in zip(px, py):
        dx, dy = mesh.displacement(cf_x, cf_y, x, y)
        k = int(np.argmin(dx * dx + dy * dy))
        if k not in seen:
            seen.add(k)
            centers.append(k)
    cx, cy = cf_x[centers], cf_y[centers]
    dist = np.empty((len(cf_nodes), len(centers)))
    for c in range(len(centers)):
        dx, dy = mesh.displacement(cf_x, cf_y, cx[c], cy[c])
        dist[:, c] = np.hypot(dx, dy)
    owner = np.argmin(dist, axis=1)
    far = dist[np.arange(len(cf_nodes)), owner] > 2 * beta * h
    if far.any():
        k = int(np.flatnonzero(far)[0])
        raise GeometryError(
            f"CF node {cf_nodes[k]} at ({cf_x[k]:.6g}, {cf_y[k]:.6g}) has no patch centre within 2*beta*h"
        )
    if sides is None:
        sides = sorted({int(v) for p in (PRIMAL, DUAL) for v in np.unique(cls.regions[p]) if v >= 0})
    patches = []
    for pid, k in enumerate(centers):
        patch = LocalPatch(
            id=pid,
            surface=surface_index,
            center=(float(cx[pid]), float(cy[pid])),
            center_node=(int(cf_par[k]), int(cf_idx[k])),
            half=half,
        )
        mine = owner == pid
        for p in (PRIMAL, DUAL):
            patch.cf[p] = cf_idx[mine & (cf_par == p)]
        bm_nodes = {}
        for p in (PRIMAL, DUAL):
            X, Y = coords[p]
            dx, dy = mesh.displacement(X, Y, *patch.center)
            inbox = (np.abs(dx) <= half * (1 + 1e-12)) & (np.abs(dy) <= half * (1 + 1e-12))
            lab = cls.labels[p].ravel()
            reg = cls.regions[p].ravel()
            sel = np.flatnonzero(inbox & (lab == BM) & np.isin(reg, sides))
            bm_nodes[p] = dict(index=sel, dx=dx[sel], dy=dy[sel], region=reg[sel])
        for target in (PRIMAL, DUAL):
            same, other = bm_nodes[target], bm_nodes[1 - target]
            patch.bm[target] = dict(
                parity=np.concatenate([np.full(len(same["index"]), target), np.full(len(other["index"]), 1 - target)]),
                index=np.concatenate([same["index"], other["index"]]),
                dx=np.concatenate([same["dx"], other["dx"]]),
                dy=np.concatenate([same["dy"], other["dy"]]),
                zeta=np.concatenate([np.zeros(len(same["index"])), -np.ones(len(other["index"]))]),
                region=np.concatenate([same["region"], other["region"]]),
            )
        patch.interval = surf.box_interval(patch.center[0], patch.center[1], half)
        if patch.interval is None:
            raise GeometryError(f"patch {pid} box does not meet surface {surface_index}")
        patches.append(patch)
    return patches


def surface_samples(patch: LocalPatch, surface: LevelSetSurface, n_u: int, t_interval=(-1.0, 0.0)):
    """``(n_u+1)^2`` space-time samples on the surface arc inside the patch.

    Returns a dict of arrays ``x, y, t, nx, ny`` (space-major order).
    """
    if patch.interval is None:
        raise AssertionError(f"patch {patch.id} has an empty surface arc")
    ul, ur = patch.interval
    u = ul + np.arange(n_u + 1) * (ur - ul) / n_u
    x, y = surface.point(u)
    nx, ny = surface.normal(x, y)
    ta, tb = t_interval
    t = ta + np.arange(n_u + 1) * (tb - ta) / n_u
    rep = lambda a: np.repeat(a, n_u + 1)  # noqa: E731
    return dict(x=rep(x), y=rep(y), t=np.tile(t, n_u + 1), nx=rep(nx), ny=rep(ny))


def classification_rows(mesh, cls):
    """Rows ``(x, y, mesh, label, side)`` for the CSV dump."""
    rows = []
    for p in (PRIMAL, DUAL):
        X, Y = mesh.coords(p)
        for x, y, lab, reg in zip(X.ravel(), Y.ravel(), cls.labels[p].ravel(), cls.regions[p].ravel()):
            rows.append((x, y, PARITY_NAMES[p], LABEL_NAMES[int(lab)], int(reg)))
    return rows
