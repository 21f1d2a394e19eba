"""Error norms, divergence norms, order estimates and run drivers."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .geometry import DUAL, PRIMAL
from .hermite import _dx, _dy, gather_corners, hermite_interpolate_cell
from .scenarios import Scenario
from .solver import Simulation

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6  # growth relative to the first recorded error
BLOWUP_FIELD_FACTOR = 10.0  # error relative to the exact field's max norm


class BlowUpError(FloatingPointError):
    """Raised by :func:`run_longtime` when the error leaves any sane range."""


# ----------------------------------------------------------------------
# norms


def error_norms(values, exact, p=2, relative=True):
    """Per-field and combined error norms over node values.

    ``values`` and ``exact`` have shape ``(n, 3)`` with columns
    ``(Hx, Hy, Ez)``.  Returns ``(per_field, combined)``; relative norms
    divide by the norm of the exact data (combined norm for both).
    """
    v = np.asarray(values, dtype=float)
    e = np.asarray(exact, dtype=float)
    if v.shape != e.shape:
        raise ValueError(f"shape mismatch {v.shape} vs {e.shape}")
    diff = v - e
    if p == 2:
        per = np.sqrt(np.sum(diff**2, axis=0))
        tot = float(np.sqrt(np.sum(diff**2)))
        ref = float(np.sqrt(np.sum(e**2)))
    elif p in (np.inf, "inf"):
        per = np.max(np.abs(diff), axis=0) if len(diff) else np.zeros(3)
        tot = float(np.max(np.abs(diff))) if diff.size else 0.0
        ref = float(np.max(np.abs(e))) if e.size else 0.0
    else:
        raise ValueError(f"unsupported norm {p!r}")
    if relative:
        if ref == 0.0:
            raise ZeroDivisionError("exact data vanish; use relative=False")
        per, tot = per / ref, tot / ref
    return per, tot


def _bulk_divergence(sim: Simulation, state):
    """L2 norm of div(mu H) of the Hermite interpolants on all complete primal cells."""
    m = sim.m
    ci, cj, valid = sim.mesh.source_corners(DUAL)
    # a dual node is the centre of a primal cell
    ci, cj = ci.reshape(-1, 2, 2), cj.reshape(-1, 2, 2)
    corners = gather_corners(state.data, (ci, cj))[:, :2]  # (n, 2, 2, 2, m+1, m+1)
    ok = valid.ravel() & np.isfinite(corners).all(axis=(1, 2, 3, 4, 5))
    creg = sim.cls.regions[PRIMAL][ci, cj].reshape(-1, 4)
    ok &= (creg == creg[:, :1]).all(axis=1) & (creg[:, 0] >= 0)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return 0.0
    if sim.variable:
        fac = np.ones(len(idx))
    else:
        fac = np.array([float(sim._medium(r).mu) for r in creg[idx, 0]])
    return float(np.sqrt(np.sum(cell_divergence_sq(corners[idx], sim.h, m, fac))))


def cell_divergence_sq(corners, h, m, fac=None):
    """``int (div(fac H))^2`` over each cell from magnetic corner data.

    ``corners`` has shape ``(n, 2, 2, 2, m+1, m+1)`` (field, x side, y side,
    scaled derivatives); the interpolant is integrated with a Gauss rule
    exact for its degree.
    """
    K = 2 * m + 2
    coef = hermite_interpolate_cell(corners, m)  # (n, 2, K, K)
    fac = np.ones(len(coef)) if fac is None else np.asarray(fac, float)
    div = (_dx(coef[:, 0], h) + _dy(coef[:, 1], h)) * fac[:, None, None]
    g, w = legendre.leggauss(K)
    g = g / 2
    V = g[:, None] ** np.arange(K)[None, :]
    vals = np.einsum("pi,nij,qj->npq", V, div, V)
    W = np.outer(w, w) / 4 * h * h
    return np.sum(W * vals**2, axis=(1, 2))


def _patch_divergence(sim: Simulation):
    """Sum over patches and sides of the correction polynomials' divergence norm."""
    total = 0.0
    for sysm in sim.systems[PRIMAL]:
        if sysm.div_op is None or "last_rhs" not in sysm.extra:
            continue
        bB, bS, F = sysm.extra["last_rhs"]
        D = sysm.div_op
        nG, nB = sysm.n_rows["G"], sysm.n_rows["B"]
        vals = D[:, nG:nG + nB] @ bB + D[:, nG + nB:] @ bS
        if F is not None and sysm.extra.get("div_F") is not None:
            vals = vals + sysm.extra["div_F"] @ F
        for part in np.split(vals, len(sysm.extra["sides"])):
            total += float(np.sqrt(np.sum(part**2)))
    return total


def divergence_norm(sim: Simulation, state):
    """``(bulk, patch, total)`` divergence norms of the magnetic field at ``state.t``.

    Patch contributions need a simulation built with ``with_divergence=True``
    and the last primal CF update stored.  Overlapping patch boxes are
    counted once per patch.
    """
    bulk = _bulk_divergence(sim, state)
    patch = _patch_divergence(sim)
    return bulk, patch, bulk + patch


# ----------------------------------------------------------------------
# orders


def estimate_order(errors, hs):
    """Pairwise slopes and the least-squares slope of ``log e`` against ``log h``."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if len(e) != len(h) or len(e) < 2:
        raise ValueError("need at least two (h, error) pairs of equal length")
    pair = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return pair, slope


# ----------------------------------------------------------------------
# reports


@dataclass
class MeshResult:
    h: float
    error_l2: float = float("nan")
    error_inf: float = float("nan")
    field_errors: list = field(default_factory=list)
    div_bulk: float = float("nan")
    div_patch: float = float("nan")
    div_scale: float = float("nan")
    wall_time: float = 0.0
    setup_time: float = 0.0
    n_steps: int = 0
    n_patches: int = 0
    n_systems: int = 0
    cond_max: float = float("nan")
    cond_median: float = float("nan")


@dataclass
class RunReport:
    scenario: str
    m: int
    d: int
    n_d: int
    cfl: float
    beta: float = 6
    omega_b: float = 0.5
    tf: float = 1.0
    mode: str = "exact"
    meshes: list = field(default_factory=list)
    orders: list = field(default_factory=list)
    slope: float = float("nan")
    div_orders: list = field(default_factory=list)
    div_slope: float = float("nan")
    series: dict = field(default_factory=dict)  # h -> [(t, max-norm error), ...]
    notes: list = field(default_factory=list)

    @property
    def hs(self):
        return [r.h for r in self.meshes]

    @property
    def errors(self):
        return [r.error_l2 for r in self.meshes]

    def finalize(self):
        """Fill order estimates when at least three meshes are present."""
        if len(self.meshes) >= 3:
            pair, self.slope = estimate_order(self.errors, self.hs)
            self.orders = [float(v) for v in pair]
            db = [r.div_bulk for r in self.meshes]
            if all(np.isfinite(db)) and all(v > 0 for v in db):
                pair, self.div_slope = estimate_order(db, self.hs)
                self.div_orders = [float(v) for v in pair]
        return self

    def to_csv(self) -> str:
        cols = ["h", "error_l2", "error_inf", "order", "div_bulk", "div_patch", "div_scale",
                "cond_max", "cond_median", "n_patches", "n_steps", "setup_time", "wall_time"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i, r in enumerate(self.meshes):
            order = self.orders[i - 1] if i >= 1 and self.orders else float("nan")
            row = [r.h, r.error_l2, r.error_inf, order, r.div_bulk, r.div_patch, r.div_scale,
                   r.cond_max, r.cond_median, r.n_patches, r.n_steps, r.setup_time, r.wall_time]
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        d = asdict(self)
        d["series"] = {_fmt(k): v for k, v in self.series.items()}
        return json.dumps(_jsonable(d), indent=2)


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ----------------------------------------------------------------------
# drivers


def _field_scale(values):
    return float(np.max(np.abs(values))) if values.size else 1.0


def run_mesh(scenario: Scenario, h, m, with_divergence=True, **kw):
    """One exact-solution run; returns ``(MeshResult, sim, state)``."""
    sim = Simulation(scenario, h, m, with_divergence=with_divergence, **kw)
    state = sim.run()
    res = MeshResult(h=sim.h, setup_time=sim.setup_time, wall_time=sim.run_time, n_steps=sim.n_steps,
                     n_patches=len(sim.patches))
    summ = sim.summary()
    res.n_systems, res.cond_max, res.cond_median = summ["n_systems"], summ["cond_max"], summ["cond_median"]
    _, vals = sim.node_values(state)
    if scenario.exact:
        _, ex = sim.exact_values(state.t)
        per, res.error_l2 = error_norms(vals, ex, 2)
        res.field_errors = [float(v) for v in per]
        res.error_inf = error_norms(vals, ex, np.inf, relative=False)[1]
    if with_divergence:
        res.div_bulk, res.div_patch, _ = divergence_norm(sim, state)
        res.div_scale = _field_scale(vals)
    return res, sim, state


def run_convergence(scenario: Scenario, m, hs=None, **kw) -> RunReport:
    """Exact-solution convergence study over the mesh list ``hs``."""
    if not scenario.exact:
        raise ValueError(f"scenario {scenario.name} has no exact solution; use run_self_convergence")
    hs = list(scenario.meshes if hs is None else hs)
    report = None
    for h in hs:
        res, sim, _ = run_mesh(scenario, h, m, **kw)
        if report is None:
            report = RunReport(scenario.name, m, sim.d, sim.nd, sim.cfl, sim.beta, sim.omega_b, sim.tf)
        report.meshes.append(res)
        log.info("%s m=%d h=%.5g error=%.3e", scenario.name, m, h, res.error_l2)
    return report.finalize()


def run_longtime(scenario: Scenario, m, h, tf, stride=1, limit=None, **kw) -> RunReport:
    """Max-norm error time series.

    Aborts with :class:`BlowUpError` when the error exceeds ``BLOWUP_FACTOR``
    times the first recorded error or ``BLOWUP_FIELD_FACTOR`` times the
    exact field's max norm (or ``limit`` when given).
    """
    sim = Simulation(scenario, h, m, tf=tf, **kw)
    series = []
    state0 = {}

    def record(n, state):
        t = state.t
        _, vals = sim.node_values(state)
        if not np.isfinite(vals).all():
            raise BlowUpError(f"non-finite data at t = {t:.6g}")
        _, ex = sim.exact_values(t)
        err = error_norms(vals, ex, np.inf, relative=False)[1]
        series.append((float(t), float(err)))
        if "first" not in state0 and err > 0:
            state0["first"] = err
        cap = limit if limit is not None else min(BLOWUP_FACTOR * state0.get("first", np.inf),
                                                  BLOWUP_FIELD_FACTOR * _field_scale(ex))
        if err > cap:
            raise BlowUpError(f"error {err:.3e} at t = {t:.6g} exceeds {cap:.3e}")

    t0 = time.perf_counter()
    try:
        sim.run(callback=record, stride=stride)
    except FloatingPointError as exc:
        if not isinstance(exc, BlowUpError):
            raise BlowUpError(str(exc)) from exc
        raise
    report = RunReport(scenario.name, m, sim.d, sim.nd, sim.cfl, sim.beta, sim.omega_b, sim.tf, mode="longtime")
    res = MeshResult(h=sim.h, wall_time=time.perf_counter() - t0, setup_time=sim.setup_time,
                     n_steps=sim.n_steps, n_patches=len(sim.patches))
    if series:
        res.error_inf = series[-1][1]
    report.meshes.append(res)
    report.series[sim.h] = series
    return report


def _coarse_to_fine(sim_c: Simulation, sim_f: Simulation):
    """Flat fine-mesh indices of the coarse primal nodes (integer mapping)."""
    r = sim_c.h / sim_f.h
    ri = int(round(r))
    if ri < 1 or abs(r - ri) > 1e-9 * r:
        raise ValueError(f"meshes are not nested: h ratio {r}")
    nxc, nyc = sim_c.mesh.shape(PRIMAL)
    nxf, nyf = sim_f.mesh.shape(PRIMAL)
    I, J = np.meshgrid(np.arange(nxc) * ri, np.arange(nyc) * ri, indexing="ij")
    if I.max() >= nxf or J.max() >= nyf:
        raise ValueError("coarse mesh is not contained in the reference mesh")
    return (I * nyf + J).ravel()


def run_self_convergence(scenario: Scenario, m, hs, h_ref, m_ref=None, **kw) -> RunReport:
    """Errors against a fine reference run on coincident primal nodes."""
    sim_f = Simulation(scenario, h_ref, m if m_ref is None else m_ref, **kw)
    ref_state = sim_f.run()
    ref_vals = np.full((sim_f.mesh.shape(PRIMAL)[0] * sim_f.mesh.shape(PRIMAL)[1], 3), np.nan)
    act_f, vf = sim_f.node_values(ref_state)
    ref_vals[act_f] = vf
    report = None
    for h in hs:
        sim = Simulation(scenario, h, m, **kw)
        state = sim.run()
        if report is None:
            report = RunReport(scenario.name, m, sim.d, sim.nd, sim.cfl, sim.beta, sim.omega_b, sim.tf,
                               mode="self", notes=[f"reference h={sim_f.h:.17g} m={sim_f.m}"])
        act, vals = sim.node_values(state)
        fine = _coarse_to_fine(sim, sim_f)[act]
        rv = ref_vals[fine]
        ok = np.isfinite(rv).all(axis=1)
        res = MeshResult(h=sim.h, setup_time=sim.setup_time, wall_time=sim.run_time, n_steps=sim.n_steps,
                         n_patches=len(sim.patches))
        per, res.error_l2 = error_norms(vals[ok], rv[ok], 2)
        res.field_errors = [float(v) for v in per]
        res.error_inf = error_norms(vals[ok], rv[ok], np.inf, relative=False)[1]
        report.meshes.append(res)
    return report.finalize()
