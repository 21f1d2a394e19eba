"""Binds a scenario to a mesh, patches and precomputed DCFM systems."""
from __future__ import annotations

import logging
import time

import numpy as np

from .conditions import condition_rhs
from .dcfm import (
    RankError,
    RefQuantities,
    SideSpec,
    build_patch_system,
    condition_summary,
    gather_bm_rhs,
    step_coupled,
    update_cf_nodes,
)
from .geometry import BM, CF, DUAL, PRIMAL, StaggeredMesh, build_patches, classify_nodes, surface_samples
from .hermite import FieldState, advance_half_step, compute_time_step
from .scenarios import Scenario, boundary_field

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def validate_parameters(scenario: Scenario, m, d, nd):
    if m < 1:
        raise ConfigError(f"m must be at least 1, got {m}")
    if d < m:
        raise ConfigError(f"d = {d} < m = {m}: CF nodes need derivatives through order m")
    if nd < 0 or nd > d:
        raise ConfigError(f"N_d = {nd} must lie in [0, d = {d}]")
    if scenario.gstc and nd >= d:
        raise ConfigError(f"GSTC needs N_d < d, got N_d = {nd}, d = {d}")


class Simulation:
    """One scenario on one mesh.

    Everything that does not change in time (classification, patches,
    factorized systems, BM materials) is built in the constructor; ``run``
    then only performs matrix-vector work and exact-data evaluations.
    """

    def __init__(self, scenario: Scenario, h, m, d=None, nd=None, cfl=None, beta=6, omega_b=0.5,
                 tf=None, t0=None, with_divergence=False, keep_matrices=False):
        t_start = time.perf_counter()
        dd, dnd, dcfl = scenario.defaults(m)
        self.scenario = scenario
        self.m = m
        self.d = dd if d is None else d
        self.nd = dnd if nd is None else nd
        self.cfl = dcfl if cfl is None else cfl
        validate_parameters(scenario, m, self.d, self.nd)
        self.beta = beta
        self.omega_b = omega_b
        self.t0 = scenario.t0 if t0 is None else t0
        self.tf = scenario.tf if tf is None else tf
        self.mesh = StaggeredMesh.from_h(scenario.bounds, h)
        self.h = self.mesh.h
        self.dt, self.n_steps = compute_time_step(self.h, scenario.c_max, self.cfl, self.t0, self.tf)
        if self.n_steps == 0:
            # nothing to march; operators still need a finite step
            self.dt = self.cfl * self.h / scenario.c_max
        self.variable = scenario.variable
        self.fields = scenario.field_names()
        surfaces = [s.surface for s in scenario.surfaces]
        self.cls = classify_nodes(self.mesh, surfaces, region=scenario.region)
        self.ref = RefQuantities(L0=beta * self.h)
        self._setup_bm()
        self.with_divergence = with_divergence
        self.patches = []
        self.systems = {PRIMAL: [], DUAL: []}
        self.groups = {PRIMAL: [], DUAL: []}
        for k, spec in enumerate(scenario.surfaces):
            patches = build_patches(self.mesh, surfaces, self.cls, beta=beta, surface_index=k,
                                    sides=sorted(set(spec.sides.values())))
            self.patches.extend(patches)
            for target in (PRIMAL, DUAL):
                self._build_group(k, spec, patches, target, with_divergence, keep_matrices)
        self.setup_time = time.perf_counter() - t_start

    # ------------------------------------------------------------------
    # setup helpers

    def _medium(self, label):
        return self.scenario.media[int(label)]

    def _setup_bm(self):
        mesh, m = self.mesh, self.m
        K = 2 * m + 2
        self.bm = {}
        for p in (PRIMAL, DUAL):
            labels = self.cls.labels[p].ravel()
            targets = np.flatnonzero(labels == BM)
            ci, cj, _ = mesh.source_corners(p)
            corners = (ci.reshape(-1, 2, 2)[targets], cj.reshape(-1, 2, 2)[targets])
            reg = self.cls.regions[p].ravel()[targets]
            X, Y = (c.ravel()[targets] for c in mesh.coords(p))
            if self.variable:
                inv_mu = np.zeros((len(targets), K, K))
                inv_eps = np.zeros((len(targets), K, K))
                for lab in np.unique(reg):
                    sel = reg == lab
                    med = self._medium(lab)
                    inv_mu[sel] = med.quantity("inv_mu").scaled_taylor(X[sel], Y[sel], 0.0, K, self.h, self.h)
                    inv_eps[sel] = med.quantity("inv_eps").scaled_taylor(X[sel], Y[sel], 0.0, K, self.h, self.h)
                mats = ("var", inv_mu, inv_eps)
            else:
                mu = np.array([float(self._medium(r).mu) for r in reg])
                eps = np.array([float(self._medium(r).eps) for r in reg])
                mats = ("const", mu, eps)
            has_src = any(not self._medium(r).quantity("f").is_zero for r in np.unique(reg))
            self.bm[p] = dict(targets=targets, corners=corners, materials=mats, X=X, Y=Y, reg=reg,
                              source=has_src)

    def _side_materials(self, label, center):
        med = self._medium(label)
        if not self.variable:
            return ("const", float(med.mu), float(med.eps))
        L = self.beta * self.h
        im = med.quantity("inv_mu").scaled_taylor(center[0], center[1], 0.0, self.d + 1, L, L)
        ie = med.quantity("inv_eps").scaled_taylor(center[0], center[1], 0.0, self.d + 1, L, L)
        return ("var", im, ie)

    def _build_group(self, k, spec, patches, target, with_divergence, keep_matrices):
        cond = spec.condition
        side_names = cond.sides()
        systems = []
        coords = [c.ravel() for c in self.mesh.coords(target)]
        for patch in patches:
            cf = patch.cf[target]
            if len(cf) == 0:
                continue
            sides = [
                SideSpec(nm, spec.sides[nm], self._side_materials(spec.sides[nm], patch.center),
                         source=not self._medium(spec.sides[nm]).quantity("f").is_zero)
                for nm in side_names
            ]
            samples = surface_samples(patch, spec.surface, self.beta)
            cdx, cdy = self.mesh.displacement(coords[0][cf], coords[1][cf], *patch.center)
            creg = self.cls.regions[target].ravel()[cf]
            try:
                sysm = build_patch_system(
                    patch, target, cond, sides, self.d, self.m, self.nd, self.h, self.dt, self.beta,
                    self.omega_b, self.ref, samples, cdx, cdy, creg,
                    with_divergence=with_divergence and target == PRIMAL, keep_matrix=keep_matrices,
                )
            except RankError as exc:
                raise RankError(f"surface {k}: {exc}") from exc
            sysm.extra["sides"] = sides
            systems.append(sysm)
        if not systems:
            return
        self.systems[target].extend(systems)
        ns = len(systems[0].samples["x"])
        cat = {key: np.concatenate([s.samples[key] for s in systems]) for key in ("x", "y", "t", "nx", "ny")}
        # source coefficients at patch centres (variable-coefficient Ampere source)
        src_labels = [s.label for s in systems[0].extra["sides"] if s.source]
        self.groups[target].append(dict(spec=spec, systems=systems, samples=cat, n_s=ns,
                                        src_labels=src_labels))

    # ------------------------------------------------------------------
    # state

    def initial_state(self) -> FieldState:
        m = self.m
        nx, ny = self.mesh.shape(PRIMAL)
        data = np.full((nx, ny, 3, m + 1, m + 1), np.nan)
        flat = data.reshape(-1, 3, m + 1, m + 1)
        X, Y = (c.ravel() for c in self.mesh.coords(PRIMAL))
        reg = self.cls.regions[PRIMAL].ravel()
        active = np.flatnonzero(self.cls.labels[PRIMAL].ravel() != 2)
        for lab in np.unique(reg[active]):
            idx = active[reg[active] == lab]
            med = self._medium(lab)
            for f, name in enumerate(self.fields):
                flat[idx, f] = med.quantity(name).scaled_taylor(X[idx], Y[idx], self.t0, m + 1, self.h, self.h)
        return FieldState(PRIMAL, self.t0, data)

    def _source_fn(self, target):
        info = self.bm[target]
        if not info["source"]:
            return None
        K = 2 * self.m + 2
        q = 2 * (K - 1)

        def fn(t):
            out = np.zeros((len(info["targets"]), K, K, q))
            for lab in np.unique(info["reg"]):
                sel = info["reg"] == lab
                f = self._medium(lab).quantity("f")
                out[sel] = f.scaled_taylor(info["X"][sel], info["Y"][sel], t, K, self.h, self.h, q=q, ht=self.dt)
            return out

        return fn

    def bm_half_step(self, state: FieldState, target) -> FieldState:
        info = self.bm[target]
        return advance_half_step(state, info["targets"], info["corners"], self.dt, self.h,
                                 info["materials"], self.mesh.shape(target), self._source_fn(target))

    def _group_rhs(self, group, t_c):
        """Exact-data surface rhs for every system of the group, ``(P, n_S)``."""
        spec, smp, ns = group["spec"], group["samples"], group["n_s"]
        cond = spec.condition
        P = len(group["systems"])
        T = t_c + smp["t"] * self.dt / 2
        cache = {}

        def provider(side, quantity, nt, ny):
            key = (side, quantity, nt, ny)
            if key not in cache:
                fld = boundary_field(self._medium(spec.sides[side]), spec, quantity)
                cache[key] = None if fld is None or fld.is_zero else fld(smp["x"], smp["y"], T, 0, ny, nt)
            return cache[key]

        n_eq = len(cond.equations())
        blocks = []
        for j in range(self.nd + 1):
            r = condition_rhs(cond, smp, j, provider, self.ref.L0, self.ref.Z0, self.ref.c0, n_samples=ns)
            blocks.append(r.reshape(n_eq, P, ns).transpose(1, 0, 2))
        return np.stack(blocks, axis=1).reshape(P, -1)

    def _group_source(self, group, t_c):
        if not group["src_labels"]:
            return None
        L = self.beta * self.h
        cx = np.array([s.center[0] for s in group["systems"]])
        cy = np.array([s.center[1] for s in group["systems"]])
        parts = []
        for lab in group["src_labels"]:
            f = self._medium(lab).quantity("f")
            coef = f.scaled_taylor(cx, cy, np.full(len(cx), t_c), self.d + 1, L, L, q=self.d + 1, ht=self.dt / 2)
            parts.append(coef.reshape(len(cx), -1))
        return np.concatenate(parts, axis=1)

    def cf_update(self, new: FieldState, other: FieldState, target):
        """Fill CF nodes of ``new`` (parity ``target``) from the patch systems."""
        states = {target: new.data, 1 - target: other.data}
        for group in self.groups[target]:
            bS = self._group_rhs(group, new.t)
            F = self._group_source(group, new.t)
            for i, sysm in enumerate(group["systems"]):
                bB = gather_bm_rhs(sysm, states)
                vals = sysm.out_B @ bB + sysm.out_S @ bS[i]
                if sysm.out_F is not None:
                    vals = vals + sysm.out_F @ F[i]
                update_cf_nodes(new.data, sysm, vals)
                if sysm.div_op is not None:
                    sysm.extra["last_rhs"] = (bB, bS[i], None if F is None else F[i])
        return new

    def step(self, state: FieldState) -> FieldState:
        return step_coupled(state, self.bm_half_step, self.cf_update)

    @property
    def _active(self):
        return np.flatnonzero(self.cls.labels[PRIMAL].ravel() != 2)

    def run(self, callback=None, stride=1, state=None):
        state = self.initial_state() if state is None else state
        t0 = time.perf_counter()
        for n in range(self.n_steps):
            state = self.step(state)
            if not np.isfinite(state.data.reshape(-1, 3 * (self.m + 1) ** 2)[self._active]).all():
                raise FloatingPointError(f"non-finite data at step {n + 1}")
            if callback is not None and ((n + 1) % stride == 0 or n + 1 == self.n_steps):
                if callback(n + 1, state) is False:
                    break
        self.run_time = time.perf_counter() - t0
        return state

    # ------------------------------------------------------------------
    # comparison data

    def node_values(self, state: FieldState, parity=PRIMAL):
        """Physical ``(Hx, Hy, Ez)`` values at active nodes, shape ``(n, 3)``."""
        active = np.flatnonzero(self.cls.labels[parity].ravel() != 2)
        vals = state.data.reshape(-1, 3, self.m + 1, self.m + 1)[active, :, 0, 0].copy()
        if self.variable:
            X, Y = (c.ravel()[active] for c in self.mesh.coords(parity))
            reg = self.cls.regions[parity].ravel()[active]
            for lab in np.unique(reg):
                sel = reg == lab
                med = self._medium(lab)
                im = med.quantity("inv_mu")(X[sel], Y[sel], 0.0)
                ie = med.quantity("inv_eps")(X[sel], Y[sel], 0.0)
                vals[sel, 0] *= im
                vals[sel, 1] *= im
                vals[sel, 2] *= ie
        return active, vals

    def exact_values(self, t, parity=PRIMAL):
        active = np.flatnonzero(self.cls.labels[parity].ravel() != 2)
        X, Y = (c.ravel()[active] for c in self.mesh.coords(parity))
        reg = self.cls.regions[parity].ravel()[active]
        out = np.zeros((len(active), 3))
        for lab in np.unique(reg):
            sel = reg == lab
            med = self._medium(lab)
            for f, name in enumerate(("Hx", "Hy", "Ez")):
                out[sel, f] = med.quantity(name)(X[sel], Y[sel], t)
        return active, out

    def summary(self):
        systems = self.systems[PRIMAL] + self.systems[DUAL]
        return dict(
            h=self.h, m=self.m, d=self.d, n_d=self.nd, cfl=self.cfl, dt=self.dt, n_steps=self.n_steps,
            n_patches=len(self.patches), n_cf_primal=self.cls.count(PRIMAL, CF),
            n_cf_dual=self.cls.count(DUAL, CF), **condition_summary(systems),
        )
