"""Command-line front end.

    python3 -m hermion run --scenario pec-star --m 1 --mesh 1/56 --out out/
    python3 -m hermion converge --scenario pec-star --m 1 --mesh 1/28,1/56,1/112
    python3 -m hermion longtime --scenario pec-star --m 1 --mesh 1/30 --tf 25
    python3 -m hermion list-scenarios
    python3 -m hermion dump-patches --scenario interface-star --mesh 1/28

A ``--config`` file holds ``key = value`` lines under a ``[scenario]``
section; command-line flags override it.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .diagnostics import RunReport, _fmt, run_longtime, run_mesh, run_self_convergence
from .geometry import PARITY_NAMES, StaggeredMesh, classification_rows
from .scenarios import ScenarioError, builtin_scenarios, get_scenario
from .solver import ConfigError, Simulation, validate_parameters

log = logging.getLogger("hermion")

COMMANDS = ("run", "converge", "longtime", "list-scenarios", "dump-patches")


@dataclass
class RunConfig:
    scenario: str = "pec-star"
    m: int = 1
    d: int | None = None
    n_d: int | None = None
    beta: float = 6
    omega_b: float = 0.5
    cfl: float | None = None
    meshes: list = field(default_factory=list)
    tf: float | None = None
    out: str = "."
    verbosity: int = 0
    threads: int = 1
    stride: int = 1
    reference: float | None = None  # self-convergence reference mesh

    def resolved(self):
        """Scenario plus fully defaulted ``(d, n_d, cfl)``, validated."""
        sc = get_scenario(self.scenario)
        d0, nd0, cfl0 = sc.defaults(self.m)
        d = d0 if self.d is None else self.d
        nd = nd0 if self.n_d is None else self.n_d
        if self.d is not None and self.n_d is None:
            nd = min(nd, d - 1 if sc.gstc else d)
        cfl = cfl0 if self.cfl is None else self.cfl
        validate_parameters(sc, self.m, d, nd)
        if not cfl > 0:
            raise ConfigError(f"CFL constant must be positive, got {cfl}")
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.threads < 1:
            raise ConfigError(f"thread count must be at least 1, got {self.threads}")
        for h in self.meshes:
            _check_mesh(sc, h)
        return sc, d, nd, cfl


def _check_mesh(sc, h):
    if not h > 0:
        raise ConfigError(f"mesh size must be positive, got {h}")
    try:
        StaggeredMesh.from_h(sc.bounds, h)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_meshes(text):
    """``"1/28,1/56"`` or ``"0.05 0.025"`` -> list of floats."""
    out = []
    for tok in str(text).replace(",", " ").split():
        try:
            out.append(float(Fraction(tok)))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad mesh size {tok!r}") from exc
    return out


_CASTS = {
    "scenario": str, "m": int, "d": int, "n_d": int, "beta": float, "omega_b": float, "cfl": float,
    "meshes": parse_meshes, "tf": float, "out": str, "verbosity": int, "threads": int, "stride": int,
    "reference": lambda v: float(Fraction(v)),
}
_ALIASES = {"name": "scenario", "mesh": "meshes", "nd": "n_d", "t_f": "tf"}


def parse_config(path=None, overrides=None, env=None) -> RunConfig:
    """Config file (optional) updated by ``overrides``; unknown keys are rejected."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        if not cp.has_section("scenario"):
            raise ConfigError(f"{path}: missing [scenario] section")
        for key, raw in cp.items("scenario"):
            values[_ALIASES.get(key, key)] = raw
    if "threads" not in values and "HERMION_THREADS" in env:
        values["threads"] = env["HERMION_THREADS"]
    for key, val in (overrides or {}).items():
        if val is not None:
            values[_ALIASES.get(key, key)] = val
    cfg = RunConfig()
    for key, raw in values.items():
        if key not in _CASTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            val = raw if not isinstance(raw, str) or key in ("scenario", "out") else _CASTS[key](raw)
            if key == "meshes" and not isinstance(val, list):
                val = parse_meshes(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        setattr(cfg, key, val)
    return cfg


# ----------------------------------------------------------------------
# output


def _write_outputs(outdir, files: dict):
    """Write all files or none: render everything first, then rename into place."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tmp = []
    try:
        for name, text in files.items():
            fd, p = tempfile.mkstemp(dir=outdir, prefix=f".{name}.")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            tmp.append((p, outdir / name))
        for p, dst in tmp:
            os.replace(p, dst)
    finally:
        for p, _ in tmp:
            if os.path.exists(p):
                os.unlink(p)


def _report_files(report: RunReport, cfg: RunConfig):
    meta = json.loads(report.to_json())
    meta["config"] = {k: v for k, v in vars(cfg).items() if k != "out"}
    return {"report.csv": report.to_csv(), "report.json": json.dumps(meta, indent=2) + "\n"}


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue()


def patch_rows(sim: Simulation):
    rows = []
    for parity, systems in sim.systems.items():
        for s in systems:
            rows.append((s.patch_id, s.surface, PARITY_NAMES[parity], s.center[0], s.center[1],
                         len(s.cf_index), len(s.bm_index), s.n_rows["G"], s.n_rows["B"], s.n_rows["S"],
                         s.n_unknowns, s.rank, s.cond))
    return rows


PATCH_HEADER = ("patch", "surface", "target", "xc", "yc", "n_cf", "n_bm", "rows_G", "rows_B", "rows_S",
                "unknowns", "rank", "cond")


# ----------------------------------------------------------------------
# commands


def _sim_kw(cfg, d, nd, cfl):
    return dict(d=d, nd=nd, cfl=cfl, beta=cfg.beta, omega_b=cfg.omega_b, tf=cfg.tf)


def cmd_run(cfg: RunConfig, converge=False):
    sc, d, nd, cfl = cfg.resolved()
    meshes = cfg.meshes or list(sc.meshes)
    if not converge:
        meshes = meshes[:1]
    kw = _sim_kw(cfg, d, nd, cfl)
    if not sc.exact:
        if cfg.reference is None:
            raise ConfigError(f"scenario {sc.name} has no exact solution; set reference = <h>")
        _check_mesh(sc, cfg.reference)
        report = run_self_convergence(sc, cfg.m, meshes, cfg.reference, **kw)
        return _report_files(report, cfg)

    def one(h):
        return run_mesh(sc, h, cfg.m, **kw)[0]

    if cfg.threads > 1 and len(meshes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, meshes))
    else:
        results = [one(h) for h in meshes]
    report = RunReport(sc.name, cfg.m, d, nd, cfl, cfg.beta, cfg.omega_b, sc.tf if cfg.tf is None else cfg.tf)
    report.meshes = results
    return _report_files(report.finalize(), cfg)


def cmd_longtime(cfg: RunConfig):
    sc, d, nd, cfl = cfg.resolved()
    h = (cfg.meshes or [sc.meshes[0]])[0]
    tf = sc.tf if cfg.tf is None else cfg.tf
    kw = _sim_kw(cfg, d, nd, cfl)
    kw.pop("tf")
    report = run_longtime(sc, cfg.m, h, tf, stride=cfg.stride, **kw)
    files = _report_files(report, cfg)
    series = report.series[report.meshes[0].h]
    files["series.csv"] = _csv_text(("t", "error_inf"), series)
    return files


def cmd_dump(cfg: RunConfig):
    sc, d, nd, cfl = cfg.resolved()
    h = (cfg.meshes or [sc.meshes[0]])[0]
    sim = Simulation(sc, h, cfg.m, **_sim_kw(cfg, d, nd, cfl))
    return {
        "classification.csv": _csv_text(("x", "y", "mesh", "label", "region"),
                                        classification_rows(sim.mesh, sim.cls)),
        "patches.csv": _csv_text(PATCH_HEADER, patch_rows(sim)),
    }


def cmd_list():
    lines = []
    for name, sc in builtin_scenarios().items():
        mode = "exact" if sc.exact else "self-convergence"
        lines.append(f"{name:22s} {sc.kind:10s} {mode:17s} {sc.description}")
    return "\n".join(lines)


def build_parser():
    p = argparse.ArgumentParser(prog="hermion", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario")
    p.add_argument("--m", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--nd", type=int, dest="n_d")
    p.add_argument("--beta", type=float)
    p.add_argument("--omega-b", type=float, dest="omega_b")
    p.add_argument("--mesh", help="comma separated mesh sizes, e.g. 1/28,1/56")
    p.add_argument("--reference", help="reference mesh size for self-convergence scenarios")
    p.add_argument("--cfl", type=float)
    p.add_argument("--tf", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.add_argument("-v", "--verbose", action="count", default=None, dest="verbosity")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            print(cmd_list())
            return 0
        overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "mesh")}
        if args.mesh is not None:
            overrides["meshes"] = parse_meshes(args.mesh)
        cfg = parse_config(args.config, overrides)
        logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2), format="%(name)s: %(message)s")
        if args.command in ("run", "converge"):
            files = cmd_run(cfg, converge=args.command == "converge")
        elif args.command == "longtime":
            files = cmd_longtime(cfg)
        else:
            files = cmd_dump(cfg)
        _write_outputs(cfg.out, files)
        if args.command != "dump-patches":
            sys.stdout.write(files["report.csv"])
        return 0
    except (ConfigError, ScenarioError) as exc:
        _error("config", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable failure
        _error(type(exc).__name__, exc)
        return 1


def _error(kind, exc):
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
