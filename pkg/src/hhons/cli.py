"""Command-line front end: ``check``, ``convergence``, ``cavity``, ``solve``.

Exit codes: 0 success, 1 Picard non-convergence, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .forms import FluidLaws
from .hho import HHOSpace
from .io import (centerlines, load_reference, sample_velocity, write_centerlines, write_convergence_csv,
                 write_vtk)
from .laws import CarreauYasuda, LaplaceConvection, condition_report, format_interval
from .mesh import MeshParseError, MeshStructureError, build_cartesian, build_triangular, read_mesh
from .solver import PicardConfig, face_velocity_dofs, picard_solve
from .verify import ConvergenceConfig, ExactSolution, compute_errors, run_convergence, source_term

log = logging.getLogger(__name__)

COMMANDS = ("check", "convergence", "cavity", "solve")
CONFIG_KEYS = {"command", "r", "s", "delta", "mu", "nu", "yasuda_a", "k", "mesh", "quad_order", "picard",
               "output_dir"}
EXIT_OK, EXIT_NONCONVERGED, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    pass


def parse_number(x):
    """Float or ``"p/q"`` string; returns a Fraction when exact."""
    if isinstance(x, bool):
        raise ConfigError(f"not a number: {x!r}")
    if isinstance(x, (int, float)):
        return x
    try:
        f = Fraction(str(x).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {x!r}") from None
    return f if f.denominator != 1 else int(f)


@dataclass
class RunConfig:
    command: str = "convergence"
    r: object = 2
    s: object = 2
    delta: float = 1.0
    mu: float = 1.0
    nu: float = 1.0
    yasuda_a: object = None          # defaults to r
    k: int = 1
    mesh: dict = field(default_factory=lambda: {"type": "triangular", "n": [8, 16, 32, 64]})
    quad_order: int | None = None    # defaults to 2k + 4
    picard: dict = field(default_factory=dict)
    output_dir: str = "."

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        self.r, self.s = parse_number(self.r), parse_number(self.s)
        for name in ("r", "s"):
            v = getattr(self, name)
            if not 1 < v < float("inf"):
                raise ConfigError(f"{name} = {v} must lie in (1, inf)")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError("k must be ≥ 1")
        self.k = int(self.k)
        if self.quad_order is not None and self.quad_order < 2 * self.k + 2:
            raise ConfigError("quad_order must be at least 2k + 2")
        if not isinstance(self.mesh, dict) or "type" not in self.mesh:
            raise ConfigError("mesh needs a 'type'")
        unknown = set(self.picard) - {"tol", "max_iters", "relaxation"}
        if unknown:
            raise ConfigError(f"unknown picard keys {sorted(unknown)}")
        try:
            self.laws()
            self.picard_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def laws(self) -> FluidLaws:
        a = self.r if self.yasuda_a is None else parse_number(self.yasuda_a)
        return FluidLaws(CarreauYasuda(self.mu, self.delta, float(a), float(self.r)),
                         LaplaceConvection(self.nu, float(self.s)))

    def picard_config(self) -> PicardConfig:
        return PicardConfig(**self.picard)

    def levels(self):
        n = self.mesh.get("n")
        if n is None:
            raise ConfigError("mesh needs 'n'")
        levels = [n] if isinstance(n, int) else list(n)
        if not levels or any(not isinstance(m, int) or m < 1 for m in levels):
            raise ConfigError("mesh 'n' must be a positive integer or a list of them")
        return levels

    def build_mesh(self, n=None):
        kind = self.mesh["type"]
        try:
            if kind == "file":
                return read_mesh(self.mesh["path"])
            n = self.levels()[0] if n is None else n
            if kind == "cartesian":
                return build_cartesian(n, n)
            if kind == "triangular":
                return build_triangular(n, float(self.mesh.get("distortion", 0.3)))
        except (OSError, KeyError, MeshParseError, MeshStructureError) as exc:
            raise ConfigError(f"cannot build mesh: {exc}") from None
        raise ConfigError(f"unknown mesh type {kind!r}")


# -- commands ---------------------------------------------------------------


def cmd_check(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    rep = condition_report(cfg.r, cfg.s, 2, cfg.k)
    cons = "strict" if rep.strict_consistency_ok else ("non-strict only" if rep.consistency_ok else "violated")
    print(f"r={rep.r} s={rep.s} d={rep.d} k={rep.k}", file=out)
    print(f"r'={rep.r_conj} r*={rep.r_sob}", file=out)
    print(f"consistency: s={rep.s} ≤ r*/r'={rep.consistency_bound} ({cons})", file=out)
    print(f"uniqueness: 2 ≤ s ≤ {rep.uniqueness_bound}: {rep.uniqueness_interval_ok}", file=out)
    print(f"error estimate: r ≤ 2 ≤ s ≤ r*/r': {rep.error_estimate_ok}", file=out)
    print(f"rates ({rep.rate_source}): O_vel={format_interval(rep.predicted_rate_velocity)}, "
          f"O_pre={format_interval(rep.predicted_rate_pressure)}", file=out)
    return EXIT_OK


def _convergence_config(cfg: RunConfig) -> ConvergenceConfig:
    a = None if cfg.yasuda_a is None else float(parse_number(cfg.yasuda_a))
    kind = cfg.mesh["type"]
    if kind not in ("triangular", "cartesian"):
        raise ConfigError("convergence needs a generated mesh family")
    return ConvergenceConfig(r=float(cfg.r), s=float(cfg.s), delta=cfg.delta, mu=cfg.mu, nu=cfg.nu, yasuda_a=a,
                             k=cfg.k, mesh=kind, levels=tuple(cfg.levels()),
                             distortion=float(cfg.mesh.get("distortion", 0.3)), quad_order=cfg.quad_order,
                             picard=cfg.picard_config())


def cmd_convergence(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    conv = _convergence_config(cfg)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    def on_level(rec, rep):
        print(f"h={rec.h:.6g} erru={rec.err_u:.6e} errp={rec.err_p:.6e} picard={rec.picard_iters}"
              f"{'' if rec.converged else ' (not converged)'}", file=out)

    table = run_convergence(conv, on_level)
    path = outdir / "convergence.csv"
    write_convergence_csv(path, table)
    print(f"rates u: {np.round(table.rates_u, 3).tolist()}  p: {np.round(table.rates_p, 3).tolist()}", file=out)
    print(f"wrote {path}", file=out)
    return EXIT_OK if all(r.converged for r in table.records) else EXIT_NONCONVERGED


def lid_velocity(x):
    """Unit tangential velocity on ``x2 = 1``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    top = np.isclose(x[..., 1], 1.0, rtol=0.0, atol=1e-12)
    return np.stack([top.astype(float), np.zeros(x.shape[:-1])], axis=-1)


def reference_path(name):
    return resources.files("hhons") / "data" / name


def centerline_deviation(u, field="cell") -> tuple[float, float]:
    """Sup-norm deviation of the centerlines from the Re = 1000 reference."""
    x2, u1 = load_reference(reference_path("ghia_re1000_u1.txt"))
    x1, u2 = load_reference(reference_path("ghia_re1000_u2.txt"))
    v1 = sample_velocity(u, np.stack([np.full_like(x2, 0.5), x2], axis=1), field)[:, 0]
    v2 = sample_velocity(u, np.stack([x1, np.full_like(x1, 0.5)], axis=1), field)[:, 1]
    return float(np.abs(v1 - u1).max()), float(np.abs(v2 - u2).max())


def run_cavity(cfg: RunConfig):
    """Solve the lid-driven cavity; returns ``(u, p, report, space)``."""
    if cfg.mesh["type"] == "triangular":
        raise ConfigError("the cavity runs on cartesian or file meshes")
    mesh = cfg.build_mesh()
    space = HHOSpace(mesh, cfg.k, cfg.quad_order)
    u, p, rep = picard_solve(mesh, cfg.k, cfg.laws(), None, lid_velocity, cfg.picard_config(), space=space)
    return u, p, rep, space


def cmd_cavity(cfg: RunConfig, field="cell", out=None) -> int:
    out = out or sys.stdout
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    u, p, rep, space = run_cavity(cfg)
    print(f"Re={2.0 / cfg.mu:g} face-velocity dofs={face_velocity_dofs(space.mesh, cfg.k)} "
          f"picard={rep.iterations} converged={rep.converged}", file=out)
    write_vtk(outdir / "cavity.vtk", u, p, title=f"lid-driven cavity Re={2.0 / cfg.mu:g}")
    write_centerlines(outdir, centerlines(u, field=field))
    d1, d2 = centerline_deviation(u, field)
    print(f"centerline deviation from Re=1000 reference: u1 {d1:.4f}, u2 {d2:.4f}", file=out)
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def cmd_solve(cfg: RunConfig, data="manufactured", out=None) -> int:
    """Single solve on the configured mesh with manufactured, lid or zero data."""
    out = out or sys.stdout
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    mesh = cfg.build_mesh()
    laws = cfg.laws()
    space = HHOSpace(mesh, cfg.k, cfg.quad_order)
    exact = ExactSolution()
    if data == "manufactured":
        f, g = (lambda x: source_term(x, laws, exact)), exact.u
    elif data == "lid":
        f, g = None, lid_velocity
    elif data == "zero":
        f, g = None, None
    else:
        raise ConfigError(f"unknown data {data!r}")
    u, p, rep = picard_solve(mesh, cfg.k, laws, f, g, cfg.picard_config(), space=space)
    print(f"h={mesh.h:.6g} picard={rep.iterations} converged={rep.converged} dofs={rep.dof_counts['total']}",
          file=out)
    if data == "manufactured":
        rec = compute_errors(u, p, exact, float(cfg.r), rep.iterations, rep.converged)
        print(f"erru={rec.err_u:.12g} errp={rec.err_p:.12g}", file=out)
    write_vtk(outdir / "solution.vtk", u, p)
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hhons", description="HHO solver for generalized Navier-Stokes flows")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--r", help="stress exponent (float or p/q)")
        p.add_argument("--s", help="convection exponent (float or p/q)")
        p.add_argument("--k", type=int, help="polynomial degree")
        if name == "check":
            continue
        p.add_argument("--delta", type=float)
        p.add_argument("--mu", type=float)
        p.add_argument("--nu", type=float)
        p.add_argument("--yasuda-a", dest="yasuda_a")
        p.add_argument("--mesh", dest="mesh_type", choices=("triangular", "cartesian", "file"))
        p.add_argument("--n", type=int, nargs="+", help="mesh size(s)")
        p.add_argument("--mesh-file")
        p.add_argument("--quad-order", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--relaxation", type=float)
        p.add_argument("--output-dir", "-o")
        if name == "cavity":
            p.add_argument("--re", type=float, help="Reynolds number, sets mu = 2/Re")
            p.add_argument("--field", choices=("cell", "reconstruction"), default="cell",
                           help="velocity sampled along the centerlines")
        if name == "solve":
            p.add_argument("--data", choices=("manufactured", "lid", "zero"), default="manufactured")
    return ap


def _defaults(command):
    if command == "cavity":
        return {"mu": 2.0 / 1000, "k": 3, "mesh": {"type": "cartesian", "n": 32}}
    if command == "solve":
        return {"mesh": {"type": "triangular", "n": 8}}
    return {}


def config_from_args(args) -> RunConfig:
    d = {"command": args.command, **_defaults(args.command)}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        if loaded.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {loaded['command']!r}, not {args.command!r}")
        unknown = set(loaded) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d.update(loaded)
    for key in ("r", "s", "k", "delta", "mu", "nu", "yasuda_a", "quad_order", "output_dir"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "re", None) is not None:
        if not args.re > 0:
            raise ConfigError("Re must be positive")
        d["mu"] = 2.0 / args.re
    mesh = dict(d.get("mesh", RunConfig().mesh))
    if getattr(args, "mesh_type", None):
        mesh = {"type": args.mesh_type, **({"n": mesh["n"]} if "n" in mesh else {})}
    if getattr(args, "n", None):
        mesh["n"] = args.n if len(args.n) > 1 else args.n[0]
    if getattr(args, "mesh_file", None):
        mesh = {"type": "file", "path": args.mesh_file}
    d["mesh"] = mesh
    picard = dict(d.get("picard", {}))
    for key in ("tol", "max_iters", "relaxation"):
        v = getattr(args, key, None)
        if v is not None:
            picard[key] = v
    d["picard"] = picard
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if cfg.command == "check":
            return cmd_check(cfg)
        if cfg.command == "convergence":
            return cmd_convergence(cfg)
        if cfg.command == "cavity":
            return cmd_cavity(cfg, args.field)
        return cmd_solve(cfg, args.data)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
