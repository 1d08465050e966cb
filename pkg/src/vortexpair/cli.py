"""Command line entry point: ``vpl {solve,evolve,stability,sweep,validate}``.

A run is described by one JSON config::

    {
      "grid": {"x1_min": -3.2, "x1_max": 3.2, "x2_max": 3.2, "nx": 256, "ny": 128},
      "profile": {"kind": "bump", "peak": 1.0, "radius": 0.8, "power": 2},
      "solver": {"lam": 0.05, "steiner_every": 1},
      "evolution": {"T": 20.0, "dt": null, "cfl": 4.0, "p": 4.0, "audit_every": 10},
      "stability": {"kind": "rearranged-noise", "magnitude": 0.01,
                    "magnitude_units": "l2_fraction", "area_budget": 4.0, "T": 40.0},
      "rng_seed": 0,
      "output_dir": null
    }

Profiles are ``{"kind": "patch", "value", "area"}``, ``{"kind": "bump",
"peak", "radius", "power"}`` or ``{"kind": "ladder_file", "path"}``.

Exit status: 0 success, 2 invalid config, 3 window exhaustion, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from vortexpair import __version__
from vortexpair.evolution import (
    AUDIT_COLUMNS,
    CFLViolationError,
    evolve,
    initial_state,
    stable_dt,
)
from vortexpair.field import GridSpec, NormReport, dump_field, load_field, lp_norm
from vortexpair.greens import LEMMA9_CONSTANTS, support_height_z
from vortexpair.maximizer import (
    MaximizerConfig,
    NonMonotoneError,
    WindowExhaustionError,
    empirical_threshold,
    lambda_sweep,
    maximize,
)
from vortexpair.rearrange import RearrangementProfile, dump_profile, load_profile
from vortexpair.stability import (
    DT_SAFETY,
    PERTURBATION_KINDS,
    REPORT_COLUMNS,
    PerturbationError,
    PerturbationSpec,
    check_travel_window,
    perturb,
    run_stability,
)

log = logging.getLogger("vortexpair")

EXIT_OK, EXIT_CONFIG, EXIT_WINDOW, EXIT_NUMERIC = 0, 2, 3, 4
RNG_NAME = "numpy.random.PCG64"

SOLVER_KEYS = {f.name for f in dataclasses.fields(MaximizerConfig)} - {"initial"}
EVOLUTION_DEFAULTS = {"T": None, "dt": None, "cfl": 1.0, "p": 4.0, "audit_every": 1}
STABILITY_DEFAULTS = {"kind": "rearranged-noise", "magnitude": None,
                      "magnitude_units": "absolute", "area_budget": None, "T": None}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# --- config -------------------------------------------------------------------

def read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"config: cannot read {path}: {e.strerror}"]) from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"config: not valid JSON ({e})"]) from e
    if not isinstance(cfg, dict):
        raise ConfigError(["config: top level must be an object"])
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def _number(block: dict, key: str, where: str, problems: list, positive=False, integer=False):
    v = block.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        problems.append(f"{where}.{key} must be a finite number (got {v!r})")
        return None
    if integer and int(v) != v:
        problems.append(f"{where}.{key} must be an integer (got {v!r})")
        return None
    if positive and not v > 0:
        problems.append(f"{where}.{key} must be > 0 (got {v!r})")
        return None
    return v


def build_grid(cfg: dict, problems: list) -> GridSpec | None:
    g = cfg.get("grid")
    if not isinstance(g, dict):
        problems.append("grid block missing")
        return None
    vals = {}
    for k in ("x1_min", "x1_max"):
        vals[k] = _number(g, k, "grid", problems)
    vals["x2_max"] = _number(g, "x2_max", "grid", problems, positive=True)
    for k in ("nx", "ny"):
        vals[k] = _number(g, k, "grid", problems, positive=True, integer=True)
    if any(v is None for v in vals.values()):
        return None
    try:
        return GridSpec(**vals)
    except ValueError as e:
        problems.append(f"grid: {e}")
        return None


def build_profile(cfg: dict, grid: GridSpec | None, problems: list) -> RearrangementProfile | None:
    p = cfg.get("profile")
    if not isinstance(p, dict):
        problems.append("profile block missing")
        return None
    kind = p.get("kind")
    if kind == "ladder_file":
        path = p.get("path")
        if not isinstance(path, str):
            problems.append("profile.path must name a ladder file")
            return None
        full = Path(cfg.get("_base", ".")) / path
        if not full.exists():
            problems.append(f"profile.path: file {path} does not exist")
            return None
        try:
            prof = load_profile(full)
        except ValueError as e:
            problems.append(f"profile.path: {e}")
            return None
        if grid is not None and not math.isclose(prof.h, grid.h, rel_tol=1e-12):
            problems.append(f"profile.path: ladder spacing {prof.h} differs from grid h {grid.h}")
            return None
        return prof
    if kind not in ("patch", "bump"):
        problems.append(f"profile.kind must be patch, bump or ladder_file (got {kind!r})")
        return None
    if kind == "patch":
        value = _number(p, "value", "profile", problems, positive=True)
        area = _number(p, "area", "profile", problems, positive=True)
        if grid is None or value is None or area is None:
            return None
        if area < grid.cell_area:
            problems.append(f"profile.area {area} is below one cell ({grid.cell_area})")
            return None
        return RearrangementProfile.patch(value, area, grid.h)
    peak = _number(p, "peak", "profile", problems, positive=True)
    radius = _number(p, "radius", "profile", problems, positive=True)
    power = p.get("power", 2.0)
    if isinstance(power, bool) or not isinstance(power, (int, float)) or not power > 0:
        problems.append(f"profile.power must be > 0 (got {power!r})")
        return None
    if grid is None or peak is None or radius is None:
        return None
    return RearrangementProfile.bump(peak, radius, grid.h, power)


def build_solver(cfg: dict, problems: list, lam: float | None = None) -> MaximizerConfig | None:
    s = cfg.get("solver")
    if not isinstance(s, dict):
        problems.append("solver block missing")
        return None
    unknown = sorted(set(s) - SOLVER_KEYS)
    if unknown:
        problems.append(f"solver: unknown keys {unknown}")
    kw = {k: v for k, v in s.items() if k in SOLVER_KEYS}
    if lam is not None:
        kw["lam"] = lam
    if "lam" not in kw:
        problems.append("solver.lam (lambda) missing")
        return None
    if kw.get("seed_placement") == "given-field":
        problems.append("solver.seed_placement 'given-field' is only available from the library")
        return None
    if isinstance(kw.get("seed_center"), list):
        kw["seed_center"] = tuple(kw["seed_center"])
    # collect every violation rather than stopping at the constructor's first
    defaults = {f.name: f.default for f in dataclasses.fields(MaximizerConfig)
                if f.default is not dataclasses.MISSING}
    probe = argparse.Namespace(**{**defaults, **kw})
    try:
        found = MaximizerConfig.problems(probe)
    except TypeError as e:
        found = [f"solver: {e}"]
    if found:
        problems.extend(f"solver: {m}" for m in found)
        return None
    return MaximizerConfig(**kw)


def _block(cfg: dict, name: str, defaults: dict) -> dict:
    b = cfg.get(name) or {}
    return {**defaults, **b} if isinstance(b, dict) else dict(defaults)


def check_evolution(cfg: dict, problems: list, need_T=True) -> dict:
    e = _block(cfg, "evolution", EVOLUTION_DEFAULTS)
    if need_T or e["T"] is not None:
        if _number(e, "T", "evolution", problems) is not None and e["T"] < 0:
            problems.append(f"evolution.T must be >= 0 (got {e['T']})")
    if e["dt"] is not None:
        _number(e, "dt", "evolution", problems, positive=True)
    _number(e, "cfl", "evolution", problems, positive=True)
    if _number(e, "p", "evolution", problems) is not None and not e["p"] > 2:
        problems.append(f"evolution.p must exceed 2 (got {e['p']})")
    _number(e, "audit_every", "evolution", problems, positive=True, integer=True)
    return e


def check_stability(cfg: dict, profile, problems: list) -> dict:
    s = _block(cfg, "stability", STABILITY_DEFAULTS)
    if s["kind"] not in PERTURBATION_KINDS:
        problems.append(f"stability.kind must be one of {PERTURBATION_KINDS} (got {s['kind']!r})")
    _number(s, "magnitude", "stability", problems, positive=True)
    if s["magnitude_units"] not in ("absolute", "l2_fraction"):
        problems.append(f"stability.magnitude_units must be absolute or l2_fraction "
                        f"(got {s['magnitude_units']!r})")
    budget = _number(s, "area_budget", "stability", problems, positive=True)
    if budget is not None and profile is not None and not budget > profile.total_area:
        problems.append(f"stability.area_budget {budget} must exceed the profile area "
                        f"{profile.total_area:.6g}")
    _number(s, "T", "stability", problems, positive=True)
    return s


def height_check(profile: RearrangementProfile, grid: GridSpec, lam: float) -> tuple[float, str | None]:
    """Height bound from the profile's worst-case norms (all mass at the top of
    the window) and a warning when the window is lower."""
    worst = NormReport(l1=profile.l1, l2=profile.l2, lp=profile.lp(4.0), p=4.0,
                       impulse=profile.l1 * grid.x2_max, impulse_of_abs=profile.l1 * grid.x2_max,
                       norm_x=float("nan"), norm_y=float("nan"))
    z = support_height_z(worst, lam)
    if grid.x2_max < z:
        return z, (f"support_height_z: x2_max = {grid.x2_max:g} is below the a-priori height "
                   f"Z = {z:.4g} for lambda = {lam:g}; the window guard will catch truncation")
    return z, None


def validate_config(cfg: dict, command: str = "validate") -> tuple[list[str], list[str]]:
    """Every violated invariant in ``cfg`` as ``(errors, warnings)``."""
    errors, warnings = [], []
    grid = build_grid(cfg, errors)
    profile = build_profile(cfg, grid, errors)
    solver = build_solver(cfg, errors, lam=1.0 if command == "sweep" else None)
    if grid is not None and profile is not None and profile.n_cells > grid.size:
        errors.append(f"profile needs {profile.n_cells} cells but the grid has {grid.size}")
    if command in ("validate", "evolve") and "evolution" in cfg:
        check_evolution(cfg, errors, need_T=(command == "evolve"))
    elif command == "evolve":
        errors.append("evolution block missing")
    if command == "stability" or (command == "validate" and "stability" in cfg):
        check_evolution(cfg, errors, need_T=False)
        check_stability(cfg, profile, errors)
    seed = cfg.get("rng_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"rng_seed must be a nonnegative integer (got {seed!r})")
    if grid is not None and profile is not None and solver is not None and command != "sweep":
        _, w = height_check(profile, grid, solver.lam)
        if w:
            warnings.append(w)
    return errors, warnings


# --- artifacts -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def output_dir(args, cfg: dict) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg.get("output_dir"):
        out = Path(cfg["_base"]) / cfg["output_dir"]
    else:
        out = Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_metadata(out: Path, args, cfg: dict, extra: dict, started: float) -> None:
    meta = {
        "command": args.command,
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "config_path": str(Path(args.config).resolve()),
        "lemma9_constants": LEMMA9_CONSTANTS,
        "rng": {"generator": RNG_NAME, "seed": cfg.get("rng_seed", 0)},
        "wall_clock_s": time.time() - started,
        "versions": {"vortexpair": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "threads": os.environ.get("VPL_THREADS", "1"),
    }
    meta.update(extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _setup(cfg, command, lam=None):
    errors, warnings = validate_config(cfg, command)
    if errors:
        raise ConfigError(errors)
    for w in warnings:
        log.warning(w)
    grid = build_grid(cfg, [])
    profile = build_profile(cfg, grid, [])
    solver = build_solver(cfg, [], lam=lam)
    return grid, profile, solver, warnings


def _solve(grid, profile, solver, out: Path) -> dict:
    res = maximize(profile, grid, solver)
    dump_field(res.zeta_star, out / "zeta_star.csv")
    dump_field(res.psi, out / "psi.csv")
    dump_profile(profile, out / "profile.csv")
    write_csv(out / "trace.csv", ("iter", "objective", "delta_l2", "support_area", "best_ball_mass_R1"),
              [(r.iter, r.objective, r.delta_l2, r.support_area, r.best_ball_mass_R1) for r in res.trace])
    summary = {
        "s_lambda": res.s_lambda,
        "converged": res.converged,
        "iterations": res.iterations,
        "full_rearrangement": res.full_rearrangement,
        "comonotonicity_residual": res.comonotonicity_residual,
        "Z": res.z_height,
        "support_top": res.support_top,
        "solver_warnings": res.warnings,
    }
    return res, summary


# --- subcommands ---------------------------------------------------------------------

def cmd_validate(args, cfg) -> int:
    errors, warnings = validate_config(cfg, "validate")
    for e in errors:
        print(f"error: {e}")
    for w in warnings:
        print(f"warning: {w}")
    return EXIT_CONFIG if errors else EXIT_OK


def cmd_solve(args, cfg, started) -> int:
    grid, profile, solver, warnings = _setup(cfg, "solve")
    out = output_dir(args, cfg)
    _, summary = _solve(grid, profile, solver, out)
    write_metadata(out, args, cfg, {**summary, "config_warnings": warnings}, started)
    print(f"s_lambda = {summary['s_lambda']:.12g}  converged = {summary['converged']}  -> {out}")
    return EXIT_OK


def _evolution_dt(e: dict, zeta, lam) -> float:
    return float(e["dt"]) if e["dt"] is not None else DT_SAFETY * stable_dt(zeta, lam, e["cfl"])


def cmd_evolve(args, cfg, started) -> int:
    grid, profile, solver, warnings = _setup(cfg, "evolve")
    e = _block(cfg, "evolution", EVOLUTION_DEFAULTS)
    try:
        zeta = load_field(args.state)
    except (OSError, ValueError) as err:
        raise ConfigError([f"--state: {err}"]) from err
    if not zeta.grid.same_as(grid):
        raise ConfigError([f"--state grid {zeta.grid.header_dict()} differs from the config grid"])
    out = output_dir(args, cfg)
    state = initial_state(zeta, solver.lam, e["p"])
    dt = _evolution_dt(e, zeta, solver.lam)
    final, audits = evolve(state, e["T"], dt, audit_every=int(e["audit_every"]), cfl=e["cfl"])
    write_csv(out / "audit.csv", AUDIT_COLUMNS, [a.row() for a in audits])
    dump_field(final.zeta, out / "zeta_final.csv")
    write_metadata(out, args, cfg, {"dt": dt, "steps": final.steps, "config_warnings": warnings,
                                    "state_path": str(Path(args.state).resolve())}, started)
    print(f"evolved {final.steps} steps to t = {final.t:g} -> {out}")
    return EXIT_OK


def cmd_stability(args, cfg, started) -> int:
    grid, profile, solver, warnings = _setup(cfg, "stability")
    e = _block(cfg, "evolution", EVOLUTION_DEFAULTS)
    s = _block(cfg, "stability", STABILITY_DEFAULTS)
    out = output_dir(args, cfg)
    if args.state:
        zeta_star = load_field(args.state)
        if not zeta_star.grid.same_as(grid):
            raise ConfigError([f"--state grid {zeta_star.grid.header_dict()} differs from the config grid"])
        summary = {"state_path": str(Path(args.state).resolve())}
    else:
        res, summary = _solve(grid, profile, solver, out)
        zeta_star = res.zeta_star
    magnitude = s["magnitude"]
    if s["magnitude_units"] == "l2_fraction":
        magnitude *= lp_norm(zeta_star, 2)
    spec = PerturbationSpec(s["kind"], magnitude, s["area_budget"], int(cfg.get("rng_seed", 0)))
    # the travel allowance depends only on the support, so check it before perturbing
    check_travel_window(zeta_star, solver.lam, s["T"])
    omega0 = perturb(zeta_star, spec)
    dump_field(omega0, out / "omega0.csv")
    dt = DT_SAFETY * stable_dt(omega0, solver.lam, e["cfl"]) if e["dt"] is None else float(e["dt"])
    rep = run_stability(zeta_star, spec, solver.lam, s["T"], dt, audit_every=int(e["audit_every"]),
                        cfl=e["cfl"], p=e["p"], omega0=omega0)
    write_csv(out / "stability.csv", REPORT_COLUMNS, [r.row() for r in rep.series])
    summary.update({"dt": dt, "magnitude": magnitude, "initial_dist2": rep.initial_dist2,
                    "peak_dist2": rep.peak_dist2, "initial_dist_y": rep.initial_dist_y,
                    "peak_dist_y": rep.peak_dist_y, "config_warnings": warnings,
                    "note": "distances are to the x1-orbit of one computed maximizer"})
    write_metadata(out, args, cfg, summary, started)
    print(f"peak dist2 {rep.peak_dist2:.4g} (initial {rep.initial_dist2:.4g}) -> {out}")
    return EXIT_OK


def cmd_sweep(args, cfg, started) -> int:
    try:
        lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
    except ValueError as err:
        raise ConfigError([f"--lambdas: {err}"]) from err
    bad = [x for x in lambdas if not x > 0]
    if not lambdas or bad or any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ConfigError([f"--lambdas must be positive and strictly ascending (got {args.lambdas})"])
    grid, profile, solver, warnings = _setup(cfg, "sweep", lam=lambdas[0])
    out = output_dir(args, cfg)
    rows = lambda_sweep(profile, grid, lambdas, solver)
    write_csv(out / "sweep.csv",
              ("lam", "s_lambda", "full_rearrangement", "support_height", "converged", "iterations"),
              [dataclasses.astuple(r) for r in rows])
    write_metadata(out, args, cfg, {"lambdas": lambdas, "empirical_threshold": empirical_threshold(rows),
                                    "Z": [height_check(profile, grid, lam)[0] for lam in lambdas]},
                   started)
    print(f"swept {len(rows)} values of lambda -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vpl", description="Steady vortex pairs: solve, evolve, perturb.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "maximize energy - lambda * impulse over the profile's class"),
                       ("evolve", "evolve a stored field and audit the invariants"),
                       ("stability", "perturb a maximizer and follow the orbit distance"),
                       ("sweep", "solve over a list of lambda values"),
                       ("validate", "list every problem with a config")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        if name != "validate":
            p.add_argument("--out", help="output directory (default ./runs/<timestamp>)")
        if name in ("evolve", "stability"):
            p.add_argument("--state", required=(name == "evolve"), help="field dump to start from")
        if name == "sweep":
            p.add_argument("--lambdas", required=True, help="comma separated, ascending")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = read_config(args.config)
        if args.command == "validate":
            return cmd_validate(args, cfg)
        handler = {"solve": cmd_solve, "evolve": cmd_evolve,
                   "stability": cmd_stability, "sweep": cmd_sweep}[args.command]
        return handler(args, cfg, started)
    except ConfigError as err:
        for p in err.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except WindowExhaustionError as err:
        print(f"window exhaustion: {err}", file=sys.stderr)
        return EXIT_WINDOW
    except (NonMonotoneError, CFLViolationError, PerturbationError, FloatingPointError) as err:
        print(f"numeric failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
