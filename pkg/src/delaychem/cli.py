"""Command-line entry point: ``delaychem <command> [options]``.

Artifacts are CSV files with ``#`` comment headers (config echo, defaults,
residual summaries) or INI-like report text.  When ``--out`` is omitted the
file goes to ``$DELAYCHEM_OUTPUT_DIR`` (default: the working directory).

Exit status: 0 on success (condition failures included), 1 for a malformed
config or bad arguments, 3 for a numerical fault.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import check_all, check_exclusion, check_existence, check_extinction, theorem_summary
from .config import ConfigError, LoadedConfig, load
from .instances import exclusion_instance, forced_chemostat
from .model import ChemostatModel, QuadratureGrid, Species, validate_model
from .periodic import (
    SolveOptions,
    find_fixed_point,
    poincare_shoot,
    single_species_solve,
)
from .simulator import (
    History,
    IntegrationError,
    asymptotic_summary,
    conservation_series,
    default_dt,
    dissipative_limits,
    simulate,
)
from .washout import ValidationError, washout_residual, washout_solution

OUTPUT_ENV = "DELAYCHEM_OUTPUT_DIR"
DEFAULTS = {"points_per_period": 512, "steps_per_period": 2048, "tol": 1e-8}

COMMANDS = ("validate", "washout", "simulate", "check", "find-periodic", "exclusion-demo", "sweep")


@dataclass
class RunSpec:
    command: str
    config_path: str | None = None
    out: str | None = None
    report: str | None = None
    overrides: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.config_path is not None and not Path(self.config_path).is_file():
            raise ConfigError("config file not found", self.config_path)
        for key, value in self.overrides.items():
            if value is not None and not value > 0:
                raise ValueError(f"--{key.replace('_', '-')} must be positive")


# output helpers ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.15g}"
    return str(v)


def output_path(out: str | None, default_name: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUTPUT_ENV, ".")) / default_name


def write_csv(path: Path, columns, rows, header=(), footer=()):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        for line in footer:
            fh.write(f"# {line}\n")


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# shared plumbing ----------------------------------------------------------------

def _load(spec: RunSpec) -> LoadedConfig | None:
    if spec.config_path is None:
        return None
    cfg = load(spec.config_path)
    M = spec.overrides.get("M")
    if M:
        cfg = LoadedConfig(cfg.model, QuadratureGrid(int(M), cfg.grid.rule), cfg.source)
    return cfg


def _require(cfg: LoadedConfig | None, command: str) -> LoadedConfig:
    if cfg is None:
        raise ConfigError(f"'{command}' needs --config")
    return cfg


def _header(command: str, cfg: LoadedConfig, extra=()) -> list[str]:
    lines = [f"delaychem {__version__} {command}", f"config: {cfg.source}"]
    lines += [f"  {line}" for line in cfg.echo()]
    lines += list(extra)
    return lines


def parse_history(text: str | None, model: ChemostatModel) -> History:
    """``const:v_S,v_1,...,v_n`` or a CSV file with columns ``t, S, x1..xn`` ending at t=0."""
    if text is None:
        s = float(model.s0(np.array([0.0]))[0])
        return History.constant_state([s] + [0.1] * model.n)
    if text.startswith("const:"):
        try:
            values = [float(v) for v in text[len("const:"):].split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --history value: {exc}") from exc
        if len(values) != model.n + 1:
            raise ConfigError(f"--history needs {model.n + 1} values (S, x1..x{model.n}), got {len(values)}")
        if any(v < 0 for v in values):
            raise ConfigError("--history values must be nonnegative")
        return History.constant_state(values)
    path = Path(text)
    if not path.is_file():
        raise ConfigError("history file not found", text)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, skiprows=_header_rows(path))
    if data.shape[1] != model.n + 2:
        raise ConfigError(f"history file needs {model.n + 2} columns (t, S, x1..x{model.n})", text)
    return History.from_samples(data[:, 0], data[:, 1:])


def _header_rows(path: Path) -> int:
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                float(s.split(",")[0])
                return 0
            except ValueError:
                return 1
    return 0


def _dt_for(model: ChemostatModel, dt: float | None) -> float:
    return default_dt(model) if dt is None else dt


# commands -----------------------------------------------------------------------

def cmd_validate(spec: RunSpec) -> int:
    cfg = _require(_load(spec), "validate")
    report = validate_model(cfg.model)
    print("\n".join(report.summary_lines()))
    if spec.out:
        write_text(Path(spec.out), report.to_text())
    return 0


def cmd_washout(spec: RunSpec) -> int:
    cfg = _require(_load(spec), "washout")
    ws = washout_solution(cfg.model, cfg.grid)
    res = washout_residual(cfg.model, ws)
    t = ws.nodes
    path = output_path(spec.out, "washout.csv")
    extra = [f"y_star(0) = {ws.y0:.15g}", f"min = {ws.min:.15g}", f"max = {ws.max:.15g}"]
    write_csv(path, ["t", "y_star", "residual"], zip(t, ws.values, res), _header("washout", cfg, extra),
              [f"max_residual = {res.max():.6e}"])
    print(f"y*(0) = {ws.y0:.12g}  min = {ws.min:.12g}  max = {ws.max:.12g}  max residual = {res.max():.3e}")
    print(f"wrote {path}")
    return 0


def cmd_simulate(spec: RunSpec) -> int:
    cfg = _require(_load(spec), "simulate")
    model = cfg.model
    t_end = spec.overrides.get("t_end") or 20 * model.omega
    dt = _dt_for(model, spec.overrides.get("dt"))
    hist = parse_history(spec.options.get("history"), model)
    traj = simulate(model, hist, t_end, dt)
    stride = int(spec.options.get("stride") or 1)
    cols = ["t", "S"] + [f"x{i + 1}" for i in range(model.n)]
    t = traj.t
    sel = slice(None, None, stride)
    rows = np.column_stack([t[sel], traj.states[sel]])
    path = output_path(spec.out, "traj.csv")
    extra = [f"dt = {dt:.15g}", f"t_end = {traj.t_end:.15g}", f"history = {spec.options.get('history') or 'default'}"]
    footer = [f"clamped = {traj.clamped}", f"violations = {traj.violations}"]
    write_csv(path, cols, rows, _header("simulate", cfg, extra), footer)
    window = min(model.omega, traj.t_end - traj.t_start)
    summary = asymptotic_summary(traj, window)
    limits = dissipative_limits(model)
    lines = ["[run]", f"dt = {dt:.15g}", f"steps = {traj.steps}", f"t_end = {traj.t_end:.15g}",
             f"clamped = {traj.clamped}", f"violations = {traj.violations}", "", "[asymptotics]",
             f"window = {window:.15g}"]
    for name, (lo, hi), lim in zip(cols[1:], summary, limits):
        lines.append(f"{name} = min {lo:.12g}, max {hi:.12g}, dissipative bound {lim:.12g}")
    if traj.t_end - traj.t_start >= model.tau + 3 * dt:
        cs = conservation_series(model, traj)
        ws = washout_solution(model, cfg.grid)
        gap = abs(cs.y[-1] - float(ws(cs.t[-1:])[0]))
        lines += ["", "[conservation]", f"max_residual = {cs.max_residual:.6e}",
                  f"t_last = {cs.t[-1]:.15g}", f"distance_to_washout_level = {gap:.6e}"]
    report_text = "\n".join(lines) + "\n"
    if spec.report:
        write_text(Path(spec.report), report_text)
    print(report_text, end="")
    print(f"wrote {path}")
    return 0


def cmd_check(spec: RunSpec) -> int:
    cfg = _require(_load(spec), "check")
    model = cfg.model
    ws = washout_solution(model, cfg.grid)
    survivor = spec.options.get("survivor")
    order = spec.options.get("order")
    report = check_all(model, ws, cfg.grid, survivor=None if survivor is None else survivor - 1,
                       cascade=bool(spec.options.get("cascade")),
                       order=None if order is None else [i - 1 for i in order])
    print("\n".join(theorem_summary(report)))
    path = output_path(spec.out, "report.txt")
    header = "".join(f"# {line}\n" for line in _header("check", cfg))
    write_text(path, header + "\n" + report.to_text())
    print(f"wrote {path}")
    return 0


def _orbit_footer(label: str, result) -> list[str]:
    out = [f"{label}.status = {result.status}"]
    orbit = result.orbit
    if orbit is not None:
        out += [f"{label}.phi_residual = {orbit.phi_residual:.6e}",
                f"{label}.fde_residual = {orbit.fde_residual:.6e}",
                f"{label}.min_x = {', '.join(f'{v:.6e}' for v in orbit.positivity)}",
                f"{label}.cone_slack = {orbit.cone_slack:.6e}",
                f"{label}.S_nonpositive_nodes = {orbit.s_nonpositive}",
                f"{label}.S_above_washout_nodes = {orbit.s_above_ceiling}"]
    if hasattr(result, "iterations"):
        out.append(f"{label}.iterations = {result.iterations}")
    if hasattr(result, "distances") and result.distances:
        out.append(f"{label}.periods = {result.periods}")
        out.append(f"{label}.last_distance = {result.distances[-1]:.6e}")
    return out


def cmd_find_periodic(spec: RunSpec) -> int:
    cfg = _require(_load(spec), "find-periodic")
    model = cfg.model
    ws = washout_solution(model, cfg.grid)
    method = spec.options.get("method") or "phi"
    tol = spec.overrides.get("tol") or DEFAULTS["tol"]
    opts = SolveOptions(max_iters=int(spec.options.get("max_iters") or 2000),
                        theta=float(spec.options.get("theta") or 0.5), residual_tol=tol)
    footer = []
    phi = shoot = None
    if method in ("phi", "both"):
        phi = find_fixed_point(model, ws, opts, cfg.grid)
        footer += _orbit_footer("phi", phi)
        print(f"phi: {phi.status} after {phi.iterations} sweeps" + (f" ({phi.message})" if phi.message else ""))
    if method in ("shoot", "both"):
        hist = parse_history(spec.options.get("history"), model)
        periods = int(spec.options.get("periods") or 300)
        shoot = poincare_shoot(model, hist, periods, tol, grid=cfg.grid, washout=ws)
        footer += _orbit_footer("shoot", shoot)
        print(f"shoot: {shoot.status} after {shoot.periods} periods")
    if phi is not None and shoot is not None and phi.orbit is not None and shoot.orbit is not None:
        gap = float(np.abs(phi.orbit.x_star.values - shoot.orbit.x_star.values).max())
        footer.append(f"phi_vs_shoot_sup_distance = {gap:.6e}")
        print(f"sup distance between methods: {gap:.3e}")
    orbit = (phi.orbit if phi is not None and phi.orbit is not None else
             shoot.orbit if shoot is not None else None)
    path = output_path(spec.out, "orbit.csv")
    cols = ["t", "S_star"] + [f"x{i + 1}" for i in range(model.n)]
    rows = orbit.table() if orbit is not None else []
    write_csv(path, cols, rows, _header("find-periodic", cfg, [f"method = {method}", f"tol = {tol:g}",
                                                                 f"theta = {opts.theta:g}"]), footer)
    print(f"wrote {path}")
    return 0


def cmd_exclusion_demo(spec: RunSpec) -> int:
    cfg = _load(spec)
    if cfg is None:
        cfg = LoadedConfig(exclusion_instance(), QuadratureGrid(), "<built-in exclusion instance>")
    model = cfg.model
    if model.n < 2:
        raise ConfigError("exclusion-demo needs at least two species", cfg.source)
    survivor = int(spec.options.get("survivor") or 1) - 1
    ws = washout_solution(model, cfg.grid)
    lines = ["[check]"]
    excl = check_exclusion(model, ws, survivor, cfg.grid)
    lines += excl.summary_lines()
    verdict = excl.verdict("EXCL_1")
    lines.append(f"verdict = {verdict}")

    t_end = spec.overrides.get("t_end") or 300.0
    hist = parse_history(spec.options.get("history"), model)
    traj = simulate(model, hist, t_end, default_dt(model))
    summary = asymptotic_summary(traj, model.omega)
    lines += ["", "[simulate]", f"t_end = {traj.t_end:.15g}"]
    for c, (lo, hi) in enumerate(summary):
        name = "S" if c == 0 else f"x{c}"
        lines.append(f"{name}_last_period = [{lo:.6e}, {hi:.6e}]")
    others = [hi for c, (lo, hi) in enumerate(summary[1:]) if c != survivor]
    lines.append(f"excluded_sup = {max(others):.6e}")

    single = single_species_solve(model, ws.y_star, survivor, SolveOptions(), cfg.grid)
    lines += ["", "[single-species orbit]", f"status = {single.status}"]
    agree = math.nan
    if single.ok:
        x = single.orbit.x_star
        _, sim = traj.last_period(model.omega, x.M)
        sim = sim[:, survivor + 1]
        agree = float(np.abs(sim - x.values[0]).max())
        lines.append(f"sup_distance_to_simulation = {agree:.6e}")

    shoot = poincare_shoot(model, History.from_trajectory(traj, model.tau), int(spec.options.get("periods") or 50),
                           DEFAULTS["tol"], grid=cfg.grid, washout=ws)
    lines += ["", "[shoot]", f"status = {shoot.status}", f"periods = {shoot.periods}"]
    if shoot.distances:
        lines.append(f"last_distance = {shoot.distances[-1]:.6e}")
    if shoot.orbit is not None and single.ok:
        sx = shoot.orbit.x_star.values
        lines.append(f"survivor_vs_scalar_orbit = {np.abs(sx[survivor] - single.orbit.x_star.values[0]).max():.6e}")
        lines.append(f"excluded_max = {max(float(sx[j].max()) for j in range(model.n) if j != survivor):.6e}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if spec.out:
        write_text(Path(spec.out), text)
    return 0


def _parse_range(text: str, name: str) -> np.ndarray:
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise ConfigError(f"--{name} must look like lo:hi:count, got {text!r}") from exc
    if count < 2 or not hi > lo:
        raise ConfigError(f"--{name} needs hi > lo and count >= 2")
    return np.linspace(lo, hi, count)


def _sweep_point(args):
    model, ws, grid, i, b, tau = args
    sp = model.species[i]
    p = sp.response
    new = type(p)(p.kind, b, p.k, p.breakpoints) if p.kind != "table" else p
    species = list(model.species)
    species[i] = Species(new, tau)
    sub = model.with_species(species).restrict([i])
    ext = check_extinction(sub, ws, grid)
    exi = check_existence(sub, ws, grid)
    a = exi.get("H3A")
    h3 = exi.get("H3")
    st = ext.get("EXT_STAB")
    return (b, tau, a.margin, a.verdict, h3.margin, h3.verdict, st.margin, st.verdict)


def sweep_rows(model: ChemostatModel, grid: QuadratureGrid, species: int, bs, taus, workers: int = 1):
    ws = washout_solution(model, grid)
    tasks = [(model, ws, grid, species, float(b), float(tau)) for b in bs for tau in taus]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        rows = [_sweep_point(t) for t in tasks]
    rows.sort(key=lambda r: (r[0], r[1]))
    return ws, rows


def sweep_boundary(rows, taus) -> dict:
    """Per b: the delay where the pointwise existence margin crosses zero (linear interpolation)."""
    out = {}
    by_b = {}
    for r in rows:
        by_b.setdefault(r[0], []).append(r)
    for b, rs in by_b.items():
        rs.sort(key=lambda r: r[1])
        cross = math.nan
        for r0, r1 in zip(rs, rs[1:]):
            if r0[2] > 0 >= r1[2]:
                cross = r0[1] + (r1[1] - r0[1]) * r0[2] / (r0[2] - r1[2])
                break
        out[b] = cross
    return out


def cmd_sweep(spec: RunSpec) -> int:
    cfg = _load(spec)
    if cfg is None:
        cfg = LoadedConfig(forced_chemostat([(10.0, 0.1)]), QuadratureGrid(), "<built-in forced instance>")
    model = cfg.model
    if model.n < 1:
        raise ConfigError("sweep needs at least one species", cfg.source)
    i = int(spec.options.get("species") or 1) - 1
    if not 0 <= i < model.n:
        raise ConfigError(f"--species must be in 1..{model.n}")
    if model.response(i).kind == "table":
        raise ConfigError("sweep varies the rate b; table responses have none")
    bs = _parse_range(spec.options.get("b_range") or "1:20:40", "b-range")
    taus = _parse_range(spec.options.get("tau_range") or "0:3:40", "tau-range")
    workers = int(spec.options.get("workers") or 1)
    ws, rows = sweep_rows(model, cfg.grid, i, bs, taus, workers)
    boundary = sweep_boundary(rows, taus)
    footer = []
    cell = float(taus[1] - taus[0])
    predicted = None
    if model.d.is_constant:
        d0 = float(model.d(np.array([0.0]))[0])
        p = model.response(i)
        predicted = {}
        for b in boundary:
            q = type(p)(p.kind, b, p.k)
            val = float(q(ws.min))
            predicted[b] = math.log(val / d0) / d0 if val > 0 else -math.inf
    worst = 0.0
    for b, cross in sorted(boundary.items()):
        line = f"b = {b:.15g}: boundary tau = {cross:.6g}"
        if predicted is not None:
            line += f", pointwise prediction {predicted[b]:.6g}"
            if math.isfinite(cross):
                worst = max(worst, abs(cross - predicted[b]) / cell)
        footer.append(line)
    if predicted is not None:
        footer.append(f"max boundary offset = {worst:.4f} grid cells")
    cols = ["b", "tau", "H3A_margin", "H3A", "H3_margin", "H3", "EXT_STAB_margin", "EXT_STAB"]
    path = output_path(spec.out, "sweep.csv")
    extra = [f"species = {i + 1}", f"b_range = {bs[0]:g}:{bs[-1]:g}:{len(bs)}",
             f"tau_range = {taus[0]:g}:{taus[-1]:g}:{len(taus)}"]
    write_csv(path, cols, rows, _header("sweep", cfg, extra), footer)
    print(f"{len(rows)} points, " + (footer[-1] if predicted is not None else "no closed-form prediction"))
    print(f"wrote {path}")
    return 0


HANDLERS = {
    "validate": cmd_validate,
    "washout": cmd_washout,
    "simulate": cmd_simulate,
    "check": cmd_check,
    "find-periodic": cmd_find_periodic,
    "exclusion-demo": cmd_exclusion_demo,
    "sweep": cmd_sweep,
}


def run(spec: RunSpec) -> int:
    try:
        return HANDLERS[spec.command](spec)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical fault in '{spec.command}': {exc}", file=sys.stderr)
        return 3


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaychem", description="Delayed periodic chemostat laboratory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="model INI file")
        p.add_argument("--out", help="output file")
        p.add_argument("--M", type=int, help="quadrature points per period")
        return p

    add("validate", "check the model hypotheses")
    add("washout", "periodic washout level as CSV")

    p = add("simulate", "integrate the delay system")
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--history", help="const:S,x1,..,xn or CSV file (t, S, x1..xn)")
    p.add_argument("--report", help="structured run summary")
    p.add_argument("--stride", type=int, default=1, help="write every k-th node")

    p = add("check", "evaluate every condition")
    p.add_argument("--survivor", type=int, help="species index (1-based) for the exclusion test")
    p.add_argument("--cascade", action="store_true", help="run the coexistence cascade")
    p.add_argument("--order", type=_int_list, help="cascade order, e.g. 2,1")

    p = add("find-periodic", "construct a periodic orbit")
    p.add_argument("--method", choices=("phi", "shoot", "both"), default="phi")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--history", help="shooting start (as for simulate)")
    p.add_argument("--periods", type=int, help="maximum shooting periods")

    p = add("exclusion-demo", "check, simulate and shoot an exclusion instance", config_required=False)
    p.add_argument("--survivor", type=int, default=1)
    p.add_argument("--t-end", type=float)
    p.add_argument("--history")
    p.add_argument("--periods", type=int)

    p = add("sweep", "existence/extinction verdicts over a (b, tau) grid", config_required=False)
    p.add_argument("--species", type=int, default=1)
    p.add_argument("--b-range", default="1:20:40")
    p.add_argument("--tau-range", default="0:3:40")
    p.add_argument("--workers", type=int, default=1)
    return parser


def spec_from_args(ns: argparse.Namespace) -> RunSpec:
    overrides = {k: getattr(ns, k, None) for k in ("dt", "t_end", "M", "tol")}
    skip = {"command", "config", "out", "report", *overrides}
    options = {k: v for k, v in vars(ns).items() if k not in skip}
    return RunSpec(ns.command, ns.config, ns.out, getattr(ns, "report", None), overrides, options)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(ns)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
