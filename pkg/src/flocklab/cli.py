"""Experiment orchestration: subcommands, flat config files, CSV/SVG artifacts.

Every run lands in ``<out>/<subcommand>/<run-id>/`` with ``data.csv``,
``events.csv`` (particle runs), ``plot.svg`` and ``manifest.txt``; the run id
is a hash of the validated parameters plus seed, so identical configurations
re-create byte-identical CSV artifacts.  Exit codes: 0 success, 2 config
error, 3 partial sweep failure.  ``FLOCKLAB_WORKERS`` bounds the sweep
worker pool.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import hydro_line as hl
from . import hydro_torus as ht
from . import kernels as kn
from . import meanfield as mf
from . import particles as pt
from . import svgplot as sp

__all__ = ["ConfigError", "ExperimentConfig", "main", "run"]


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


# subcommand -> {key: (parser, default, validator or None)}
_float_list = lambda s: [float(tok) for tok in str(s).replace(";", ",").split(",") if tok]
_int_list = lambda s: [int(tok) for tok in str(s).split(",") if tok]

SCHEMAS = {
    "particles": {
        "n": (int, 8, lambda v: v >= 1),
        "d": (int, 2, lambda v: 1 <= v <= 3),
        "alpha": (float, 1.0, _positive),
        "t_end": (float, 10.0, _positive),
        "x_scale": (float, 1.0, _positive),
        "v_scale": (float, 0.5, _nonnegative),
        "samples": (int, 201, lambda v: v >= 2),
    },
    "sticking": {
        "alpha": (float, 0.5, lambda v: 0 < v < 1),
        "x0": (float, 1.0, _positive),
        "v0": (float, -2.0, None),
    },
    "bonding": {
        "n": (int, 20, lambda v: v >= 2),
        "d": (int, 2, lambda v: 1 <= v <= 3),
        "alpha": (float, 1.0, _positive),
        "k1": (float, 1.0, _nonnegative),
        "k2": (float, 1.0, _nonnegative),
        "ktilde": (float, 1.0, _nonnegative),
        "r": (float, 1.0, _positive),
        "t_end": (float, 100.0, _positive),
        "v_scale": (float, 0.2, _nonnegative),
        "samples": (int, 201, lambda v: v >= 2),
    },
    "control": {
        "n": (int, 4, lambda v: v >= 2),
        "alpha": (float, 1.0, _positive),
        "beta": (float, 0.5, _positive),
        "k": (float, 1.0, _nonnegative),
        "t_end": (float, 500.0, _positive),
        "pattern": (str, "square", lambda v: v in ("square", "chain")),
        "side": (float, 1.0, _positive),
        "v_scale": (float, 0.2, _nonnegative),
        "samples": (int, 201, lambda v: v >= 2),
    },
    "meanfield": {
        "alpha": (float, 0.25, _positive),
        "n_list": (_int_list, [8, 16, 32], lambda v: len(v) > 0 and all(n >= 1 for n in v)),
        "t_end": (float, 1.0, _positive),
        "v_amp": (float, 0.25, _nonnegative),
    },
    "hydro-torus": {
        "n": (int, 256, lambda v: v >= 16 and (v & (v - 1)) == 0),
        "gamma": (float, 1.0, lambda v: 0 < v < 2),
        "t_end": (float, 5.0, _positive),
        "rho_mean": (float, 1.0, _positive),
        "rho_amp": (float, 0.3, None),
        "e_amp": (float, 0.2, None),
        "mean_u": (float, 0.1, None),
        "snapshots": (int, 11, lambda v: v >= 2),
    },
    "hydro-line": {
        "case": (int, 1, lambda v: v in (1, 2)),
        "c": (_float_list, [-1.0], lambda v: len(v) > 0),
        "t_end": (float, 50.0, _positive),
        "dx": (float, 0.05, _positive),
        "dt": (float, 0.05, _positive),
        "snapshots": (_float_list, None, None),  # default: 0, t_end/2, t_end
        "half_width": (float, 20.0, _positive),
    },
    "sweep": {
        "t_end": (float, 400.0, _positive),
        "dx": (float, 0.01, _positive),
        "dt": (float, 0.01, _positive),
        "snapshots": (_float_list, [0.0, 200.0, 400.0], lambda v: len(v) > 0),
        "half_width": (float, 20.0, _positive),
        "smoke": (int, 0, lambda v: v in (0, 1)),
    },
}


class ExperimentConfig:
    """Validated flat parameter set for one subcommand."""

    def __init__(self, subcommand: str, parameters: dict, seed=None,
                 output_dir: str = "out"):
        if subcommand not in SCHEMAS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        schema = SCHEMAS[subcommand]
        unknown = set(parameters) - set(schema)
        if unknown:
            raise ConfigError(f"unknown keys for {subcommand}: {sorted(unknown)}")
        self.subcommand = subcommand
        self.parameters = {}
        for key, (parse, default, check) in schema.items():
            raw = parameters.get(key, default)
            if raw is None:
                self.parameters[key] = None
                continue
            try:
                val = parse(raw) if not isinstance(raw, (list, tuple)) else raw
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
            if check is not None and not check(val):
                raise ConfigError(f"value out of range for {key}: {val!r}")
            self.parameters[key] = val
        self.seed = None if seed is None else int(seed)
        self.output_dir = output_dir

    def run_id(self) -> str:
        blob = repr((self.subcommand, sorted(self.parameters.items()), self.seed))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def run_dir(self) -> str:
        return os.path.join(self.output_dir, self.subcommand, self.run_id())


def read_config_file(path: str) -> dict:
    """Flat key = value lines; '#' comments; no sections or nesting."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (tok.strip() for tok in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _write_manifest(run_dir: str, config: ExperimentConfig, wall: float,
                    extras: dict, status: str = "ok") -> None:
    lines = [
        f"tool = flocklab {__version__}",
        f"subcommand = {config.subcommand}",
        f"config_hash = {config.run_id()}",
        f"seed = {config.seed}",
        f"status = {status}",
        f"wall_time_s = {wall:.3f}",
    ]
    for key, (_, _, _c) in SCHEMAS[config.subcommand].items():
        lines.append(f"param.{key} = {config.parameters[key]}")
    for key in sorted(extras):
        lines.append(f"result.{key} = {extras[key]}")
    with open(os.path.join(run_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommand implementations


def _run_particles(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    seed = cfg.seed if cfg.seed is not None else 0
    state = pt.random_ensemble(seed, p["n"], p["d"], x_scale=p["x_scale"],
                               v_scale=p["v_scale"])
    system = pt.CSSystem(kn.singular(p["alpha"]))
    traj, events = pt.integrate(system, state, p["t_end"], n_samples=p["samples"])
    pt.write_trajectory_csv(traj, os.path.join(run_dir, "data.csv"))
    pt.write_events_csv(events, os.path.join(run_dir, "events.csv"))
    spread = dg.velocity_spread_series(traj)
    panel = sp.Panel([sp.Series(traj.times, spread, "velocity spread")],
                     title=f"alignment decay (alpha={p['alpha']})",
                     xlabel="t", ylabel="sum |v_i-v_j|^2")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    return {"merge_events": len(events.of_kind("merge")),
            "min_distance": f"{traj.meta['min_interclass_distance']:.6e}",
            "final_velocity_spread": f"{spread[-1]:.6e}"}


def _run_sticking(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    cls = pt.two_particle_sticking(p["x0"], p["v0"], p["alpha"])
    with open(os.path.join(run_dir, "data.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "x0", "v0", "sticks", "collides", "t_event",
                    "first_integral", "min_gap", "contact_speed"])
        w.writerow([p["alpha"], p["x0"], p["v0"], cls.sticks, cls.collides,
                    "" if cls.t_event is None else f"{cls.t_event:.17g}",
                    f"{cls.first_integral:.17g}",
                    "" if cls.min_gap is None else f"{cls.min_gap:.17g}",
                    "" if cls.contact_speed is None else f"{cls.contact_speed:.17g}"])
    # gap trajectory from the two-body ensemble for the picture
    t_max = 2.0 * cls.t_event if cls.t_event else 3.0
    ens = pt.ParticleEnsemble.create([0.0, p["x0"]], [-p["v0"] / 2, p["v0"] / 2])
    traj, _ = pt.integrate(pt.CSSystem(kn.singular(p["alpha"])), ens, t_max,
                           n_samples=201)
    gap = np.abs(traj.positions[:, 1, 0] - traj.positions[:, 0, 0])
    panel = sp.Panel([sp.Series(traj.times, gap, "gap")],
                     title=f"two-body gap (alpha={p['alpha']}, v0={p['v0']})",
                     xlabel="t", ylabel="|x_2-x_1|")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    return {"sticks": cls.sticks, "collides": cls.collides,
            "t_event": cls.t_event if cls.t_event is not None else "none"}


def _run_bonding(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    seed = cfg.seed if cfg.seed is not None else 0
    params = pt.BondingParams(K1=p["k1"], K2=p["k2"], Ktilde=p["ktilde"], R=p["r"])
    state = pt.random_ensemble(seed, p["n"], p["d"], x_scale=2 * p["r"],
                               v_scale=p["v_scale"])
    system = pt.BondingSystem(kn.singular(p["alpha"]), params)
    traj, events = pt.integrate(system, state, p["t_end"], n_samples=p["samples"])
    pt.write_trajectory_csv(traj, os.path.join(run_dir, "data.csv"))
    pt.write_events_csv(events, os.path.join(run_dir, "events.csv"))
    rep = dg.check_bonding_asymptotics(traj, params)
    xe = traj.positions[-1]
    series = [sp.Series(xe[:, 0], xe[:, 1] if p["d"] > 1 else np.zeros(len(xe)),
                        "final", markers=True, line=False)]
    th = np.linspace(0, 2 * np.pi, 120)
    series.append(sp.Series(2 * p["r"] * np.cos(th), 2 * p["r"] * np.sin(th),
                            "radius 2R", dashed=True))
    panel = sp.Panel(series, title=f"bonding final state (N={p['n']})",
                     xlabel="x", ylabel="y")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    return {"kinetic_ratio": f"{rep.kinetic_ratio:.6e}",
            "min_distance_late": f"{rep.min_distance_late:.6e}",
            "max_distance_end": f"{rep.max_distance_end:.6e}"}


def _square_offsets(side: float) -> np.ndarray:
    corners = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    return corners[:-1] - corners[1:]


def _run_control(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    seed = cfg.seed if cfg.seed is not None else 0
    n = p["n"]
    if p["pattern"] == "square":
        if n != 4:
            raise ConfigError("square pattern requires n = 4")
        z = _square_offsets(p["side"])
    else:
        z = np.tile([[p["side"], 0.0]], (n - 1, 1))
    params = pt.ControlParams(K=p["k"], beta=p["beta"], z=z)
    state = pt.random_ensemble(seed, n, 2, x_scale=2.0, v_scale=p["v_scale"])
    system = pt.ControlSystem(kn.singular(p["alpha"]), params)
    traj, events = pt.integrate(system, state, p["t_end"], n_samples=p["samples"])
    pt.write_trajectory_csv(traj, os.path.join(run_dir, "data.csv"))
    pt.write_events_csv(events, os.path.join(run_dir, "events.csv"))
    rep = dg.check_control_pattern(traj, params)
    xe = traj.positions[-1]
    panel = sp.Panel([sp.Series(np.append(xe[:, 0], xe[0, 0]),
                                np.append(xe[:, 1], xe[0, 1]),
                                "final chain", markers=True)],
                     title="control pattern", xlabel="x", ylabel="y")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    return {"pattern_residual": f"{rep.pattern_residual:.6e}",
            "velocity_diameter_end": f"{rep.velocity_diameter_end:.6e}"}


def _run_meanfield(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    kernel = kn.singular(p["alpha"])
    amp = p["v_amp"]
    sampler = mf.SegmentSampler(0.0, 1.0, lambda x: amp * (x - 0.5))
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("ignore")
        table = mf.meanfield_convergence(sampler, p["n_list"], p["t_end"], kernel)
    mf.write_convergence_csv(table, os.path.join(run_dir, "data.csv"))
    ns = np.array([r["N"] for r in table["rows"]], dtype=float)
    gaps = np.array([r["d1_vs_double"] for r in table["rows"]])
    panel = sp.Panel([sp.Series(ns, gaps, "d1(f_N, f_2N)", markers=True)],
                     title=f"mean-field self-convergence (alpha={p['alpha']})",
                     xlabel="N", ylabel="d1")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    return {"regime_warning": table["regime_warning"],
            "last_gap": f"{gaps[-1]:.6e}"}


def _run_hydro_torus(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    st = ht.make_torus_state(p["n"], p["gamma"],
                             ("single_mode", p["rho_mean"], p["rho_amp"], 1, 0.0),
                             ("single_mode", 0.0, p["e_amp"], 1, 0.7),
                             mean_u=p["mean_u"])
    traj = ht.run_torus(st, p["t_end"], n_snapshots=p["snapshots"])
    ht.write_torus_csv(traj, os.path.join(run_dir, "data.csv"))
    x = st.rho.grid
    series = [sp.Series(x, traj.rho[k], f"t={traj.times[k]:.2f}")
              for k in range(0, len(traj.times), max(1, (len(traj.times) - 1) // 4))]
    panel = sp.Panel(series, title=f"density on the torus (gamma={p['gamma']})",
                     xlabel="x", ylabel="rho")
    sp.write_svg(os.path.join(run_dir, "plot.svg"), sp.render_panel(panel))
    drift = ht.q_transport_check(traj)
    return {"mass_drift": f"{abs(2 * np.pi * (traj.rho[-1].mean() - traj.rho[0].mean())):.3e}",
            "q_extrema_drift": f"{max(drift['max_extremum_drift'], drift['min_extremum_drift']):.3e}",
            "min_rho_seen": f"{traj.min_rho_seen:.6f}",
            "density_floor": f"{ht.density_floor(st):.6f}"}


def _sweep_panels(results, case: int):
    panels = []
    for res in sorted(results, key=lambda r: r.c):
        if res.error:
            continue
        x = res.grid.centers
        for t in res.snapshot_times:
            series = [sp.Series(x, res.rho_snapshots[t], "rho"),
                      sp.Series(x, res.pm_snapshots[t], "rho_pm", dashed=True),
                      sp.Series(x, res.u_snapshots[t], "u")]
            panels.append(sp.Panel(series, title=f"case {case}, c={res.c:+.2f}, t={t:g}",
                                   xlabel="x", ylabel=""))
    return panels


def _run_hydro_line(cfg: ExperimentConfig, run_dir: str) -> dict:
    p = cfg.parameters
    n_cells = int(round(2 * p["half_width"] / p["dx"]))
    grid = hl.LineGrid(p["half_width"], n_cells)
    snaps = p["snapshots"] or [0.0, p["t_end"] / 2, p["t_end"]]
    snaps = sorted(set(float(t) for t in snaps))
    if max(snaps) > p["t_end"]:
        raise ConfigError("snapshots beyond t_end")
    results = hl.c_sweep(p["case"], p["c"], snaps, grid, p["dt"])
    hl.write_sweep_csvs(results, run_dir)
    os.replace(os.path.join(run_dir, "summary.csv"), os.path.join(run_dir, "data.csv"))
    panels = _sweep_panels(results, p["case"])
    if panels:
        sp.write_svg(os.path.join(run_dir, "plot.svg"),
                     sp.render_grid(panels, n_cols=len(snaps)))
    failures = [r for r in results if r.error]
    extras = {"n_runs": len(results), "n_failures": len(failures)}
    for r in results:
        key = f"c={r.c:+.2f}"
        extras[key] = r.error if r.error else f"ok ({r.wall_time:.1f}s)"
    if failures:
        extras["status_note"] = "partial failure"
    return extras


def _sweep_cell(args):
    case, c, snaps, half_width, n_cells, dt = args
    grid = hl.LineGrid(half_width, n_cells)
    return hl.c_sweep(case, [c], snaps, grid, dt)[0]


def _run_sweep(cfg: ExperimentConfig, run_dir: str) -> dict:
    """Full two-case reproduction sweep over the paper's seven c values."""
    p = dict(cfg.parameters)
    if p["smoke"]:
        p["dx"] = max(p["dx"], 0.05)
        p["dt"] = max(p["dt"], 0.05)
        p["t_end"] = min(p["t_end"], 50.0)
        p["snapshots"] = [0.0, p["t_end"] / 2, p["t_end"]]
    snaps = sorted(set(float(t) for t in p["snapshots"]))
    if max(snaps) > p["t_end"]:
        raise ConfigError("snapshots beyond t_end")
    n_cells = int(round(2 * p["half_width"] / p["dx"]))
    cells = [(case, c, snaps, p["half_width"], n_cells, p["dt"])
             for case in (1, 2) for c in hl.PAPER_C_VALUES]
    workers = int(os.environ.get("FLOCKLAB_WORKERS", "0")) or min(4, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(cell) for cell in cells]
    results.sort(key=lambda r: (r.case, r.c))

    by_case = {1: [r for r in results if r.case == 1],
               2: [r for r in results if r.case == 2]}
    extras = {"workers": workers, "n_runs": len(results)}
    for case, case_results in by_case.items():
        sub = os.path.join(run_dir, f"case{case}")
        hl.write_sweep_csvs(case_results, sub)
        panels = _sweep_panels(case_results, case)
        if panels:
            sp.write_svg(os.path.join(sub, f"profiles_case{case}.svg"),
                         sp.render_grid(panels, n_cols=len(snaps)))
        # overlay of densities at the middle snapshot, one curve per c
        t_mid = snaps[len(snaps) // 2]
        overlay = [sp.Series(r.grid.centers, r.rho_snapshots[t_mid], f"c={r.c:+.2f}")
                   for r in case_results if not r.error]
        if overlay:
            sp.write_svg(os.path.join(sub, f"rho_compare_case{case}.svg"),
                         sp.render_panel(sp.Panel(overlay,
                                                  title=f"case {case} density at t={t_mid:g}",
                                                  xlabel="x", ylabel="rho")))
    with open(os.path.join(run_dir, "data.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "c", "t", "h_minus1", "linf_gap", "error"])
        for r in results:
            if r.error:
                w.writerow([r.case, f"{r.c:.17g}", "", "", "", r.error])
                continue
            for t, h, g in zip(r.series_times, r.hminus1_series, r.linf_gap_series):
                w.writerow([r.case, f"{r.c:.17g}", f"{t:.17g}", f"{h:.17g}",
                            f"{g:.17g}", ""])
    failures = [r for r in results if r.error]
    extras["n_failures"] = len(failures)
    for r in results:
        extras[f"case{r.case}_c={r.c:+.2f}"] = r.error if r.error else \
            f"ok ({r.wall_time:.1f}s)"
    return extras


_RUNNERS = {
    "particles": _run_particles,
    "sticking": _run_sticking,
    "bonding": _run_bonding,
    "control": _run_control,
    "meanfield": _run_meanfield,
    "hydro-torus": _run_hydro_torus,
    "hydro-line": _run_hydro_line,
    "sweep": _run_sweep,
}


def run(config: ExperimentConfig) -> int:
    """Execute one validated configuration; returns the process exit code."""
    run_dir = config.run_dir()
    os.makedirs(run_dir, exist_ok=True)
    t0 = time.perf_counter()
    extras = _RUNNERS[config.subcommand](config, run_dir)
    wall = time.perf_counter() - t0
    partial = int(extras.get("n_failures", 0) or 0) > 0
    _write_manifest(run_dir, config, wall, extras,
                    status="partial" if partial else "ok")
    return 3 if partial else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flocklab",
        description="numerical laboratory for singular alignment dynamics")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        for key in schema:
            flag = "--" + key.replace("_", "-")
            if name == "sweep" and key == "smoke":
                p.add_argument("--smoke", action="store_const", const=1, default=None)
                continue
            p.add_argument(flag, default=None)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        params = {}
        if args.config:
            params.update(read_config_file(args.config))
        schema = SCHEMAS[args.subcommand]
        for key in schema:
            cli_val = getattr(args, key, None)
            if cli_val is not None:
                params[key] = cli_val
        params = {k: v for k, v in params.items() if k in schema}
        config = ExperimentConfig(args.subcommand, params, seed=args.seed,
                                  output_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        code = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"run {config.run_id()} -> {config.run_dir()} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
