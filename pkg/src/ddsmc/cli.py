"""``ddsmc`` command line: collect, synthesize, simulate, sweep, report.

All artifacts of one experiment live in a run directory (``--out``)::

    config.toml     merged configuration snapshot
    dataset.csv     data matrices (plus the disturbance record, for checks only)
    synthesis.csv   SDP result and residuals
    trace.csv       closed-loop trace (trace_open_loop.csv with --open-loop)
    sweep.csv       feasibility sweep table
    report.txt      summary, plus plot_*.csv two-column curves

Exit codes: 0 success, 2 configuration or input error, 3 infeasible
synthesis, 4 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import collect, load_dataset, richness_check, save_dataset
from .errors import CollectionError, ConfigurationError, DivergenceError, FormatError, InputError
from .plants import DisturbanceSpec, sample_states
from .simulation import (
    Oracle,
    SimSpec,
    check_lyapunov,
    check_reaching,
    converged,
    run,
    sweep_delta,
    sweep_summary,
    sweep_to_csv,
    trace_to_csv,
)
from .smc import build_controller, f_bar_surrogate
from .synthesis import load_result, nominal_stability_check, save_result, solve, verify_result

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4

CONFIG_NAME = "config.toml"
DATASET_NAME = "dataset.csv"
SYNTHESIS_NAME = "synthesis.csv"
SWEEP_NAME = "sweep.csv"
REPORT_NAME = "report.txt"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "delta", None) is not None:
        out["disturbance.delta"] = args.delta
    for flag, key in (
        ("eps1", "synthesis.eps1"),
        ("eps2", "synthesis.eps2"),
        ("margin", "synthesis.margin"),
        ("solver_tol", "synthesis.solver_tol"),
    ):
        if getattr(args, flag, None) is not None:
            out[key] = getattr(args, flag)
    return out


def _load_config(args, run_dir: Path) -> config_mod.RunConfig:
    path = args.config or run_dir / CONFIG_NAME
    if not Path(path).exists():
        raise CliError(f"no configuration: pass --config or create {run_dir / CONFIG_NAME}", EXIT_CONFIG)
    cfg = config_mod.load(path, _overrides(args))
    snapshot = run_dir / CONFIG_NAME
    text = cfg.dumps()
    if snapshot.exists() and snapshot.read_text() != text and not args.force:
        raise CliError(f"{snapshot} exists with different settings (use --force to replace it)", EXIT_CONFIG)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot.write_text(text)
    return cfg


def _claim(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise CliError(f"{path} already exists (use --force to overwrite)", EXIT_CONFIG)
    return path


def _dataset_path(args, run_dir: Path) -> Path:
    return Path(args.dataset) if getattr(args, "dataset", None) else run_dir / DATASET_NAME


def cmd_collect(args) -> int:
    run_dir = Path(args.out)
    cfg = _load_config(args, run_dir)
    target = _claim(_dataset_path(args, run_dir), args.force)
    ds = collect(cfg.plant, DisturbanceSpec(cfg.delta, cfg.seed), cfg.excitation)
    save_dataset(ds, target)
    rich = richness_check(ds, cfg.synthesis.rank_tol)
    print(f"collected T={ds.T} samples -> {target} (rank {rich.rank}/{ds.n_z}, smallest sv {rich.smallest_sv:.3g})")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    run_dir = Path(args.out)
    cfg = _load_config(args, run_dir)
    ds = load_dataset(_dataset_path(args, run_dir))
    target = _claim(run_dir / SYNTHESIS_NAME, args.force)
    res = solve(ds, cfg.plant.B, cfg.plant.D, cfg.synthesis)
    save_result(res, target)
    if not res.feasible:
        print(f"synthesis {res.status}: {res.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"feasible: gamma={res.gamma:.6g} ({res.message}) -> {target}")
    for key in ("equality_residual", "cancellation_relative", "lmi_min_eig", "P_min_eig"):
        print(f"  {key} = {res.residuals[key]:.3e}")
    return EXIT_OK


def _oracle_for(cfg, run_dir: Path, res, args) -> Oracle | None:
    path = _dataset_path(args, run_dir)
    if not path.exists():
        return None
    ds = load_dataset(path)
    return Oracle.from_result(ds, res, cfg.plant, cfg.synthesis.N) if ds.W0 is not None else None


def cmd_simulate(args) -> int:
    run_dir = Path(args.out)
    cfg = _load_config(args, run_dir)
    open_loop = args.open_loop or cfg.sim.open_loop
    target = _claim(run_dir / ("trace_open_loop.csv" if open_loop else "trace.csv"), args.force)
    ctrl, oracle = None, None
    if not open_loop:
        res = load_result(run_dir / SYNTHESIS_NAME)
        if not res.feasible:
            raise CliError(f"synthesis result is {res.status!r}; nothing to simulate", EXIT_INFEASIBLE)
        ctrl = build_controller(res, cfg.plant.B, cfg.smc, cancel=cfg.cancel)
        oracle = _oracle_for(cfg, run_dir, res, args)
    spec = SimSpec(
        model=cfg.plant,
        controller=ctrl,
        dist=DisturbanceSpec(cfg.delta, cfg.seed),
        x0=cfg.sim.x0,
        steps=cfg.sim.steps,
        blowup=cfg.sim.blowup,
        oracle=oracle,
        mode=cfg.sim.mode,
    )
    try:
        trace = run(spec)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    reaching = check_reaching(trace, cfg.smc) if trace.f is not None and cfg.sim.mode == "smc" else None
    target.write_text(trace_to_csv(trace, reaching))
    ok = converged(trace, cfg.sim.converge_tol, cfg.sim.tail_fraction)
    kind = "open-loop" if open_loop else "closed-loop"
    print(f"{kind} run: converged={ok}, final |x|_inf={np.max(np.abs(trace.x[-1])):.3g} -> {target}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    run_dir = Path(args.out)
    cfg = _load_config(args, run_dir)
    target = _claim(run_dir / SWEEP_NAME, args.force)
    rows = sweep_delta(
        cfg.plant,
        cfg.excitation,
        cfg.synthesis,
        cfg.smc,
        cfg.sweep.deltas,
        cfg.sweep.seeds,
        x0=cfg.sim.x0,
        steps=cfg.sim.steps,
        simulate=cfg.sweep.simulate,
        jobs=args.jobs or cfg.sweep.jobs,
    )
    target.write_text(sweep_to_csv(rows))
    print("delta  feasible  converged")
    for delta, (feas, conv) in sweep_summary(rows).items():
        print(f"{delta:<6g} {feas:8.2f}  {conv:9.2f}")
    return EXIT_OK


def _read_trace(path: Path) -> tuple[list[str], np.ndarray]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(v) if v else np.nan for v in line.split(",")] for line in lines[1:]]
    return header, np.array(rows)


def _write_curves(run_dir: Path, stem: str, header, table, t_s: float, force: bool) -> list[str]:
    written = []
    time = table[:, 0] * t_s
    for j, name in enumerate(header):
        if name == "k" or not name.split("_")[0] in ("x", "u", "s"):
            continue
        mask = ~np.isnan(table[:, j])
        path = _claim(run_dir / f"plot_{stem}_{name}.csv", force)
        lines = ["t," + name] + [f"{float(t)!r},{float(v)!r}" for t, v in zip(time[mask], table[mask, j])]
        path.write_text("\n".join(lines) + "\n")
        written.append(path.name)
    return written


def cmd_report(args) -> int:
    run_dir = Path(args.out)
    if not run_dir.is_dir():
        raise CliError(f"run directory {run_dir} does not exist", EXIT_CONFIG)
    cfg = _load_config(args, run_dir)
    target = _claim(run_dir / REPORT_NAME, args.force)
    lines = [f"plant: {cfg.plant.name}", f"delta: {cfg.delta:g}", f"seed: {cfg.seed}"]
    ds_path = _dataset_path(args, run_dir)
    ds = load_dataset(ds_path) if ds_path.exists() else None
    if ds is not None:
        rich = richness_check(ds, cfg.synthesis.rank_tol)
        lines.append(f"data: T={ds.T}, rank Z0={rich.rank}/{ds.n_z}, smallest singular value {rich.smallest_sv:.4g}")
    res = None
    if (run_dir / SYNTHESIS_NAME).exists():
        res = load_result(run_dir / SYNTHESIS_NAME)
        lines.append(f"synthesis: {res.status} ({res.message})")
        if res.feasible:
            lines.append(f"  gamma = {res.gamma:.6g}")
            for key, value in sorted(res.residuals.items()):
                lines.append(f"  {key} = {value:.4g}")
            if ds is not None:
                check = verify_result(ds, cfg.plant.B, cfg.plant.D, cfg.synthesis, res)
                lines.append(f"  recomputed LMI min eigenvalue = {check['lmi_min_eig']:.4g}")
                nominal = nominal_stability_check(ds, res, cfg.plant.B)
                lines.append(
                    f"  nominal closed loop: spectral radius {nominal.spectral_radius:.4g}, "
                    f"Lyapunov decrease {'holds' if nominal.lyapunov_ok else 'fails'}"
                )
                box = [(-1.0, 1.0)] * cfg.plant.n_x
                f_bar = f_bar_surrogate(
                    cfg.smc, cfg.plant.D, cfg.delta, ds.T, res.G, cfg.plant.basis, sample_states(box, 200, cfg.seed)
                )
                lines.append(f"  a-priori residue bound on [-1,1]^n_x: {np.array2string(f_bar, precision=4)}")
    written = []
    for stem in ("trace", "trace_open_loop"):
        path = run_dir / f"{stem}.csv"
        if not path.exists():
            continue
        header, table = _read_trace(path)
        x = table[:, [j for j, h in enumerate(header) if h.startswith("x_")]]
        tail = max(1, int(np.ceil(cfg.sim.tail_fraction * len(x))))
        lines.append(
            f"{stem}: {len(x) - 1} steps, final |x|_inf = {np.max(np.abs(x[-1])):.4g}, "
            f"converged = {bool(np.all(np.abs(x[-tail:]) <= cfg.sim.converge_tol))}"
        )
        if stem == "trace" and res is not None and res.feasible and ds is not None and ds.W0 is not None:
            spec = SimSpec(
                cfg.plant,
                build_controller(res, cfg.plant.B, cfg.smc, cancel=cfg.cancel),
                DisturbanceSpec(cfg.delta, cfg.seed),
                cfg.sim.x0,
                cfg.sim.steps,
                cfg.sim.blowup,
                Oracle.from_result(ds, res, cfg.plant, cfg.synthesis.N),
                cfg.sim.mode,
            )
            try:
                trace = run(spec)
            except DivergenceError:
                trace = None
            if trace is not None:
                reach = check_reaching(trace, cfg.smc)
                lyap = check_lyapunov(trace, spec.oracle, cfg.plant)
                lines.append(
                    f"  reaching: {reach.violations} violations outside the band, radius "
                    f"{np.array2string(reach.radii, precision=4)}, first entry k={reach.first_entry}, "
                    f"residence {reach.residence:.3f}"
                )
                lines.append(f"  dissipation inequality holds at {lyap.fraction:.4f} of {lyap.counted} steps")
        written += _write_curves(run_dir, stem, header, table, cfg.plant.t_s, args.force)
    if (run_dir / SWEEP_NAME).exists():
        lines.append("sweep (delta: feasible fraction, converged fraction):")
        rows = (run_dir / SWEEP_NAME).read_text().splitlines()[1:]
        by_delta: dict[float, list] = {}
        for row in rows:
            d, _, status, _, conv = row.split(",")
            by_delta.setdefault(float(d), []).append((status == "feasible", conv == "1"))
        for d, cells in sorted(by_delta.items()):
            lines.append(f"  {d:g}: {np.mean([c[0] for c in cells]):.2f}, {np.mean([c[1] for c in cells]):.2f}")
    if written:
        lines.append("plot data: " + ", ".join(written))
    target.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsmc", description="Data-driven sliding-mode control experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, synth=False):
        p.add_argument("--config", help="TOML configuration (default: <out>/config.toml)")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--delta", type=float, help="disturbance bound for collection and simulation")
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        if synth:
            p.add_argument("--eps1", type=float)
            p.add_argument("--eps2", type=float)
            p.add_argument("--margin", type=float, help="strictness margin for the inequalities")
            p.add_argument("--solver-tol", type=float)
        return p

    p = common(sub.add_parser("collect", help="run the excitation experiment"))
    p.add_argument("--dataset", help="dataset file to write (default: <out>/dataset.csv)")
    p.set_defaults(func=cmd_collect)

    p = common(sub.add_parser("synthesize", help="solve the SDP for the nominal gain"), synth=True)
    p.add_argument("--dataset", help="dataset file to read (default: <out>/dataset.csv)")
    p.set_defaults(func=cmd_synthesize)

    p = common(sub.add_parser("simulate", help="closed-loop (or open-loop) simulation"))
    p.add_argument("--open-loop", action="store_true", help="apply u = 0")
    p.add_argument("--dataset", help="dataset used for the runtime checks (default: <out>/dataset.csv)")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("sweep", help="feasibility over a grid of disturbance bounds and seeds"), synth=True)
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("report", help="summarize a run directory and write plot data"))
    p.add_argument("--dataset", help="dataset file (default: <out>/dataset.csv)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, InputError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CollectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
