"""Command-line entry point: ``atomcount {model,simulate,analyze,fit,run}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


from . import analysis, detection, fit, gillespie, physics
from .config import ConfigError, RunConfig


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.reference_defaults()
    if getattr(args, "seed", None) is not None:
        cfg["run.seed"] = args.seed
    if getattr(args, "traces", None) is not None:
        cfg["run.n_traces"] = args.traces
    if getattr(args, "boundaries", None):
        cfg["analysis.boundaries"] = args.boundaries
    if args.out:
        cfg["run.out_dir"] = args.out
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["run.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_model(cfg: RunConfig, stream=None) -> list[Path]:
    stream = stream or sys.stdout
    out = _out_dir(cfg)
    written = []
    for y in cfg["model.y_values"]:
        table = physics.plateau_table(physics.ManifoldModel(y, cfg["model.n_max"]))
        text = "N,p0\n" + "".join(f"{n},{p:.9g}\n" for n, p in enumerate(table))
        path = out / f"model_y{y:g}.csv"
        path.write_text(text)
        stream.write(f"# y={y:g}\n{text}")
        written.append(path)
    return written


def cmd_simulate(cfg: RunConfig, dump_trajectories: bool = False) -> Path:
    out = _out_dir(cfg)
    trace_dir, truth_dir = out / "traces", out / "truth"
    trace_dir.mkdir(exist_ok=True)
    truth_dir.mkdir(exist_ok=True)
    if dump_trajectories:
        (out / "trajectories").mkdir(exist_ok=True)
    rates = cfg.rate_model()
    det = cfg.detection_config()
    init = cfg.initial_distribution()
    seed = cfg["run.seed"]
    trajs = gillespie.batch_simulate(rates, init, cfg.t_span, cfg["run.n_traces"], seed,
                                     max_workers=cfg["run.workers"])
    manifest = ["index,sim_seed,noise_seed,n_init,n_events"]
    for i, traj in enumerate(trajs):
        noise_seed = gillespie.derive_seed(seed, i, 1)
        trace = detection.detect_trajectory(traj, rates.i1_over_i0, det, noise_seed)
        detection.write_trace(trace, trace_dir / f"trace_{i:05d}.csv")
        detection.write_trajectory(traj, truth_dir / f"truth_{i:05d}.csv", losses_only=True)
        if dump_trajectories:
            detection.write_trajectory(traj, out / "trajectories" / f"traj_{i:05d}.csv")
        manifest.append(f"{i},{gillespie.derive_seed(seed, i)},{noise_seed},{traj.n_init},{len(traj)}")
    (out / "manifest.csv").write_text("\n".join(manifest) + "\n")
    saved = RunConfig(cfg.values)
    saved["run.out_dir"] = "."  # keep outputs independent of where they were written
    (out / "config.cfg").write_text(saved.dumps())
    return out


def _trace_paths(inputs) -> list[Path]:
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("trace_*.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"no such trace file or directory: {p}")
    if not paths:
        raise ValueError("no trace files found")
    return paths


def cmd_analyze(cfg: RunConfig, inputs) -> Path:
    out = _out_dir(cfg)
    traces = [detection.read_trace(p) for p in _trace_paths(inputs)]
    bw = cfg["detection.digital_bandwidth"]
    t_start = max(tr.t0 for tr in traces)
    t_stop = min(tr.t_end for tr in traces)
    window = (t_start, t_stop)
    amp_range = (0.0, cfg["analysis.amplitude_max"])
    h1 = analysis.histogram_amplitudes(traces, window, cfg["analysis.amplitude_bins"], amp_range, bw)
    h2 = analysis.histogram_2d(traces, window, cfg["analysis.amplitude_bins"],
                               cfg["analysis.time_bin"], amp_range, bw)
    manual = cfg["analysis.boundaries"] or None
    try:
        bands = analysis.find_bands(h1, cfg["analysis.min_prominence"], cfg["analysis.n_resolved"],
                                    boundaries=manual)
    except analysis.BandError as exc:
        raise analysis.BandError(f"{exc} (use --boundaries B0,B1,...)") from None
    t0 = max(cfg["analysis.t0"], t_start)
    curves = analysis.population_curves(traces, bands, t0, cfg["analysis.time_bin"], bandwidth=bw)
    analysis.write_histogram(h1, out / "hist1d.csv")
    analysis.write_histogram_2d(h2, out / "hist2d.csv")
    analysis.write_bands(bands, out / "bands.txt")
    analysis.write_populations(curves, out / "populations.csv")
    return out


def cmd_fit(cfg: RunConfig, populations) -> fit.FitResult:
    out = _out_dir(cfg)
    path = Path(populations)
    if not path.exists():
        raise FileNotFoundError(f"no such population file: {path}")
    curves = analysis.read_populations(path)
    try:
        result, p_init = fit.fit_populations(curves, cfg["analysis.fit_n_max"],
                                             (cfg["analysis.gamma_low"], cfg["analysis.gamma_high"]))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    fit.write_fit(result, out / "fit_result.txt")
    model = fit.model_curves(p_init, result.Gamma_hat, curves.time_grid, curves.n_resolved)
    analysis.write_populations(analysis.PopulationCurves(curves.time_grid, model, curves.t0,
                                                         curves.boundaries),
                               out / "fit_curves.csv")
    return result


def _boundaries(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atomcount", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (default: built-in reference operating point)")
    common.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("model", parents=[common], help="tabulate plateau heights p0(N)")

    sim = sub.add_parser("simulate", parents=[common], help="simulate detected traces")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--traces", type=int)
    sim.add_argument("--dump-trajectories", action="store_true",
                     help="also write every telegraph event")

    ana = sub.add_parser("analyze", parents=[common], help="histograms, bands and populations")
    ana.add_argument("inputs", nargs="*", help="trace files or directories (default: OUT/traces)")
    ana.add_argument("--boundaries", type=_boundaries, help="manual band boundaries, descending")

    fp = sub.add_parser("fit", parents=[common], help="fit the trap decay rate")
    fp.add_argument("populations", nargs="?", help="populations CSV (default: OUT/populations.csv)")

    run = sub.add_parser("run", parents=[common], help="simulate, analyze and fit")
    run.add_argument("--seed", type=int)
    run.add_argument("--traces", type=int)
    run.add_argument("--boundaries", type=_boundaries)
    run.add_argument("--dump-trajectories", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(cfg["run.out_dir"])
        if args.command == "model":
            cmd_model(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.dump_trajectories)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.inputs or [out / "traces"])
        elif args.command == "fit":
            print(cmd_fit(cfg, args.populations or out / "populations.csv").to_text(), end="")
        else:
            cmd_simulate(cfg, args.dump_trajectories)
            cmd_analyze(cfg, [out / "traces"])
            print(cmd_fit(cfg, out / "populations.csv").to_text(), end="")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
