"""Command-line front end: seeded experiment runs and report emission."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import config as config_mod
from . import experiments, plots
from .trainer import SCHEMES
from .world import ConfigError


def _parse_sweep(text: str) -> tuple[str, tuple]:
    if "=" not in text:
        raise ConfigError("sweep must look like variable=v1,v2,...")
    var, _, values = text.partition("=")
    var = var.strip()
    try:
        parsed = tuple(int(v) for v in values.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"non-integer sweep value in {values!r}") from exc
    if not parsed:
        raise ConfigError("sweep variable given without values")
    return var, parsed


def _cmd_run(args) -> int:
    if args.config:
        cfg = config_mod.load_config(args.config)
    elif args.desk_scale:
        cfg = config_mod.desk_config()
    else:
        cfg = config_mod.default_config()
    if args.desk_scale and args.config:
        cfg = dataclasses.replace(cfg, train=cfg.train.desk_scale())
    if args.episodes:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, episodes=args.episodes))

    sweep_var, sweep_values = (None, ())
    if args.sweep:
        sweep_var, sweep_values = _parse_sweep(args.sweep)
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (0, 1, 2, 3, 4)
    schemes = tuple(args.scheme.split(",")) if args.scheme else ("mgarl",)

    spec = experiments.ExperimentSpec(
        config=cfg, schemes=schemes, sweep_var=sweep_var,
        sweep_values=sweep_values, seeds=seeds)
    summaries = experiments.run(spec, args.out)
    print(f"wrote {len(summaries)} runs to {args.out}")
    for s in summaries:
        print(f"  {s.csv_path.name}: converged reward {s.converged_reward:.2f}, "
              f"hit ratio {s.converged_hit_ratio:.3f}, "
              f"latency {s.converged_latency:.1f} s")
    return 0


def _cmd_plotdata(args) -> int:
    csv_path, png_path = plots.emit_figure(args.in_dir, args.figure, args.out)
    print(f"wrote {csv_path} and {png_path}")
    return 0


def _cmd_init_config(args) -> int:
    config_mod.write_default_config(args.path, desk=args.desk_scale)
    print(f"wrote {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veccache",
        description="Content-caching vehicular edge computing simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train one or more schemes over seeds and sweeps")
    run_p.add_argument("--config", help="YAML config file (defaults built in)")
    run_p.add_argument("--scheme", help=f"comma-separated subset of {','.join(SCHEMES)}")
    run_p.add_argument("--sweep", help="sweep spec, e.g. vu_count=4,8,12")
    run_p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")
    run_p.add_argument("--out", default="runs", help="output directory")
    run_p.add_argument("--episodes", type=int, help="override training episodes")
    run_p.add_argument("--desk-scale", action="store_true",
                       help="small-network CPU profile (and desk world without --config)")
    run_p.set_defaults(func=_cmd_run)

    plot_p = sub.add_parser("plotdata", help="emit tidy CSV plus a rendered figure")
    plot_p.add_argument("--in", dest="in_dir", required=True, help="run output directory")
    plot_p.add_argument("--figure", required=True, choices=plots.FIGURES)
    plot_p.add_argument("--out", help="destination directory (default: --in)")
    plot_p.set_defaults(func=_cmd_plotdata)

    init_p = sub.add_parser("init-config", help="write a commented default config file")
    init_p.add_argument("path")
    init_p.add_argument("--desk-scale", action="store_true")
    init_p.set_defaults(func=_cmd_init_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
