"""Command-line entry point: ``simrun run | generate | verify | sweep-grid | sweep-split``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from mindsim.errors import MindSimError
from mindsim.simrun.config import KEYS, SimConfig, load_config, parse_size
from mindsim.simrun.engine import simulate
from mindsim.simrun.generator import GeneratorSpec, generate
from mindsim.simrun.metrics import summary_json, write_csv
from mindsim.simrun.sweeps import sweep_splitting_tradeoff, sweep_throughput_grid, write_cells
from mindsim.simrun.trace import read_trace, write_trace
from mindsim.simrun.verify import verify

_CFG = "cfg:"


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _sizes(text: str) -> list[int]:
    return [parse_size(x) for x in text.split(",") if x]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (override the --config file)")
    g.add_argument("--config", type=Path, help="flat key=value configuration file")
    for key in KEYS:
        g.add_argument(f"--{key}", dest=_CFG + key, metavar="VALUE")


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic workload (used when no trace is given)")
    d = GeneratorSpec()
    g.add_argument("--read-ratio", type=float, default=d.read_ratio)
    g.add_argument("--sharing-ratio", type=float, default=d.sharing_ratio)
    g.add_argument("--working-set", type=int, default=d.working_set, help="pages")
    g.add_argument("--blades", type=int, default=d.blades)
    g.add_argument("--ops-per-blade", type=int, default=d.ops_per_blade)


def _config(args: argparse.Namespace) -> SimConfig:
    overrides = {k[len(_CFG) :]: v for k, v in vars(args).items() if k.startswith(_CFG) and v is not None}
    return load_config(args.config, overrides)


def _spec(args: argparse.Namespace, config: SimConfig) -> GeneratorSpec:
    return GeneratorSpec(
        read_ratio=args.read_ratio,
        sharing_ratio=args.sharing_ratio,
        working_set=args.working_set,
        blades=args.blades,
        ops_per_blade=args.ops_per_blade,
        seed=config.seed,
        page_size=config.page_size,
    )


def _events(args: argparse.Namespace, config: SimConfig):
    if args.trace is not None:
        return read_trace(args.trace)
    return generate(_spec(args, config))


def _open_out(path: str | None):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args)
    result = simulate(config, _events(args, config))
    with _open_out(args.metrics) as out:
        write_csv(result.rows, out)
    if args.summary:
        Path(args.summary).write_text(summary_json(result.summary))
    else:
        sys.stderr.write(summary_json(result.summary))
    return result.exit_status


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    with _open_out(args.out) as out:
        write_trace(generate(_spec(args, config)), out)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    config = _config(args)
    report, _ = verify(config, _events(args, config))
    sys.stdout.write(report.render())
    return 1 if report else 0


def cmd_sweep_grid(args: argparse.Namespace) -> int:
    config = _config(args)
    cells = sweep_throughput_grid(
        _floats(args.read_ratios), _floats(args.sharing_ratios), args.blades, config, _spec(args, config), args.workers
    )
    with _open_out(args.out) as out:
        write_cells(cells, out)
    return 0


def cmd_sweep_split(args: argparse.Namespace) -> int:
    config = _config(args)
    events = _events(args, config)
    epochs = _floats(args.epochs_ms) if args.epochs_ms else None
    cells = sweep_splitting_tradeoff(events, _sizes(args.initial_regions), epochs, config, args.workers)
    with _open_out(args.out) as out:
        write_cells(cells, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simrun", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a trace (or a synthetic workload) and emit metrics")
    p.add_argument("trace", nargs="?", help="trace file, or - for stdin")
    p.add_argument("--metrics", help="per-epoch CSV output (default stdout)")
    p.add_argument("--summary", help="run summary JSON output (default stderr)")
    _add_generator_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("generate", help="write a synthetic workload as a trace")
    p.add_argument("--out", help="trace output (default stdout)")
    _add_generator_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="diff the simulator against the reference oracle")
    p.add_argument("trace", nargs="?", help="trace file, or - for stdin")
    _add_generator_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep-grid", help="throughput over read and sharing ratios")
    p.add_argument("--read-ratios", default="0,0.25,0.5,0.75,1")
    p.add_argument("--sharing-ratios", default="0,0.25,0.5,0.75,1")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV output (default stdout)")
    _add_generator_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_grid)

    p = sub.add_parser("sweep-split", help="directory entries vs false invalidations per region setting")
    p.add_argument("trace", nargs="?", help="trace file, or - for stdin")
    p.add_argument("--initial-regions", default="4KiB,16KiB,2MiB")
    p.add_argument("--epochs-ms", help="comma-separated epoch lengths (default: the configured one)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV output (default stdout)")
    _add_generator_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_split)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MindSimError, ValueError, OSError) as exc:
        print(f"simrun: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
