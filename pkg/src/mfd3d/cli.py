"""Command-line entry points.

    mfd3d run <config.ini>       run experiment sweeps, write CSV reports
    mfd3d nodes <config.ini>     node generation only, write node files
    mfd3d quality <tetmesh>      tetrahedron aspect-ratio statistics

Exit code 0 means the sweep completed (NaN/Inf rows included); config and
file errors exit nonzero.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .geometry import GeometryError, load_tet_mesh, mesh_quality_stats
from .runner import generate_node_files, run_experiment


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mfd3d",
        description="Meshless finite-difference Poisson solver in 3D")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiments of a config file")
    run.add_argument("config")
    run.add_argument("--experiment", help="run only this section")
    run.add_argument("--threads", type=int, default=1,
                     help="worker processes for stencil computation")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    run.add_argument("--export-matrix", metavar="PATH",
                     help="write assembled systems in Matrix Market format")

    nodes = sub.add_parser("nodes", help="generate node files only")
    nodes.add_argument("config")
    nodes.add_argument("--experiment", help="generate only this section")
    nodes.add_argument("--seed", type=int, default=None)

    quality = sub.add_parser("quality", help="tet-mesh aspect-ratio statistics")
    quality.add_argument("tetmesh")
    return parser


def _select_experiments(configs, name):
    if name is None:
        return configs
    chosen = [c for c in configs if c.name == name]
    if not chosen:
        raise ConfigError(f"no experiment section named {name!r}")
    return chosen


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            configs = _select_experiments(load_config(args.config), args.experiment)
            for cfg in configs:
                if args.seed is not None:
                    cfg.seed = args.seed
                reports = run_experiment(cfg, threads=args.threads,
                                         export_matrix=args.export_matrix)
                finished = sum(1 for r in reports)
                print(f"[{cfg.name}] {finished} rows"
                      + (f" -> {cfg.output}" if cfg.output else ""))
            return 0
        if args.command == "nodes":
            configs = _select_experiments(load_config(args.config), args.experiment)
            for cfg in configs:
                if args.seed is not None:
                    cfg.seed = args.seed
                for path in generate_node_files(cfg):
                    print(path)
            return 0
        if args.command == "quality":
            stats = mesh_quality_stats(load_tet_mesh(args.tetmesh))
            print(f"min gamma:  {stats.min_gamma:.6g}")
            print(f"mean gamma: {stats.mean_gamma:.6g}")
            labels = ["(0.00, 0.25]", "(0.25, 0.50]", "(0.50, 0.75]", "(0.75, 1.00]"]
            for label, frac in zip(labels, stats.fractions):
                print(f"gamma in {label}: {100.0 * frac:.1f}%")
            return 0
    except (ConfigError, GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
