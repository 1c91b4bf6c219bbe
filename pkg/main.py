#!/usr/bin/env python3
"""
SMC-GM CLI - run and inspect tempered SMC experiments.

Usage:
    python main.py run --config experiments/darcy_dense.toml
    python main.py run --experiment multimodal1d --strategy gm --seed 3
    python main.py compare runs/a runs/b          Compare two finished runs
    python main.py synth-data --experiment darcy-dense
    python main.py report runs/a                  Show a finished run
"""

import argparse
import logging
import sys

from config import DEFAULT_THREADS
from errors import ConfigurationError, NumericalError, ObservationError, PreconditionError
from storage import get_run_stats, load_run_log
from workflow.experiments import compare_runs, default_run_dir, run_experiment, synth_data
from workflow.models import build_config, read_config_file

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args):
    raw = read_config_file(args.config) if args.config else {}
    overrides = {}
    for key in ("experiment", "strategy", "seed", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.out:
        overrides["output_dir"] = args.out
    return build_config(raw, paper_scale=args.paper_scale, overrides=overrides)


def cmd_run(args):
    """Run one experiment and write its artifacts."""
    cfg = _load_config(args)
    run_dir = default_run_dir(cfg)
    print("=" * 60)
    print(f"Experiment: {cfg.experiment}   strategy: {cfg.strategy}   seed: {cfg.seed}")
    print(f"Particles: {cfg.smc.n_particles}   chain length: {cfg.smc.chain_len}   threads: {cfg.threads}")
    print("=" * 60)

    result = run_experiment(cfg, run_dir)

    print(f"\n{result['message']} in {result['elapsed_s']}s")
    for key, value in result["summary"].items():
        if isinstance(value, (int, float, str, bool)):
            print(f"  {key}: {value}")
    print(f"\nArtifacts written to {result['run_dir']}")
    print(f"Run 'python main.py report {result['run_dir']}' for the layer table.")


def cmd_compare(args):
    """Compare the ensembles of two finished runs."""
    comparison = compare_runs(args.run_a, args.run_b, out=args.out, modes=args.modes)

    print("\n=== Run Comparison ===\n")
    print(f"A: {comparison['run_a']}")
    print(f"B: {comparison['run_b']}")
    print(f"Average TV over {len(comparison['tv'])} modes: {comparison['avg_tv']:.4f}")
    print(f"Max TV: {comparison['max_tv']:.4f}")
    print(f"Mean-field relative L2 difference: {comparison['mean_relative_l2_difference']:.4f}")
    print(f"Solve counts: {comparison['solves_a']} / {comparison['solves_b']} "
          f"= {comparison['solve_count_ratio']:.2f}")
    if args.out:
        print(f"\nComparison written to {args.out}")


def cmd_synth_data(args):
    """Generate Darcy observations without running SMC."""
    cfg = _load_config(args)
    run_dir = default_run_dir(cfg)
    result = synth_data(cfg, run_dir)
    print(result["message"])
    print(f"Written to {run_dir}")


def cmd_report(args):
    """Show the layer table and summary of a finished run."""
    stats = get_run_stats(args.run_dir)
    log = load_run_log(args.run_dir)

    print("\n=== Run Report ===\n")
    print(f"Experiment: {stats['experiment']}   strategy: {stats['strategy']}   status: {stats['status']}")
    print(f"Layers: {stats['num_layers']}   potential evaluations: {stats['total_solves']}")
    progress = stats["progress"]
    if progress:
        print(f"Started: {progress.get('started_at')}   finished: {progress.get('completed_at')}")
        if progress.get("error"):
            print(f"Error: {progress['error']}")
    if "num_data" in stats:
        print(f"Observations: {stats['num_data']}   sigma: {stats['noise_std']:.4g}")

    if len(log):
        print(f"\n{'Layer':<7} {'h':<12} {'h_cum':<10} {'ESS':<10} {'Accept':<8} {'Beta':<8} {'Solves':<10}")
        print("-" * 70)
        for row in log.itertuples():
            print(f"{row.layer:<7} {row.h:<12.4g} {row.h_cum:<10.4f} {row.ess:<10.1f} "
                  f"{row.accept_rate:<8.3f} {row.beta:<8.3g} {row.solves_cum:<10}")

    summary = stats.get("summary", {})
    if summary:
        print("\nSummary:")
        for key, value in summary.items():
            print(f"  {key}: {value}")


def _add_config_flags(parser):
    parser.add_argument('--config', '-c', help='TOML experiment file or JSON manifest')
    parser.add_argument('--experiment', '-e', help='Experiment name (overrides the file)')
    parser.add_argument('--strategy', '-s', help='rw, pcn, pcn-gm or gm')
    parser.add_argument('--seed', type=int, help='Master seed')
    parser.add_argument('--threads', type=int, default=None,
                        help=f'Worker threads for mutation (default {DEFAULT_THREADS})')
    parser.add_argument('--paper-scale', action='store_true', help='Use published mesh sizes and N')
    parser.add_argument('--out', '-o', help='Output root directory')


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="SMC-GM - tempered SMC with Gaussian-mixture kernels"
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Log every SMC layer')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    # run
    run_parser = subparsers.add_parser('run', help='Run an experiment')
    _add_config_flags(run_parser)
    run_parser.set_defaults(func=cmd_run)

    # compare
    compare_parser = subparsers.add_parser('compare', help='Compare two runs')
    compare_parser.add_argument('run_a', help='First run directory')
    compare_parser.add_argument('run_b', help='Second run directory')
    compare_parser.add_argument('--modes', type=int, default=20, help='Leading modes to compare')
    compare_parser.add_argument('--out', '-o', help='Directory for comparison.json')
    compare_parser.set_defaults(func=cmd_compare)

    # synth-data
    synth_parser = subparsers.add_parser('synth-data', help='Generate Darcy observations')
    _add_config_flags(synth_parser)
    synth_parser.set_defaults(func=cmd_synth_data)

    # report
    report_parser = subparsers.add_parser('report', help='Show a finished run')
    report_parser.add_argument('run_dir', help='Run directory')
    report_parser.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        sys.exit(1)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        args.func(args)
    except (ConfigurationError, ObservationError, PreconditionError) as e:
        print(f"Error: {e}")
        sys.exit(EXIT_CONFIG)
    except NumericalError as e:
        print(f"Numerical failure: {e}")
        sys.exit(EXIT_NUMERICAL)
    except FileNotFoundError as e:
        print(f"Error: {e}")
        sys.exit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
