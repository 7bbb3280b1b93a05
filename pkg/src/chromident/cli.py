"""Command-line front end: simulate, identify, and benchmark workflows.

All numeric results are written to files in the output directory; the
exit code is the only pass/fail channel.  Identical invocations with the
same seed produce byte-identical outputs.  The environment variable
``CHROMIDENT_THREADS`` bounds the worker count used for parallel fitness
evaluations and benchmark runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiment_io, transport
from .identification import InitializationFailure, benchmark, build_model, identify

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 1
EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
EXIT_INIT_FAILURE = 4


def _worker_count() -> int:
    raw = os.environ.get("CHROMIDENT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chromident",
        description="Chromatography isotherm simulation and identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run the transport solver and write the outlet chromatogram"),
        ("identify", "fit isotherm parameters to observed chromatograms"),
        ("benchmark", "estimate convergence probabilities over seeded runs"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="problem configuration (JSON)")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--quiet", action="store_true", help="suppress progress output")
        if name == "benchmark":
            cmd.add_argument(
                "--runs", type=int, default=None, help="override the run count"
            )
    return parser


def _say(quiet: bool, *parts) -> None:
    if not quiet:
        print(*parts)


def run_simulate(bundle, out: Path, quiet: bool) -> int:
    model = bundle.model_from_values()
    grid = bundle.grid
    lam_max = transport.max_spectral_radius(
        model, bundle.column, transport.default_cmax(bundle.injection)
    )
    chrom = transport.simulate(model, bundle.column, grid, bundle.injection)
    experiment_io.write_chromatogram(out / "chromatogram.csv", chrom)
    _say(
        quiet,
        f"grid: dt={grid.dt:g} dz={grid.dz:g} n_space={grid.n_space} "
        f"n_time={grid.n_time} lambda_max={lam_max:g}",
    )
    _say(quiet, f"wrote {out / 'chromatogram.csv'}")
    return EXIT_OK


def run_identify(bundle, out: Path, seed: int, quiet: bool) -> int:
    if bundle.problem is None:
        raise experiment_io.ConfigError(
            "configuration has no experiments with observed chromatograms"
        )
    settings = bundle.settings
    settings.n_workers = _worker_count()
    report = identify(bundle.problem, seed, settings)
    doc = experiment_io.identify_report_dict(
        report, seed, bundle.digest, settings.target_fitness
    )
    experiment_io.write_report(out / "report.json", doc)
    with open(out / "fitness_trace.csv", "w") as fh:
        fh.write("evaluation,best_fitness\n")
        for idx, value in report.trace:
            fh.write(f"{idx},{value:.17g}\n")
    best_model = build_model(bundle.problem, report.best_vector)
    for k, exp in enumerate(bundle.problem.experiments):
        try:
            sim = transport.simulate(best_model, exp.column, exp.grid, exp.injection)
        except transport.InstabilityDetected:
            continue  # best-effort output; the report still records the fitness
        experiment_io.write_chromatogram(out / f"best_chromatogram_{k}.csv", sim)
    _say(
        quiet,
        f"best fitness {report.best_fitness:.3e} after {report.evals} evaluations "
        f"({report.restarts} restarts), termination: {report.termination}",
    )
    return EXIT_OK if report.termination == "target_fitness" else EXIT_NO_CONVERGENCE


def run_benchmark(bundle, out: Path, seed: int, runs: int | None, quiet: bool) -> int:
    if bundle.problem is None:
        raise experiment_io.ConfigError(
            "configuration has no experiments with observed chromatograms"
        )
    n_runs = runs if runs is not None else bundle.benchmark_runs
    if n_runs < 1:
        raise experiment_io.ConfigError("benchmark.runs must be >= 1")
    reports = []
    for scenario in bundle.scenarios:
        rep = benchmark(
            bundle.problem,
            scenario,
            runs=n_runs,
            seed=seed,
            n_workers=_worker_count(),
            lambda_override=bundle.settings.lambda_override,
        )
        reports.append(rep)
        _say(
            quiet,
            f"scenario {scenario.name}: p={rep.p_converge} "
            f"perf={rep.perf if rep.perf is not None else 'n/a'}",
        )
    doc = experiment_io.benchmark_report_dict(reports, seed, bundle.digest)
    experiment_io.write_report(out / "benchmark.json", doc)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        bundle = experiment_io.load_bundle(args.config)
    except experiment_io.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except experiment_io.ChromatogramFormatError as exc:
        print(f"chromatogram error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else bundle.seed
    if seed < 0:
        print("seed must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "simulate":
            return run_simulate(bundle, out, args.quiet)
        if args.command == "identify":
            return run_identify(bundle, out, seed, args.quiet)
        return run_benchmark(bundle, out, seed, getattr(args, "runs", None), args.quiet)
    except experiment_io.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except transport.InstabilityDetected as exc:
        print(f"simulation unstable: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except InitializationFailure as exc:
        print(f"initialization failure: {exc}", file=sys.stderr)
        return EXIT_INIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
