"""Command line interface.

Subcommands: ``generate`` (write a model directory), ``run`` (one integrator
run to a CSV trace), ``bench`` (three start strategies plus the implicit
reference), ``cfl`` (print the stable step estimate). Settings layer as
defaults < --config JSON < MQS_* environment < flags. Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .bench import (ConfigError, RunConfig, run_benchmark, run_single,
                    write_trace)
from .implicit import NewtonFailureError
from .krylov import Ic0Breakdown, IndefiniteOperatorError, Preconditioner
from .model import ModelError, builtin_model, export_model
from .schur import SchurOperator, StepFailureError, estimate_cfl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file merged below "
                                         "environment and flags")
    parser.add_argument("--model", help="'builtin' or path to a model "
                                        "manifest directory")
    parser.add_argument("--cells", type=int, help="builtin grid cells per "
                                                  "direction")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output file or directory")


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--integrator", choices=("explicit", "implicit"))
    parser.add_argument("--strategy", choices=("previous", "cspe", "pod"))
    parser.add_argument("--dt", help="step size in seconds or 'auto'")
    parser.add_argument("--t-end", dest="t_end", type=float)
    parser.add_argument("--tol", type=float, help="PCG relative tolerance")
    parser.add_argument("--eps-pod", dest="eps_pod", type=float)
    parser.add_argument("--n-pod", dest="n_pod", type=int)
    parser.add_argument("--max-basis", dest="max_basis", type=int)
    parser.add_argument("--preconditioner",
                        choices=tuple(p.value for p in Preconditioner))
    parser.add_argument("--implicit-dt", dest="implicit_dt", type=float)
    parser.add_argument("--linear", action="store_const", const=True,
                        help="freeze the builtin conductor at its "
                             "unsaturated reluctivity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mqsolve",
        description="Transient eddy-current solver benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write the builtin model as Matrix "
                                          "Market blocks plus manifest")
    _add_common(gen)
    gen.add_argument("--linear", action="store_const", const=True)
    gen.add_argument("--amps", type=float)
    gen.add_argument("--tau", type=float)
    gen.add_argument("--kappa", type=float)
    gen.add_argument("--h", dest="h", type=float)

    run = sub.add_parser("run", help="run one integrator, write a CSV trace")
    _add_common(run)
    _add_run_options(run)

    bench = sub.add_parser("bench", help="compare start strategies against "
                                         "the implicit reference")
    _add_common(bench)
    _add_run_options(bench)

    cfl = sub.add_parser("cfl", help="print the largest stable explicit step")
    _add_common(cfl)
    cfl.add_argument("--tol", type=float)
    cfl.add_argument("--preconditioner",
                     choices=tuple(p.value for p in Preconditioner))
    cfl.add_argument("--linear", action="store_const", const=True)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config"}
    return {key: value for key, value in vars(args).items()
            if key not in skip and value is not None}


def _config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.from_sources(config_file=args.config,
                                  overrides=_overrides(args))


def _cmd_generate(args) -> int:
    config = _config(args)
    if config.model != "builtin":
        raise ConfigError("generate only writes the builtin model")
    model = builtin_model(cells=config.cells, h=config.h, kappa=config.kappa,
                          amps=config.amps, tau=config.tau,
                          linear=config.linear)
    out = config.out if config.out != "." else "model"
    manifest = export_model(model, out)
    print(f"wrote {manifest.parent} ({model.n_c} conducting + "
          f"{model.n_n} nonconducting unknowns)")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _config(args)
    result, meta = run_single(config)
    out = config.out
    if out == ".":
        out = "trace.csv"
    path = write_trace(result, out)
    agg = result.aggregates
    print(f"wrote {path}: {agg['steps']} steps, integrator "
          f"{meta['integrator']}, final B "
          f"{float(result.probe_b[-1]):.6g}")
    if agg.get("aborted"):
        print(f"run aborted early: {agg.get('abort_reason')}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_bench(args) -> int:
    config = _config(args)
    out = config.out if config.out != "." else "bench"
    summary = run_benchmark(config, out)
    sys.stdout.write(summary.to_text())
    print(f"artifacts in {out}/")
    return EXIT_OK


def _cmd_cfl(args) -> int:
    config = _config(args)
    from .bench import _model_from_config
    system, _ = _model_from_config(config)
    op = SchurOperator(system, pcg=config.pcg_config(), strategy="previous",
                       preconditioner=Preconditioner(config.preconditioner))
    estimate = estimate_cfl(op, power_iters=config.power_iters,
                            power_tol=config.power_tol, safety=config.safety,
                            seed=config.seed)
    print(f"lambda_max = {estimate.lambda_max:.6e}")
    print(f"dt_max     = {estimate.dt_max:.6e}  "
          f"(safety {estimate.safety})")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "cfl": _cmd_cfl,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ModelError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailureError, NewtonFailureError, IndefiniteOperatorError,
            Ic0Breakdown) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
