"""Command line entry: run scenario files or presets into artifact folders.

Exit codes: 0 success, 2 configuration or parse problem, 3 the run tripped
a numerical-stability guard, 4 the run finished but could not produce the
requested result.
"""
import argparse
import dataclasses
import os
import sys
from pathlib import Path

from scipy import constants

from .observables import InconclusiveRunError
from .presets import PRESETS, preset_names, preset_text
from .qhje import CausticError, StepSizeError
from .runner import run_scenario
from .scenario import ScenarioError, parse_scenario
from .tdse import StabilityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_INCONCLUSIVE = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _load_scenario(ref: str):
    """Resolve a path or preset name to (name, scenario text)."""
    path = Path(ref)
    if path.is_file():
        return path.stem, path.read_text()
    if ref in PRESETS:
        return ref, preset_text(ref)
    raise ScenarioError(f"no scenario file or preset named {ref!r}; "
                        "presets: " + ", ".join(preset_names()))


def _out_dir(args, name: str, seed: int) -> Path:
    if args.out is not None:
        return Path(args.out)
    root = os.environ.get("BOHMSIM_OUT", "runs")
    return Path(root) / f"{name}-seed{seed}"


def _apply_threads(threads):
    if threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)


def _cmd_run(args) -> int:
    name, text = _load_scenario(args.scenario)
    cfg = parse_scenario(text, name=name)
    seed = cfg.seed if args.seed is None else args.seed
    _apply_threads(args.threads)
    result = run_scenario(cfg, _out_dir(args, name, seed), seed=args.seed,
                          override_stability=args.override_stability)
    print(result.directory)
    return EXIT_OK


def _cmd_scan(args) -> int:
    name, text = _load_scenario(args.scenario)
    cfg = parse_scenario(text, name=name)
    ev = constants.eV
    if args.de <= 0.0 or args.emax <= args.emin:
        raise ScenarioError("the scan range must be increasing with a "
                            "positive step")
    solver = dict(cfg.solver)
    solver["kind"] = "tise-scatter"
    outputs = dict(cfg.outputs)
    outputs["scan"] = {"min": args.emin * ev, "max": args.emax * ev,
                       "step": args.de * ev}
    cfg = dataclasses.replace(cfg, name=f"{name}-scan", solver=solver,
                              outputs=outputs, initial=None)
    seed = cfg.seed if args.seed is None else args.seed
    result = run_scenario(cfg, _out_dir(args, cfg.name, seed), seed=args.seed)
    print(result.directory)
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(name)
        return EXIT_OK
    try:
        sys.stdout.write(preset_text(args.name))
    except KeyError as exc:
        raise ScenarioError(str(exc))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bohmsim",
        description="Wavepacket, trajectory and hydrodynamic quantum runs "
                    "driven by scenario files.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario file or preset")
    run_p.add_argument("scenario", help="scenario file path or preset name")
    run_p.add_argument("--out", help="output directory (default: "
                       "$BOHMSIM_OUT or ./runs, plus <name>-seed<seed>)")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument("--threads", type=int,
                       help="worker thread cap, recorded in the manifest")
    run_p.add_argument("--override-stability", action="store_true",
                       help="run past the explicit-scheme stability gate")
    run_p.set_defaults(func=_cmd_run)

    scan_p = sub.add_parser("scan-transmission",
                            help="stationary transmission scan over the "
                                 "scenario's potential")
    scan_p.add_argument("scenario", help="scenario file path or preset name")
    scan_p.add_argument("--emin", type=float, required=True,
                        help="lowest energy, eV")
    scan_p.add_argument("--emax", type=float, required=True,
                        help="highest energy, eV")
    scan_p.add_argument("--de", type=float, required=True,
                        help="energy step, eV")
    scan_p.add_argument("--out", help="output directory")
    scan_p.add_argument("--seed", type=int, help="override the scenario seed")
    scan_p.set_defaults(func=_cmd_scan)

    pre_p = sub.add_parser("presets", help="list or print built-in scenarios")
    pre_sub = pre_p.add_subparsers(dest="action", required=True)
    pre_sub.add_parser("list", help="print preset names") \
           .set_defaults(func=_cmd_presets)
    show_p = pre_sub.add_parser("show", help="print one preset's text")
    show_p.add_argument("name")
    show_p.set_defaults(func=_cmd_presets)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StabilityError, StepSizeError, CausticError) as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except InconclusiveRunError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
