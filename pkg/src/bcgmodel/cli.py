"""Command-line interface.

Exit codes: 0 success, 1 other failures, 2 usage or invalid configuration,
3 input/output failures (including malformed data files), 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import BCGError, ConfigError, DataError, DomainError, NumericalError

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid thread count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return v


def _global_flags(parser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), metavar="FILE", help="JSON run configuration")
    parser.add_argument("--seed", type=_seed, default=d(0), help="random seed (default 0)")
    parser.add_argument("--threads", type=_threads, default=d(1), help="worker threads for batched solves")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcgmodel", description="BCG immunotherapy model: simulate, fit, analyze.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("simulate", parents=[common], help="integrate one patient, write a trajectory CSV")
    s.add_argument("--params", metavar="FILE", help="JSON object of model parameters (partial is fine)")
    s.add_argument("--age", type=int, default=60)
    s.add_argument("--gender", default="male")
    s.add_argument("--smoking", default="smoker")
    s.add_argument("--weight", default="normal")
    s.add_argument("--initial-volume", type=float, default=10.0, help="tumor volume [mm^3]")
    s.add_argument("--t-end", type=float, help="end time [h]; default: treatment end")
    s.add_argument("-o", "--output", default="-")

    f = sub.add_parser("fit", parents=[common], help="fit a cohort CSV, write a JSON report")
    f.add_argument("cohort", metavar="COHORT_CSV")
    f.add_argument("-o", "--output", default="-", help="report JSON (default stdout)")
    f.add_argument("--group-errors", metavar="CSV", help="also write the per-group test RMAE table")

    a = sub.add_parser("analyze-stability", parents=[common], help="equilibria and their stability as JSON")
    a.add_argument("--params", metavar="FILE")
    a.add_argument("-o", "--output", default="-")

    e = sub.add_parser("evaluate", parents=[common], help="three-way model comparison on a cohort")
    e.add_argument("cohort", metavar="COHORT_CSV")
    e.add_argument("report", metavar="REPORT_JSON")
    e.add_argument("-o", "--output", default="-", help="comparison table CSV")
    e.add_argument("--json", metavar="FILE", help="also write the comparison as JSON")

    g = sub.add_parser("gen-cohort", parents=[common], help="draw a synthetic cohort CSV")
    g.add_argument("-o", "--output", default="-")
    g.add_argument("--size", type=int)
    g.add_argument("--spread", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--truth-seed", type=_seed)
    g.add_argument("--truth", metavar="FILE", help="also write the ground truth as JSON")
    return p


def _load_params(path, config):
    """Parameter set from a JSON file over the configured protocol; also the keys given."""
    from .io import load_json, read_text
    from .model import ParameterSet

    data = {} if path is None else load_json(read_text(path))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: parameters must be a JSON object")
    base = {"mu_B": config.protocol.mu_B, "b": config.protocol.dose, "N": config.protocol.injections,
            "tau": config.protocol.interval}
    return ParameterSet.from_dict({**base, **data}), set(data)


def _cmd_simulate(args, config) -> None:
    from dataclasses import replace

    from .demographics import PatientProfile, bladder_capacity, volume_to_cells
    from .io import write_text
    from .model import initial_state
    from .records import treatment_end
    from .solver import integrate

    params, given = _load_params(args.params, config)
    prof = PatientProfile(args.age, args.gender, args.smoking, args.weight, args.initial_volume)
    if "H_m" not in given:
        params = replace(params, H_m=bladder_capacity(prof, config.calibration.capacity()))
    T0 = volume_to_cells(prof.initial_tumor_volume, config.calibration.cell_volume)
    t_end = args.t_end if args.t_end is not None else treatment_end(params.protocol, config.protocol.follow_up)
    y0 = initial_state(config.protocol.effector0, T0, params.H_m)
    traj = integrate(params, y0, (0.0, t_end), config.solver)
    write_text(args.output, traj.to_csv())


def _cmd_fit(args, config) -> None:
    from .fitting.procedure import fit_full, group_error_table
    from .io import canonical_json, parse_patient_csv, write_text

    records = parse_patient_csv(args.cohort, config)
    if records.rejects:
        print(f"note: {len(records.rejects)} row(s) rejected (patients under 19)", file=sys.stderr)
    report = fit_full(list(records), config.fit_config(args.seed))
    out = report.to_dict()
    out["rejects"] = records.rejects
    write_text(args.output, canonical_json(out))
    if args.group_errors:
        write_text(args.group_errors, group_error_table(report))


def _cmd_analyze(args, config) -> None:
    from .analysis import stability_report
    from .io import canonical_json, write_text

    write_text(args.output, canonical_json(stability_report(_load_params(args.params, config)[0])))


def _cmd_evaluate(args, config) -> None:
    from .fitting.procedure import FitReport, evaluate
    from .io import canonical_json, load_json, parse_patient_csv, read_text, write_text

    records = parse_patient_csv(args.cohort, config)
    try:
        report = FitReport.from_dict(load_json(read_text(args.report)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, BCGError):
            raise
        raise DataError(f"{args.report}: not a fit report ({exc!r})") from None
    comp = evaluate(report, list(records))
    write_text(args.output, comp.table())
    if args.json:
        write_text(args.json, canonical_json(comp.to_dict()))


def _cmd_gen_cohort(args, config) -> None:
    from dataclasses import replace

    from .cohort import default_mixture, generate_cohort, sample_ground_truth, uniform_mixture
    from .io import canonical_json, format_patient_csv, write_text

    c = config.cohort
    over = {k: getattr(args, k) for k in ("size", "spread", "noise", "truth_seed") if getattr(args, k) is not None}
    c = replace(c, **over)
    gt = sample_ground_truth(
        c.truth_seed, c.spread,
        weights=default_mixture() if c.mixture == "default" else uniform_mixture(),
        volume_range=(c.volume_min, c.volume_max), noise=c.noise, protocol=config.protocol.protocol(),
        calibration=config.calibration.capacity(), cell_volume=config.calibration.cell_volume,
        effector0=config.protocol.effector0, mu_B=config.protocol.mu_B, follow_up=config.protocol.follow_up,
    )
    records = generate_cohort(gt, c.size, args.seed)
    write_text(args.output, format_patient_csv(records))
    if args.truth:
        write_text(args.truth, canonical_json(gt.to_dict()))


COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "analyze-stability": _cmd_analyze,
    "evaluate": _cmd_evaluate,
    "gen-cohort": _cmd_gen_cohort,
}


def _fail(code: int, kind: str, msg) -> int:
    print(f"bcgmodel: {kind} error: {msg}", file=sys.stderr)
    return code


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .io import RunConfig
    from .solver import get_threads, set_threads

    previous = get_threads()
    try:
        config = RunConfig.load(args.config) if args.config else RunConfig()
        set_threads(args.threads)
        COMMANDS[args.command](args, config)
    except OSError as exc:
        where = f"{exc.filename}: " if getattr(exc, "filename", None) else ""
        return _fail(EXIT_IO, "io", f"{where}{exc.strerror or exc}")
    except DataError as exc:
        return _fail(EXIT_IO, "data", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except (ConfigError, DomainError) as exc:
        return _fail(EXIT_USAGE, "invalid input", exc)
    except BCGError as exc:
        return _fail(EXIT_OTHER, "failure", exc)
    finally:
        set_threads(previous)
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
