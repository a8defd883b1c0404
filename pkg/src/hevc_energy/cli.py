"""Command-line entry point: ``hevc-energy <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 numeric/degenerate failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings

from . import calibration, measurement, model, trace

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

BOUND_TOL = 1e-9


class CommandFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def sci(x):
    """Six significant digits in scientific notation."""
    return f"{x:.5e}"


def _emit(args, human_lines, machine):
    if args.format == "machine":
        print(json.dumps(machine, sort_keys=True))
    else:
        print("\n".join(human_lines))


def _constants(path):
    return model.default_constants(path)


def _read_counts(path, lenient):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = trace.read_trace(path, strict=not lenient)
    for note in tr.warnings:
        print(f"warning: {note}", file=sys.stderr)
    return tr.counts()


def _report_lines(report):
    lines = [f"{report.model_kind} model: total {sci(report.total)} J"]
    for name in model.TERM_NAMES:
        lines.append(f"  {name:<10} {sci(report.terms[name])} J")
    lines.extend(f"  warning: {w}" for w in report.warnings)
    return lines


def _estimates(counts, k, which):
    out = []
    if which in ("accurate", "both"):
        out.append(model.estimate_accurate(counts, k))
    if which in ("simplified", "both"):
        out.append(model.estimate_simplified(counts, k))
    return out


def cmd_estimate(args):
    counts = _read_counts(args.trace, args.lenient)
    k = _constants(args.constants)
    reports = _estimates(counts, k, args.model)
    lines = []
    for r in reports:
        lines.extend(_report_lines(r))
    _emit(args, lines, {"command": "estimate", "reports": [r.to_json() for r in reports]})


def cmd_aggregate(args):
    counts = _read_counts(args.trace, args.lenient)
    lines = [f"n_slice     {counts.n_slice}", f"qp          {counts.qp}"]
    for i, cls in enumerate(trace.MODE_CLASSES):
        lines.append(f"n_{cls:<9} " + " ".join(f"{n:>8d}" for n in counts.n_mode_depth[i]) + "   (depth 1..4)")
    lines += [
        f"n_cbf       {counts.n_cbf}",
        f"n_coeff     {counts.n_coeff}",
        f"sum_log2    {counts.sum_log2_abs:.6g}",
        f"n_nompm     {counts.n_nompm}",
        f"n_tsf       {counts.n_tsf}",
    ]
    _emit(args, lines, {"command": "aggregate", "features": counts.to_json()})


def cmd_power_integrate(args):
    log = measurement.read_power_log(args.log, v0=args.v0, r_a=args.shunt)
    e_all = measurement.integrate_power_log(log)
    lines = [f"E_all  {sci(e_all)} J"]
    result = {"command": "power-integrate", "e_all": e_all, "warnings": []}
    if args.idle:
        idle = measurement.read_power_log(args.idle, v0=args.v0, r_a=args.shunt)
        e_idle = measurement.integrate_power_log(idle)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            e_dec = measurement.decoder_energy(measurement.EnergyMeasurement(e_all, e_idle))
        lines += [f"E_idle {sci(e_idle)} J", f"E_dec  {sci(e_dec)} J"]
        result.update(e_idle=e_idle, e_dec=e_dec)
        for w in caught:
            lines.append(f"warning: {w.message}")
            result["warnings"].append(str(w.message))
    _emit(args, lines, result)


def cmd_calibrate(args):
    data = calibration.read_dataset(args.dataset, strict=not args.lenient)
    if args.method == "joint":
        fit = calibration.fit_constants(data.pairs)
        diagnostics = {
            "method": "joint",
            "rows": len(data.pairs),
            "residual_rms": fit.residual_rms,
            "condition_number": fit.condition_number,
            "negative_flags": fit.negative_flags,
            "condition_warning": fit.condition_warning,
        }
        constants = fit.constants
        lines = [
            f"joint fit over {len(data.pairs)} rows",
            f"residual RMS      {sci(fit.residual_rms)} J",
            f"condition number  {sci(fit.condition_number)}",
        ]
        if fit.negative_flags:
            lines.append("negative constants: " + ", ".join(fit.negative_flags))
        if fit.condition_warning:
            lines.append(f"warning: {fit.condition_warning}")
    else:
        base = _constants(args.constants)
        below = None if args.all_values else calibration.VALUE_FIT_LIMIT
        constants, name, line = calibration.fit_per_feature(data, base, below=below)
        diagnostics = {
            "method": "per-feature",
            "rows": len(data.pairs),
            "constant": name,
            "slope": line.slope,
            "intercept": line.intercept,
            "value": dict(constants.items())[name],
        }
        lines = [
            f"per-feature fit over {len(data.pairs)} rows",
            f"{name} = {sci(diagnostics['value'])} J",
            f"slope {sci(line.slope)} J, intercept {sci(line.intercept)} J",
        ]
    comments = [f"{k}: {v}" for k, v in diagnostics.items()]
    model.save_profile(args.out, constants, comments=comments)
    lines.append(f"wrote {args.out}")
    _emit(args, lines, {"command": "calibrate", "diagnostics": diagnostics, "profile": args.out,
                        "constants": dict(constants.items())})


def _read_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CommandFailure(EXIT_VALIDATION, f"{path}: not JSON ({exc.msg})") from None
    unknown = set(obj) - {"seed", "noise_rel", "truth"}
    if unknown:
        raise CommandFailure(EXIT_VALIDATION, f"{path}: unknown config keys {sorted(unknown)}")
    truth = obj.get("truth")
    if truth and not os.path.isabs(truth):
        truth = os.path.join(os.path.dirname(os.path.abspath(path)), truth)
    k = model.load_profile(truth) if truth else model.builtin_constants()
    return calibration.SimulatorConfig(k, float(obj.get("noise_rel", 0.0)), int(obj.get("seed", 0)))


def _read_features(path, lenient):
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                if "trace" not in obj and "features" not in obj:
                    obj = {"features": obj}
                rows.append(calibration.features_from_row(obj, base, not lenient).validate())
            except OSError:
                raise
            except (ValueError, TypeError, KeyError) as exc:
                raise CommandFailure(EXIT_VALIDATION, f"{path}: line {lineno}: {exc}") from None
    return rows


def cmd_simulate(args):
    config = _read_config(args.config)
    features = _read_features(args.features, args.lenient)
    pairs = calibration.simulate(config, features)
    text = calibration.format_dataset(pairs, {"seed": config.seed, "noise_rel": config.noise_rel})
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    _emit(args, [f"wrote {len(pairs)} rows to {args.out}"],
          {"command": "simulate", "rows": len(pairs), "out": args.out, "seed": config.seed,
           "noise_rel": config.noise_rel})


def bound_status(eps, bound, label):
    if math.isclose(eps, bound, rel_tol=BOUND_TOL, abs_tol=0.0):
        return f"at paper's {label}-model bound"
    if eps > bound:
        return f"exceeds paper's {label}-model bound"
    return f"within paper's {label}-model bound"


def cmd_compare(args):
    if not args.measured > 0:
        raise CommandFailure(EXIT_VALIDATION, f"measured energy must be positive, got {args.measured}")
    counts = _read_counts(args.trace, args.lenient)
    k = _constants(args.constants)
    lines = [f"measured {sci(args.measured)} J"]
    results = []
    for report, bound in ((model.estimate_accurate(counts, k), model.ACCURATE_BOUND),
                          (model.estimate_simplified(counts, k), model.SIMPLIFIED_BOUND)):
        eps = model.relative_error(args.measured, report.total)
        status = bound_status(eps, bound, report.model_kind)
        lines.append(f"{report.model_kind:<10} {sci(report.total)} J  eps {sci(eps)}  ({status} {bound:.1%})")
        lines.extend(f"  warning: {w}" for w in report.warnings)
        results.append({"model": report.model_kind, "estimate": report.total, "epsilon": eps,
                        "bound": bound, "status": status, "warnings": report.warnings})
    _emit(args, lines, {"command": "compare", "measured": args.measured, "results": results})


def _global_flags(parser, suppress=False):
    # Subcommand copies use SUPPRESS so they do not clobber the top-level values.
    parser.add_argument("--lenient", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="ignore unknown trace/dataset fields with a warning")
    parser.add_argument("--format", choices=("text", "machine"), default=argparse.SUPPRESS if suppress else "text")


def build_parser():
    parser = argparse.ArgumentParser(prog="hevc-energy", description="HEVC intra decoding energy toolkit")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = command("estimate", cmd_estimate, "estimate decoding energy of a trace")
    p.add_argument("trace")
    p.add_argument("--constants", help=f"constants profile (default: ${model.PROFILE_ENV} or builtin)")
    p.add_argument("--model", choices=("accurate", "simplified", "both"), default="both")

    p = command("aggregate", cmd_aggregate, "print the feature counts of a trace")
    p.add_argument("trace")

    p = command("power-integrate", cmd_power_integrate, "integrate a current log to energy")
    p.add_argument("log")
    p.add_argument("--idle", help="idle-mode log; prints E_idle and E_dec")
    p.add_argument("--v0", type=float, help="override supply voltage [V]")
    p.add_argument("--shunt", type=float, help="override shunt resistance [ohm]")

    p = command("calibrate", cmd_calibrate, "fit constants from a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="output constants profile")
    p.add_argument("--method", choices=("joint", "per-feature"), default="joint")
    p.add_argument("--constants", help="base profile for per-feature fits")
    p.add_argument("--all-values", action="store_true", help="value fit uses magnitudes of 256 and above too")

    p = command("simulate", cmd_simulate, "generate a synthetic dataset")
    p.add_argument("config")
    p.add_argument("features")
    p.add_argument("--out", required=True)

    p = command("compare", cmd_compare, "compare model estimates with a measured energy")
    p.add_argument("trace")
    p.add_argument("measured", type=float)
    p.add_argument("--constants")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except calibration.CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (trace.TraceError, measurement.LogError, model.ProfileError, calibration.DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
