"""Command-line driver: ``eprcoinc <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure
(infeasible efficiency ratios, LP failure, delay fit not converged).
Reports are JSON files in ``--out`` (also echoed to stdout); plot data are CSV.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import __version__
from .bell import EmptySettingError, chsh, no_signaling
from .coincidence import PRESETS, RULES, WindowSpec, find_coincidences, tabulate_cells
from .delay import (DelayGrid, LPError, estimated_densities, fit_delay_model,
                    observed_dt_densities, plot_data_csv)
from .eventlog import LogFormatError, SinglesTable, load_log, save_log, validate_log
from .fairsample import InfeasibleError, decompose, fair_sampling_analysis, per_cell_false_positives
from .strips import (DEFAULT_MIN_RUN, DEFAULT_RANGE_PS, DEFAULT_STRIP_PS, DEFAULT_Z,
                     NoExcessRangeError, build_strip_histogram, default_span,
                     find_excess_ranges, fit_false_positive_model, poisson_dispersion_test,
                     suggest_window)
from .synth import RNG_ALGORITHM, SyntheticConfig, generate
from .units import ns_to_ps

log = logging.getLogger("eprcoinc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("validate", "strips", "window", "coinc", "bell", "nosignal",
            "fairsample", "delayfit", "synth", "full")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _decimal(text: str) -> Decimal:
    try:
        return Decimal(text)
    except Exception:
        raise argparse.ArgumentTypeError(f"not a decimal number: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eprcoinc", description="Coincidence analysis of two-station detection logs.")
    p.add_argument("--version", action="version", version=f"eprcoinc {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, window=True):
        src = sp.add_argument_group("input (exactly one of --alice/--bob or --synth)")
        src.add_argument("--alice", type=Path)
        src.add_argument("--bob", type=Path)
        src.add_argument("--format", choices=("text", "binary"), default=None,
                         help="log format (default: guessed from file content)")
        src.add_argument("--synth", type=Path, help="synthetic config JSON")
        src.add_argument("--seed", type=int, help="override the synthetic config seed")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--span-ns", type=_decimal, help="experiment span (default: longer log duration)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if window:
            w = sp.add_argument_group("window")
            w.add_argument("--u", type=_decimal, help="lower edge of t_B - t_A, ns")
            w.add_argument("--v", type=_decimal, help="upper edge of t_B - t_A, ns")
            w.add_argument("--preset", choices=sorted(PRESETS), help="named window (default wjswz)")
            w.add_argument("--auto", action="store_true", help="derive the window from the strip histogram")
            w.add_argument("--rule", choices=RULES, default="allpr")
        s = sp.add_argument_group("strips")
        s.add_argument("--strip-ns", type=_decimal, default=Decimal(DEFAULT_STRIP_PS) / 1000)
        s.add_argument("--range-ns", type=_decimal, default=Decimal(DEFAULT_RANGE_PS) / 1000,
                       help="histogram covers [-range, +range]")
        s.add_argument("--z", type=float, default=DEFAULT_Z, help="excess z threshold")
        s.add_argument("--min-run", type=int, default=DEFAULT_MIN_RUN)
        s.add_argument("--exclude-ns", type=_decimal, default=Decimal(500),
                       help="half-width around the peak left out of the dispersion test")

    def delay_opts(sp):
        d = sp.add_argument_group("delay model")
        d.add_argument("--bin-ns", type=_decimal, default=Decimal("0.5"))
        d.add_argument("--grid-bins", type=int, default=256)
        d.add_argument("--smooth", type=float, default=0.0, help="total-variation penalty weight")
        d.add_argument("--max-iter", type=int, default=200)

    for name in ("validate", "strips", "window"):
        common(sub.add_parser(name), window=False)
    for name in ("coinc", "bell", "nosignal", "fairsample"):
        common(sub.add_parser(name))
    sp = sub.add_parser("delayfit")
    common(sp)
    delay_opts(sp)
    sp = sub.add_parser("synth")
    sp.add_argument("--synth", type=Path, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", type=Path, default=Path("."))
    sp.add_argument("--format", choices=("text", "binary"), default="text")
    sp.add_argument("-v", "--verbose", action="store_true")
    sp = sub.add_parser("full")
    common(sp)
    delay_opts(sp)
    sp.add_argument("--no-delay", action="store_true", help="skip the delay-model fit")
    return p


# ------------------------------------------------------------------- plumbing


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Path, Decimal)):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return json.loads(json.dumps(cfg, default=_json_default))


@dataclass
class Inputs:
    log_a: object
    log_b: object
    seed: int | None
    synth: dict | None


def load_inputs(args) -> Inputs:
    files = args.alice is not None or args.bob is not None
    if files and args.synth is not None:
        raise UsageError("give either --alice/--bob or --synth, not both")
    if not files and args.synth is None:
        raise UsageError("an input is required: --alice and --bob, or --synth")
    if files:
        if args.alice is None or args.bob is None:
            raise UsageError("--alice and --bob must be given together")
        if args.seed is not None:
            raise UsageError("--seed only applies to --synth")
        try:
            a = load_log(args.alice, args.format, side="A")
            b = load_log(args.bob, args.format, side="B")
        except OSError as e:
            raise DataError(str(e)) from e
        return Inputs(a, b, None, None)
    cfg = _load_synth_config(args.synth, args.seed)
    a, b, _ = generate(cfg)
    return Inputs(a, b, cfg.seed, cfg.to_dict())


def _load_synth_config(path: Path, seed: int | None) -> SyntheticConfig:
    try:
        cfg = SyntheticConfig.from_json(Path(path).read_text())
    except OSError as e:
        raise DataError(str(e)) from e
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"invalid synthetic config {path}: {e}") from e
    if seed is not None:
        cfg.seed = seed
    return cfg


def _span(args, inp: Inputs) -> int:
    return ns_to_ps(args.span_ns) if args.span_ns is not None else default_span(inp.log_a, inp.log_b)


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


# -------------------------------------------------------------- computations


def compute_validate(inp: Inputs) -> dict:
    ra, rb = validate_log(inp.log_a), validate_log(inp.log_b)
    return {"alice": ra.to_dict(), "bob": rb.to_dict(), "ok": ra.ok and rb.ok}


def compute_strips(args, inp: Inputs):
    h = ns_to_ps(args.strip_ns)
    rng = ns_to_ps(args.range_ns)
    if h <= 0 or rng <= 0:
        raise UsageError("--strip-ns and --range-ns must be positive")
    hist = build_strip_histogram(inp.log_a, inp.log_b, h, -rng, rng)
    model = fit_false_positive_model(inp.log_a, inp.log_b, _span(args, inp), h)
    peak = int(hist.edges[int(np.argmax(hist.counts))]) if hist.total else 0
    ex = ns_to_ps(args.exclude_ns)
    disp = poisson_dispersion_test(hist, [(peak - ex, peak + ex)], model)
    ranges = find_excess_ranges(hist, model, args.z, args.min_run)
    report = {
        "false_positive_model": model.to_dict(),
        "strips": {"strip_ns": h / 1000, "lo_ns": hist.lo / 1000, "hi_ns": hist.hi / 1000,
                   "n_strips": hist.n_strips, "total": hist.total},
        "dispersion_test": {**disp.to_dict(), "excluded_ns": [(peak - ex) / 1000, (peak + ex) / 1000]},
        "excess_ranges": [r.to_dict() for r in ranges],
    }
    return report, hist, model


def compute_window(args, hist, model) -> dict:
    return suggest_window(hist, model, args.z).to_dict()


def resolve_window(args, hist_model=None) -> WindowSpec:
    given = [args.preset is not None, args.u is not None or args.v is not None, args.auto]
    if sum(given) > 1:
        raise UsageError("choose one of --preset, --u/--v, --auto")
    if args.u is not None or args.v is not None:
        if args.u is None or args.v is None:
            raise UsageError("--u and --v must be given together")
        try:
            return WindowSpec.from_ns(args.u, args.v)
        except ValueError as e:
            raise UsageError(str(e)) from e
    if args.auto:
        hist, model = hist_model
        return suggest_window(hist, model, args.z).window
    return PRESETS[args.preset or "wjswz"]


def compute_cells(args, inp: Inputs, window: WindowSpec):
    cs = find_coincidences(inp.log_a, inp.log_b, window, args.rule)
    cells = tabulate_cells(cs, inp.log_a, inp.log_b)
    return cs, cells


def compute_delay(args, inp: Inputs, window: WindowSpec, span: int):
    bin_ps = ns_to_ps(args.bin_ns)
    grid = DelayGrid(bin_ps, args.grid_bins)
    obs = observed_dt_densities(inp.log_a, inp.log_b, window, bin_ps)
    singles = SinglesTable.from_logs(inp.log_a, inp.log_b)
    wf = per_cell_false_positives(singles, window.width, span)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        wt = decompose(obs.cell_totals(), wf).w_true
    model, rep = fit_delay_model(obs, wt, wf, grid, smooth=args.smooth, max_iter=args.max_iter)
    est = estimated_densities(model, window, bin_ps, wt, wf)
    report = {"grid": {"bin_ns": bin_ps / 1000, "n_bins": grid.n_bins, "origin_ns": grid.origin / 1000},
              "window": window.to_dict(), **rep.to_dict()}
    csvs = {f"delay_{k}.csv": v for k, v in model.to_csv().items()}
    csvs["delay_fit.csv"] = plot_data_csv(obs, est)
    return report, csvs, rep.converged


# ------------------------------------------------------------------ commands


def _envelope(args, inp: Inputs | None) -> dict:
    env = {"tool": "eprcoinc", "version": __version__, "command": args.command,
           "config": resolved_config(args)}
    if inp is not None and inp.synth is not None:
        env.update({"seed": inp.seed, "synthetic_config": inp.synth, "rng": RNG_ALGORITHM})
    return env


def run(args) -> int:
    if args.command == "synth":
        cfg = _load_synth_config(args.synth, args.seed)
        a, b, truth = generate(cfg)
        args.out.mkdir(parents=True, exist_ok=True)
        ext = "eprlog" if args.format == "text" else "eprbin"
        save_log(a, args.out / f"alice.{ext}", args.format)
        save_log(b, args.out / f"bob.{ext}", args.format)
        _write(args.out, "truth.csv", truth.to_csv())
        report = {"tool": "eprcoinc", "version": __version__, "command": "synth",
                  "config": resolved_config(args), "seed": cfg.seed,
                  "synthetic_config": cfg.to_dict(), "rng": RNG_ALGORITHM,
                  "alice_count": len(a), "bob_count": len(b), "pairs": len(truth)}
        return _emit(args, "synth", report)

    inp = load_inputs(args)
    report = _envelope(args, inp)

    if args.command == "validate":
        report.update(compute_validate(inp))
        code = _emit(args, "validate", report)
        return code if report["ok"] else EXIT_DATA

    for name, lg in (("alice", inp.log_a), ("bob", inp.log_b)):
        if not validate_log(lg).ok:
            raise DataError(f"{name} log failed validation; run 'validate' for details")

    need_strips = args.command in ("strips", "window", "full") or getattr(args, "auto", False)
    hist = model = None
    if need_strips:
        strips_report, hist, model = compute_strips(args, inp)
        if args.command in ("strips", "full"):
            _write(args.out, "strips.csv", hist.to_csv(model))
        if args.command == "strips":
            report.update(strips_report)
            return _emit(args, "strips", report)
        if args.command == "window":
            report["suggestion"] = compute_window(args, hist, model)
            return _emit(args, "window", report)
        report["strips"] = strips_report

    window = resolve_window(args, (hist, model))
    span = _span(args, inp)
    report["window"] = window.to_dict()
    report["rule"] = args.rule
    cs, cells = compute_cells(args, inp, window)
    report["cells"] = cells.to_dict()
    report["coincidences"] = len(cs)
    singles = SinglesTable.from_logs(inp.log_a, inp.log_b)
    report["singles"] = singles.to_dict()

    if args.command == "coinc":
        _write(args.out, "coincidences.csv", cs.to_csv(inp.log_a, inp.log_b))
        _write(args.out, "cells.json", cells.to_json() + "\n")
        return _emit(args, "coinc", report)
    if args.command in ("bell", "full"):
        report["chsh"] = chsh(cells).to_dict()
    if args.command in ("nosignal", "full"):
        report["no_signaling"] = no_signaling(cells).to_dict()
    if args.command in ("fairsample", "full"):
        report["fair_sampling"] = fair_sampling_analysis(cells.counts, singles, window.width, span)
    converged = True
    if args.command == "delayfit" or (args.command == "full" and not args.no_delay):
        delay_report, csvs, converged = compute_delay(args, inp, window, span)
        report["delay_fit"] = delay_report
        for name, text in csvs.items():
            _write(args.out, name, text)
    if args.command == "full":
        _write(args.out, "coincidences.csv", cs.to_csv(inp.log_a, inp.log_b))
    code = _emit(args, args.command, report)
    if not converged:
        log.error("delay fit did not converge within %d iterations", args.max_iter)
        return EXIT_SOLVER
    return code


def _emit(args, name: str, report: dict) -> int:
    text = dumps(report)
    _write(args.out, f"{name}.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return run(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NoExcessRangeError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, LogFormatError, EmptySettingError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InfeasibleError, LPError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
