"""Command-line surface: simulate scenario grids, analyze datasets, and
regenerate the reference tables.

Three subcommands share one executable:

``simulate``
    Run the scenarios in a JSON config and write one CSV row per scenario
    with a rejection-proportion column per method.
``analyze``
    Fit a family of marginal models to a subject-level CSV (or, with no
    arguments, the packaged AVERROES count table) and report unadjusted,
    Bonferroni and mmm inference as text, JSON and an optional forest SVG.
``tables``
    Re-simulate a published familywise-error table or the headline power
    gains and print published-vs-simulated values with a tolerance verdict.

File-writing runs leave a ``<output>.manifest.json`` next to the primary
output recording the resolved configuration, seed, package version, output
paths and wall time, so any artifact can be regenerated from its manifest.
Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import functools
import json
import math
import multiprocessing
import os
import sys
import time
from dataclasses import replace

from . import __version__
from .casestudy import analyze as analyze_averroes
from .casestudy import load_averroes
from .errors import (
    IncompatibleMethod,
    InconsistentTotals,
    MmmInferError,
    SchemaError,
)
from .forest import write_forest
from .linmodels import ModelSpec, fit, read_dataset
from .mmm import (
    adjusted_p,
    bonferroni_ci,
    bonferroni_p,
    simultaneous_ci,
    stack,
    unadjusted_ci,
    unadjusted_p,
)
from .mvdist import QuadratureSettings
from .report import HypothesisRow, InferenceReport, MethodCell
from .simulate import METHODS, Scenario, load_scenarios, power_gain, run
from .tables import published_rows

__all__ = ["main"]

_VALIDATION_ERRORS = (
    SchemaError,
    InconsistentTotals,
    IncompatibleMethod,
    ValueError,
    OSError,
    json.JSONDecodeError,
)

# Published tables use "ttest" for the Bonferroni-adjusted t tests.
_PUBLISHED_NAMES = {"bonferroni": "ttest"}

_TABLE_DESIGNS = {
    "a3": dict(published="a3_fwer_tt", family="targeted-or-total"),
    "a4": dict(published="a4_fwer_any", family="any"),
    "a5": dict(published="a5_fwer_tt", family="targeted-or-total", overlap=True),
    "a5-any": dict(published="a5_fwer_any", family="any", overlap=True),
    "a6": dict(
        published="a6_fwer_tt", family="targeted-or-total", endpoints=2, rho=0.8
    ),
    "a6-any": dict(published="a6_fwer_any", family="any", endpoints=2, rho=0.8),
}

# Headline power gains: method pair, the grid cells where the published
# gain curve peaks, and the quoted value (percentage points / 100).
_POWER_CLAIMS = (
    dict(
        label="mmm.dfind - bonferroni, 1 endpoint, N=50, sd=10",
        published=0.0547,
        total_n=50,
        sd=10.0,
        baseline="bonferroni",
        method="mmm.dfind",
        family="targeted-or-total",
        cells=((7, 0.8), (8, 0.8)),
    ),
    dict(
        label="cellmeans - bonferroni, N=20, sd=2",
        published=0.138,
        total_n=20,
        sd=2.0,
        baseline="bonferroni",
        method="cellmeans",
        family="any",
        cells=((3, 0.5), (4, 0.5)),
    ),
    dict(
        label="cellmeans - bonferroni, N=50, sd=2",
        published=0.06,
        at_least=True,
        total_n=50,
        sd=2.0,
        baseline="bonferroni",
        method="cellmeans",
        family="any",
        cells=((2, 0.5),),
    ),
    dict(
        label="mmm.dfind - bonferroni, 2 endpoints rho=0.8, N=50, sd=5",
        published=0.0835,
        total_n=50,
        sd=5.0,
        baseline="bonferroni",
        method="mmm.dfind",
        family="targeted-or-total",
        endpoints=2,
        rho=0.8,
        cells=((3, 0.8),),
    ),
    dict(
        label="mmm.dfind - bonferroni, 2 endpoints rho=0.8, N=50, sd=10",
        published=0.085,
        total_n=50,
        sd=10.0,
        baseline="bonferroni",
        method="mmm.dfind",
        family="targeted-or-total",
        endpoints=2,
        rho=0.8,
        cells=((7, 0.8),),
    ),
)


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _jobs() -> int:
    raw = os.environ.get("MMMINFER_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise SchemaError(f"MMMINFER_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise SchemaError(f"MMMINFER_JOBS must be positive, got {jobs}")
    return jobs


def _run_scenario(scenario, methods, alpha):
    return run(scenario, methods=methods, alpha=alpha)


def _run_all(scenarios, methods, alpha):
    jobs = _jobs()
    worker = functools.partial(_run_scenario, methods=methods, alpha=alpha)
    if jobs == 1 or len(scenarios) == 1:
        return [worker(s) for s in scenarios]
    with multiprocessing.Pool(min(jobs, len(scenarios))) as pool:
        return pool.map(worker, scenarios)


def _write_manifest(primary_path, subcommand, config, seed, outputs, started):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_time": round(time.perf_counter() - started, 3),
    }
    path = f"{primary_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    return path


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    scenarios = load_scenarios(args.config)
    if args.reps is not None:
        scenarios = [replace(s, replications=args.reps) for s in scenarios]
    if args.seed is not None:
        scenarios = [replace(s, seed=args.seed) for s in scenarios]
    methods = args.methods
    results = _run_all(scenarios, methods, args.alpha)

    columns = [m for m in METHODS if any(m in r.rejections for r in results)]
    fields = (
        "total_n",
        "prop_target",
        "sd",
        "delta",
        "endpoints",
        "rho",
        "overlap",
        "family",
        "replications",
        "seed",
    )
    lines = [",".join(fields + tuple(columns))]
    for result in results:
        cfg = result.scenario.to_dict()
        row = [f"{cfg[f]:g}" if isinstance(cfg[f], float) else str(cfg[f]) for f in fields]
        row += [
            f"{result.proportion(m):.6g}" if m in result.rejections else ""
            for m in columns
        ]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"

    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
        seeds = sorted({s.seed for s in scenarios})
        manifest = _write_manifest(
            args.out,
            "simulate",
            {
                "scenarios": [s.to_dict() for s in scenarios],
                "methods": list(methods) if methods else None,
                "alpha": args.alpha,
            },
            seeds[0] if len(seeds) == 1 else seeds,
            [args.out],
            started,
        )
        print(f"wrote {args.out} and {manifest}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def _read_model_config(path):
    with open(path, encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, dict):
        raise SchemaError("model config must be a JSON object")
    unknown = set(raw) - {"models", "subgroups", "reference_level"}
    if unknown:
        raise SchemaError(f"unknown model config fields: {sorted(unknown)}")
    entries = raw.get("models")
    if not isinstance(entries, list) or not entries:
        raise SchemaError('model config needs a non-empty "models" list')
    return raw


def _df_label(df_mode, models):
    if df_mode == "normal":
        return "normal"
    dfs = [m.residual_df for m in models]
    if df_mode == "dfmin":
        return f"t({min(dfs)})"
    if df_mode == "dfmax":
        return f"t({max(dfs)})"
    return "dfind(" + ", ".join(str(d) for d in dfs) + ")"


def _build_report(models, title, alpha, alternative, df_mode, settings):
    fit_ = stack(models, df_mode=df_mode)
    blocks = (
        ("noadjust", unadjusted_p(models, alternative), unadjusted_ci(models, alpha, alternative)),
        ("bonferroni", bonferroni_p(models, alternative), bonferroni_ci(models, alpha, alternative)),
        ("mmm", adjusted_p(fit_, alternative, settings), simultaneous_ci(fit_, alpha, alternative, settings)),
    )
    rows = []
    for k, model in enumerate(models):
        cells = {
            name: MethodCell(
                p=float(p[k]),
                ci_lower=float(ci[0][k]),
                ci_upper=float(ci[1][k]),
                rejected=bool(p[k] <= alpha),
            )
            for name, p, ci in blocks
        }
        rows.append(
            HypothesisRow(
                label=model.spec.label,
                group=model.spec.subset,
                endpoint=model.spec.endpoint,
                estimate=model.coefficient,
                or_scale=model.spec.family == "binomial-logit",
                methods=cells,
            )
        )
    return InferenceReport(
        title=title,
        alpha=alpha,
        alternative=alternative,
        df_mode=_df_label(df_mode, models),
        seed=settings.seed,
        quadrature_error=settings.target_abs_error,
        method_names=("noadjust", "bonferroni", "mmm"),
        rows=tuple(rows),
    )


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    settings = QuadratureSettings()
    if args.data is None:
        for flag, name in (
            (args.specs, "a model config"),
            (args.alternative, "--alternative"),
            (args.df_mode, "--df-mode"),
        ):
            if flag is not None:
                raise SchemaError(
                    f"{name} only applies when analyzing a dataset; the "
                    "packaged case study fixes its own models"
                )
        report = analyze_averroes(load_averroes(), alpha=args.alpha, settings=settings)
    else:
        if args.specs is None:
            raise SchemaError("analyzing a dataset needs a model config JSON")
        config = _read_model_config(args.specs)
        alternative = args.alternative or "two-sided"
        df_mode = args.df_mode or "normal"
        data = read_dataset(
            args.data,
            subgroup_columns=tuple(config.get("subgroups", ())),
            reference_level=config.get("reference_level"),
        )
        try:
            specs = [
                ModelSpec(**{**entry, "effect_direction": alternative})
                for entry in config["models"]
            ]
        except TypeError as exc:
            raise SchemaError(f"bad model entry: {exc}") from None
        models = [fit(data, spec) for spec in specs]
        report = _build_report(
            models,
            f"Simultaneous inference: {os.path.basename(args.data)}",
            args.alpha,
            alternative,
            df_mode,
            settings,
        )

    if args.out is None:
        if args.forest:
            raise SchemaError("--forest needs --out to know where to write")
        sys.stdout.write(report.to_text() + "\n")
        return 0

    text_path, json_path = f"{args.out}.txt", f"{args.out}.json"
    with open(text_path, "w", encoding="utf-8") as handle:
        handle.write(report.to_text() + "\n")
    with open(json_path, "w", encoding="utf-8") as handle:
        handle.write(report.to_json() + "\n")
    outputs = [text_path, json_path]
    if args.forest:
        svg_path = f"{args.out}.svg"
        write_forest(report, svg_path, method="mmm")
        outputs.append(svg_path)
    manifest = _write_manifest(
        args.out,
        "analyze",
        {
            "data": args.data or "averroes",
            "specs": args.specs,
            "alpha": args.alpha,
            "alternative": report.alternative,
            "df_mode": report.df_mode,
        },
        report.seed,
        outputs,
        started,
    )
    print(f"wrote {', '.join(outputs)} and {manifest}", file=sys.stderr)
    return 0


def _cell_tolerance(published: float, reps: int) -> float:
    spread = max(published * (1.0 - published), 0.03)
    return max(4.0 * math.sqrt(spread * (1.0 / reps + 1e-4)), 0.008)


def cmd_tables(args) -> int:
    if args.which == "power":
        return _power_report(args)
    design = dict(_TABLE_DESIGNS[args.which])
    published = design.pop("published")
    rows = published_rows(published)
    if args.reps < 2000:
        print(f"note: {args.reps} replications per cell; low precision", flush=True)
    print(
        f"{args.which}: published vs simulated FWER "
        f"({args.reps} replications per cell, seed {args.seed})"
    )
    header = f"{'N':>5} {'prop':>5} {'method':<12} {'published':>9} "
    header += f"{'simulated':>9} {'diff':>8} {'tol':>7} ok"
    print(header)
    good = total = 0
    for row in rows:
        scenario_args = dict(
            total_n=int(row["N"]),
            prop_target=float(row["prop_targ"]),
            sd=5.0,
            replications=args.reps,
            seed=args.seed,
            **design,
        )
        result = _run_all([Scenario(**scenario_args)], None, 0.05)[0]
        for method in result.methods:
            column = _PUBLISHED_NAMES.get(method, method)
            target = float(row[column])
            simulated = result.proportion(method)
            diff = simulated - target
            tol = _cell_tolerance(target, args.reps)
            ok = abs(diff) <= tol
            good += ok
            total += 1
            print(
                f"{row['N']:>5.0f} {row['prop_targ']:>5.2f} {method:<12} "
                f"{target:>9.4f} {simulated:>9.4f} {diff:>+8.4f} {tol:>7.4f} "
                f"{'yes' if ok else 'NO'}"
            )
    print(f"{good}/{total} cells within tolerance")
    return 0


def _power_report(args) -> int:
    if args.reps < 2000:
        print(f"note: {args.reps} replications per cell; low precision", flush=True)
    print(
        f"power gains: published vs simulated "
        f"({args.reps} replications per cell, seed {args.seed})"
    )
    width = max(len(c["label"]) for c in _POWER_CLAIMS)
    print(f"{'claim':<{width}} {'published':>10} {'simulated':>10} {'diff':>9} ok")
    good = 0
    for claim in _POWER_CLAIMS:
        claim = dict(claim)
        label = claim.pop("label")
        target = claim.pop("published")
        at_least = claim.pop("at_least", False)
        gain = power_gain(replications=args.reps, seed=args.seed, **claim)
        tol = _cell_tolerance(0.1, args.reps)
        shown = f"{'>=' if at_least else ''}{100 * target:.2f}pp"
        if at_least:
            ok = gain >= target - tol
        else:
            ok = abs(gain - target) <= tol
        good += ok
        print(
            f"{label:<{width}} {shown:>10} {100 * gain:>8.2f}pp "
            f"{100 * (gain - target):>+7.2f}pp {'yes' if ok else 'NO'}"
        )
    print(f"{good}/{len(_POWER_CLAIMS)} gains within tolerance (pp = percentage points)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mmminfer",
        description="Simultaneous inference over subgroups and endpoints.",
    )
    parser.add_argument("--version", action="version", version=f"mmminfer {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = commands.add_parser("simulate", help="run a JSON grid of scenarios")
    sim.add_argument("config", help="scenario JSON (a list or {'scenarios': [...]})")
    sim.add_argument("--reps", type=int, default=None, help="override replications")
    sim.add_argument("--seed", type=int, default=None, help="override every seed")
    sim.add_argument(
        "--methods",
        nargs="+",
        default=None,
        metavar="METHOD",
        help=f"subset of {', '.join(METHODS)} (default: all applicable)",
    )
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--out", default=None, help="CSV path (default: stdout)")
    sim.set_defaults(handler=cmd_simulate)

    ana = commands.add_parser(
        "analyze", help="simultaneous inference for a dataset (default: AVERROES)"
    )
    ana.add_argument("data", nargs="?", default=None, help="subject-level CSV")
    ana.add_argument("specs", nargs="?", default=None, help="model config JSON")
    ana.add_argument("--alpha", type=float, default=0.05)
    ana.add_argument(
        "--alternative", choices=("two-sided", "greater", "less"), default=None
    )
    ana.add_argument(
        "--df-mode", choices=("normal", "dfmin", "dfmax", "dfind"), default=None
    )
    ana.add_argument("--out", default=None, help="output prefix for .txt/.json")
    ana.add_argument(
        "--forest", action="store_true", help="also write <out>.svg forest plot"
    )
    ana.set_defaults(handler=cmd_analyze)

    tab = commands.add_parser(
        "tables", help="compare published tables against fresh simulations"
    )
    tab.add_argument(
        "--which",
        choices=tuple(_TABLE_DESIGNS) + ("power",),
        required=True,
    )
    tab.add_argument("--reps", type=int, default=10_000)
    tab.add_argument("--seed", type=int, default=20150436)
    tab.set_defaults(handler=cmd_tables)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except _VALIDATION_ERRORS as exc:
        print(f"mmminfer: error: {exc}", file=sys.stderr)
        return 1
    except (MmmInferError, FloatingPointError) as exc:
        print(f"mmminfer: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
