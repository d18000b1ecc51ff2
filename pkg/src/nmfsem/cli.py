"""Command-line front end exposing the full pipeline.

Subcommands mirror the library one to one: ``fit``, ``cv``,
``bootstrap``, ``simulate``, ``diagram``, ``metrics``. Exit codes are
part of the contract: 0 on success, 1 on input errors (bad flags,
unreadable or malformed files), 2 on unstable outcomes. An unstable
fit still writes its artifact and prints its table, because
instability is a finding about the data, not a crash.

Thread counts default to the NMFSEM_THREADS environment variable,
falling back to the number of available cores.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

from .errors import NmfsemError, NoFeasibleModelError, ValidationError
from .estimation import FitConfig, Penalties, fit
from .evaluation import bootstrap as run_bootstrap
from .evaluation import mae, sc_cov, sc_map
from .io import (
    RunArtifact,
    cv_result_to_csv,
    export_diagram,
    load_artifact,
    load_column_specs,
    load_dataset,
    save_artifact,
)
from .model import predict
from .selection import cross_validate, default_grid
from .simulation import (
    run_study,
    study_fit_config,
    summaries_to_csv,
    summaries_to_text,
    table1_conditions,
)

_THREADS_ENV = "NMFSEM_THREADS"


class _ExitOneParser(argparse.ArgumentParser):
    """Flag and usage errors are input errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    env = os.environ.get(_THREADS_ENV, "").strip()
    if env:
        try:
            value = int(env)
        except ValueError:
            value = 0
        if value >= 1:
            return value
        print(f"warning: ignoring invalid {_THREADS_ENV}={env!r}",
              file=sys.stderr)
    return os.cpu_count() or 1


def _threads(args) -> int:
    return args.threads if args.threads is not None else _default_threads()


def _spec_names(specs, role: str) -> list[str]:
    return [s.name for s in specs if s.role == role]


def _config_from_args(args) -> FitConfig:
    return FitConfig(
        q=args.q,
        penalties=Penalties(args.lambda_x, args.lambda1, args.lambda2),
        max_iter=args.max_iter,
        rel_tol=args.rel_tol,
        init=args.init,
        seed=args.seed)


def _provenance(command: str, args, specs, config: FitConfig) -> dict:
    cfg = {
        "q": config.q,
        "lambda_x": config.penalties.lambda_x,
        "lambda_1": config.penalties.lambda_1,
        "lambda_2": config.penalties.lambda_2,
        "max_iter": config.max_iter,
        "rel_tol": config.rel_tol,
        "init": config.init,
        "seed": config.seed,
    }
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    return {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "data": str(args.data),
        "config": cfg,
        "config_hash": digest,
        "endogenous": _spec_names(specs, "endogenous"),
        "exogenous": _spec_names(specs, "exogenous"),
    }


def _cell(value, spec: str = ".3f", width: int = 8) -> str:
    text = format(value, spec) if value is not None else "--"
    return text.rjust(width)


def _print_fit_table(result) -> None:
    eq = result.equilibrium
    metrics = result.metrics
    print(f"{'Q':>3}{'rho':>9}{'AR':>9}"
          f"{'SC_map':>9}{'SC_cov':>9}{'MAE':>9}")
    print(f"{result.params.q:>3d}"
          + _cell(eq.rho, width=9)
          + _cell(eq.ar, width=9)
          + _cell(metrics.sc_map if metrics else None, width=9)
          + _cell(metrics.sc_cov if metrics else None, width=9)
          + _cell(metrics.mae if metrics else None, width=9))
    if not eq.stable:
        print(f"unstable fit: rho = {eq.rho:.3f} >= 1, no equilibrium",
              file=sys.stderr)


def _cmd_fit(args) -> int:
    specs = load_column_specs(args.spec)
    data = load_dataset(args.data, specs)
    config = _config_from_args(args)
    result = fit(data, config)
    if args.out:
        artifact = RunArtifact(
            fit=result, provenance=_provenance("fit", args, specs, config))
        save_artifact(artifact, args.out)
    _print_fit_table(result)
    return 0 if result.equilibrium.stable else 2


def _cmd_cv(args) -> int:
    specs = load_column_specs(args.spec)
    data = load_dataset(args.data, specs)
    grid = default_grid(data, k_folds=args.k, lambda_x=args.lambda_x)
    if args.lambda1_values is not None:
        grid = replace(grid, lambda1_values=tuple(args.lambda1_values))
    if args.lambda2_values is not None:
        grid = replace(grid, lambda2_values=tuple(args.lambda2_values))
    grid = replace(grid, q_values=tuple(args.q_values))
    base = FitConfig(q=grid.q_values[0], max_iter=args.max_iter,
                     rel_tol=args.rel_tol, init=args.init, seed=args.seed)
    try:
        cv = cross_validate(data, grid, base, threads=_threads(args))
    except NoFeasibleModelError as exc:
        print(f"no feasible model: {exc}", file=sys.stderr)
        return 2
    print(f"{'q':>4}{'lambda1':>14}{'lambda2':>14}{'mae':>12}{'stable':>8}")
    for cell in cv.cell_order:
        q, l1, l2 = cell
        stable = cv.cell_stable[cell]
        mae_text = f"{cv.cell_mae[cell]:.6f}" if stable else "--"
        mark = "  *" if cell == cv.best else ""
        print(f"{q:>4d}{l1:>14.6g}{l2:>14.6g}{mae_text:>12}"
              f"{'yes' if stable else 'no':>8}{mark}")
    q, l1, l2 = cv.best
    print(f"selected: q={q}, lambda1={l1:g}, lambda2={l2:g}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(cv_result_to_csv(cv))
    return 0


def _cmd_bootstrap(args) -> int:
    specs = load_column_specs(args.spec)
    data = load_dataset(args.data, specs)
    config = _config_from_args(args)
    result = run_bootstrap(data, config, args.b, seed=args.seed,
                           threads=_threads(args))
    lo, hi = result.rho_interval
    print(f"rho = {result.rho_point:.3f}  interval [{lo:.3f}, {hi:.3f}]")
    alo, ahi = result.ar_interval
    if result.ar_point is None:
        print(f"AR  = --     interval [{alo:.3f}, {ahi:.3f}] "
              "(point fit unstable)")
    else:
        print(f"AR  = {result.ar_point:.3f}  interval "
              f"[{alo:.3f}, {ahi:.3f}]")
    kept = result.b - result.n_unstable
    print(f"replicates kept: {kept} of {result.b} "
          f"({result.n_unstable} unstable)")
    if args.out:
        point = fit(data, config)
        artifact = RunArtifact(
            fit=point, bootstrap=result,
            provenance=_provenance("bootstrap", args, specs, config))
        save_artifact(artifact, args.out)
    return 0 if result.ar_point is not None else 2


def _cmd_simulate(args) -> int:
    if not args.table1:
        raise ValidationError(
            "simulate requires --table1; no other study is defined")
    conditions = table1_conditions(r=args.r, seed=args.seed)
    summaries = run_study(
        conditions, lambda cond: study_fit_config(args.seed, n=cond.n),
        threads=_threads(args))
    sys.stdout.write(summaries_to_text(summaries))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(summaries_to_csv(summaries))
    return 0


def _cmd_diagram(args) -> int:
    artifact = load_artifact(args.artifact)
    endo_names = exo_names = None
    if args.spec:
        specs = load_column_specs(args.spec)
        endo_names = _spec_names(specs, "endogenous")
        exo_names = _spec_names(specs, "exogenous")
    text = export_diagram(artifact.fit, args.threshold,
                          endo_names=endo_names, exo_names=exo_names)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_metrics(args) -> int:
    artifact = load_artifact(args.artifact)
    result = artifact.fit
    eq = result.equilibrium
    if args.data:
        if not args.spec:
            raise ValidationError("--data requires --spec")
        data = load_dataset(args.data, load_column_specs(args.spec))
        if not eq.stable:
            print(f"unstable fit: rho = {eq.rho:.3f} >= 1, metrics "
                  "undefined", file=sys.stderr)
            return 2
        metrics_row = (
            sc_map(eq.m_model, result.m_simple),
            sc_cov(eq.m_model, data),
            mae(data.y1, predict(eq, data.y2)))
        print(f"{'SC_map':>9}{'SC_cov':>9}{'MAE':>9}")
        print(_cell(metrics_row[0], width=9) + _cell(metrics_row[1], width=9)
              + _cell(metrics_row[2], width=9))
        return 0
    if result.metrics is None:
        print("artifact holds no metrics (unstable fit or metrics "
              "unavailable); pass --data and --spec to recompute",
              file=sys.stderr)
        return 2
    print(f"{'SC_map':>9}{'SC_cov':>9}{'MAE':>9}")
    print(_cell(result.metrics.sc_map, width=9)
          + _cell(result.metrics.sc_cov, width=9)
          + _cell(result.metrics.mae, width=9))
    return 0


def _add_data_flags(parser) -> None:
    parser.add_argument("--data", required=True,
                        help="CSV file, one row per observation")
    parser.add_argument("--spec", required=True,
                        help="column spec JSON file")


def _add_penalty_flags(parser) -> None:
    parser.add_argument("--lambda1", type=float, default=0.0,
                        help="feedback sparsity penalty (default 0)")
    parser.add_argument("--lambda2", type=float, default=0.0,
                        help="driver sparsity penalty (default 0)")
    parser.add_argument("--lambda-x", type=float, default=100.0,
                        dest="lambda_x",
                        help="basis orthogonality penalty (default 100)")


def _add_fit_flags(parser) -> None:
    parser.add_argument("--max-iter", type=int, default=2000,
                        dest="max_iter", help="iteration budget")
    parser.add_argument("--rel-tol", type=float, default=1e-6,
                        dest="rel_tol", help="relative loss stop tolerance")
    parser.add_argument("--init", default="nndsvdar",
                        choices=("nndsvdar", "kmeans"),
                        help="basis initialization")
    parser.add_argument("--seed", type=int, default=0, help="random seed")


def _add_threads_flag(parser) -> None:
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default {_THREADS_ENV} "
                        "or the CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _ExitOneParser(
        prog="nmfsem",
        description="Non-negative factorization with equilibrium feedback")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("fit", help="fit one model, print its summary row")
    _add_data_flags(p)
    p.add_argument("--q", type=int, required=True, help="latent dimension")
    _add_penalty_flags(p)
    _add_fit_flags(p)
    p.add_argument("--out", help="artifact JSON path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("cv", help="cross-validate a penalty grid")
    _add_data_flags(p)
    p.add_argument("--q-values", type=int, nargs="+", required=True,
                   dest="q_values", help="latent dimensions to try")
    p.add_argument("--lambda1-values", type=float, nargs="+", default=None,
                   dest="lambda1_values",
                   help="feedback penalty grid (default: data-scaled)")
    p.add_argument("--lambda2-values", type=float, nargs="+", default=None,
                   dest="lambda2_values",
                   help="driver penalty grid (default: data-scaled)")
    p.add_argument("--lambda-x", type=float, default=100.0, dest="lambda_x",
                   help="basis orthogonality penalty (default 100)")
    p.add_argument("--k", type=int, default=5, help="number of folds")
    _add_fit_flags(p)
    _add_threads_flag(p)
    p.add_argument("--out", help="CSV path for the cell table")
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("bootstrap",
                       help="percentile intervals for rho and AR")
    _add_data_flags(p)
    p.add_argument("--q", type=int, required=True, help="latent dimension")
    _add_penalty_flags(p)
    _add_fit_flags(p)
    p.add_argument("--b", type=int, default=200,
                   help="bootstrap replicates (default 200)")
    _add_threads_flag(p)
    p.add_argument("--out", help="artifact JSON path")
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("simulate", help="run the synthetic benchmark")
    p.add_argument("--table1", action="store_true",
                   help="the four-condition noise-free study")
    p.add_argument("--r", type=int, default=50,
                   help="replicates per condition (default 50)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    _add_threads_flag(p)
    p.add_argument("--out", help="CSV path for the summary table")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("diagram", help="emit a Graphviz DOT path diagram")
    p.add_argument("--artifact", required=True, help="artifact JSON path")
    p.add_argument("--spec", default=None,
                   help="column spec JSON for variable names")
    p.add_argument("--threshold", type=float, default=None,
                   help="edge weight threshold (default: 5%% of each "
                   "matrix maximum)")
    p.add_argument("--out", help="DOT output path (default stdout)")
    p.set_defaults(func=_cmd_diagram)

    p = sub.add_parser("metrics", help="print metrics stored in an artifact")
    p.add_argument("--artifact", required=True, help="artifact JSON path")
    p.add_argument("--data", default=None,
                   help="CSV file to recompute metrics against")
    p.add_argument("--spec", default=None,
                   help="column spec JSON for --data")
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, int):
            return exc.code
        return 0 if exc.code is None else 1
    try:
        return args.func(args)
    except NmfsemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
