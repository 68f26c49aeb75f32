"""Command-line experiment runner.

Subcommands:

  scoreloop run <config>          dispatch any experiment kind
  scoreloop validate <config>     parse + validate, print every issue
  scoreloop reproduce <name|cfg>  run a named reproduction
  scoreloop sweep <config>        regime-map sweep
  scoreloop fixed-point <config>  fixed point / stability at one point

Exit codes: 0 success, 1 validation failure, 2 reproduction-target failure,
3 runtime error.  Artifacts (CSV/JSON, plus figures unless disabled) land in
the output directory from, in order: --output, the config, the
SCORELOOP_OUTPUT_DIR environment variable, ./scoreloop-output.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import figures
from .adjuvancy import find_rho_eq, sweep_adjuvancy
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    parse_config,
    serialize_config,
)
from .control import (
    FixedScorePolicy,
    NaiveUpdatePolicy,
    PomdpEnvironment,
    pomdp_rollout,
    run_control_loop,
)
from .dynamics import (
    HMap,
    classify_recursion,
    run_longitudinal,
    run_naive,
    sweep_recursion,
)
from .estimators import fit_logistic
from .evaluation import REPRODUCTION_NAMES, reproduce
from .model import ConstantScore, ThresholdRule
from .reports import config_hash, resolve_output_dir, write_csv, write_json, write_jsonl
from .sampling import RngSeed, make_dataset, sample_covariates, sample_outcomes

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_TARGETS = 2
EXIT_RUNTIME = 3


def _load_config(path: str, overrides: list[str]) -> ExperimentConfig:
    text = Path(path).read_text()
    if overrides:
        text = apply_overrides(text, overrides)
    return parse_config(text)


def _metadata(config: ExperimentConfig) -> dict:
    return {
        "config_hash": config_hash(serialize_config(config)),
        "seed": config.run.seed,
        "kind": config.kind,
    }


def _score_summary(score) -> dict:
    return {"kind": score.kind, **score.params()}


def _epoch_rows(records):
    rows = []
    for rec in records:
        rows.append([
            rec.epoch,
            rec.mean_outcome,
            rec.score.kind,
            *(rec.summary["mean_t0"]),
            *(rec.summary["mean_t1"]),
        ])
    return rows


def _run_epoch_engine(config: ExperimentConfig, out: Path, meta: dict) -> None:
    run = config.run
    seed = RngSeed(run.seed)
    common = dict(
        f=config.mechanism,
        g_a=config.intervention_a,
        g_l=config.intervention_l,
        mu=config.population,
    )
    if config.kind == "naive":
        records = run_naive(
            score_mode=run.score_mode,
            n_per_epoch=run.n,
            epochs=run.epochs,
            seed=seed,
            fitter=run.fitter,
            holdout_fraction=run.holdout_fraction,
            **common,
        )
    else:
        records = run_longitudinal(
            n=run.n, epochs=run.epochs, seed=seed,
            score_mode=run.score_mode, fitter=run.fitter, **common,
        ).records
    p = config.mechanism.dims.observed
    header = (
        ["epoch", "mean_outcome", "score_kind"]
        + [f"mean_t0_{i+1}" for i in range(p)]
        + [f"mean_t1_{i+1}" for i in range(p)]
    )
    if "csv" in config.output.formats:
        write_csv(out / "trace.csv", header, _epoch_rows(records), meta)
    if "json" in config.output.formats:
        write_json(out / "trace.json", {
            **meta,
            "epochs": [
                {
                    "epoch": r.epoch,
                    "mean_outcome": r.mean_outcome,
                    "score": _score_summary(r.score),
                    "summary": r.summary,
                    "fit": r.fit.to_json_dict() if r.fit is not None else None,
                }
                for r in records
            ],
        })
    if config.output.figures:
        figures.save_epoch_trace(
            [r.mean_outcome for r in records], out / "mean_outcome.png",
            ylabel="event rate", title=f"{config.kind} updating: event rate by epoch",
        )


def _sweep_cell_block(args):
    """One x_s row of a sweep; module-level so worker processes can import it."""
    config, xs = args
    run = config.run
    axis_a = np.linspace(run.grid_lo, run.grid_hi, run.grid_resolution)
    if run.dynamics == "adjuvancy":
        eq = find_rho_eq(config.intervention_a)
        return sweep_adjuvancy(
            config.mechanism, config.intervention_a, [xs], axis_a, eq.rho_eq,
            epochs=run.adjuvancy_epochs, tol=run.adjuvancy_tol,
        )
    return sweep_recursion(
        config.mechanism, config.intervention_a, [xs], axis_a,
        max_epochs=run.max_epochs, conv_tol=run.conv_tol, osc_floor=run.osc_floor,
        g_l=config.intervention_l,
    )


def _run_sweep(config: ExperimentConfig, out: Path, meta: dict) -> None:
    run = config.run
    axis_s = np.linspace(run.grid_lo, run.grid_hi, run.grid_resolution)
    if run.workers > 1:
        with ProcessPoolExecutor(max_workers=run.workers) as pool:
            blocks = list(pool.map(_sweep_cell_block, [(config, xs) for xs in axis_s]))
    else:
        blocks = [_sweep_cell_block((config, xs)) for xs in axis_s]
    rows = [row for block in blocks for row in block]
    header = list(rows[0].keys())
    if "csv" in config.output.formats:
        write_csv(out / "regime_map.csv", header, [[r[k] for k in header] for r in rows], meta)
    if "json" in config.output.formats:
        write_json(out / "regime_map.json", {**meta, "rows": rows})
    if config.output.figures:
        figures.save_regime_map(rows, out / "regime_map.png",
                                title=f"{run.dynamics} regime map")
        if run.dynamics == "adjuvancy":
            figures.save_gap_map(rows, out / "gap_map.png")


def _run_fixed_point(config: ExperimentConfig, out: Path, meta: dict) -> None:
    run = config.run
    dims = config.mechanism.dims
    point = np.asarray(run.point, dtype=float)
    x_s, x_a = point[: dims.p_s], point[dims.p_s :]
    hmap = HMap(config.mechanism, config.intervention_a, x_s, x_a, g_l=config.intervention_l)
    rho0 = run.rho0 if run.rho0 is not None else float(config.mechanism.probability(x_s, x_a))
    report = classify_recursion(
        hmap, rho0, max_epochs=run.max_epochs, conv_tol=run.conv_tol, osc_floor=run.osc_floor
    )
    if "csv" in config.output.formats:
        write_csv(out / "trace.csv", ["epoch", "rho", "delta", "classification"],
                  report.trace_rows(), meta)
    if "json" in config.output.formats:
        write_json(out / "fixed_point.json", {**meta, **report.to_json_dict()})
    if config.output.figures:
        figures.save_cobweb(hmap, report.trace, out / "cobweb.png")
    print(f"fixed point z0 = {report.fixed_point!r}, h'(z0) = "
          f"{report.derivative_at_fixed_point!r}, classification = {report.classification}")


def _reproduction_figures(report, out: Path) -> None:
    if report.name == "b2-worse-models":
        header, rows = report.tables["estimands"]
        labels = [r[0] for r in rows]
        values = [r[1] for r in rows]
        targets = [r[-1] for r in rows]
        figures.save_metric_bars(labels, values, targets, out / "estimands.png")
    elif report.name == "b6-oscillation":
        header, rows = report.tables["trace"]
        figures.save_epoch_trace([r[1] for r in rows], out / "trace.png",
                                 ylabel="score", title="oscillating score updates")
    elif report.name in ("fig2-regime", "fig3-chaos"):
        header, rows = report.tables["regime_map"]
        dicts = [dict(zip(header, row)) for row in rows]
        figures.save_regime_map(dicts, out / "regime_map.png", title=report.name)
        if report.name == "fig3-chaos":
            figures.save_gap_map(dicts, out / "gap_map.png")
    elif report.name == "b5-nonoptimal":
        header, rows = report.tables["comparison"]
        figures.save_metric_bars(
            [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
            out / "comparison.png", title="objective (bars) and cost (targets)",
        )


def _run_reproduce(config: ExperimentConfig | None, name: str, out: Path, meta: dict,
                   formats=("csv", "json"), render=True, budget: dict | None = None) -> int:
    params = dict(budget or {})
    report = reproduce(name, **params)
    if "json" in formats:
        write_json(out / "report.json", {**meta, **report.to_json_dict()})
    if "csv" in formats:
        for table_name, (header, rows) in report.tables.items():
            write_csv(out / f"{table_name}.csv", header, rows, meta)
    if render:
        _reproduction_figures(report, out)
    for check in report.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] {name}: {check.label} computed={check.computed!r} "
              f"target={check.target!r}")
    print(f"{name}: {'all targets met' if report.passed else 'TARGETS MISSED'}")
    return EXIT_OK if report.passed else EXIT_TARGETS


def _reproduce_budget(config: ExperimentConfig) -> dict:
    run = config.run
    name = config.name
    if name == "b2-worse-models":
        return {"mc_outer": run.mc_outer, "mc_inner": run.mc_inner, "n": run.n,
                "seed": RngSeed(run.seed)}
    if name in ("fig2-regime", "fig3-chaos"):
        return {"resolution": run.grid_resolution, "lo": run.grid_lo, "hi": run.grid_hi}
    if name == "b5-nonoptimal":
        return {"seed": RngSeed(run.seed)}
    return {}


def _run_control(config: ExperimentConfig, out: Path, meta: dict) -> None:
    run = config.run
    seed = RngSeed(run.seed)
    f = config.mechanism
    batch0 = sample_covariates(config.population, f.dims, run.n, seed.split(0))
    y0 = sample_outcomes(f, batch0.at_time(1), seed.split(1))
    initial_fit = fit_logistic(make_dataset(batch0, y0))
    rho = ThresholdRule(0.733, 0.200)
    records = run_control_loop(
        f, initial_fit, config.family, rho, config.cost_spec, config.population,
        epochs=run.epochs, n=run.n, seed=seed.split(2),
        mc_n=run.mc_n, grid_points=run.grid_points,
    )
    header = ["epoch", "theta", "cost", "objective", "mean_outcome", "converged"]
    rows = [[r.epoch, float(r.theta[0]), r.cost, r.objective, r.mean_outcome, r.fit.converged]
            for r in records]
    if "csv" in config.output.formats:
        write_csv(out / "control.csv", header, rows, meta)
    if "json" in config.output.formats:
        write_json(out / "control.json", {
            **meta,
            "epochs": [
                {"epoch": r.epoch, "theta": r.theta.tolist(), "cost": r.cost,
                 "objective": r.objective, "mean_outcome": r.mean_outcome,
                 "fit": r.fit.to_json_dict()}
                for r in records
            ],
        })
    if config.output.figures:
        figures.save_control_trace(records, out / "control.png")


def _run_pomdp(config: ExperimentConfig, out: Path, meta: dict) -> None:
    run = config.run
    env = PomdpEnvironment(
        config.mechanism, config.intervention_a, config.population,
        n=run.n, seed=RngSeed(run.seed), g_l=config.intervention_l, gamma=run.gamma,
    )
    if run.policy == "naive":
        policy = NaiveUpdatePolicy(run.fitter)
    elif run.policy.startswith("constant:"):
        policy = FixedScorePolicy(ConstantScore(float(run.policy.split(":", 1)[1])))
    else:
        raise ValueError(f"unknown policy {run.policy!r} (use naive or constant:<v>)")
    result = pomdp_rollout(policy, env, horizon=run.horizon)
    if "json" in config.output.formats:
        write_jsonl(out / "steps.jsonl", [s.to_json_dict() for s in result.steps])
        write_json(out / "rollout.json", {
            **meta,
            "discounted_return": result.discounted_return,
            "negated_return": result.negated_return,
            "rewards": result.rewards,
        })
    if "csv" in config.output.formats:
        write_csv(out / "rewards.csv", ["epoch", "reward", "discount"],
                  [[s.epoch, s.reward, s.discount] for s in result.steps], meta)
    if config.output.figures:
        figures.save_reward_trace(result.rewards, out / "rewards.png")
    print(f"discounted return over {run.horizon} epochs: {result.discounted_return!r}")


def _run_adjuvancy_kind(config: ExperimentConfig, out: Path, meta: dict) -> None:
    from .adjuvancy import classify_adjuvancy

    run = config.run
    dims = config.mechanism.dims
    point = np.asarray(run.point, dtype=float)
    x_s, x_a = point[: dims.p_s], point[dims.p_s :]
    eq = find_rho_eq(config.intervention_a)
    report = classify_adjuvancy(
        config.mechanism, config.intervention_a, x_s, float(x_a[0]), eq.rho_eq,
        epochs=run.adjuvancy_epochs, tol=run.adjuvancy_tol,
    )
    if "csv" in config.output.formats:
        rows = [[e, r, x] for e, (r, x) in enumerate(zip(report.trace.rho, report.trace.x))]
        write_csv(out / "trace.csv", ["epoch", "rho", "x_a"], rows, meta)
    if "json" in config.output.formats:
        write_json(out / "adjuvancy.json", {**meta, **report.to_json_dict(),
                                            "rho_eq": eq.rho_eq})
    if config.output.figures:
        figures.save_epoch_trace(report.trace.rho, out / "trace.png", ylabel="score",
                                 title="layered updating score trace")
    print(f"classification: {report.classification}, final gap {report.final_gap!r}")


def run_experiment(config: ExperimentConfig, output_dir: str | None = None) -> int:
    """Dispatch a validated config; returns the process exit code."""
    out = resolve_output_dir(config.output.directory, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _metadata(config)
    if config.kind == "reproduce":
        return _run_reproduce(
            config, config.name, out, meta,
            formats=config.output.formats, render=config.output.figures,
            budget=_reproduce_budget(config),
        )
    if config.kind in ("naive", "longitudinal"):
        _run_epoch_engine(config, out, meta)
    elif config.kind == "sweep":
        _run_sweep(config, out, meta)
    elif config.kind == "fixed-point":
        _run_fixed_point(config, out, meta)
    elif config.kind == "adjuvancy":
        _run_adjuvancy_kind(config, out, meta)
    elif config.kind == "control":
        _run_control(config, out, meta)
    elif config.kind == "pomdp":
        _run_pomdp(config, out, meta)
    else:  # pragma: no cover - parse_config rejects unknown kinds
        raise ValueError(f"unhandled kind {config.kind!r}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoreloop",
        description="simulate deployed-score feedback dynamics from declarative configs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_arg=True):
        if config_arg:
            p.add_argument("config", help="path to a .cfg experiment file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override any config field (dotted path)")
        p.add_argument("--output", default=None, help="output directory override")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    add_common(sub.add_parser("run", help="run any experiment config"))
    sub.add_parser("validate", help="validate a config").add_argument("config")
    rep = sub.add_parser("reproduce", help="run a named reproduction with defaults")
    rep.add_argument("name", choices=sorted(REPRODUCTION_NAMES))
    rep.add_argument("--output", default=None)
    rep.add_argument("--no-figures", action="store_true")
    add_common(sub.add_parser("sweep", help="run a regime-map sweep config"))
    add_common(sub.add_parser("fixed-point", help="run a fixed-point config"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            try:
                parse_config(Path(args.config).read_text())
            except ConfigError as exc:
                for issue in exc.issues:
                    print(f"error: {issue}", file=sys.stderr)
                return EXIT_VALIDATION
            print("config is valid")
            return EXIT_OK

        if args.command == "reproduce":
            out = resolve_output_dir(None, args.output)
            out.mkdir(parents=True, exist_ok=True)
            meta = {"config_hash": "-", "seed": 0, "kind": "reproduce"}
            return _run_reproduce(None, args.name, out, meta, render=not args.no_figures)

        config = _load_config(args.config, args.overrides)
        if args.command == "sweep" and config.kind != "sweep":
            print(f"error: kind: expected a sweep config, got {config.kind!r}", file=sys.stderr)
            return EXIT_VALIDATION
        if args.command == "fixed-point" and config.kind != "fixed-point":
            print(f"error: kind: expected a fixed-point config, got {config.kind!r}",
                  file=sys.stderr)
            return EXIT_VALIDATION
        if args.no_figures:
            config = _strip_figures(config)
        return run_experiment(config, args.output)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"error: {issue}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # engine failures surface with the failing stage
        print(f"runtime error ({args.command}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _strip_figures(config: ExperimentConfig) -> ExperimentConfig:
    from dataclasses import replace

    return replace(config, output=replace(config.output, figures=False))


if __name__ == "__main__":
    raise SystemExit(main())
