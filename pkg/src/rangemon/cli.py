"""Command-line entry point.

Exit status: 0 on success, 2 for usage or configuration errors, 3 when a
run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import scenarios
from .attack import AttackSchedule
from .config import AttackSpec, ScenarioConfig
from .errors import ConfigError
from .harness import (
    MonteCarloResult,
    TrialMetrics,
    export,
    metadata,
    monte_carlo,
    write_csv,
    write_json,
)
from .monitor import write_jsonl
from .trial import run_trial

OUT_DIR_ENV = "RANGEMON_OUT_DIR"
EXIT_CONFIG, EXIT_RUNTIME = 2, 3

log = logging.getLogger("rangemon")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rangemon", description="Range-based integrity monitoring for robot swarms.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--scenario", help="built-in scenario name (see list-scenarios)")
        src.add_argument("--config", type=Path, help="scenario JSON file")
        sp.add_argument("--rho", type=float, help="ADMM penalty parameter")
        sp.add_argument("--omega-max", type=float, help="range noise bound")
        sp.add_argument("--nu-max", type=float, help="estimation error bound")
        start = sp.add_mutually_exclusive_group()
        start.add_argument("--warm", dest="start", action="store_const", const="warm",
                           help="keep duals across outer rounds")
        start.add_argument("--cold", dest="start", action="store_const", const="cold",
                           help="reset a robot's duals once one passes the threshold")
        sp.add_argument("--dual-threshold", type=float, help="cold-start threshold on dual norms")
        sp.add_argument("--n-admm", type=int, help="inner ADMM iterations per outer round")
        sp.add_argument("--epsilon", type=float, help="integrity threshold")
        sp.add_argument("--phases", help="attack schedule as inline JSON or a path to a JSON file")
        sp.add_argument("--steps", type=int, help="simulation steps per trial")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out-dir", type=Path, help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
        sp.add_argument("--threads", type=int, default=1, help="parallel trials/variants")

    run = sub.add_parser("run", help="run one trial of every variant of a scenario")
    scenario_args(run)
    run.add_argument("--per-robot", action="store_true", help="add per-robot error and integrity columns")
    run.add_argument("--reports", action="store_true", help="also write integrity reports as JSON lines")

    mc = sub.add_parser("monte-carlo", help="Monte Carlo study of every variant of a scenario")
    scenario_args(mc)
    mc.add_argument("--trials", type=int, help="number of trials")

    sw = sub.add_parser("sweep", help="Monte Carlo over a grid of rho and omega_max values")
    scenario_args(sw)
    sw.add_argument("--trials", type=int, help="number of trials")
    sw.add_argument("--rho-values", type=float, nargs="+", required=True)
    sw.add_argument("--omega-values", type=float, nargs="+")

    sub.add_parser("list-scenarios", help="list built-in scenarios")

    vc = sub.add_parser("validate-config", help="check a scenario JSON file and print it resolved")
    vc.add_argument("path", type=Path)
    return p


def _load_phases(text: str) -> AttackSchedule:
    path = Path(text)
    if not text.lstrip().startswith("{") and path.exists():
        text = path.read_text()
    try:
        return AttackSchedule.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError("phases", f"not valid JSON: {exc}") from None


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    solver, noise = cfg.solver, cfg.noise
    try:
        if args.rho is not None:
            solver = solver.with_(rho=args.rho)
        if args.n_admm is not None:
            solver = solver.with_(n_admm=args.n_admm)
        if args.dual_threshold is not None:
            solver = solver.with_(dual_threshold=args.dual_threshold)
        if args.start == "warm":
            solver = solver.with_(warm_start=True, cold_start=False)
        elif args.start == "cold":
            solver = solver.with_(warm_start=True, cold_start=True)
        if args.omega_max is not None:
            noise = replace(noise, omega_max=args.omega_max)
        if args.nu_max is not None:
            noise = replace(noise, nu_max=args.nu_max)
    except ValueError as exc:
        name = str(exc).split()[0]
        raise ConfigError(name, str(exc)) from None
    changes = {"solver": solver, "noise": noise}
    for flag, key in (("steps", "steps"), ("seed", "master_seed"), ("epsilon", "epsilon"),
                      ("trials", "trials")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    if args.phases is not None:
        changes["attack"] = AttackSpec(schedule=_load_phases(args.phases))
    return cfg.with_(**changes)


def _variants(args) -> tuple[str, list[tuple[str, ScenarioConfig]]]:
    if args.scenario:
        base, variants = args.scenario, scenarios.scenario(args.scenario)
    else:
        cfg = ScenarioConfig.load(args.config)
        base, variants = cfg.name, [(cfg.name, cfg)]
    return base, [(label, _apply_overrides(cfg, args)) for label, cfg in variants]


def _out_dir(args) -> Path:
    return args.out_dir or Path(os.environ.get(OUT_DIR_ENV, "out"))


def _stem(base: str, label: str) -> str:
    return base if label == base else f"{base}-{label}"


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _summary_line(label: str, final_rmse: float, detected, diverged) -> str:
    return f"{label}: final_mean_rmse={final_rmse:.6g} detected={detected} diverged={diverged}"


def cmd_run(args) -> int:
    base, variants = _variants(args)
    out = _out_dir(args)

    def one(item):
        label, cfg = item
        trace = run_trial(cfg, 0)
        return label, cfg, trace, TrialMetrics.from_trace(trace)

    for label, cfg, trace, m in _map(one, variants, args.threads):
        stem = out / _stem(base, label)
        csv_path, json_path = export(m, stem, per_robot=args.per_robot)
        meta = json.loads(json_path.read_text())
        meta.update(metadata(cfg, [m.seed]))
        write_json(json_path, meta)
        if args.reports:
            with open(stem.parent / f"{stem.name}.jsonl", "w") as fh:
                write_jsonl(trace.reports, fh)
        print(_summary_line(label, m.final_mean_rmse, sorted(m.final_detected), m.diverged))
    return 0


def _study(base: str, variants, args, out: Path) -> list[tuple[str, MonteCarloResult]]:
    results = []
    for label, cfg in variants:
        res = monte_carlo(cfg, workers=args.threads)
        export(res, out / _stem(base, label))
        s = res.summary()
        print(f"{label}: final_mean_rmse={s['final_mean_rmse']:.6g} divergence_rate={s['divergence_rate']:.3g} "
              f"precision={s['precision']:.3g} recall={s['recall']:.3g}")
        results.append((label, res))
    header = ["variant", "rho", "omega_max", "nu_max", "warm_start", "cold_start", "trials",
              "final_mean_rmse", "divergence_rate", "precision", "recall", "confirmed_alarms"]
    rows = []
    for label, res in results:
        c, s = res.config, res.summary()
        rows.append([label, repr(c.solver.rho), repr(c.noise.omega_max), repr(c.noise.nu_max),
                     str(int(c.solver.warm_start)), str(int(c.solver.cold_start)), str(s["trials"]),
                     repr(s["final_mean_rmse"]), repr(s["divergence_rate"]), repr(s["precision"]),
                     repr(s["recall"]), str(s["confirmed_alarms"])])
    write_csv(out / f"{base}-summary.csv", header, rows)
    return results


def cmd_monte_carlo(args) -> int:
    base, variants = _variants(args)
    _study(base, variants, args, _out_dir(args))
    return 0


def cmd_sweep(args) -> int:
    base, variants = _variants(args)
    if len(variants) != 1:
        raise ConfigError("scenario", "sweep needs a single-variant scenario")
    _, cfg = variants[0]
    omegas = args.omega_values or [cfg.noise.omega_max]
    grid = []
    for omega in omegas:
        for rho in args.rho_values:
            if not rho > 0:
                raise ConfigError("rho", f"must be > 0, got {rho}")
            if not omega >= 0:
                raise ConfigError("omega_max", f"must be >= 0, got {omega}")
            grid.append((f"rho{rho:g}-omega{omega:g}",
                         cfg.with_(solver=cfg.solver.with_(rho=rho), noise=replace(cfg.noise, omega_max=omega))))
    _study(f"{base}-sweep", grid, args, _out_dir(args))
    return 0


def cmd_list(args) -> int:
    for name, text in scenarios.DESCRIPTIONS.items():
        print(f"{name:<11} {text}")
    return 0


def cmd_validate(args) -> int:
    cfg = ScenarioConfig.load(args.path)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "run": cmd_run, "monte-carlo": cmd_monte_carlo, "sweep": cmd_sweep,
    "list-scenarios": cmd_list, "validate-config": cmd_validate,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("config error: threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every failure maps to one exit status
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
