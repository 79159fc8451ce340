"""Command-line entry point.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are
option names (dashes or underscores). Values from the file replace the
built-in defaults and explicit flags override both.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, SfcoError
from .geokinetics import SnapshotSeries, build_all_snapshots, export_snapshots
from .harness import compare, export_plot_data, run_simulation
from .policies import AnnealingConfig, GreedyPolicy, MetaheuristicPolicy, RandomPolicy
from .scenario import builtin_case_study, dumps_scenario, load_scenario, save_scenario
from .workload import WorkloadConfig, dumps_workload, generate_requests, load_workload, save_workload

log = logging.getLogger("sagin_sfco")

POLICY_NAMES = ("random", "greedy", "meta", "rl")
CASE_STUDIES = {"henan": builtin_case_study}


# -- helpers ------------------------------------------------------------------------


def _scenario(path):
    return builtin_case_study() if path is None else load_scenario(path)


def _workload(path, scenario, seed):
    if path is not None:
        return load_workload(path)
    return generate_requests(WorkloadConfig(rng_seed=seed), scenario.horizon_s)


def make_policy_factory(name: str, *, checkpoint=None, annealing_config=None, seed: int = 0):
    """Zero-argument factory for the named policy."""
    if name == "random":
        return lambda: RandomPolicy(seed)
    if name == "greedy":
        return GreedyPolicy
    if name == "meta":
        cfg = AnnealingConfig.load(annealing_config) if annealing_config else None
        return lambda: MetaheuristicPolicy(seed, cfg)
    if name == "rl":
        if checkpoint is None:
            raise ConfigError("--policy rl needs --checkpoint FILE")
        from .neuro.agent import RLPolicy
        from .neuro.checkpoint import load_checkpoint

        model, _meta = load_checkpoint(checkpoint)
        return lambda: RLPolicy(model)
    raise ConfigError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


def _write_report(reports, out_dir, figures: bool) -> None:
    paths = export_plot_data(reports, out_dir)
    if figures:
        from .plotting import render_figures

        paths.update({f"{k}_png": v for k, v in render_figures(reports, out_dir).items()})
    for p in paths.values():
        log.info("wrote %s", p)


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


# -- subcommands --------------------------------------------------------------------


def cmd_generate(args) -> int:
    sc = CASE_STUDIES[args.case_study]()
    if args.out:
        save_scenario(sc, args.out)
    else:
        _emit(dumps_scenario(sc), None)
    return 0


def cmd_workload_gen(args) -> int:
    sc = _scenario(args.scenario)
    cfg = WorkloadConfig(arrival_rate_per_min=args.rate, rng_seed=args.seed)
    reqs = generate_requests(cfg, sc.horizon_s)
    if args.out:
        save_workload(reqs, args.out, config=cfg, horizon_s=sc.horizon_s)
    else:
        _emit(dumps_workload(reqs, config=cfg, horizon_s=sc.horizon_s), None)
    return 0


def cmd_run(args) -> int:
    sc = _scenario(args.scenario)
    wl = _workload(args.workload, sc, args.seed)
    factory = make_policy_factory(args.policy, checkpoint=args.checkpoint, annealing_config=args.annealing_config,
                                  seed=args.seed)
    rep = run_simulation(sc, wl, factory(), args.seed, "static" if args.static else "dynamic",
                         static_index=args.static_index)
    if args.out:
        _write_report([rep], args.out, not args.no_figures)
    _emit(json.dumps(rep.summary(), indent=1, sort_keys=True), None)
    return 0


def cmd_train(args) -> int:
    from .neuro.a3c import A3CConfig, train
    from .neuro.checkpoint import save_checkpoint

    sc = _scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = A3CConfig(checkpoint_every=args.checkpoint_every)
    result = train(sc, WorkloadConfig(arrival_rate_per_min=args.rate), workers=args.workers,
                   episodes_budget=args.episodes, seed=args.seed, config=cfg, checkpoint_dir=out / "checkpoints")
    final = save_checkpoint(out / "policy.bin", result.model, args.seed, result.episodes)
    result.write_curve(out / "learning_curve.csv")
    if not args.no_figures:
        from .plotting import plot_learning_curve

        plot_learning_curve(result.curve, out / "learning_curve.png")
    tail = result.curve[-1]["moving_avg_reward"] if result.curve else float("nan")
    _emit(json.dumps({"checkpoint": str(final), "episodes": result.episodes, "updates": result.versions,
                      "final_moving_avg_reward": tail}, indent=1), None)
    return 0


def cmd_compare(args) -> int:
    sc = _scenario(args.scenario)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    seeds = list(range(args.seeds))
    series = SnapshotSeries(sc)
    mode = "static" if args.static else "dynamic"
    factories = {n: make_policy_factory(n, checkpoint=args.checkpoint, annealing_config=args.annealing_config)
                 for n in names}
    if args.workload is not None:
        workload = load_workload(args.workload)
    else:
        # one generated stream per seed, shared by every policy
        def workload(seed):
            return _workload(None, sc, seed)

    res = compare(sc, workload, factories, seeds, mode=mode, series=series, out_dir=args.out)
    if args.out:
        _write_report(res["reports"], args.out, not args.no_figures)
    _emit(json.dumps(res["summary"], indent=1), None)
    return 0


def cmd_export(args) -> int:
    sc = _scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, out / "scenario.json")
    paths = export_snapshots(build_all_snapshots(sc), out / "snapshots")
    if args.policy:
        wl = _workload(args.workload, sc, args.seed)
        factory = make_policy_factory(args.policy, checkpoint=args.checkpoint, seed=args.seed)
        rep = run_simulation(sc, wl, factory(), args.seed, "static" if args.static else "dynamic")
        _write_report([rep], out, not args.no_figures)
    _emit(json.dumps({"scenario": str(out / "scenario.json"), "snapshots": len(paths)}), None)
    return 0


# -- parser -------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, *, scenario=True) -> None:
    p.add_argument("--config", help="JSON file of option defaults")
    if scenario:
        p.add_argument("--scenario", help="scenario JSON (default: built-in henan case study)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagin-sfco", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a built-in scenario as JSON")
    _common(p, scenario=False)
    p.add_argument("--case-study", choices=sorted(CASE_STUDIES), default="henan")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("workload", help="workload utilities")
    wsub = p.add_subparsers(dest="workload_command", required=True)
    g = wsub.add_parser("gen", help="generate a seeded request stream as JSON")
    _common(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rate", type=float, default=0.5, help="arrivals per minute")
    g.add_argument("--out", help="output file (default: stdout)")
    g.set_defaults(func=cmd_workload_gen)

    def policy_opts(q):
        q.add_argument("--checkpoint", help="policy checkpoint for rl")
        q.add_argument("--annealing-config", help="JSON annealing parameters for meta")
        q.add_argument("--static", action="store_true", help="freeze one snapshot for the whole run")
        q.add_argument("--out", help="directory for CSV exports and figures")
        q.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("run", help="simulate one policy on one workload")
    _common(p)
    p.add_argument("--workload", help="workload JSON (default: generated from --seed)")
    p.add_argument("--policy", choices=POLICY_NAMES, default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--static-index", type=int, default=0)
    policy_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train the placement policy")
    _common(p)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--episodes", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=0.5, help="arrivals per minute")
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--out", default="training", help="directory for checkpoints and the learning curve")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run several policies over several seeds")
    _common(p)
    p.add_argument("--workload", help="fixed workload JSON; default regenerates one per seed")
    p.add_argument("--policies", default="random,greedy,meta")
    p.add_argument("--seeds", type=int, default=10)
    policy_opts(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="write the scenario, its snapshots and optionally one run's report")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=POLICY_NAMES)
    p.add_argument("--workload")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--static", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_export)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` when one is given."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        defaults = {k.replace("-", "_"): v for k, v in doc.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        if args.command == "workload":
            sub = sub._subparsers._group_actions[0].choices[args.workload_command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise ConfigError(f"{args.config}: unknown option(s) {', '.join(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SfcoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
