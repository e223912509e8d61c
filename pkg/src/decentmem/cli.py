"""``decentmem`` command line.

Exit codes: 0 success, 1 runtime failure or a failed verdict, 2 bad
configuration or usage.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from decentmem import __version__

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

log = logging.getLogger("decentmem")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 already; keep the usage text
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="TOML config or a run manifest.json")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (else $DECENTMEM_OUT, else the config's)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decentmem", description="Dual-pool memory simulator and theory checks.")
    parser.add_argument("--version", action="version", version=f"decentmem {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="group", parser_class=_Parser)

    sim = sub.add_parser("sim", help="simulation runs")
    sim_sub = sim.add_subparsers(dest="cmd", parser_class=_Parser)
    run = sim_sub.add_parser("run", help="run one seeded task stream")
    _common(run)
    abl = sim_sub.add_parser("ablation", help="online routing against fixed baselines")
    _common(abl)
    abl.add_argument("--seeds", type=int, help="number of seeds (overrides [study].seeds)")
    abl.add_argument("--workers", type=int, default=1)

    th = sub.add_parser("theory", help="reachability and regret checks")
    th_sub = th.add_subparsers(dest="cmd", parser_class=_Parser)
    for name, text in (("reach", "mixed-transition reachability suite"),
                       ("regret", "router regret against a fixed policy")):
        p = th_sub.add_parser(name, help=text)
        p.add_argument("--config", help="TOML with [reach]/[regret] tables (defaults if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    mem = sub.add_parser("memory", help="memory store tools")
    mem_sub = mem.add_subparsers(dest="cmd", parser_class=_Parser)
    insp = mem_sub.add_parser("inspect", help="summarize a memory store")
    insp.add_argument("store")
    insp.add_argument("--validate", action="store_true", help="re-check every store invariant")
    insp.add_argument("--top", type=int, default=5)
    return parser


# -- commands ------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    from decentmem.config import load_run_config
    from decentmem.experiments import resolve_out, run_simulation, summary, write_run

    cfg = load_run_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, output_dir=resolve_out(cfg.output_dir, args.out))
    result = run_simulation(cfg)
    write_run(result, cfg.output_dir)
    s = summary(result)
    print(f"tasks={s['tasks']} success_rate={s['success_rate']:.3f} "
          f"first_quarter={s['first_quarter_success']:.3f} last_quarter={s['last_quarter_success']:.3f}")
    print(f"wrote {cfg.output_dir}")
    return EXIT_OK


def cmd_sim_ablation(args) -> int:
    from dataclasses import replace

    from decentmem.config import load_run_config
    from decentmem.experiments import resolve_out, run_ablation, write_ablation

    cfg = load_run_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, output_dir=resolve_out(cfg.output_dir, args.out))
    if args.seeds is not None:
        if args.seeds < 1:
            raise _UsageError("--seeds must be >= 1")
        cfg = replace(cfg, study=replace(cfg.study, seeds=args.seeds))
    res = run_ablation(cfg, workers=args.workers)
    write_ablation(res, cfg, cfg.output_dir)
    for label, mean in res.means().items():
        p = res.p_values.get(label)
        print(f"{label:>12}: mean success {mean:.3f}" + ("" if p is None else f"  (online > it: p={p:.3g})"))
    print(f"verdict: {'PASS' if res.passed else 'FAIL'}")
    return EXIT_OK if res.passed else EXIT_FAIL


def _theory_cfg(args):
    from dataclasses import replace

    from decentmem.config import TheoryConfig, load_theory_config

    cfg = load_theory_config(args.config) if args.config else TheoryConfig()
    if args.seed is not None:
        cfg = replace(cfg, reach=replace(cfg.reach, seed=args.seed), regret=replace(cfg.regret, seed=args.seed))
    from decentmem.experiments import resolve_out
    return cfg, Path(resolve_out(cfg.output_dir, args.out))


def cmd_theory_reach(args) -> int:
    from decentmem import theory_suite as ts

    cfg, out = _theory_cfg(args)
    suite = ts.run_reach_suite(cfg.reach)
    ts.write_text(out / "reach.csv", ts.reach_csv(suite))
    for r in suite.rows:
        if r.expected != "primitive":
            print(f"{r.name}: {r.verdict} (expected failure of reachability) -> "
                  f"{'flagged' if r.passed else 'NOT flagged'}")
    n_random = sum(r.expected == "primitive" for r in suite.rows)
    n_ok = sum(r.passed for r in suite.rows if r.expected == "primitive")
    print(f"strictly positive instances passing: {n_ok}/{n_random}")
    ts.write_json(out / "reach.json", {"passed": suite.passed, "instances": len(suite.rows),
                                       "failures": [r.name for r in suite.failures()]})
    print(f"verdict: {'PASS' if suite.passed else 'FAIL'}")
    return EXIT_OK if suite.passed else EXIT_FAIL


def cmd_theory_regret(args) -> int:
    from decentmem import theory_suite as ts

    cfg, out = _theory_cfg(args)
    suite = ts.run_regret_suite(cfg.regret)
    v = suite.verdicts
    ts.write_text(out / "regret.csv", ts.regret_csv(suite, cfg.regret.trace_stride))
    ts.write_json(out / "regret.json", v.as_dict())
    print(f"online: R(T)/R(T/10)={v.regret_ratio:.3f} log-fit residual={v.log_fit.relative_residual:.4f} "
          f"l*MSE tail/mid={v.mse_ratio:.3f}")
    linear = v.checks["baseline_linear"]
    print(f"fixed({cfg.regret.baseline_alpha:g}): R(T)/R(T/10)={v.baseline_ratio:.3f} "
          f"log-fit residual={v.baseline_log_fit.relative_residual:.4f} -> {'linear' if linear else 'NOT linear'}")
    for name, ok in v.checks.items():
        print(f"  {name}: {'pass' if ok else 'FAIL'}")
    print(f"verdict: {'PASS' if v.passed else 'FAIL'}")
    return EXIT_OK if v.passed else EXIT_FAIL


def cmd_memory_inspect(args) -> int:
    from decentmem.router import selection_prob
    from decentmem.store import load_store

    memory = load_store(args.store)
    if args.validate:
        _validate_store(memory)
    print(f"agent: {memory.agent_id}")
    print(f"e_pool: {len(memory.e_pool)}  x_pool: {len(memory.x_pool)}")
    print(f"w_e: {memory.router.w_e:g}  alpha: {selection_prob(memory.router):.4f}")
    top = sorted(memory.e_pool + memory.x_pool, key=lambda p: (-p.quality, p.created_at, p.id))[:args.top]
    for p in top:
        print(f"  {p.quality:5.2f}  {p.id}  [{p.trajectory.action_type.value}] {p.trajectory.payload}")
    if args.validate:
        print("validate: ok")
    return EXIT_OK


def _validate_store(memory) -> None:
    """Invariants that loading alone does not imply."""
    from decentmem.memory import Origin
    from decentmem.store import StoreError

    for p in memory.e_pool:
        if p.origin is not Origin.CONSOLIDATED:
            raise StoreError(f"E-pool piece {p.id} is not consolidated")
    last = -1
    for p in memory.e_pool:
        if p.created_at < last:
            raise StoreError(f"E-pool piece {p.id}: created_at goes backwards")
        last = p.created_at


class _UsageError(Exception):
    pass


COMMANDS = {
    ("sim", "run"): cmd_sim_run,
    ("sim", "ablation"): cmd_sim_ablation,
    ("theory", "reach"): cmd_theory_reach,
    ("theory", "regret"): cmd_theory_regret,
    ("memory", "inspect"): cmd_memory_inspect,
}


def main(argv: list[str] | None = None) -> int:
    from decentmem.config import ConfigError
    from decentmem.store import StoreError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS.get((args.group, getattr(args, "cmd", None)))
    if handler is None:
        parser.print_usage(sys.stderr)
        print("decentmem: error: choose a command (sim run|ablation, theory reach|regret, memory inspect)",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        return handler(args)
    except (ConfigError, _UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StoreError as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # runtime failures map to exit 1
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
