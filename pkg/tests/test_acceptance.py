"""Acceptance gate: one test per criterion, each at its stated tolerance and time budget.

A summary line per criterion is printed at the end of the pytest run.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from decentmem import theory
from decentmem.cli import main
from decentmem.config import ReachConfig, RegretConfig, load_run_config
from decentmem.experiments import run_ablation, run_self_evolution, run_simulation
from decentmem.memory import MemoryPiece, Origin, TrajectoryRecord, retrieve
from decentmem.router import PoolChoice, RouterState, update
from decentmem.theory_suite import mse_trend_ratio, run_reach_suite, trapped_limits

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_c1_router_update_table():
    E, X = PoolChoice.EXPLOIT, PoolChoice.EXPLORE
    # hand values: reinforce adds 0.5, otherwise halve and floor at 1.0
    expected = {
        (1.0, E, 1): 1.5, (1.0, E, 0): 1.0, (1.0, X, 1): 1.0, (1.0, X, 0): 1.5,
        (2.0, E, 1): 2.5, (2.0, E, 0): 1.0, (2.0, X, 1): 1.0, (2.0, X, 0): 2.5,
    }
    with Clock() as clk:
        got = {key: update(RouterState(w_e=key[0]), key[1], key[2]).w_e for key in expected}
    mismatches = [k for k in expected if got[k] != expected[k]]
    ok = not mismatches and clk.elapsed < 1.0
    record_criterion(1, "router update table", ok, f"{8 - len(mismatches)}/8 exact, {clk.elapsed:.3f}s (< 1s)")
    assert not mismatches
    assert clk.elapsed < 1.0


def _oracle(pieces, query, k, tau):
    if not pieces:
        return []
    sims = np.stack([p.context_embedding for p in pieces]) @ query
    keep = [(p, float(s)) for p, s in zip(pieces, sims) if s >= tau]
    keep.sort(key=lambda ps: (-ps[1], ps[0].created_at, ps[0].id))
    return [(p.id, s) for p, s in keep[:k]]


def test_c2_retrieval_oracle_equivalence():
    rng = np.random.default_rng(20240)
    traj = TrajectoryRecord("direct_answer", "x")
    failures = 0
    with Clock() as clk:
        for inst in range(1000):
            n = int(rng.integers(0, 1001)) if inst % 10 else int(rng.integers(0, 5))
            dim = int(rng.choice([8, 32, 256]))
            base = rng.normal(size=(max(n, 1), dim))
            # duplicate some rows and timestamps so ties actually occur
            if n > 2:
                dup = rng.integers(0, n, size=n // 4)
                base[dup] = base[rng.integers(0, n)]
            base /= np.linalg.norm(base, axis=1, keepdims=True)
            pieces = [MemoryPiece(id=f"p{int(rng.integers(10**6)):06d}-{i}", context_prototype="",
                                  context_embedding=base[i], trajectory=traj,
                                  created_at=int(rng.integers(0, 20)), origin=Origin.CONSOLIDATED)
                      for i in range(n)]
            q = base[int(rng.integers(0, max(n, 1)))] if n and rng.random() < 0.3 else rng.normal(size=dim)
            q = q / np.linalg.norm(q)
            k = int(rng.integers(1, 20))
            tau = float(rng.uniform(-1, 1)) if rng.random() < 0.7 else 0.0
            got = [(p.id, s) for p, s in retrieve(pieces, q, k, tau)]
            failures += got != _oracle(pieces, q, k, tau)
    ok = failures == 0 and clk.elapsed < 30
    record_criterion(2, "retrieval oracle equivalence", ok,
                     f"{1000 - failures}/1000 identical incl. tie order, {clk.elapsed:.1f}s (< 30s)")
    assert failures == 0
    assert clk.elapsed < 30


def test_c3_reachability_suite():
    with Clock() as clk:
        suite = run_reach_suite(ReachConfig(seed=0, instances=100, max_states=200, alpha_max=0.99,
                                            tol=1e-12, tv_bound=1e-9))
        rows = {r.name: r for r in suite.rows}
        random_rows = [r for r in suite.rows if r.name.startswith("random-")]
        bound_ok = all(r.min_entry >= r.bound * (1 - 1e-12) for r in random_rows)
        tv_max = max(r.tv_two_starts for r in random_rows)
        swap = rows["swap-alpha1"]
        block = rows["block-alpha1"]
        # independent witness of start-dependence at alpha = 1
        blocks = theory.block_diagonal([3, 4], np.random.default_rng(5))
        l1, l2 = trapped_limits(blocks, [np.r_[1.0, 0, 0, 0, 0, 0, 0], np.r_[0, 0, 0, 0, 0, 0, 1.0]])
        tv_trap = theory.total_variation(l1, l2)
    ok = (len(random_rows) == 100 and bound_ok and tv_max <= 1e-9 and swap.verdict == "periodic"
          and swap.passed and block.passed and tv_trap >= 0.1 and clk.elapsed < 60)
    record_criterion(3, "reachability suite", ok,
                     f"100 instances, bound holds={bound_ok}, max TV={tv_max:.1e} (<= 1e-9); "
                     f"swap@1 {swap.verdict}; block@1 TV={block.tv_two_starts:.2f}/{tv_trap:.2f} (>= 0.1); "
                     f"{clk.elapsed:.1f}s (< 60s)")
    assert bound_ok and tv_max <= 1e-9
    assert swap.verdict == "periodic" and swap.passed
    assert block.passed and tv_trap >= 0.1
    assert clk.elapsed < 60


def test_c4_regret():
    cfg = RegretConfig()
    T = 100_000
    with Clock() as clk:
        curve = theory.quadratic_curve(0.75, cfg.gain)
        assert curve.alpha_star == pytest.approx(0.75, abs=1e-6)
        study = theory.regret_study(curve, T, range(200), mode="robbins_monro")
        mse_ratio = mse_trend_ratio(study.scaled_mse(), 1_000, T)
        ratio = study.mean_regret[T - 1] / study.mean_regret[10_000 - 1]
        fit = theory.fit_log_growth(study.mean_regret, (1_000, T))
        base = theory.fixed_policy_regret(curve, 0.5, T)
        base_ratio = base.regret[T - 1] / base.regret[10_000 - 1]
        separation = study.mean_regret[T - 1] / base.regret[T - 1]
    checks = {
        "a": mse_ratio <= 1.5,
        "b": ratio <= 2.0,
        "c": fit.relative_residual <= 0.05,
        "d": base_ratio == 10.0 and separation <= 0.05,
    }
    ok = all(checks.values()) and clk.elapsed < 300
    record_criterion(4, "regret vs fixed routing", ok,
                     f"(a) lMSE tail/mid={mse_ratio:.3f} (<= 1.5); (b) R(1e5)/R(1e4)={ratio:.3f} (<= 2); "
                     f"(c) log-fit residual={fit.relative_residual:.2%} (<= 5%); "
                     f"(d) baseline ratio={base_ratio:g} (= 10), online/baseline={separation:.1e} (<= 5%); "
                     f"{clk.elapsed:.1f}s (< 300s)")
    assert all(checks.values()), checks
    assert clk.elapsed < 300


def test_c5_self_evolution():
    cfg = load_run_config(CONFIGS / "sim.toml")
    assert cfg.environment.families == 10 and cfg.environment.repeats == 20
    with Clock() as clk:
        res = run_self_evolution(cfg, seeds=list(range(20)))
    ok = res.last.mean() > res.first.mean() and res.p_value < 0.05 and clk.elapsed < 120
    record_criterion(5, "self-evolution trend", ok,
                     f"tasks 1-50 {res.first.mean():.3f} -> tasks 151-200 {res.last.mean():.3f}, "
                     f"paired one-sided p={res.p_value:.2g} (< 0.05), 20 seeds, {clk.elapsed:.1f}s (< 120s)")
    assert res.last.mean() > res.first.mean()
    assert res.p_value < 0.05
    assert clk.elapsed < 120


def test_c6_ablation_ordering():
    cfg = load_run_config(CONFIGS / "ablation.toml")
    assert cfg.environment.novel_tasks > 0
    with Clock() as clk:
        res = run_ablation(cfg, seeds=list(range(20)), modes=["online", 1.0, 0.0, 0.5])
    means = res.means()
    not_worse = all(means["online"] >= means[b] for b in res.baselines)
    wins = sum(res.p_values[b] < 0.05 for b in res.baselines)
    ok = not_worse and wins >= 2 and clk.elapsed < 300
    detail = ", ".join(f"{k}={v:.3f}" for k, v in means.items())
    pv = ", ".join(f"{k}: p={v:.2g}" for k, v in res.p_values.items())
    record_criterion(6, "ablation ordering", ok,
                     f"{detail}; {pv}; significant wins {wins}/3 (>= 2); {clk.elapsed:.1f}s (< 300s)")
    assert not_worse, means
    assert wins >= 2, res.p_values
    assert clk.elapsed < 300


def test_c7_consolidation_and_privacy():
    cfg = load_run_config(CONFIGS / "sim.toml")
    assert cfg.environment.n_tasks == 200
    with Clock() as clk:
        res = run_simulation(replace(cfg, seed=11))
    leftover = max(res.x_pool_after_task)
    reads = res.access_log.cross_agent_reads()
    ok = len(res.outcomes) == 200 and leftover == 0 and reads == 0 and clk.elapsed < 60
    record_criterion(7, "consolidation and privacy", ok,
                     f"200 tasks, max X-pool after task={leftover}, cross-agent reads={reads}, "
                     f"{clk.elapsed:.1f}s (< 60s)")
    assert leftover == 0 and reads == 0
    assert res.access_log.cross_agent_ops() == 0
    assert clk.elapsed < 60


def test_c8_reproducible_from_manifest(tmp_path):
    first, replay = tmp_path / "first", tmp_path / "replay"
    assert main(["sim", "run", "--config", str(CONFIGS / "sim.toml"), "--seed", "5", "--out", str(first)]) == 0
    assert main(["sim", "run", "--config", str(first / "manifest.json"), "--out", str(replay)]) == 0
    csvs = sorted(p.name for p in first.glob("*.csv"))
    same = [name for name in csvs if (first / name).read_bytes() == (replay / name).read_bytes()]
    ok = csvs and same == csvs
    record_criterion(8, "reproducibility from manifest", bool(ok),
                     f"{len(same)}/{len(csvs)} CSVs byte-identical ({', '.join(csvs)})")
    assert csvs == ["router_trace.csv", "tasks.csv"]
    assert same == csvs
