"""Batteries of theory checks with pass/fail verdicts and CSV output."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from decentmem import theory
from decentmem.config import ReachConfig, RegretConfig


@dataclass
class ReachRow:
    name: str
    n: int
    alpha: float
    min_entry: float
    bound: float
    verdict: str
    tv_two_starts: float | None
    expected: str
    passed: bool


@dataclass
class ReachSuite:
    rows: list[ReachRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[ReachRow]:
        return [r for r in self.rows if not r.passed]


def _random_prior(n: int, rng: np.random.Generator) -> np.ndarray:
    h = rng.random(n) + 1e-3
    return h / h.sum()


def _random_start(n: int, rng: np.random.Generator) -> np.ndarray:
    p = rng.random(n)
    return p / p.sum()


def reach_instance(name: str, T: np.ndarray, h: np.ndarray, alpha: float, rng: np.random.Generator,
                   tol: float, tv_bound: float) -> ReachRow:
    M = theory.mixed_transition(T, h, alpha)
    report = theory.check_reachability(M)
    bound = M.positivity_bound()
    ok_bound = report.min_entry >= bound * (1 - 1e-12)
    p1 = theory.stationary(M, tol=tol, start=_random_start(M.n, rng))
    p2 = theory.stationary(M, tol=tol, start=_random_start(M.n, rng))
    tv = theory.total_variation(p1, p2)
    passed = ok_bound and report.passed and report.strictly_positive and tv <= tv_bound
    return ReachRow(name, M.n, alpha, report.min_entry, bound, report.verdict, tv, "primitive", passed)


def trapped_limits(T: np.ndarray, starts: list[np.ndarray], tol: float = 1e-12) -> list[np.ndarray]:
    """Limits of ``p <- T p`` from each start (for reducible chains at alpha = 1)."""
    return [theory.stationary(T, tol=tol, start=s) for s in starts]


def run_reach_suite(cfg: ReachConfig) -> ReachSuite:
    rng = np.random.default_rng([cfg.seed, 0x7E])
    suite = ReachSuite()
    for i in range(cfg.instances):
        n = int(rng.integers(2, cfg.max_states + 1))
        T = theory.random_column_stochastic(n, rng)
        h = _random_prior(n, rng)
        alpha = float(rng.uniform(0.0, cfg.alpha_max))
        suite.rows.append(reach_instance(f"random-{i:03d}", T, h, alpha, rng, cfg.tol, cfg.tv_bound))

    swap = theory.swap_matrix()
    uniform2 = np.full(2, 0.5)
    suite.rows.append(reach_instance("swap-alpha0.9", swap, uniform2, 0.9, rng, cfg.tol, cfg.tv_bound))
    rep = theory.check_reachability(theory.mixed_transition(swap, uniform2, 1.0))
    suite.rows.append(ReachRow("swap-alpha1", 2, 1.0, rep.min_entry, 0.0, rep.verdict, None,
                               "periodic", rep.verdict == "periodic" and rep.period == 2))

    blocks = theory.block_diagonal([3, 4], rng)
    uniform7 = np.full(7, 1 / 7)
    suite.rows.append(reach_instance("block-alpha0.5", blocks, uniform7, 0.5, rng, cfg.tol, cfg.tv_bound))
    rep = theory.check_reachability(theory.mixed_transition(blocks, uniform7, 1.0))
    s1 = np.r_[np.ones(3), np.zeros(4)] / 3
    s2 = np.r_[np.zeros(3), np.ones(4)] / 4
    l1, l2 = trapped_limits(blocks, [s1, s2], cfg.tol)
    tv = theory.total_variation(l1, l2)
    suite.rows.append(ReachRow("block-alpha1", 7, 1.0, rep.min_entry, 0.0, rep.verdict, tv,
                               "reducible", rep.verdict == "reducible" and tv >= 0.1))
    return suite


def reach_csv(suite: ReachSuite) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "n", "alpha", "min_entry", "bound", "verdict", "tv_two_starts", "expected", "passed"])
    for r in suite.rows:
        w.writerow([r.name, r.n, repr(r.alpha), repr(r.min_entry), repr(r.bound), r.verdict,
                    "" if r.tv_two_starts is None else repr(r.tv_two_starts), r.expected, int(r.passed)])
    return buf.getvalue()


# -- regret ------------------------------------------------------------------


@dataclass
class RegretVerdicts:
    mse_ratio: float
    regret_ratio: float
    log_fit: theory.LogFit
    baseline_ratio: float
    baseline_log_fit: theory.LogFit
    separation: float
    cfg: RegretConfig

    @property
    def checks(self) -> dict[str, bool]:
        c = self.cfg
        return {
            "mse_no_upward_trend": self.mse_ratio <= c.mse_trend_bound,
            "regret_ratio": self.regret_ratio <= c.ratio_bound,
            "log_fit": self.log_fit.relative_residual <= c.log_fit_bound,
            "baseline_linear": self.baseline_ratio == 10.0
                               and self.baseline_log_fit.relative_residual > c.log_fit_bound,
            "separation": self.separation <= c.separation_bound,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {
            "mse_tail_over_mid": self.mse_ratio,
            "regret_ratio_T_over_T10": self.regret_ratio,
            "log_fit": vars(self.log_fit),
            "baseline_regret_ratio": self.baseline_ratio,
            "baseline_log_fit": vars(self.baseline_log_fit),
            "online_over_baseline": self.separation,
            "checks": self.checks,
            "passed": self.passed,
        }


def mse_trend_ratio(scaled_mse: np.ndarray, lo: int, hi: int) -> float:
    """Mean of l*MSE over the upper decade of [lo, hi] divided by the lower decade."""
    mid_hi = hi // 10
    mid = scaled_mse[lo - 1:mid_hi]
    tail = scaled_mse[mid_hi - 1:hi]
    return float(tail.mean() / mid.mean())


@dataclass
class RegretSuite:
    curve: theory.RewardCurve
    study: theory.RegretStudy
    baseline: theory.RegretTrace
    raw: theory.RegretStudy | None
    verdicts: RegretVerdicts


def run_regret_suite(cfg: RegretConfig, raw_seeds: int = 20, backend=None) -> RegretSuite:
    curve = theory.quadratic_curve(cfg.alpha_star, cfg.gain)
    T = cfg.horizon
    seeds = list(range(cfg.seed, cfg.seed + cfg.seeds))
    study = theory.regret_study(curve, T, seeds, mode="robbins_monro", backend=backend)
    raw = None
    if raw_seeds:
        raw = theory.regret_study(curve, T, seeds[:raw_seeds], mode="raw_weights", backend=backend)
    base = theory.fixed_policy_regret(curve, cfg.baseline_alpha, T)
    window = (cfg.window_start, T)
    verdicts = RegretVerdicts(
        mse_ratio=mse_trend_ratio(study.scaled_mse(), cfg.window_start, T),
        regret_ratio=float(study.mean_regret[T - 1] / study.mean_regret[T // 10 - 1]),
        log_fit=theory.fit_log_growth(study.mean_regret, window),
        baseline_ratio=float(base.regret[T - 1] / base.regret[T // 10 - 1]),
        baseline_log_fit=theory.fit_log_growth(base, window),
        separation=float(study.mean_regret[T - 1] / base.regret[T - 1]),
        cfg=cfg,
    )
    return RegretSuite(curve, study, base, raw, verdicts)


def regret_csv(suite: RegretSuite, stride: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "t", "regret", "alpha", "mse"])
    T = suite.study.horizon
    ts = sorted(set(range(stride, T + 1, stride)) | {1, T})
    series = [("online", suite.study.as_trace())]
    if suite.raw is not None:
        series.append(("raw_weights", suite.raw.as_trace()))
    series.append((f"fixed({suite.baseline.alphas[0]:g})", suite.baseline))
    for label, tr in series:
        for t in ts:
            w.writerow([label, t, repr(float(tr.regret[t - 1])), repr(float(tr.alphas[t - 1])),
                        repr(float(tr.mse[t - 1]))])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
