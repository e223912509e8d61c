"""Simulation runs and multi-seed studies, with their file outputs.

A run writes, into its output directory:

* ``tasks.csv``: one row per task,
* ``router_trace.csv``: one row per (task, stage >= 2, active agent),
* ``summary.json``: success rates, accuracy curve points, router weights,
* ``manifest.json``: config echo, seed and SHA-256 of every output,
* ``stores/<agent>.jsonl``: each agent's memory after the last task.

Column layouts are in ``docs/formats.md``. Everything is a function of the
config and seed, so replaying a manifest reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from decentmem import __version__, kernels
from decentmem.config import RunConfig
from decentmem.embedding import HashEmbedder
from decentmem.environment import ScriptedPolicy, SyntheticEnvironment
from decentmem.judge import LLMJudge, Rubric, SimulatedJudge
from decentmem.memory import DualPoolMemory, PoolAccessLog
from decentmem.orchestrator import AgentSpec, OrchestratorConfig, TaskOutcome, run_task
from decentmem.router import RouterState, selection_prob
from decentmem.store import save_store

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
MANIFEST_SCHEMA = "decentmem-manifest"
ENV_OUT = "DECENTMEM_OUT"

TASK_COLUMNS = ["task_index", "task_id", "family_id", "novel", "success", "final_answer",
                "stage_scores", "guided", "exploratory", "direct", "failed",
                "mean_alpha", "cumulative_accuracy"]
TRACE_COLUMNS = ["task_index", "task_id", "stage", "agent_id", "choice", "pool_used", "delta",
                 "w_e_before", "w_e_after"]


@dataclass
class SimulationResult:
    config: RunConfig
    outcomes: list[TaskOutcome]
    agents: list[AgentSpec]
    access_log: PoolAccessLog
    alpha_history: dict[str, list[float]]
    x_pool_after_task: list[int]
    tokens: int = 0

    @property
    def successes(self) -> np.ndarray:
        return np.array([o.success for o in self.outcomes], dtype=float)

    def success_rate(self) -> float:
        return float(self.successes.mean()) if self.outcomes else 0.0

    def quarter_rates(self) -> tuple[float, float]:
        s = self.successes
        q = max(1, len(s) // 4)
        return float(s[:q].mean()), float(s[-q:].mean())


def orchestrator_config(cfg: RunConfig, routing: str | float | None = None) -> OrchestratorConfig:
    return OrchestratorConfig(
        n_stages=cfg.topology.stages,
        k=cfg.retrieval.k,
        tau=cfg.retrieval.tau,
        routing=cfg.router.routing if routing is None else routing,
        aggregation=cfg.topology.aggregation,
        round_robin=cfg.topology.round_robin,
        dissent_quality=cfg.retrieval.dissent_quality,
    )


def _llm_parts(cfg: RunConfig):
    from decentmem.agents import LLMPolicy
    from decentmem.llm_client import EndpointConfig, OllamaClient, RemoteEmbedder

    ll = cfg.llm
    client = OllamaClient(EndpointConfig.from_env(
        base_url=ll.base_url, model_name=ll.model_name, timeout=ll.timeout,
        max_retries=ll.max_retries, backoff_ms=ll.backoff_ms, max_in_flight=ll.max_in_flight,
        embed_dimension=cfg.retrieval.dimension if ll.embeddings == "remote" else None,
    ))
    embedder = RemoteEmbedder(client, cfg.retrieval.dimension) if ll.embeddings == "remote" else None
    return client, LLMPolicy, embedder


def run_simulation(cfg: RunConfig, routing: str | float | None = None) -> SimulationResult:
    """Run the configured task stream once."""
    seed = cfg.seed
    env = SyntheticEnvironment(cfg.environment, seed)
    tasks = env.workload(np.random.default_rng([seed, 1]))
    rng = np.random.default_rng([seed, 2])
    access = PoolAccessLog()
    embedder = HashEmbedder(cfg.retrieval.dimension)
    client = None
    if cfg.judge.mode == "llm":
        client, policy_cls, remote = _llm_parts(cfg)
        judge = LLMJudge(client)
        embedder = remote or embedder
        make_policy = lambda i: policy_cls(client, role=f"agent {i}")  # noqa: E731
    else:
        j = cfg.judge
        judge = SimulatedJudge(seed, Rubric(j.correct, j.partial, j.incorrect), j.noise)
        scripted = ScriptedPolicy(env)
        make_policy = lambda i: scripted  # noqa: E731
    ro = cfg.router
    agents = []
    for i in range(cfg.topology.agents):
        aid = f"agent{i}"
        router = RouterState(w_e=ro.floor, increment=ro.increment, decay=ro.decay, floor=ro.floor)
        agents.append(AgentSpec(aid, f"agent {i}", make_policy(i),
                                DualPoolMemory(aid, router=router, access_log=access)))
    ocfg = orchestrator_config(cfg, routing)
    outcomes, x_after = [], []
    history: dict[str, list[float]] = {a.agent_id: [] for a in agents}
    try:
        for i, task in enumerate(tasks):
            outcomes.append(run_task(task, agents, judge, ocfg, embedder=embedder, rng=rng, task_index=i))
            x_after.append(sum(len(a.memory.x_pool) for a in agents))
            for a in agents:
                history[a.agent_id].append(selection_prob(a.memory.router))
    finally:
        if client is not None:
            client.close()
    tokens = client.usage.total if client is not None else 0
    return SimulationResult(cfg, outcomes, agents, access, history, x_after, tokens)


# -- output --------------------------------------------------------------------


def _csv_text(columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def task_rows(result: SimulationResult) -> list[list[str]]:
    rows = []
    hits = 0
    for i, o in enumerate(result.outcomes):
        hits += o.success
        modes = o.mode_counts()
        alphas = [s.alpha for st in o.stages for s in st.steps]
        scores = ";".join("" if ev is None else repr(ev.score) for ev in o.stage_evaluations)
        rows.append([_fmt(v) for v in (
            i, o.task.task_id, o.task.family_id, o.task.novel, o.success, o.final_answer, scores,
            modes["guided"], modes["exploratory"], modes["direct"], modes["failed"],
            float(np.mean(alphas)), hits / (i + 1),
        )])
    return rows


def trace_rows(result: SimulationResult) -> list[list[str]]:
    rows = []
    for i, o in enumerate(result.outcomes):
        for r in o.router_trace:
            rows.append([_fmt(v) for v in (i, r.task_id, r.stage, r.agent_id, r.choice, r.pool_used,
                                           r.delta, r.w_e_before, r.w_e_after)])
    return rows


def accuracy_curve(successes: np.ndarray, points: int = 20) -> list[list[float]]:
    """(tasks seen, cumulative accuracy) at evenly spaced checkpoints."""
    n = len(successes)
    if n == 0:
        return []
    marks = sorted({int(round(x)) for x in np.linspace(1, n, min(points, n))})
    cum = np.cumsum(successes)
    return [[m, float(cum[m - 1] / m)] for m in marks]


def summary(result: SimulationResult) -> dict:
    first, last = result.quarter_rates()
    s = result.successes
    return {
        "tasks": len(result.outcomes),
        "success_rate": result.success_rate(),
        "first_quarter_success": first,
        "last_quarter_success": last,
        "repeat_success": float(np.mean([o.success for o in result.outcomes if not o.task.novel] or [0.0])),
        "novel_success": float(np.mean([o.success for o in result.outcomes if o.task.novel] or [0.0])),
        "accuracy_curve": accuracy_curve(s),
        "router": {
            a.agent_id: {
                "w_e": a.memory.router.w_e,
                "alpha": selection_prob(a.memory.router),
                "alpha_history": result.alpha_history[a.agent_id],
            }
            for a in result.agents
        },
        "pools": {a.agent_id: {"e_pool": len(a.memory.e_pool), "x_pool": len(a.memory.x_pool)}
                  for a in result.agents},
        "router_updates": sum(1 for o in result.outcomes for r in o.router_trace if not r.skipped),
        "skipped_updates": sum(1 for o in result.outcomes for r in o.router_trace if r.skipped),
        "cross_agent_reads": result.access_log.cross_agent_reads(),
        "tokens": result.tokens,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_manifest(out: Path, cfg: RunConfig, command: str, files: list[str], extra: dict | None = None) -> Path:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": 1,
        "csv_schema": CSV_SCHEMA_VERSION,
        "command": command,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": {name: _sha256(out / name) for name in files},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def write_run(result: SimulationResult, out: str | os.PathLike) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "tasks.csv", _csv_text(TASK_COLUMNS, task_rows(result)))
    _write(out / "router_trace.csv", _csv_text(TRACE_COLUMNS, trace_rows(result)))
    _write(out / "summary.json", json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
    files = ["tasks.csv", "router_trace.csv", "summary.json"]
    (out / "stores").mkdir(exist_ok=True)
    for a in result.agents:
        save_store(a.memory, out / "stores" / f"{a.agent_id}.jsonl")
        files.append(f"stores/{a.agent_id}.jsonl")
    write_manifest(out, result.config, "sim run", files)
    return {name: out / name for name in files + ["manifest.json"]}


def resolve_out(cfg_out: str, flag: str | None) -> str:
    """``--out`` beats the environment variable, which beats the config."""
    return flag or os.environ.get(ENV_OUT) or cfg_out


# -- multi-seed studies ----------------------------------------------------------


def mode_label(mode: str | float) -> str:
    return "online" if mode == "online" else f"fixed({float(mode):g})"


def _one(args) -> tuple[float, float, float]:
    cfg, mode = args
    res = run_simulation(cfg, routing=mode)
    first, last = res.quarter_rates()
    return res.success_rate(), first, last


def _fan_out(jobs: list, workers: int) -> list:
    if workers <= 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, jobs))  # map keeps submission order


@dataclass
class AblationResult:
    modes: list[str | float]
    seeds: list[int]
    success: dict[str, np.ndarray]
    p_values: dict[str, float]
    alpha_level: float = 0.05

    def means(self) -> dict[str, float]:
        return {k: float(v.mean()) for k, v in self.success.items()}

    @property
    def baselines(self) -> list[str]:
        return [k for k in self.success if k != "online"]

    def online_not_worse(self) -> bool:
        m = self.means()
        return all(m["online"] >= m[b] for b in self.baselines)

    def significant_wins(self) -> int:
        return sum(self.p_values[b] < self.alpha_level for b in self.baselines)

    @property
    def passed(self) -> bool:
        return self.online_not_worse() and self.significant_wins() >= min(2, len(self.baselines))


def run_ablation(cfg: RunConfig, seeds: list[int] | None = None, modes=None, workers: int = 1) -> AblationResult:
    """Online routing against fixed-probability baselines on paired seeds."""
    seeds = list(range(cfg.seed, cfg.seed + cfg.study.seeds)) if seeds is None else list(seeds)
    modes = list(cfg.study.modes if modes is None else modes)
    if "online" not in modes:
        raise ValueError("ablation needs the online mode")
    jobs = [(replace(cfg, seed=s), m) for m in modes for s in seeds]
    results = _fan_out(jobs, workers)
    success: dict[str, np.ndarray] = {}
    for i, m in enumerate(modes):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        success[mode_label(m)] = np.array([r[0] for r in chunk])
    p = {}
    for label, values in success.items():
        if label == "online":
            continue
        diff = success["online"] - values
        p[label] = 1.0 if np.all(diff == 0) else float(stats.ttest_rel(success["online"], values,
                                                                        alternative="greater").pvalue)
    return AblationResult(modes, seeds, success, p, cfg.study.alpha_level)


@dataclass
class EvolutionResult:
    seeds: list[int]
    first: np.ndarray
    last: np.ndarray
    p_value: float
    alpha_level: float = 0.05

    @property
    def passed(self) -> bool:
        return float(self.last.mean()) > float(self.first.mean()) and self.p_value < self.alpha_level


def run_self_evolution(cfg: RunConfig, seeds: list[int] | None = None, workers: int = 1) -> EvolutionResult:
    """First-quarter against last-quarter success, paired by seed."""
    seeds = list(range(cfg.seed, cfg.seed + cfg.study.seeds)) if seeds is None else list(seeds)
    results = _fan_out([(replace(cfg, seed=s), None) for s in seeds], workers)
    first = np.array([r[1] for r in results])
    last = np.array([r[2] for r in results])
    p = float(stats.ttest_rel(last, first, alternative="greater").pvalue)
    return EvolutionResult(seeds, first, last, p, cfg.study.alpha_level)


def write_ablation(res: AblationResult, cfg: RunConfig, out: str | os.PathLike) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[label, s, repr(float(v))] for label, values in res.success.items()
            for s, v in zip(res.seeds, values)]
    _write(out / "ablation.csv", _csv_text(["mode", "seed", "success_rate"], rows))
    verdict = {
        "means": res.means(),
        "p_values": res.p_values,
        "alpha_level": res.alpha_level,
        "online_not_worse": res.online_not_worse(),
        "significant_wins": res.significant_wins(),
        "passed": res.passed,
    }
    _write(out / "ablation.json", json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    return write_manifest(out, cfg, "sim ablation", ["ablation.csv", "ablation.json"])
