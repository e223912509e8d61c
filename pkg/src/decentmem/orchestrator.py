"""Stage-structured execution loop over agents with private dual-pool memory.

For each task: every stage's active agents route, retrieve or explore, and
act; stage outputs are aggregated. Once all stages ran, the judge scores
each stage, freshly minted pieces get their quality, the routers are updated
from consecutive stage scores in stage order, and every agent consolidates.

An agent's memory is only ever touched inside ``acting_as(agent_id)``, so
the pool access log can prove no agent reads another's pools.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from decentmem import prompts
from decentmem.agents import ActionOutput, LocalContext, Policy, TaskSpec
from decentmem.embedding import Embedder
from decentmem.judge import Evaluator, JudgeParseError, StageEvaluation, StageTranscript, delta
from decentmem.llm_client import LLMClientError
from decentmem.memory import (
    DEFAULT_K,
    DEFAULT_TAU,
    ActionType,
    DualPoolMemory,
    MemoryPiece,
    TrajectoryRecord,
    acting_as,
)
from decentmem.router import PoolChoice, choose, choose_with_prob, selection_prob, update

log = logging.getLogger(__name__)

AGGREGATIONS = ("majority", "integrator")


@dataclass
class AgentSpec:
    agent_id: str
    role: str
    policy: Policy
    memory: DualPoolMemory

    def __post_init__(self) -> None:
        if self.memory.agent_id != self.agent_id:
            raise ValueError(f"agent {self.agent_id} given memory of {self.memory.agent_id}")


@dataclass(frozen=True)
class OrchestratorConfig:
    """``routing`` is ``"online"`` or a fixed exploitation probability in [0, 1]."""

    n_stages: int = 3
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    routing: str | float = "online"
    aggregation: str = "majority"
    round_robin: bool = True
    dissent_quality: float = 2.0
    schedule: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")
        if self.routing != "online":
            if isinstance(self.routing, str) or not 0.0 <= float(self.routing) <= 1.0:
                raise ValueError(f"routing must be 'online' or a probability, got {self.routing!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.schedule is not None and len(self.schedule) != self.n_stages:
            raise ValueError("schedule needs one active set per stage")

    @property
    def online(self) -> bool:
        return self.routing == "online"


@dataclass
class AgentStep:
    """One agent's turn at one stage."""

    agent_id: str
    choice: PoolChoice
    pool_used: PoolChoice
    alpha: float
    output: ActionOutput
    minted: MemoryPiece | None = None


@dataclass
class StageAggregate:
    stage_index: int
    steps: list[AgentStep]
    answer: str | None
    support: int

    @property
    def failed(self) -> bool:
        return self.answer is None

    @property
    def agent_ids(self) -> list[str]:
        return [s.agent_id for s in self.steps]

    def transcript(self, task: TaskSpec, n_stages: int) -> StageTranscript:
        return StageTranscript(
            task_id=task.task_id,
            stage_index=self.stage_index,
            n_stages=n_stages,
            agent_ids=self.agent_ids,
            action_types=[s.output.trajectory.action_type.value for s in self.steps],
            answers=[s.output.answer for s in self.steps],
            aggregate_answer=self.answer,
            notes=[s.output.commentary for s in self.steps],
        )


@dataclass(frozen=True)
class RouterTraceRow:
    task_id: str
    stage: int
    agent_id: str
    choice: str
    pool_used: str
    delta: int | None
    w_e_before: float
    w_e_after: float

    @property
    def skipped(self) -> bool:
        return self.delta is None


@dataclass
class TaskOutcome:
    task: TaskSpec
    final_answer: str | None
    stages: list[StageAggregate]
    stage_evaluations: list[StageEvaluation | None]
    router_trace: list[RouterTraceRow]
    consolidated: dict[str, int] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.final_answer is not None and self.final_answer == self.task.hidden_answer

    def mode_counts(self) -> Counter:
        return Counter(s.output.mode for stage in self.stages for s in stage.steps)


# -- aggregation ---------------------------------------------------------------


def majority(answers: Sequence[str | None]) -> tuple[str | None, int]:
    """Most frequent non-failed answer; ties go to the answer seen first."""
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None, 0
    best = max(counts.values())
    winner = next(a for a in answers if a is not None and counts[a] == best)
    return winner, best


def aggregate(answers: Sequence[str | None], rule: str = "majority") -> tuple[str | None, int]:
    if rule == "integrator":
        # first active agent integrates; it defers to the vote only if it failed
        if answers and answers[0] is not None:
            return answers[0], sum(a == answers[0] for a in answers)
        return majority(answers)
    return majority(answers)


# -- stage execution -----------------------------------------------------------


def _route(memory: DualPoolMemory, config: OrchestratorConfig, rng: np.random.Generator) -> tuple[PoolChoice, float]:
    if config.online:
        return choose(memory.router, rng), selection_prob(memory.router)
    alpha = float(config.routing)
    return choose_with_prob(alpha, rng), alpha


def active_agents(agents: Sequence[AgentSpec], stage_index: int, config: OrchestratorConfig,
                  task_index: int) -> list[AgentSpec]:
    """Active set for a stage, rotated so dispatch is round-robin across tasks."""
    if config.schedule is not None:
        chosen = [agents[i] for i in config.schedule[stage_index - 1]]
    else:
        chosen = list(agents)
    if config.round_robin and chosen:
        shift = task_index % len(chosen)
        chosen = chosen[shift:] + chosen[:shift]
    return chosen


def run_stage(stage_index: int, active: Sequence[AgentSpec], prior_outputs: list[str], *,
              task: TaskSpec, config: OrchestratorConfig, embedder: Embedder,
              rng: np.random.Generator, task_index: int = 0) -> StageAggregate:
    if stage_index < 1:
        raise ValueError("stage_index must be >= 1")
    if not active:
        raise ValueError("a stage needs at least one active agent")
    name = prompts.stage_name(stage_index, config.n_stages)
    query = f"{task.prompt} {name}"
    q_emb = embedder.embed(query)
    peers = [a.agent_id for a in active]
    steps = []
    for agent in active:
        memory = agent.memory
        with acting_as(agent.agent_id):
            choice, alpha = _route(memory, config, rng)
            retrieved = memory.retrieve(q_emb, config.k, config.tau) if choice is PoolChoice.EXPLOIT else []
            pool_used = PoolChoice.EXPLOIT if retrieved else PoolChoice.EXPLORE
            minted = None
            if pool_used is PoolChoice.EXPLORE:
                minted = MemoryPiece(
                    id=f"{agent.agent_id}-{task.task_id}-s{stage_index}",
                    context_prototype=query,
                    context_embedding=q_emb,
                    trajectory=TrajectoryRecord(ActionType.FORWARD, "", stage_index=stage_index),
                    created_at=task_index,
                )
            ctx = LocalContext(task=task, agent_id=agent.agent_id, stage_index=stage_index,
                               n_stages=config.n_stages, query=query, neighbor_info=list(prior_outputs),
                               retrieved=retrieved, exploratory=minted, peers=peers)
            output = agent.policy.act(ctx, rng)
            if minted is not None:
                if output.failed:
                    minted = None
                else:
                    minted.trajectory = output.trajectory
                    minted.commentary = output.commentary
                    memory.add_exploratory(minted)
        steps.append(AgentStep(agent.agent_id, choice, pool_used, alpha, output, minted))
    answer, support = aggregate([s.output.answer for s in steps], config.aggregation)
    return StageAggregate(stage_index, steps, answer, support)


def _evaluate(judge: Evaluator, stage: StageAggregate, task: TaskSpec, n_stages: int) -> StageEvaluation | None:
    try:
        return judge.evaluate(stage.transcript(task, n_stages), task)
    except (JudgeParseError, LLMClientError) as exc:
        log.warning("task %s stage %d left unevaluated: %s", task.task_id, stage.stage_index, exc)
        return None


def _piece_quality(step: AgentStep, stage: StageAggregate, ev: StageEvaluation | None,
                   config: OrchestratorConfig) -> float:
    """Stage score for pieces that backed the stage's answer, a low fixed score otherwise."""
    if ev is None:
        return config.dissent_quality
    backed = step.output.answer == stage.answer and stage.support >= min(2, len(stage.steps))
    return ev.score if backed else config.dissent_quality


def run_task(task: TaskSpec, agents: Sequence[AgentSpec], judge: Evaluator,
             config: OrchestratorConfig, *, embedder: Embedder, rng: np.random.Generator,
             task_index: int = 0,
             on_stage: Callable[[StageAggregate], None] | None = None) -> TaskOutcome:
    by_id = {a.agent_id: a for a in agents}
    if len(by_id) != len(agents):
        raise ValueError("agent ids must be unique")
    stages: list[StageAggregate] = []
    prior: list[str] = []
    for t in range(1, config.n_stages + 1):
        active = active_agents(agents, t, config, task_index)
        stage = run_stage(t, active, prior, task=task, config=config, embedder=embedder,
                          rng=rng, task_index=task_index)
        stages.append(stage)
        if on_stage is not None:
            on_stage(stage)
        prior = [f"stage {t}: {stage.answer}"] if stage.answer is not None else []

    evaluations = [_evaluate(judge, s, task, config.n_stages) for s in stages]

    for stage, ev in zip(stages, evaluations):
        for step in stage.steps:
            if step.minted is not None:
                with acting_as(step.agent_id):
                    step.minted.rate(_piece_quality(step, stage, ev, config))

    trace: list[RouterTraceRow] = []
    for t in range(2, config.n_stages + 1):
        prev, curr = evaluations[t - 2], evaluations[t - 1]
        d = None if prev is None or curr is None else delta(prev.score, curr.score)
        for step in stages[t - 1].steps:
            memory = by_id[step.agent_id].memory
            with acting_as(step.agent_id):
                before = memory.router.w_e
                if d is not None and config.online:
                    memory.router = update(memory.router, step.pool_used, d)
                trace.append(RouterTraceRow(task.task_id, t, step.agent_id, step.choice.value,
                                            step.pool_used.value, d, before, memory.router.w_e))

    moved = {}
    for agent in agents:
        with acting_as(agent.agent_id):
            moved[agent.agent_id] = agent.memory.consolidate()
    return TaskOutcome(task, stages[-1].answer, stages, evaluations, trace, moved)
