"""Agent-side types: tasks, local context, action outputs and policies."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol

import numpy as np

from decentmem import prompts
from decentmem.memory import ActionType, MemoryPiece, Origin, TrajectoryRecord

if TYPE_CHECKING:
    from decentmem.llm_client import ChatClient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family_id: int
    prompt: str
    hidden_answer: str = ""
    novel: bool = False


@dataclass
class LocalContext:
    """What one agent sees when acting at one stage.

    ``retrieved`` holds E-pool hits (best first). ``exploratory`` holds the
    freshly minted piece when the agent explores. At most one of the two is
    populated.
    """

    task: TaskSpec
    agent_id: str
    stage_index: int
    n_stages: int
    query: str
    neighbor_info: list[str] = field(default_factory=list)
    retrieved: list[tuple[MemoryPiece, float]] = field(default_factory=list)
    exploratory: MemoryPiece | None = None
    peers: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.retrieved and self.exploratory is not None:
            raise ValueError("context holds both retrieved and exploratory pieces")
        if self.exploratory is not None and self.exploratory.origin is not Origin.EXPLORATORY:
            raise ValueError("exploratory slot holds a consolidated piece")

    @property
    def stage_name(self) -> str:
        return prompts.stage_name(self.stage_index, self.n_stages)


@dataclass
class ActionOutput:
    trajectory: TrajectoryRecord
    answer: str | None
    commentary: str = ""
    mode: str = "direct"
    used_piece: str | None = None
    reused_allocation: bool = False
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.answer is None

    @property
    def memory_guided(self) -> bool:
        return self.mode == "guided"

    @classmethod
    def failure(cls, ctx: LocalContext, error: str) -> "ActionOutput":
        return cls(
            trajectory=TrajectoryRecord(ActionType.FORWARD, "", stage_index=ctx.stage_index),
            answer=None,
            commentary=f"action failed: {error}",
            mode="failed",
            error=error,
        )


class Policy(Protocol):
    def act(self, ctx: LocalContext, rng: np.random.Generator) -> ActionOutput: ...


def act(policy: Policy, ctx: LocalContext, rng: np.random.Generator) -> ActionOutput:
    return policy.act(ctx, rng)


def action_type_for(stage_index: int, n_stages: int, n_peers: int) -> ActionType:
    if stage_index == n_stages:
        return ActionType.DIRECT_ANSWER
    if stage_index == 1 and n_peers > 1:
        return ActionType.DECOMPOSE
    return ActionType.FORWARD


def compatible_allocation(piece: MemoryPiece, peers: list[str]) -> list[tuple[str, str]] | None:
    """A stored decomposition is reusable when every assignee is active now."""
    t = piece.trajectory
    if t.action_type is not ActionType.DECOMPOSE or not t.allocation:
        return None
    if all(agent in peers for _, agent in t.allocation):
        return list(t.allocation)
    return None


def fresh_allocation(query: str, peers: list[str]) -> list[tuple[str, str]]:
    return [(f"{query} / part {i + 1}", agent) for i, agent in enumerate(peers)]


# -- LLM policy --------------------------------------------------------------

_ANSWER_RE = re.compile(r"^\s*ANSWER\s*:\s*(.+?)\s*$", re.MULTILINE | re.IGNORECASE)


def extract_answer(text: str) -> str | None:
    matches = _ANSWER_RE.findall(text)
    return matches[-1] if matches else None


def memory_packet(retrieved: list[tuple[MemoryPiece, float]]) -> str:
    lines = []
    for piece, sim in retrieved:
        line = f"[{piece.id} | sim={sim:.2f} | quality={piece.quality:.1f}] {piece.trajectory.payload}"
        if piece.commentary:
            line += f" ({piece.commentary})"
        lines.append(line)
    return "\n".join(lines)


class LLMPolicy:
    """Policy that asks a chat model for the stage output."""

    def __init__(self, client: "ChatClient", role: str = "a problem solver") -> None:
        self.client = client
        self.role = role

    def act(self, ctx: LocalContext, rng: np.random.Generator) -> ActionOutput:
        from decentmem.llm_client import LLMClientError

        fields = dict(task=ctx.task.prompt, stage=ctx.stage_index, stage_name=ctx.stage_name,
                      neighbor_info="\n".join(ctx.neighbor_info) or "(none)")
        if ctx.retrieved:
            user = prompts.POLICY_WITH_MEMORY.format(memory_packet=memory_packet(ctx.retrieved), **fields)
        else:
            user = prompts.POLICY_DIRECT.format(**fields)
        try:
            exchange = self.client.chat(prompts.POLICY_SYSTEM.format(role=self.role), user)
        except LLMClientError as exc:
            log.warning("agent %s stage %d: %s", ctx.agent_id, ctx.stage_index, exc)
            return ActionOutput.failure(ctx, str(exc))
        answer = extract_answer(exchange.response)
        if answer is None:
            return ActionOutput.failure(ctx, "no ANSWER line in model output")
        kind = action_type_for(ctx.stage_index, ctx.n_stages, len(ctx.peers))
        allocation: list[tuple[str, str]] = []
        reused = False
        if kind is ActionType.DECOMPOSE:
            prior = next((a for p, _ in ctx.retrieved if (a := compatible_allocation(p, ctx.peers))), None)
            allocation = prior or fresh_allocation(ctx.query, ctx.peers)
            reused = prior is not None
        mode = "guided" if ctx.retrieved else ("exploratory" if ctx.exploratory else "direct")
        return ActionOutput(
            trajectory=TrajectoryRecord(kind, answer, allocation, ctx.stage_index),
            answer=answer,
            commentary=exchange.response[-500:],
            mode=mode,
            used_piece=ctx.retrieved[0][0].id if ctx.retrieved else None,
            reused_allocation=reused,
        )
