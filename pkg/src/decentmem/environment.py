"""Synthetic task environment and its scripted policy.

Tasks come in families. A family's prompt is built from its template
group's vocabulary, a few family-specific words and one per-instance word;
families in the same group (siblings) look alike under the hash embedding
but have different hidden answers. That makes careless reuse costly, which
is what gives the exploit/explore choice something to learn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from decentmem.agents import (
    ActionOutput,
    LocalContext,
    TaskSpec,
    action_type_for,
    compatible_allocation,
    fresh_allocation,
)
from decentmem.memory import ActionType, TrajectoryRecord

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"
SCHEDULES = ("shuffled", "uniform", "blocked")


@dataclass(frozen=True)
class EnvConfig:
    families: int = 10
    group_size: int = 2
    repeats: int = 20
    novel_tasks: int = 0
    schedule: str = "shuffled"
    p_guided: float = 0.9
    p_direct: float = 0.4
    p_explore: float = 0.55
    min_quality: float = 5.0
    group_words: int = 10
    family_words: int = 4

    def __post_init__(self) -> None:
        if self.families < 1:
            raise ValueError("families must be >= 1")
        if self.group_size < 1 or self.repeats < 1 or self.novel_tasks < 0:
            raise ValueError("group_size and repeats must be >= 1, novel_tasks >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        for name in ("p_guided", "p_direct", "p_explore"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if not 0.0 <= self.min_quality <= 10.0:
            raise ValueError("min_quality must lie in [0, 10]")
        if self.group_words < 1 or self.family_words < 1:
            raise ValueError("word counts must be >= 1")

    @property
    def n_tasks(self) -> int:
        return self.families * self.repeats + self.novel_tasks


@dataclass(frozen=True)
class Family:
    family_id: int
    group: int
    words: tuple[str, ...]
    answer: str
    novel: bool = False


@dataclass
class SyntheticEnvironment:
    config: EnvConfig
    seed: int = 0
    families: list[Family] = field(init=False)
    group_vocab: list[tuple[str, ...]] = field(init=False)

    def __post_init__(self) -> None:
        cfg = self.config
        rng = np.random.default_rng([self.seed, 0xE4])
        used: set[str] = set()
        n_groups = -(-cfg.families // cfg.group_size)
        self.group_vocab = [self._words(rng, cfg.group_words, used) for _ in range(n_groups)]
        self.families = []
        for f in range(cfg.families + cfg.novel_tasks):
            novel = f >= cfg.families
            group = int(rng.integers(n_groups)) if novel else f // cfg.group_size
            self.families.append(Family(
                family_id=f,
                group=group,
                words=self._words(rng, cfg.family_words, used),
                answer=f"ans-{f}-{self._words(rng, 1, used)[0]}",
                novel=novel,
            ))

    @staticmethod
    def _words(rng: np.random.Generator, n: int, used: set[str]) -> tuple[str, ...]:
        out = []
        while len(out) < n:
            w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                        for _ in range(3))
            if w not in used:
                used.add(w)
                out.append(w)
        return tuple(out)

    def render(self, family: Family, instance: str) -> str:
        return " ".join((*self.group_vocab[family.group], *family.words, instance))

    def task(self, index: int, family_id: int, rng: np.random.Generator) -> TaskSpec:
        family = self.families[family_id]
        instance = f"n{int(rng.integers(10**6)):06d}"
        return TaskSpec(task_id=f"t{index:05d}", family_id=family_id,
                        prompt=self.render(family, instance), hidden_answer=family.answer,
                        novel=family.novel)

    def schedule(self, rng: np.random.Generator) -> list[int]:
        cfg = self.config
        if cfg.schedule == "uniform":
            order = [int(f) for f in rng.integers(cfg.families, size=cfg.families * cfg.repeats)]
        elif cfg.schedule == "blocked":
            order = [f for _ in range(cfg.repeats) for f in range(cfg.families)]
        else:
            order = [f for f in range(cfg.families) for _ in range(cfg.repeats)]
            rng.shuffle(order)
        order += list(range(cfg.families, cfg.families + cfg.novel_tasks))
        if cfg.novel_tasks and cfg.schedule != "blocked":
            rng.shuffle(order)
        return order

    def workload(self, rng: np.random.Generator) -> list[TaskSpec]:
        """The full task stream, deterministic given ``rng``'s state."""
        return [self.task(i, f, rng) for i, f in enumerate(self.schedule(rng))]

    def attempt(self, task: TaskSpec, p_success: float, rng: np.random.Generator) -> str:
        if rng.random() < p_success:
            return task.hidden_answer
        return f"wrong-{int(rng.integers(1 << 40)):011x}"


def generate_task(env: SyntheticEnvironment, rng: np.random.Generator, family_id: int | None = None,
                  index: int = 0) -> TaskSpec:
    """One task from a uniformly drawn (or given) family."""
    if family_id is None:
        family_id = int(rng.integers(env.config.families))
    return env.task(index, family_id, rng)


class ScriptedPolicy:
    """Rule-based stand-in for an LLM agent.

    Walks the retrieved pieces best-first and copies the answer of the first
    one rated at least ``min_quality``. Copying succeeds with ``p_guided``
    when that answer is right for this task; a misapplied memory is no better
    than a direct attempt. Exploring succeeds with ``p_explore``; answering
    without memory with ``p_direct``.
    """

    def __init__(self, env: SyntheticEnvironment) -> None:
        self.env = env

    def act(self, ctx: LocalContext, rng: np.random.Generator) -> ActionOutput:
        cfg = self.env.config
        kind = action_type_for(ctx.stage_index, ctx.n_stages, len(ctx.peers))
        used = None
        if ctx.exploratory is not None:
            mode, p, note = "exploratory", cfg.p_explore, "explored a fresh approach"
        else:
            used = next(((piece, sim) for piece, sim in ctx.retrieved if piece.quality >= cfg.min_quality), None)
            if used is None:
                mode, p, note = "direct", cfg.p_direct, "no usable memory; answered directly"
            else:
                piece, sim = used
                right = piece.trajectory.payload == ctx.task.hidden_answer
                mode, p = "guided", cfg.p_guided if right else cfg.p_direct
                note = f"reused {piece.id} (sim {sim:.2f}, quality {piece.quality:.1f})"
        answer = self.env.attempt(ctx.task, p, rng)
        allocation: list[tuple[str, str]] = []
        reused = False
        if kind is ActionType.DECOMPOSE:
            prior = compatible_allocation(used[0], ctx.peers) if used else None
            allocation = prior or fresh_allocation(ctx.query, ctx.peers)
            reused = prior is not None
        return ActionOutput(
            trajectory=TrajectoryRecord(kind, answer, allocation, ctx.stage_index),
            answer=answer,
            commentary=note,
            mode=mode,
            used_piece=used[0].id if used else None,
            reused_allocation=reused,
        )
