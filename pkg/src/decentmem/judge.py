"""Stage-wise evaluation.

A judge scores every stage of a finished task on a 0-10 scale. Consecutive
scores give the improvement indicator that drives the router. Two judges
are provided: :class:`SimulatedJudge`, a seeded rubric over the synthetic
environment's hidden answers, and :class:`LLMJudge`, which prompts a served
model and parses its JSON reply.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Protocol

import numpy as np

from decentmem import prompts

if TYPE_CHECKING:
    from decentmem.environment import TaskSpec
    from decentmem.llm_client import ChatClient

log = logging.getLogger(__name__)

STAGE_QUALITIES = ("poor", "fair", "good", "excellent")
_TEXT_FIELDS = ("reasoning", "solution_quality", "llm_answer_quality", "strengths",
                "weaknesses", "agent_coordination")


class JudgeParseError(ValueError):
    """Judge output had no usable evaluation object."""


@dataclass(frozen=True)
class StageEvaluation:
    score: float
    stage_quality: str = "fair"
    reasoning: str = ""
    strengths: str = ""
    weaknesses: str = ""
    agent_coordination: str = ""
    solution_quality: str = ""
    llm_answer_quality: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 10.0:
            raise ValueError(f"score {self.score} outside [0, 10]")
        if self.stage_quality not in STAGE_QUALITIES:
            raise ValueError(f"unknown stage_quality {self.stage_quality!r}")


@dataclass
class StageTranscript:
    """What the judge sees of one stage."""

    task_id: str
    stage_index: int
    n_stages: int
    agent_ids: list[str]
    action_types: list[str]
    answers: list[str | None]
    aggregate_answer: str | None
    notes: list[str] = field(default_factory=list)

    @property
    def stage_name(self) -> str:
        return prompts.stage_name(self.stage_index, self.n_stages)


class Evaluator(Protocol):
    def evaluate(self, transcript: StageTranscript, task: "TaskSpec") -> StageEvaluation: ...


def delta(q_prev: float, q_curr: float) -> int:
    """1 iff the stage score strictly improved."""
    return int(q_curr > q_prev)


def quality_label(score: float) -> str:
    if score >= 8.5:
        return "excellent"
    if score >= 6.5:
        return "good"
    if score >= 4.0:
        return "fair"
    return "poor"


def render_evaluation(ev: StageEvaluation) -> str:
    return json.dumps(asdict(ev), indent=2)


def _candidate_objects(text: str):
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            yield obj
        pos = text.find("{", pos + 1)


def parse_evaluation(text: str) -> StageEvaluation:
    """Extract the first JSON object carrying a ``score`` from judge output.

    Surrounding prose is ignored. Out-of-range scores are clamped to [0, 10]
    with a warning.
    """
    if "{" not in text:
        raise JudgeParseError("judge output contains no JSON object")
    for obj in _candidate_objects(text):
        if "score" not in obj:
            continue
        try:
            score = float(obj["score"])
        except (TypeError, ValueError):
            raise JudgeParseError(f"score is not a number: {obj['score']!r}") from None
        if not np.isfinite(score):
            raise JudgeParseError(f"score is not finite: {score}")
        if not 0.0 <= score <= 10.0:
            log.warning("judge score %s outside [0, 10]; clamping", score)
            score = min(10.0, max(0.0, score))
        label = str(obj.get("stage_quality", "")).strip().lower()
        if label not in STAGE_QUALITIES:
            label = quality_label(score)
        texts = {k: str(obj.get(k, "")) for k in _TEXT_FIELDS}
        return StageEvaluation(score=score, stage_quality=label, **texts)
    raise JudgeParseError("no JSON object with a 'score' field")


# -- simulated judge ---------------------------------------------------------


@dataclass(frozen=True)
class Rubric:
    correct: float = 9.0
    partial: float = 5.5
    incorrect: float = 2.0


def _stable_key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def simulated_judge(transcript: StageTranscript, ground_truth: str, seed: int,
                    rubric: Rubric = Rubric(), noise: float = 0.5) -> StageEvaluation:
    """Rubric score of the stage's answers plus seeded uniform noise.

    All active agents right scores ``rubric.correct``, none right scores
    ``rubric.incorrect``, anything in between ``rubric.partial``. The noise
    stream is keyed by (seed, task id, stage index), so the result is a pure
    function of the inputs.
    """
    answers = transcript.answers
    n_right = sum(a == ground_truth for a in answers)
    if answers and n_right == len(answers):
        base, verdict = rubric.correct, "all agents reached the right answer"
    elif n_right == 0:
        base, verdict = rubric.incorrect, "no agent reached the right answer"
    else:
        base, verdict = rubric.partial, f"{n_right} of {len(answers)} agents right"
    jitter = 0.0
    if noise > 0:
        rng = np.random.default_rng([seed, _stable_key(transcript.task_id), transcript.stage_index])
        jitter = rng.uniform(-noise, noise)
    score = min(10.0, max(0.0, base + jitter))
    agreeing = sum(a == transcript.aggregate_answer for a in answers if a is not None)
    return StageEvaluation(
        score=score,
        stage_quality=quality_label(score),
        reasoning=verdict,
        strengths="aggregate answer correct" if transcript.aggregate_answer == ground_truth else "",
        weaknesses="" if n_right == len(answers) else "some agents answered wrongly",
        agent_coordination=f"{agreeing} of {len(answers)} agents agree with the aggregate",
    )


class SimulatedJudge:
    def __init__(self, seed: int = 0, rubric: Rubric = Rubric(), noise: float = 0.5) -> None:
        self.seed = seed
        self.rubric = rubric
        self.noise = noise

    def evaluate(self, transcript: StageTranscript, task: "TaskSpec") -> StageEvaluation:
        return simulated_judge(transcript, task.hidden_answer, self.seed, self.rubric, self.noise)


# -- LLM judge ---------------------------------------------------------------


def judge_prompt(transcript: StageTranscript, task_prompt: str) -> str:
    criteria = prompts.JUDGE_CRITERIA.get(transcript.stage_name, prompts.JUDGE_CRITERIA["process"])
    outputs = "\n".join(
        f"- {agent}: {answer if answer is not None else '(failed)'}"
        for agent, answer in zip(transcript.agent_ids, transcript.answers)
    )
    return prompts.JUDGE_STAGE.format(
        task=task_prompt,
        stage=transcript.stage_index,
        n_stages=transcript.n_stages,
        stage_name=transcript.stage_name,
        agents=", ".join(transcript.agent_ids),
        action_types=", ".join(transcript.action_types),
        outputs=outputs or "(none)",
        aggregate=transcript.aggregate_answer or "(none)",
        criteria="\n".join(f"{i}. {c}" for i, c in enumerate(criteria, start=1)),
    )


class LLMJudge:
    """Scores a stage by prompting a chat model; raises :class:`JudgeParseError` on bad replies."""

    def __init__(self, client: "ChatClient") -> None:
        self.client = client

    def evaluate(self, transcript: StageTranscript, task: "TaskSpec") -> StageEvaluation:
        exchange = self.client.chat(prompts.JUDGE_SYSTEM, judge_prompt(transcript, task.prompt))
        return parse_evaluation(exchange.response)
