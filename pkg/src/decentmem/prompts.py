"""Prompt templates for the LLM-backed policy and judge.

Placeholders use ``str.format`` syntax. The judge's reply schema keys are
fixed because :func:`decentmem.judge.parse_evaluation` reads them.
"""


def stage_name(index: int, n_stages: int = 3) -> str:
    """decompose / process / refine, by position in the stage sequence."""
    if index == 1:
        return "decompose"
    return "refine" if index == n_stages else "process"


POLICY_SYSTEM = "You are {role}, one agent in a team that solves a task over several stages."

POLICY_DIRECT = """Task:
{task}

Stage {stage} ({stage_name}).
Outputs from earlier stages:
{neighbor_info}

Work out the task and finish with a single line of the form
ANSWER: <your answer>"""

POLICY_WITH_MEMORY = """Task:
{task}

Stage {stage} ({stage_name}).
Outputs from earlier stages:
{neighbor_info}

Notes from your own past work on similar tasks (most similar first):
{memory_packet}

Treat the notes as hints, not as answers to copy; check they fit this task.
Finish with a single line of the form
ANSWER: <your answer>"""

JUDGE_SYSTEM = "You grade one stage of a multi-agent solution. Reply with a JSON object only."

JUDGE_STAGE = """Task:
{task}

Stage {stage} of {n_stages}: {stage_name}
Agents active: {agents}
Action types: {action_types}

Stage outputs:
{outputs}

Aggregated stage answer: {aggregate}

Criteria for this stage:
{criteria}

Reply with exactly this JSON shape:
{{"score": <number 0-10>, "stage_quality": "<poor|fair|good|excellent>",
 "reasoning": "...", "solution_quality": "...", "llm_answer_quality": "...",
 "strengths": "...", "weaknesses": "...", "agent_coordination": "..."}}"""

JUDGE_CRITERIA = {
    "decompose": [
        "Understanding: is the task read correctly?",
        "Decomposition: if split, are the parts sensible and complete?",
        "Clarity: are the outputs clear?",
        "Direct answers: are any direct answers accurate?",
        "Foundation: does this stage set up the next ones well?",
    ],
    "process": [
        "Processing: how well were the intermediate parts solved?",
        "Use of earlier stages: did agents build on the previous stage?",
        "Allocation: did the right agents get the right parts?",
        "Coherence: do the outputs fit together?",
        "Consistency: do direct answers agree with the combined result?",
    ],
    "refine": [
        "Refinement: how much did this stage improve the solution?",
        "Integration: does the result pull all earlier work together?",
        "Completeness: is the final answer complete?",
        "Standard: does the result meet a high bar?",
        "Direct answers: are they accurate and complete?",
    ],
}
