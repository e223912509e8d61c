from __future__ import annotations

import numpy as np
import pytest

from decentmem import kernels
from decentmem.embedding import hash_embed
from decentmem.memory import MemoryPiece, TrajectoryRecord

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit(rng: np.random.Generator, dim: int = 16) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def make_piece(pid: str, embedding=None, text: str | None = None, created_at: int = 0,
               quality: float = 5.0, payload: str = "x", **kw) -> MemoryPiece:
    if embedding is None:
        embedding = hash_embed(text or pid)
    return MemoryPiece(
        id=pid,
        context_prototype=text or pid,
        context_embedding=embedding,
        trajectory=TrajectoryRecord("direct_answer", payload),
        quality=quality,
        created_at=created_at,
        **kw,
    )


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
