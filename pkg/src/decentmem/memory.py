"""Per-agent dual-pool memory.

Each agent owns a persistent, weighted E-pool (consolidated experience) and
an ephemeral X-pool (exploratory pieces minted during the current task). At
task end the X-pool is folded into the E-pool and emptied.

Every pool operation is reported to an optional :class:`PoolAccessLog`
together with the agent currently acting (see :func:`acting_as`), which is
how tests check that no agent ever reads another agent's pools.
"""

from __future__ import annotations

import contextvars
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from decentmem import kernels
from decentmem.embedding import DimensionMismatchError, is_unit
from decentmem.router import RouterState

DEFAULT_K = 3
DEFAULT_TAU = 0.6


class ActionType(str, Enum):
    DECOMPOSE = "decompose"
    DIRECT_ANSWER = "direct_answer"
    FORWARD = "forward"


class Origin(str, Enum):
    CONSOLIDATED = "consolidated"
    EXPLORATORY = "exploratory"


class DuplicatePieceError(ValueError):
    pass


@dataclass
class TrajectoryRecord:
    action_type: ActionType
    payload: str
    allocation: list[tuple[str, str]] = field(default_factory=list)
    stage_index: int = 1

    def __post_init__(self) -> None:
        self.action_type = ActionType(self.action_type)
        self.allocation = [(str(sub), str(agent)) for sub, agent in self.allocation]
        if self.allocation and self.action_type is not ActionType.DECOMPOSE:
            raise ValueError("allocation is only allowed on decompose actions")
        if self.stage_index < 1:
            raise ValueError("stage_index must be >= 1")


@dataclass(eq=False)
class MemoryPiece:
    """One stored experience: a context prototype plus what was done and how it went."""

    id: str
    context_prototype: str
    context_embedding: np.ndarray
    trajectory: TrajectoryRecord
    commentary: str = ""
    quality: float = 0.0
    created_at: int = 0
    origin: Origin = Origin.EXPLORATORY

    def __post_init__(self) -> None:
        self.context_embedding = np.asarray(self.context_embedding, dtype=np.float64)
        self.origin = Origin(self.origin)
        if not is_unit(self.context_embedding):
            raise ValueError(f"piece {self.id}: context embedding is not unit-norm")
        self.quality = _check_quality(self.quality)

    def rate(self, score: float) -> None:
        self.quality = _check_quality(score)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryPiece):
            return NotImplemented
        return (
            self.id == other.id
            and self.context_prototype == other.context_prototype
            and np.array_equal(self.context_embedding, other.context_embedding)
            and self.trajectory == other.trajectory
            and self.commentary == other.commentary
            and self.quality == other.quality
            and self.created_at == other.created_at
            and self.origin == other.origin
        )


def _check_quality(q: float) -> float:
    q = float(q)
    if not 0.0 <= q <= 10.0:
        raise ValueError(f"quality {q} outside [0, 10]")
    return q


# -- access instrumentation -------------------------------------------------

_acting_agent: contextvars.ContextVar[str | None] = contextvars.ContextVar(
    "decentmem_acting_agent", default=None
)


@contextmanager
def acting_as(agent_id: str) -> Iterator[None]:
    token = _acting_agent.set(agent_id)
    try:
        yield
    finally:
        _acting_agent.reset(token)


@dataclass
class PoolAccessLog:
    """Counts pool operations keyed by (actor, owner, operation)."""

    counts: Counter = field(default_factory=Counter)

    def record(self, owner: str, op: str) -> None:
        self.counts[(_acting_agent.get(), owner, op)] += 1

    def cross_agent_reads(self) -> int:
        return sum(
            n for (actor, owner, op), n in self.counts.items()
            if op in ("retrieve", "read") and actor != owner
        )

    def cross_agent_ops(self) -> int:
        return sum(n for (actor, owner, _), n in self.counts.items() if actor != owner)


# -- retrieval ---------------------------------------------------------------


def tie_ranks(pieces: list[MemoryPiece]) -> np.ndarray:
    """Rank of each piece under the (created_at, id) tie-break order."""
    order = sorted(range(len(pieces)), key=lambda i: (pieces[i].created_at, pieces[i].id))
    ranks = np.empty(len(pieces), dtype=np.int64)
    ranks[order] = np.arange(len(pieces))
    return ranks


def _embedding_matrix(pieces: list[MemoryPiece], dim: int) -> np.ndarray:
    for p in pieces:
        if p.context_embedding.shape != (dim,):
            raise DimensionMismatchError(
                f"piece {p.id} has dimension {p.context_embedding.shape[0]}, query has {dim}"
            )
    return np.stack([p.context_embedding for p in pieces])


def retrieve(
    e_pool: list[MemoryPiece],
    query_embedding: np.ndarray,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
) -> list[tuple[MemoryPiece, float]]:
    """Top-``k`` pieces with cosine similarity ``>= tau``, best first.

    An empty result means nothing is close enough and the caller should fall
    back to exploration.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not e_pool:
        return []
    query = np.asarray(query_embedding, dtype=np.float64)
    matrix = _embedding_matrix(e_pool, query.shape[0])
    return _select(e_pool, matrix, tie_ranks(e_pool), query, k, tau)


def _select(pieces, matrix, ranks, query, k, tau):
    sims = matrix @ query
    idx = kernels.topk_above(sims, ranks, k, tau)
    return [(pieces[i], float(sims[i])) for i in idx]


# -- dual pool ---------------------------------------------------------------


@dataclass(eq=False)
class DualPoolMemory:
    agent_id: str
    e_pool: list[MemoryPiece] = field(default_factory=list)
    x_pool: list[MemoryPiece] = field(default_factory=list)
    router: RouterState = field(default_factory=RouterState)
    access_log: PoolAccessLog | None = None

    def __post_init__(self) -> None:
        self._ids = {p.id for p in self.e_pool} | {p.id for p in self.x_pool}
        if len(self._ids) != len(self.e_pool) + len(self.x_pool):
            raise DuplicatePieceError(f"agent {self.agent_id}: duplicate piece ids")
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def _touch(self, op: str) -> None:
        if self.access_log is not None:
            self.access_log.record(self.agent_id, op)

    @property
    def dimension(self) -> int | None:
        for p in (*self.e_pool, *self.x_pool):
            return int(p.context_embedding.shape[0])
        return None

    def __len__(self) -> int:
        return len(self.e_pool) + len(self.x_pool)

    def __contains__(self, piece_id: str) -> bool:
        return piece_id in self._ids

    def retrieve(self, query_embedding: np.ndarray, k: int = DEFAULT_K,
                 tau: float = DEFAULT_TAU) -> list[tuple[MemoryPiece, float]]:
        """Cached-matrix version of :func:`retrieve` over this agent's E-pool."""
        self._touch("retrieve")
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.e_pool:
            return []
        query = np.asarray(query_embedding, dtype=np.float64)
        if self._cache is None:
            self._cache = (_embedding_matrix(self.e_pool, query.shape[0]), tie_ranks(self.e_pool))
        matrix, ranks = self._cache
        if matrix.shape[1] != query.shape[0]:
            raise DimensionMismatchError(
                f"store dimension {matrix.shape[1]}, query dimension {query.shape[0]}"
            )
        return _select(self.e_pool, matrix, ranks, query, k, tau)

    def add_exploratory(self, piece: MemoryPiece) -> None:
        self._touch("write")
        if piece.origin is not Origin.EXPLORATORY:
            raise ValueError("only exploratory pieces go into the X-pool")
        if piece.id in self._ids:
            raise DuplicatePieceError(f"piece id {piece.id!r} already present")
        self.x_pool.append(piece)
        self._ids.add(piece.id)

    def consolidate(self) -> int:
        """Move every X-pool piece into the E-pool; return how many moved."""
        self._touch("write")
        moved = len(self.x_pool)
        if moved:
            for piece in self.x_pool:
                piece.origin = Origin.CONSOLIDATED
            self.e_pool.extend(self.x_pool)
            self.x_pool = []
            self._cache = None
        return moved

    def pieces(self) -> list[MemoryPiece]:
        self._touch("read")
        return [*self.e_pool, *self.x_pool]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DualPoolMemory):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.router == other.router
            and self.e_pool == other.e_pool
            and self.x_pool == other.x_pool
        )


def add_exploratory(memory: DualPoolMemory, piece: MemoryPiece) -> None:
    memory.add_exploratory(piece)


def consolidate(memory: DualPoolMemory) -> int:
    return memory.consolidate()
