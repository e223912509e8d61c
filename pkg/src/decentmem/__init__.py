"""Decentralized dual-pool memory for multi-agent systems."""

__version__ = "0.1.0"

from decentmem.embedding import HashEmbedder, cosine_sim, hash_embed  # noqa: E402
from decentmem.memory import (  # noqa: E402
    ActionType,
    DualPoolMemory,
    MemoryPiece,
    Origin,
    TrajectoryRecord,
    add_exploratory,
    consolidate,
    retrieve,
)
from decentmem.router import PoolChoice, RouterState, choose, selection_prob, update  # noqa: E402
from decentmem.store import load_store, save_store  # noqa: E402

__all__ = [
    "__version__",
    "ActionType",
    "DualPoolMemory",
    "HashEmbedder",
    "MemoryPiece",
    "Origin",
    "PoolChoice",
    "RouterState",
    "TrajectoryRecord",
    "add_exploratory",
    "choose",
    "consolidate",
    "cosine_sim",
    "hash_embed",
    "load_store",
    "retrieve",
    "save_store",
    "selection_prob",
    "update",
]
