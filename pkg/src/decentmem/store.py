"""Line-delimited JSON persistence for one agent's dual-pool memory.

Line 1 is a header record (format tag, version, agent id, dimension, router
state); every following line is one piece tagged with its pool. See
``docs/formats.md`` for the schema.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from decentmem.memory import DualPoolMemory, MemoryPiece, Origin, TrajectoryRecord
from decentmem.router import RouterState

FORMAT_TAG = "decentmem-store"
FORMAT_VERSION = 1


class StoreError(Exception):
    pass


class StoreNotFoundError(StoreError, FileNotFoundError):
    pass


class MalformedRecordError(StoreError):
    def __init__(self, record_no: int, reason: str) -> None:
        super().__init__(f"record {record_no}: {reason}")
        self.record_no = record_no
        self.reason = reason


class StoreDimensionError(StoreError):
    def __init__(self, record_no: int, expected: int, got: int) -> None:
        super().__init__(f"record {record_no}: embedding dimension {got}, header says {expected}")
        self.record_no = record_no


def _piece_record(piece: MemoryPiece, pool: str) -> dict:
    t = piece.trajectory
    return {
        "pool": pool,
        "id": piece.id,
        "context_prototype": piece.context_prototype,
        "context_embedding": piece.context_embedding.tolist(),
        "trajectory": {
            "action_type": t.action_type.value,
            "payload": t.payload,
            "allocation": [list(pair) for pair in t.allocation],
            "stage_index": t.stage_index,
        },
        "commentary": piece.commentary,
        "quality": piece.quality,
        "created_at": piece.created_at,
        "origin": piece.origin.value,
    }


def dumps_store(memory: DualPoolMemory) -> str:
    r = memory.router
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "agent_id": memory.agent_id,
        "dimension": memory.dimension,
        "router": {"w_e": r.w_e, "w_x": r.w_x, "increment": r.increment,
                   "decay": r.decay, "floor": r.floor},
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_piece_record(p, "e"), sort_keys=True) for p in memory.e_pool]
    lines += [json.dumps(_piece_record(p, "x"), sort_keys=True) for p in memory.x_pool]
    return "\n".join(lines) + "\n"


def save_store(memory: DualPoolMemory, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_store(memory), encoding="utf-8")
    os.replace(tmp, path)


def _parse_header(line: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(1, f"header is not JSON ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise MalformedRecordError(1, "missing decentmem-store header")
    if header.get("version") != FORMAT_VERSION:
        raise MalformedRecordError(1, f"unsupported store version {header.get('version')!r}")
    return header


def _parse_piece(record_no: int, line: str, dim: int | None) -> tuple[str, MemoryPiece]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecordError(record_no, f"invalid JSON ({exc.msg})") from None
    try:
        emb = rec["context_embedding"]
        if dim is not None and len(emb) != dim:
            raise StoreDimensionError(record_no, dim, len(emb))
        t = rec["trajectory"]
        piece = MemoryPiece(
            id=str(rec["id"]),
            context_prototype=rec["context_prototype"],
            context_embedding=emb,
            trajectory=TrajectoryRecord(
                action_type=t["action_type"],
                payload=t["payload"],
                allocation=[tuple(pair) for pair in t["allocation"]],
                stage_index=int(t["stage_index"]),
            ),
            commentary=rec["commentary"],
            quality=rec["quality"],
            created_at=int(rec["created_at"]),
            origin=rec["origin"],
        )
        pool = rec["pool"]
    except StoreError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecordError(record_no, f"{type(exc).__name__}: {exc}") from None
    if pool not in ("e", "x"):
        raise MalformedRecordError(record_no, f"unknown pool {pool!r}")
    if pool == "x" and piece.origin is not Origin.EXPLORATORY:
        raise MalformedRecordError(record_no, "X-pool piece must be exploratory")
    return pool, piece


def loads_store(text: str) -> DualPoolMemory:
    if not text:
        raise MalformedRecordError(1, "empty file")
    if not text.endswith("\n"):
        raise MalformedRecordError(text.count("\n") + 1, "truncated record (no line terminator)")
    lines = text.split("\n")[:-1]
    header = _parse_header(lines[0])
    dim = header.get("dimension")
    try:
        r = header["router"]
        router = RouterState(w_e=r["w_e"], increment=r["increment"], decay=r["decay"],
                             floor=r["floor"])
        if r.get("w_x", 1.0) != 1.0:
            raise ValueError("w_x must be 1.0")
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecordError(1, f"bad router state: {exc}") from None
    e_pool, x_pool, seen = [], [], set()
    for no, line in enumerate(lines[1:], start=2):
        pool, piece = _parse_piece(no, line, dim)
        if piece.id in seen:
            raise MalformedRecordError(no, f"duplicate piece id {piece.id!r}")
        seen.add(piece.id)
        (e_pool if pool == "e" else x_pool).append(piece)
    if dim is None and (e_pool or x_pool):
        raise MalformedRecordError(1, "header has no dimension but pieces are present")
    return DualPoolMemory(agent_id=str(header["agent_id"]), e_pool=e_pool, x_pool=x_pool,
                          router=router)


def load_store(path: str | os.PathLike) -> DualPoolMemory:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise StoreNotFoundError(f"no memory store at {path}") from None
    return loads_store(text)
