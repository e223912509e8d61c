from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_piece, unit
from decentmem.embedding import DimensionMismatchError, normalize
from decentmem.memory import (
    DualPoolMemory,
    DuplicatePieceError,
    MemoryPiece,
    Origin,
    PoolAccessLog,
    TrajectoryRecord,
    acting_as,
    add_exploratory,
    consolidate,
    retrieve,
)


def oracle(pieces, query, k, tau):
    """Filter, full sort, truncate.

    Similarities come from the same matrix product as production so that
    last-ulp differences between BLAS paths cannot reorder near-ties.
    """
    if not pieces:
        return []
    sims = np.stack([p.context_embedding for p in pieces]) @ query
    scored = [(p, float(s)) for p, s in zip(pieces, sims)]
    scored = [s for s in scored if s[1] >= tau]
    scored.sort(key=lambda s: (-s[1], s[0].created_at, s[0].id))
    return [(p.id, s) for p, s in scored[:k]]


def piece_with_sim(pid: str, sim: float, created_at: int = 0) -> MemoryPiece:
    # query is e0; embedding sits at angle arccos(sim) in the e0/e1 plane
    return make_piece(pid, embedding=np.array([sim, np.sqrt(1 - sim * sim), 0.0]), created_at=created_at)


def test_case_study_threshold():
    q = np.array([1.0, 0.0, 0.0])
    pool = [piece_with_sim("a", 0.74), piece_with_sim("b", 0.46), piece_with_sim("c", 0.59)]
    got = retrieve(pool, q, k=1, tau=0.6)
    assert [p.id for p, _ in got] == ["a"]
    assert got[0][1] == pytest.approx(0.74)


def test_empty_pool():
    assert retrieve([], np.array([1.0, 0.0]), k=3, tau=0.6) == []


def test_random_pool_matches_full_sort(rng):
    pool = [make_piece(f"p{i}", embedding=unit(rng), created_at=i) for i in range(100)]
    q = unit(rng)
    got = [(p.id, s) for p, s in retrieve(pool, q, k=5, tau=0.0)]
    assert got == oracle(pool, q, 5, 0.0)


def test_ties_break_by_created_at_then_id():
    q = np.array([1.0, 0.0, 0.0])
    pool = [piece_with_sim("b", 0.8, 2), piece_with_sim("a", 0.8, 2), piece_with_sim("c", 0.8, 1),
            piece_with_sim("d", 0.9, 5)]
    assert [p.id for p, _ in retrieve(pool, q, k=4, tau=0.5)] == ["d", "c", "a", "b"]


def test_dimension_mismatch_is_hard_error(rng):
    pool = [make_piece("p", embedding=unit(rng, 8))]
    with pytest.raises(DimensionMismatchError):
        retrieve(pool, unit(rng, 16))
    mem = DualPoolMemory("a", e_pool=pool)
    with pytest.raises(DimensionMismatchError):
        mem.retrieve(unit(rng, 16))


def test_k_must_be_positive(rng):
    with pytest.raises(ValueError):
        retrieve([make_piece("p")], unit(rng, 256), k=0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 60), k=st.integers(1, 8),
       tau=st.floats(-1, 1), tau2=st.floats(-1, 1))
def test_monotone_in_k_and_tau(seed, n, k, tau, tau2):
    rng = np.random.default_rng(seed)
    pool = [make_piece(f"p{i}", embedding=unit(rng, 8), created_at=i % 5) for i in range(n)]
    q = unit(rng, 8)
    lo, hi = sorted((tau, tau2))
    ids = lambda res: {p.id for p, _ in res}  # noqa: E731
    assert ids(retrieve(pool, q, k, hi)) <= ids(retrieve(pool, q, n + 1, lo))
    assert ids(retrieve(pool, q, k, tau)) <= ids(retrieve(pool, q, k + 1, tau))
    assert [(p.id, s) for p, s in retrieve(pool, q, k, tau)] == oracle(pool, q, k, tau)


def test_cached_retrieve_matches_function(rng):
    pool = [make_piece(f"p{i}", embedding=unit(rng), created_at=i) for i in range(30)]
    mem = DualPoolMemory("a", e_pool=list(pool))
    q = unit(rng)
    assert mem.retrieve(q, 4, -1.0) == retrieve(pool, q, 4, -1.0)
    mem.add_exploratory(make_piece("new", embedding=q, created_at=99))
    mem.consolidate()
    assert mem.retrieve(q, 1, 0.0)[0][0].id == "new"


def test_add_exploratory():
    mem = DualPoolMemory("a")
    add_exploratory(mem, make_piece("x1"))
    add_exploratory(mem, make_piece("x2"))
    assert [p.id for p in mem.x_pool] == ["x1", "x2"]
    assert mem.e_pool == []
    with pytest.raises(DuplicatePieceError):
        add_exploratory(mem, make_piece("x1"))
    assert len(mem.x_pool) == 2


def test_add_rejects_consolidated_piece():
    mem = DualPoolMemory("a")
    with pytest.raises(ValueError):
        mem.add_exploratory(make_piece("c", origin=Origin.CONSOLIDATED))


def test_consolidate_counts():
    mem = DualPoolMemory("a", e_pool=[make_piece(f"e{i}", origin=Origin.CONSOLIDATED) for i in range(5)])
    assert consolidate(mem) == 0
    for i in range(3):
        mem.add_exploratory(make_piece(f"x{i}"))
    assert consolidate(mem) == 3
    assert len(mem.e_pool) == 8 and mem.x_pool == []
    assert all(p.origin is Origin.CONSOLIDATED for p in mem.e_pool)
    assert consolidate(mem) == 0
    assert len({p.id for p in mem.e_pool}) == 8


@given(st.lists(st.integers(0, 3), max_size=30))
def test_conservation(ops):
    mem = DualPoolMemory("a")
    n = 0
    for i, op in enumerate(ops):
        before = len(mem)
        if op:
            mem.add_exploratory(make_piece(f"p{i}"))
            n += 1
            assert len(mem) == before + 1
        else:
            mem.consolidate()
            assert len(mem) == before and not mem.x_pool
    assert len(mem) == n


def test_piece_invariants():
    with pytest.raises(ValueError):
        make_piece("bad", embedding=np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        make_piece("bad", quality=10.5)
    with pytest.raises(ValueError):
        TrajectoryRecord("direct_answer", "x", allocation=[("sub", "a1")])
    with pytest.raises(ValueError):
        TrajectoryRecord("forward", "x", stage_index=0)
    TrajectoryRecord("decompose", "x", allocation=[("sub", "a1")])


def test_duplicate_ids_across_pools_rejected():
    with pytest.raises(DuplicatePieceError):
        DualPoolMemory("a", e_pool=[make_piece("p", origin=Origin.CONSOLIDATED)], x_pool=[make_piece("p")])


def test_access_log_records_actor():
    log = PoolAccessLog()
    a = DualPoolMemory("a", access_log=log)
    b = DualPoolMemory("b", access_log=log)
    q = normalize(np.ones(256))
    with acting_as("a"):
        a.retrieve(q)
    assert log.cross_agent_reads() == 0
    with acting_as("a"):
        b.retrieve(q)
    assert log.cross_agent_reads() == 1
    b.pieces()  # no actor at all also counts as foreign
    assert log.cross_agent_reads() == 2
