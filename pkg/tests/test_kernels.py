from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decentmem import kernels
from decentmem.router import PoolChoice, RouterState, selection_prob, update
from decentmem.theory import RM_CLAMP, quadratic_curve


def naive_rm(alpha0, u, q, step0, lo, hi):
    """Scalar loop with exact q (no table)."""
    out = []
    a = alpha0
    for j, uj in enumerate(u):
        out.append(a)
        target = (1 + a) / (3 - a) if uj < q(a) else a / (2 - a)
        a = min(hi, max(lo, a + (target - a) / (step0 + j)))
    return np.array(out), a


def test_backend_reported():
    assert kernels.BACKEND in kernels.available_backends()


def test_rm_recursion_matches_scalar_loop(backend):
    curve = quadratic_curve()
    table = curve.q_table()
    rng = np.random.default_rng(0)
    u = rng.random((3, 500))
    alphas, nxt = backend.rm_recursion(np.full(3, 0.5), u, table, 1, *RM_CLAMP)
    for b in range(3):
        ref, ref_next = naive_rm(0.5, u[b], lambda a: float(curve.q(a)), 1, *RM_CLAMP)
        # the table interpolates a piecewise-linear q, so agreement is tight
        np.testing.assert_allclose(alphas[b], ref, atol=1e-9)
        assert nxt[b] == pytest.approx(ref_next, abs=1e-9)


def test_rm_recursion_chunks_compose(backend):
    table = quadratic_curve().q_table()
    u = np.random.default_rng(1).random((2, 1000))
    whole, last = backend.rm_recursion(np.full(2, 0.6), u, table, 1, *RM_CLAMP)
    first, mid = backend.rm_recursion(np.full(2, 0.6), u[:, :400], table, 1, *RM_CLAMP)
    second, end = backend.rm_recursion(mid, u[:, 400:], table, 401, *RM_CLAMP)
    np.testing.assert_array_equal(whole, np.hstack([first, second]))
    np.testing.assert_array_equal(last, end)


def test_weight_recursion_replays_router(backend):
    table = quadratic_curve().q_table()
    u = np.random.default_rng(2).random((1, 300))
    alphas, w_next = backend.weight_recursion(np.array([1.0]), u, table, 0.5, 0.5, 1.0)
    state = RouterState()
    for j in range(300):
        a = selection_prob(state)
        assert alphas[0, j] == pytest.approx(a, abs=1e-15)
        q = float(np.interp(a, np.linspace(0, 1, table.size), table))
        # first branch == (Exploit, improved): w_e grows
        state = update(state, PoolChoice.EXPLOIT, 1 if u[0, j] < q else 0)
    assert w_next[0] == pytest.approx(state.w_e)


def test_backends_agree_bitwise():
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("compiled extension not built")
    py, c = backends["python"], backends["cython"]
    table = quadratic_curve().q_table()
    u = np.random.default_rng(3).random((4, 2000))
    a1, n1 = py.rm_recursion(np.full(4, 0.55), u, table, 7, *RM_CLAMP)
    a2, n2 = c.rm_recursion(np.full(4, 0.55), u, table, 7, *RM_CLAMP)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(n1, n2)
    w1 = py.weight_recursion(np.full(4, 1.0), u, table, 0.5, 0.5, 1.0)
    w2 = c.weight_recursion(np.full(4, 1.0), u, table, 0.5, 0.5, 1.0)
    np.testing.assert_array_equal(w1[0], w2[0])
    np.testing.assert_array_equal(w1[1], w2[1])


def brute_topk(sims, rank, k, tau):
    keep = [i for i in range(len(sims)) if sims[i] >= tau]
    keep.sort(key=lambda i: (-sims[i], rank[i]))
    return keep[:k]


@settings(max_examples=200, deadline=None)
@given(
    sims=st.lists(st.sampled_from([-0.5, 0.0, 0.25, 0.6, 0.6, 0.9, 1.0]), min_size=0, max_size=40),
    k=st.integers(1, 10),
    tau=st.sampled_from([-1.0, 0.0, 0.6, 0.95]),
    seed=st.integers(0, 2**16),
)
def test_topk_matches_brute_force_with_ties(sims, k, tau, seed):
    sims = np.array(sims, dtype=np.float64)
    rank = np.random.default_rng(seed).permutation(len(sims)).astype(np.int64)
    want = brute_topk(sims.tolist(), rank.tolist(), k, tau)
    for impl in kernels.available_backends().values():
        assert impl.topk_above(sims, rank, k, tau).tolist() == want
