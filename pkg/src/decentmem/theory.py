"""Numerical checks for the reachability and regret properties of the router.

Two halves:

* Markov-chain side. A column-stochastic walk ``T`` mixed with a
  teleportation prior ``h``: ``M = alpha*T + (1-alpha)*h 1^T``. With
  ``alpha < 1`` and ``h > 0`` every entry of ``M`` is positive, so the chain
  is primitive and its stationary distribution is unique.
  :func:`check_reachability` verifies this, and when positivity fails it
  looks at strongly connected components and periods of the support graph.
* Routing side. Under the router's weight update the exploitation
  probability moves by ``phi_plus`` or ``phi_minus``. :func:`simulate_router_regret`
  runs either those raw dynamics or their 1/l-gain stochastic-approximation
  form and records cumulative regret against a concave reward curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.sparse import csgraph

from decentmem import kernels

STOCHASTIC_TOL = 1e-12
RM_CLAMP = (0.5, 1.0 - 1e-6)
Q_TABLE_SIZE = 1 << 16


class TheoryInputError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


# -- mixed transition --------------------------------------------------------


def check_column_stochastic(T: np.ndarray, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] == 0:
        raise TheoryInputError(f"transition matrix must be square, got shape {T.shape}")
    if np.any(T < 0) or not np.all(np.isfinite(T)):
        raise TheoryInputError("transition matrix has negative or non-finite entries")
    err = np.abs(T.sum(axis=0) - 1.0).max()
    if err > tol:
        raise TheoryInputError(f"columns do not sum to 1 (max error {err:.3g})")
    return T


def check_simplex(h: np.ndarray, n: int, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if h.shape[0] != n:
        raise TheoryInputError(f"prior has length {h.shape[0]}, expected {n}")
    if np.any(h < 0) or abs(h.sum() - 1.0) > tol:
        raise TheoryInputError("prior is not a probability vector")
    return h


@dataclass(frozen=True)
class MixedTransition:
    alpha: float
    base: np.ndarray
    prior: np.ndarray
    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def positivity_bound(self) -> float:
        return (1.0 - self.alpha) * float(self.prior.min())


def mixed_transition(T: np.ndarray, h: np.ndarray, alpha: float) -> MixedTransition:
    """``alpha*T + (1-alpha)*h 1^T`` with input validation."""
    T = check_column_stochastic(T)
    h = check_simplex(h, T.shape[0])
    if not 0.0 <= alpha <= 1.0:
        raise TheoryInputError(f"alpha must lie in [0, 1], got {alpha}")
    M = alpha * T + (1.0 - alpha) * h[:, None]
    return MixedTransition(alpha=float(alpha), base=T, prior=h, entries=M)


def random_column_stochastic(n: int, rng: np.random.Generator, zero_fraction: float = 0.3) -> np.ndarray:
    """Random column-stochastic matrix with roughly ``zero_fraction`` zero entries."""
    A = rng.random((n, n))
    A[rng.random((n, n)) < zero_fraction] = 0.0
    empty = A.sum(axis=0) == 0.0
    A[rng.integers(n, size=int(empty.sum())), np.flatnonzero(empty)] = 1.0
    return A / A.sum(axis=0)


def swap_matrix() -> np.ndarray:
    return np.array([[0.0, 1.0], [1.0, 0.0]])


def block_diagonal(sizes: list[int], rng: np.random.Generator) -> np.ndarray:
    """Reducible chain: independent strictly positive blocks."""
    n = sum(sizes)
    T = np.zeros((n, n))
    start = 0
    for size in sizes:
        B = rng.random((size, size)) + 0.1
        T[start:start + size, start:start + size] = B / B.sum(axis=0)
        start += size
    return T


# -- reachability -------------------------------------------------------------


@dataclass
class ReachabilityReport:
    strictly_positive: bool
    min_entry: float
    bound: float
    irreducible: bool
    n_components: int
    period: int | None
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "primitive"


def _period(adj: np.ndarray) -> int:
    """Period of an irreducible chain from BFS levels: gcd of level[u]+1-level[v] over edges."""
    n = adj.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return abs(g)


def check_reachability(M: MixedTransition | np.ndarray) -> ReachabilityReport:
    entries = M.entries if isinstance(M, MixedTransition) else np.asarray(M, dtype=np.float64)
    bound = M.positivity_bound() if isinstance(M, MixedTransition) else 0.0
    min_entry = float(entries.min())
    n = entries.shape[0]
    if min_entry > 0.0:
        return ReachabilityReport(True, min_entry, bound, True, 1, 1, "primitive")
    # edge j -> i whenever M[i, j] > 0 (columns are "from")
    adj = entries.T > 0.0
    n_comp, _ = csgraph.connected_components(adj, directed=True, connection="strong")
    if n_comp > 1:
        return ReachabilityReport(False, min_entry, bound, False, n_comp, None, "reducible")
    period = _period(adj) if n > 1 else (1 if adj[0, 0] else 0)
    verdict = "primitive" if period == 1 else "periodic"
    return ReachabilityReport(False, min_entry, bound, True, 1, period, verdict)


def stationary(M: MixedTransition | np.ndarray, tol: float = 1e-10, start: np.ndarray | None = None,
               max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration ``p <- M p`` until ``||Mp - p||_1 < tol``.

    Raises :class:`ConvergenceError` after ``max_iter`` steps, which is what
    happens for periodic chains.
    """
    entries = M.entries if isinstance(M, MixedTransition) else check_column_stochastic(M)
    n = entries.shape[0]
    p = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=np.float64).copy()
    p /= p.sum()
    for _ in range(max_iter):
        q = entries @ p
        q /= q.sum()
        if np.abs(q - p).sum() < tol:
            return q
        p = q
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def stationary_direct(M: MixedTransition | np.ndarray) -> np.ndarray:
    """Dense solve of ``(M - I) p = 0`` with one row replaced by ``sum(p) = 1``."""
    entries = M.entries if isinstance(M, MixedTransition) else np.asarray(M, dtype=np.float64)
    n = entries.shape[0]
    if n > 200:
        raise TheoryInputError("dense oracle is limited to n <= 200")
    A = entries - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# -- routing recursion ---------------------------------------------------------


def phi_plus(alpha):
    return (1.0 + alpha) / (3.0 - alpha)


def phi_minus(alpha):
    return alpha / (2.0 - alpha)


def phi_maps(alpha: float) -> tuple[float, float]:
    if not 0.0 <= alpha < 1.0:
        raise TheoryInputError("alpha must lie in [0, 1)")
    return phi_plus(alpha), phi_minus(alpha)


@dataclass
class RewardCurve:
    """Expected reward ``r`` and first-branch probability ``q`` as functions of alpha.

    ``q(alpha)`` is the probability that a routing step moves alpha up
    (exploit-and-improve or explore-and-not-improve).
    """

    r: Callable[[np.ndarray], np.ndarray]
    q: Callable[[np.ndarray], np.ndarray]
    name: str = "curve"
    alpha_star: float = field(init=False)

    def __post_init__(self) -> None:
        res = optimize.minimize_scalar(lambda a: -float(self.r(np.float64(a))), bounds=(0.5, 1.0),
                                       method="bounded", options={"xatol": 1e-12})
        self.alpha_star = float(res.x)

    @classmethod
    def from_pool_rewards(cls, r_e, r_x, name: str = "pool-rewards") -> "RewardCurve":
        """Build ``r`` and ``q`` from per-pool expected rewards."""
        def r(a):
            return a * r_e(a) + (1 - a) * r_x(a)

        def q(a):
            return a * r_e(a) + (1 - a) * (1 - r_x(a))

        return cls(r=r, q=q, name=name)

    def r_star(self) -> float:
        return float(self.r(np.float64(self.alpha_star)))

    def is_strictly_concave(self, n: int = 2001) -> bool:
        grid = np.linspace(0.5, 1.0, n)
        values = np.asarray(self.r(grid), dtype=np.float64)
        second = values[:-2] - 2 * values[1:-1] + values[2:]
        return bool(np.all(second < 0)) and 0.5 < self.alpha_star < 1.0

    def q_table(self, size: int = Q_TABLE_SIZE) -> np.ndarray:
        grid = np.linspace(0.0, 1.0, size + 1)
        return np.clip(np.asarray(self.q(grid), dtype=np.float64), 0.0, 1.0)


def balanced_branch_prob(alpha: float) -> float:
    """The constant ``q`` that makes the drift vanish at ``alpha``."""
    up = phi_plus(alpha) - alpha
    down = alpha - phi_minus(alpha)
    return down / (up + down)


def quadratic_curve(alpha_star: float = 0.75, gain: float = 5.0) -> RewardCurve:
    """``r = 1 - (alpha - alpha_star)^2`` with a linear-in-alpha branch probability.

    ``q`` is centred so the drift's root is ``alpha_star``; ``gain`` sets its
    slope there (a 1/l gain needs ``|g'(alpha_star)| > 1/2`` for an O(1/l)
    mean-square error).
    """
    q0 = balanced_branch_prob(alpha_star)

    def r(a):
        return 1.0 - (a - alpha_star) ** 2

    def q(a):
        return np.clip(q0 - gain * (a - alpha_star), 0.0, 1.0)

    return RewardCurve(r=r, q=q, name=f"quadratic(alpha*={alpha_star}, gain={gain})")


def drift(alpha, curve: RewardCurve):
    """Expected one-step change of alpha under the routing update."""
    q = curve.q(alpha)
    return q * (phi_plus(alpha) - alpha) + (1.0 - q) * (phi_minus(alpha) - alpha)


def drift_root(curve: RewardCurve, lo: float = 0.5, hi: float = 1.0 - 1e-9, xtol: float = 1e-14) -> float:
    """Bisection for ``drift(alpha) = 0`` on ``[lo, hi]``."""
    glo, ghi = drift(lo, curve), drift(hi, curve)
    if glo == 0:
        return lo
    if np.sign(glo) == np.sign(ghi):
        raise TheoryInputError("drift does not change sign on the interval")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        gm = drift(mid, curve)
        if gm == 0:
            return mid
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class RegretTrace:
    horizon: int
    alphas: np.ndarray
    regret: np.ndarray
    mse: np.ndarray
    alpha_star: float
    label: str = ""

    def at(self, t: int) -> float:
        return float(self.regret[t - 1])


def _trace_from_alphas(curve: RewardCurve, alphas: np.ndarray, label: str) -> RegretTrace:
    gaps = curve.r_star() - np.asarray(curve.r(alphas), dtype=np.float64)
    return RegretTrace(
        horizon=alphas.shape[-1],
        alphas=alphas,
        regret=np.cumsum(gaps, axis=-1),
        mse=(alphas - curve.alpha_star) ** 2,
        alpha_star=curve.alpha_star,
        label=label,
    )


MODES = ("robbins_monro", "raw_weights")


def _paths(curve: RewardCurve, horizon: int, mode: str, seeds, alpha0: float,
           chunk: int = 20_000, backend=None) -> np.ndarray:
    if mode not in MODES:
        raise TheoryInputError(f"unknown mode {mode!r}")
    impl = backend if backend is not None else kernels
    seeds = list(seeds)
    gens = [np.random.default_rng([s, 0x5A]) for s in seeds]
    table = curve.q_table()
    out = np.empty((len(seeds), horizon))
    if mode == "robbins_monro":
        state = np.full(len(seeds), alpha0)
    else:
        state = np.full(len(seeds), alpha0 / (1.0 - alpha0))
    for start in range(0, horizon, chunk):
        n = min(chunk, horizon - start)
        u = np.stack([g.random(n) for g in gens])
        if mode == "robbins_monro":
            out[:, start:start + n], state = impl.rm_recursion(state, u, table, start + 1, *RM_CLAMP)
        else:
            out[:, start:start + n], state = impl.weight_recursion(state, u, table, 0.5, 0.5, 1.0)
    return out


def simulate_router_regret(curve: RewardCurve, horizon: int, mode: str = "robbins_monro",
                           seed: int = 0, alpha0: float = 0.5, noise: bool = True) -> RegretTrace:
    """Single run of the routing recursion with its regret trace.

    ``raw_weights`` replays the router's weight update (floor included);
    ``robbins_monro`` runs the 1/l-gain form clamped to [0.5, 1 - 1e-6]. With
    ``noise=False`` the Robbins-Monro run follows the mean drift exactly.
    """
    if not curve.is_strictly_concave():
        raise TheoryInputError(f"{curve.name}: reward curve is not strictly concave with interior maximizer")
    if mode not in MODES:
        raise TheoryInputError(f"unknown mode {mode!r}")
    if not noise:
        if mode != "robbins_monro":
            raise TheoryInputError("noise-free runs are only defined for robbins_monro")
        alphas = np.empty(horizon)
        a = alpha0
        for step in range(1, horizon + 1):
            alphas[step - 1] = a
            a = min(RM_CLAMP[1], max(RM_CLAMP[0], a + float(drift(a, curve)) / step))
        return _trace_from_alphas(curve, alphas, f"{mode}/mean")
    alphas = _paths(curve, horizon, mode, [seed], alpha0)[0]
    return _trace_from_alphas(curve, alphas, f"{mode}/seed={seed}")


@dataclass
class RegretStudy:
    """Seed-averaged curves from many runs."""

    horizon: int
    seeds: int
    mean_regret: np.ndarray
    mean_mse: np.ndarray
    mean_alpha: np.ndarray
    final_regret: np.ndarray
    alpha_star: float

    def scaled_mse(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1) * self.mean_mse

    def as_trace(self, label: str = "mean") -> RegretTrace:
        return RegretTrace(self.horizon, self.mean_alpha, self.mean_regret, self.mean_mse,
                           self.alpha_star, label)


def regret_study(curve: RewardCurve, horizon: int, seeds, mode: str = "robbins_monro",
                 alpha0: float = 0.5, batch: int = 50, backend=None) -> RegretStudy:
    """Average regret and squared error over ``seeds``; batches bound memory use."""
    if not curve.is_strictly_concave():
        raise TheoryInputError(f"{curve.name}: reward curve is not strictly concave with interior maximizer")
    seeds = list(seeds)
    reg = np.zeros(horizon)
    mse = np.zeros(horizon)
    alpha_sum = np.zeros(horizon)
    finals = []
    for i in range(0, len(seeds), batch):
        chunk = seeds[i:i + batch]
        alphas = _paths(curve, horizon, mode, chunk, alpha0, backend=backend)
        tr = _trace_from_alphas(curve, alphas, mode)
        reg += tr.regret.sum(axis=0)
        mse += tr.mse.sum(axis=0)
        alpha_sum += alphas.sum(axis=0)
        finals.extend(tr.regret[:, -1].tolist())
    n = len(seeds)
    return RegretStudy(horizon, n, reg / n, mse / n, alpha_sum / n, np.array(finals), curve.alpha_star)


def fixed_policy_regret(curve: RewardCurve, alpha_bar: float, horizon: int) -> RegretTrace:
    if not 0.0 <= alpha_bar <= 1.0:
        raise TheoryInputError("alpha_bar must lie in [0, 1]")
    gap = curve.r_star() - float(curve.r(np.float64(alpha_bar)))
    t = np.arange(1, horizon + 1, dtype=np.float64)
    alphas = np.full(horizon, float(alpha_bar))
    return RegretTrace(horizon, alphas, t * gap, (alphas - curve.alpha_star) ** 2,
                       curve.alpha_star, f"fixed({alpha_bar})")


@dataclass
class LogFit:
    a: float
    b: float
    residual: float
    relative_residual: float


def fit_log_growth(trace: RegretTrace | np.ndarray, window: tuple[int, int], points: int = 200) -> LogFit:
    """Least squares ``R(t) ~ a + b log t`` on log-spaced ``t`` in ``window``.

    ``relative_residual`` is the RMS residual divided by the range of R over
    the window (0 when R is flat there).
    """
    regret = trace.regret if isinstance(trace, RegretTrace) else np.asarray(trace, dtype=np.float64)
    lo, hi = int(window[0]), int(window[1])
    if lo < 1 or hi > regret.shape[-1] or hi - lo < 2:
        raise TheoryInputError(f"degenerate window {window} for trace of length {regret.shape[-1]}")
    ts = np.unique(np.geomspace(lo, hi, points).round().astype(np.int64))
    if ts.size < 3:
        raise TheoryInputError("window yields fewer than 3 sample points")
    y = regret[ts - 1]
    X = np.column_stack([np.ones(ts.size), np.log(ts)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    rms = float(np.sqrt(np.mean(res ** 2)))
    span = float(y.max() - y.min())
    rel = rms / span if span > 0 else 0.0
    return LogFit(float(coef[0]), float(coef[1]), rms, rel)
