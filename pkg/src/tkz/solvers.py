"""Tensor Kaczmarz sweeps and their Gearhart-Koshy accelerations.

Every accelerated solver performs the same Kaczmarz sweep and differs only in
how the next iterate is chosen from the affine hull of recent iterates and the
sweep output:

``tkgk``
    forms the Gram matrix of the search directions and solves the normal
    system with a Cholesky factorization (quadratic in the window size);
``gs``
    keeps an orthogonal basis of the search space, updated by modified
    Gram-Schmidt, and takes a single step along the new basis tensor;
``tri``
    keeps the raw iterates and inverts the tridiagonal inverse Gram matrix in
    closed form.

All three produce the same iterates in exact arithmetic.  ``tk`` is the plain
sweep and ``takshbm`` is the block heavy-ball baseline.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .problems import ProblemInstance
from .sampling import StrategyState, make_rng, next_permutation
from .tensor import (
    DEFAULT_RANK_TOL,
    FourierSlices,
    from_fourier,
    parseval_weights,
    t_pinv,
    t_product,
    t_transpose,
    to_fourier,
)

SOLVERS = ("tk", "tkgk", "gs", "tri", "takshbm")
UNBOUNDED = math.inf

STREAM_BLOCKS = 0x5EED_0201

# ||U_k||^2 below this multiple of eps * ||D_k||^2 counts as breakdown.
BREAKDOWN_FACTOR = 1e2
CHOLESKY_JITTER = 1e-12


class SolverBreakdown(RuntimeError):
    """The normal system of an acceleration step could not be solved."""


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a.ravel(), b.ravel()))


def _window_len(tau) -> Optional[int]:
    """deque maxlen for the ``tau - 1`` previous entries (None = unbounded)."""
    if tau is None or tau == UNBOUNDED:
        return None
    tau = int(tau)
    if tau < 1:
        raise ValueError("truncation parameter tau must be >= 1")
    return tau - 1


# ---------------------------------------------------------------------------
# configuration and logs
# ---------------------------------------------------------------------------


@dataclass
class SolverConfig:
    strategy: str = "so"
    tau: float = 5
    tol_delta: float = 1e-28
    tol_rse: Optional[float] = None
    max_epochs: int = 1000
    seed: int = 0
    rank_tol: float = DEFAULT_RANK_TOL
    block_size: int = 15

    def __post_init__(self):
        _window_len(self.tau)
        if self.tol_delta < 0 or (self.tol_rse is not None and self.tol_rse < 0):
            raise ValueError("tolerances must be non-negative")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")


@dataclass
class EpochRecord:
    """One trace row; ``delta``/``gamma`` are None when no sweep ran at ``epoch``."""

    epoch: int
    rse: Optional[float]
    delta: Optional[float]
    gamma: Optional[float]
    elapsed_s: float


@dataclass
class SolverResult:
    x: np.ndarray
    trace: List[EpochRecord]
    epochs: int
    sweeps: int
    stop_reason: str
    wall_s: float
    restarts: int = 0
    full_iterations: float = 0.0


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    """Output of one epoch of row projections started at ``x``.

    ``rnorm2`` is the squared norm of the stacked per-row corrections and
    ``gamma = (rnorm2 + delta) / 2`` is the inner product
    ``<P(x) - x, x_star - x>`` that sets the acceleration step.
    """

    x: np.ndarray
    projected: np.ndarray
    delta: float
    rnorm2: float
    gamma: float

    @property
    def direction(self) -> np.ndarray:
        return self.projected - self.x


class ProjectorBank:
    """Per-row pseudoinverses of ``A``, stored in the Fourier domain.

    In Fourier slice ``k`` the row ``A_i`` is a row vector ``a`` and its
    pseudoinverse is ``conj(a) / |a|^2``, so each projection is a rank-one
    update per slice.  Read-only after construction.
    """

    def __init__(self, A, B, rank_tol: float = DEFAULT_RANK_TOL):
        A = np.asarray(A, dtype=np.float64)
        B = np.asarray(B, dtype=np.float64)
        if A.shape[0] != B.shape[0] or A.shape[2] != B.shape[2]:
            raise ValueError(f"A {A.shape} and B {B.shape} do not match")
        self.A, self.B = A, B
        self.m, self.l, self.n = A.shape
        self.p = B.shape[1]
        self.rank_tol = rank_tol
        self.weights = parseval_weights(self.n)

        ah = to_fourier(A).data  # (nf, m, l)
        bh = to_fourier(B).data  # (nf, m, p)
        self._rows = np.ascontiguousarray(ah.transpose(1, 0, 2)[:, :, None, :])  # (m, nf, 1, l)
        self._rhs = np.ascontiguousarray(bh.transpose(1, 0, 2)[:, :, None, :])  # (m, nf, 1, p)
        norm2 = np.sum(np.abs(ah) ** 2, axis=2).T  # (m, nf)
        smax = np.sqrt(norm2.max(axis=1, keepdims=True))
        keep = np.sqrt(norm2) > rank_tol * smax
        inv = np.where(keep, 1.0 / np.where(keep, norm2, 1.0), 0.0)
        self._inv_norm2 = inv  # (m, nf)
        self._pinv = np.ascontiguousarray(
            (np.conj(ah) * inv.T[:, :, None]).transpose(1, 0, 2)[:, :, :, None]
        )  # (m, nf, l, 1)

    def pinv_row(self, i: int) -> np.ndarray:
        """``pinv(A[i:i+1])`` as an ``l x 1 x n`` tensor."""
        return from_fourier(FourierSlices(self._pinv[i], self.n))

    def _project_hat(self, xh: np.ndarray, i: int) -> float:
        res = self._rows[i] @ xh - self._rhs[i]  # (nf, 1, p)
        xh -= self._pinv[i] * res
        return float(np.sum(self.weights * self._inv_norm2[i] * np.sum(np.abs(res[:, 0, :]) ** 2, axis=1)))

    def project_row(self, X, i: int) -> np.ndarray:
        """Orthogonal projection of ``X`` onto ``{Y : A_i * Y = B_i}``."""
        xh = to_fourier(X).data.copy()
        self._project_hat(xh, int(i))
        return from_fourier(FourierSlices(xh, self.n))

    def sweep(self, X, order) -> SweepResult:
        """Project ``X`` through the rows in ``order``; accumulate ``||r||^2`` on the way.

        The i-th block of the stacked residual equals the correction applied at
        row i, so its squared norm is summed instead of materialized.
        """
        X = np.asarray(X, dtype=np.float64)
        xh = to_fourier(X).data.copy()
        rnorm2 = 0.0
        for i in order:
            rnorm2 += self._project_hat(xh, int(i))
        projected = from_fourier(FourierSlices(xh, self.n))
        delta = float(np.sum((projected - X) ** 2))
        return SweepResult(X, projected, delta, rnorm2, 0.5 * (rnorm2 + delta))


def build_projectors(A, B, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectorBank:
    return ProjectorBank(A, B, rank_tol)


def project_row(X, i: int, bank: ProjectorBank) -> np.ndarray:
    return bank.project_row(X, i)


def sweep(X, pi, bank: ProjectorBank) -> SweepResult:
    return bank.sweep(X, pi)


# ---------------------------------------------------------------------------
# acceleration steps
# ---------------------------------------------------------------------------


@dataclass
class DirectState:
    """Current iterate plus the previous ``tau - 1`` iterates."""

    x: np.ndarray
    history: deque


def direct_state(x0, tau) -> DirectState:
    return DirectState(np.array(x0, dtype=np.float64), deque(maxlen=_window_len(tau)))


def tkgk_step_direct(state: DirectState, sw: SweepResult, tau=None) -> np.ndarray:
    """Closest point to the solution on ``aff{X^j, ..., X^k, P(X^k)}``.

    Solves ``M^T M s = gamma e_last`` with ``M = [X^j - X^k, ..., d]``.
    """
    x = state.x
    cols = [xi - x for xi in state.history] + [sw.direction]
    q = len(cols)
    gram = np.empty((q, q))
    for a in range(q):
        for b in range(a, q):
            gram[a, b] = gram[b, a] = _dot(cols[a], cols[b])
    rhs = np.zeros(q)
    rhs[-1] = sw.gamma
    try:
        s = cho_solve(cho_factor(gram), rhs)
    except LinAlgError:
        try:
            jitter = CHOLESKY_JITTER * np.trace(gram)
            s = cho_solve(cho_factor(gram + jitter * np.eye(q)), rhs)
        except LinAlgError as exc:
            raise SolverBreakdown("Gram matrix of the affine window is numerically singular") from exc
    x_next = x.copy()
    for coef, col in zip(s, cols):
        x_next += coef * col
    state.history.append(x)
    state.x = x_next
    return x_next


@dataclass
class GsState:
    """Iterate and a ring buffer of orthogonal basis tensors with cached norms."""

    x: np.ndarray
    basis: deque
    tau: float
    lambdas: List[float] = field(default_factory=list)
    epoch: int = 0
    restarts: int = 0


def gs_state(x0, tau) -> GsState:
    w = _window_len(tau)
    return GsState(np.array(x0, dtype=np.float64), deque(maxlen=None if w is None else w + 1), tau)


def gs_tkgk_step(state: GsState, sw: SweepResult, tau=None) -> GsState:
    """Orthogonalize ``D_k`` against the last ``tau - 1`` basis tensors and step."""
    tau = state.tau if tau is None else tau
    D = sw.direction
    w = _window_len(tau)
    window = list(state.basis)
    if w is not None:
        window = window[max(0, len(window) - w):] if w else []
    U = D.copy()
    for Ui, ni in window:
        U -= (_dot(Ui, U) / ni) * Ui
    nu = _dot(U, U)
    nd = _dot(D, D)
    if nu < BREAKDOWN_FACTOR * np.finfo(float).eps * nd:
        state.basis.clear()
        state.restarts += 1
        U, nu = D.copy(), nd
    lam = sw.gamma / nu
    state.x = state.x + lam * U
    state.basis.append((U, nu))
    state.lambdas.append(lam)
    state.epoch += 1
    return state


def tridiagonal_gram_inverse(c) -> np.ndarray:
    """Dense form of the tridiagonal ``(V^T V)^{-1}`` built from ``c_t = 1 / (gamma_t s_t)``."""
    c = np.asarray(c, dtype=float)
    K = c.size
    T = np.zeros((K, K))
    if K == 0:
        return T
    T[0, 0] = c[0]
    for i in range(1, K):
        T[i, i] = c[i - 1] + c[i]
        T[i - 1, i] = T[i, i - 1] = -c[i - 1]
    return T


def _tridiag_matvec(c: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    K = v.size
    out[0] = c[0] * v[0]
    if K > 1:
        out[0] -= c[0] * v[1]
        out[1:] = (c[:-1] + c[1:]) * v[1:]
        out[1:] -= c[:-1] * v[:-1]
        out[1:-1] -= c[1:-1] * v[2:]
    return out


@dataclass
class TriState:
    """Iterate, the window of previous iterates and their ``1 / (gamma s)`` values."""

    x: np.ndarray
    iterates: deque
    cvals: deque
    tau: float
    restarts: int = 0


def tri_state(x0, tau) -> TriState:
    w = _window_len(tau)
    return TriState(np.array(x0, dtype=np.float64), deque(maxlen=w), deque(maxlen=w), tau)


def tri_tkgk_step(state: TriState, sw: SweepResult, tau=None) -> TriState:
    """Acceleration step via the closed-form tridiagonal inverse Gram matrix."""
    x = state.x
    d = sw.direction
    dd = _dot(d, d)
    K = len(state.iterates)
    if K:
        # explicit extraction of the window, as the method prescribes
        V = np.stack(list(state.iterates)) - x
        Vtd = np.tensordot(V, d, axes=d.ndim)
        c = np.fromiter(state.cvals, float, K)
        w = _tridiag_matvec(c, Vtd)
        denom = dd - float(Vtd @ w)
    else:
        denom = dd
    if K and not (np.all(np.isfinite(c)) and denom > BREAKDOWN_FACTOR * np.finfo(float).eps * dd):
        state.iterates.clear()
        state.cvals.clear()
        state.restarts += 1
        K, denom = 0, dd
    s_low = sw.gamma / denom
    x_next = x + s_low * d
    if K:
        x_next -= s_low * np.tensordot(w, V, axes=1)
    state.iterates.append(x)
    state.cvals.append(1.0 / (sw.gamma * s_low))
    state.x = x_next
    return state


# ---------------------------------------------------------------------------
# heavy-ball block baseline
# ---------------------------------------------------------------------------


@dataclass
class TakshbmState:
    x: np.ndarray
    x_prev: np.ndarray
    blocks: List[np.ndarray]
    probs: np.ndarray
    rng: np.random.Generator
    iteration: int = 0


def takshbm_state(problem: ProblemInstance, x0, block_size: int, seed: int) -> TakshbmState:
    """Partition the rows into consecutive blocks of ``block_size``."""
    m = problem.A.shape[0]
    q = max(1, min(block_size, m))
    blocks = [np.arange(s, min(s + q, m)) for s in range(0, m, q)]
    norms = np.array([np.sum(problem.A[b] ** 2) for b in blocks])
    total = norms.sum()
    probs = norms / total if total > 0 else np.full(len(blocks), 1.0 / len(blocks))
    x0 = np.array(x0, dtype=np.float64)
    return TakshbmState(x0, x0.copy(), blocks, probs, make_rng(seed, STREAM_BLOCKS))


def takshbm_step(state: TakshbmState, problem: ProblemInstance) -> TakshbmState:
    """``X+ = X - alpha grad + beta (X - X_prev)`` with exact two-direction line search.

    The block is drawn with probability proportional to its squared norm;
    ``(alpha, beta)`` minimize the distance to the least-norm solution.
    """
    if problem.x_star0 is None:
        raise ValueError("tAKSHBM line search needs the least-norm solution")
    x = state.x
    rows = state.blocks[int(state.rng.choice(len(state.blocks), p=state.probs))]
    As = problem.A[rows]
    g = t_product(t_transpose(As), t_product(As, x) - problem.B[rows])
    mom = x - state.x_prev
    err = x - problem.x_star0
    gg, gm, mm = _dot(g, g), _dot(g, mom), _dot(mom, mom)
    ge, me = _dot(g, err), _dot(mom, err)
    det = gg * mm - gm * gm
    if gg == 0.0:
        alpha = beta = 0.0
    elif mm == 0.0 or det <= 1e2 * np.finfo(float).eps * gg * mm:
        alpha, beta = ge / gg, 0.0
    else:
        alpha = (ge * mm - gm * me) / det
        beta = (gm * ge - gg * me) / det
    state.x_prev = x
    state.x = x - alpha * g + beta * mom
    state.iteration += 1
    return state


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def reference_solution(problem: ProblemInstance, x0, rank_tol: float = DEFAULT_RANK_TOL):
    """Projection of ``x0`` onto the solution set, or None without ground truth."""
    if problem.x_star0 is None:
        return None
    if not np.any(x0):
        return problem.x_star0
    A = problem.A
    return problem.x_star0 + x0 - t_product(t_pinv(A, rank_tol), t_product(A, x0))


def run_solver(
    problem: ProblemInstance,
    config: SolverConfig,
    kind: str = "gs",
    x0=None,
    *,
    bank: Optional[ProjectorBank] = None,
    callback: Optional[Callable] = None,
) -> SolverResult:
    """Iterate ``kind`` until ``delta <= tol_delta``, ``RSE <= tol_rse`` or the epoch cap.

    ``callback(k, sweep, x_next)`` is invoked after every update (not for
    tAKSHBM).  The trace holds one row per iterate ``X^k``; its delta and gamma
    are those of the sweep started at ``X^k``.
    """
    kind = kind.lower()
    if kind not in SOLVERS:
        raise ValueError(f"unknown solver {kind!r}; expected one of {SOLVERS}")
    shape = problem.solution_shape
    x0 = np.zeros(shape) if x0 is None else np.array(x0, dtype=np.float64)
    if x0.shape != shape:
        raise ValueError(f"x0 has shape {x0.shape}, expected {shape}")
    x_ref = reference_solution(problem, x0, config.rank_tol)
    den = None if x_ref is None else float(np.sum((x0 - x_ref) ** 2))

    def rse_of(x):
        if x_ref is None:
            return None
        if den == 0.0:
            return 0.0
        return float(np.sum((x - x_ref) ** 2)) / den

    if kind == "takshbm":
        return _run_takshbm(problem, config, x0, rse_of)

    if bank is None:
        bank = ProjectorBank(problem.A, problem.B, config.rank_tol)
    strategy = StrategyState(config.strategy, bank.m, config.seed)
    if kind == "tkgk":
        state = direct_state(x0, config.tau)
    elif kind == "gs":
        state = gs_state(x0, config.tau)
    elif kind == "tri":
        state = tri_state(x0, config.tau)
    else:
        state = None

    trace: List[EpochRecord] = []
    x = x0
    k = sweeps = 0
    t0 = time.perf_counter()
    while True:
        r = rse_of(x)
        rec = EpochRecord(k, r, None, None, time.perf_counter() - t0)
        trace.append(rec)
        if config.tol_rse is not None and r is not None and r <= config.tol_rse:
            reason = "rse"
            break
        if k >= config.max_epochs:
            reason = "max_epochs"
            break
        sw = bank.sweep(x, next_permutation(strategy))
        sweeps += 1
        rec.delta, rec.gamma = sw.delta, sw.gamma
        if kind == "tk":
            x_next = sw.projected
        elif sw.delta <= config.tol_delta:
            reason = "delta"
            break
        elif kind == "tkgk":
            x_next = tkgk_step_direct(state, sw, config.tau)
        elif kind == "gs":
            x_next = gs_tkgk_step(state, sw, config.tau).x
        else:
            x_next = tri_tkgk_step(state, sw, config.tau).x
        if callback is not None:
            callback(k, sw, x_next)
        x = x_next
        k += 1
        if kind == "tk" and sw.delta <= config.tol_delta:
            trace.append(EpochRecord(k, rse_of(x), None, None, time.perf_counter() - t0))
            reason = "delta"
            break
    wall = time.perf_counter() - t0
    restarts = getattr(state, "restarts", 0)
    return SolverResult(x, trace, k, sweeps, reason, wall, restarts, float(k))


def _run_takshbm(problem, config, x0, rse_of) -> SolverResult:
    m = problem.A.shape[0]
    state = takshbm_state(problem, x0, config.block_size, config.seed)
    q = len(state.blocks[0])
    max_iter = math.ceil(config.max_epochs * m / q)
    trace: List[EpochRecord] = []
    t0 = time.perf_counter()
    while True:
        r = rse_of(state.x)
        trace.append(EpochRecord(state.iteration, r, None, None, time.perf_counter() - t0))
        if config.tol_rse is not None and r is not None and r <= config.tol_rse:
            reason = "rse"
            break
        if state.iteration >= max_iter:
            reason = "max_epochs"
            break
        takshbm_step(state, problem)
    wall = time.perf_counter() - t0
    k = state.iteration
    return SolverResult(state.x, trace, k, 0, reason, wall, 0, k * q / m)
