"""Dense-matrix oracles for the convergence theory.

Everything here builds ``bcirc`` matrices explicitly, so it is restricted to
desk-scale problems (``l*n`` and ``m*n`` at most ``MAX_DENSE``).  None of it is
used by the solvers themselves.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .problems import ProblemInstance, SyntheticSpec, gen_synthetic
from .sampling import StrategyState, next_permutation
from .solvers import (
    UNBOUNDED,
    ProjectorBank,
    SolverConfig,
    SweepResult,
    gs_state,
    gs_tkgk_step,
    run_solver,
)
from .tensor import (
    DEFAULT_RANK_TOL,
    bcirc,
    fold,
    from_bcirc,
    t_identity,
    t_pinv,
    t_product,
    t_transpose,
    tv,
    unfold,
)

MAX_DENSE = 512


class DenseSizeError(ValueError):
    pass


def _check_dense(A) -> None:
    m, l, n = np.shape(A)
    if l * n > MAX_DENSE or m * n > MAX_DENSE:
        raise DenseSizeError(f"dense oracle refuses {m}x{l}x{n}: l*n and m*n must be <= {MAX_DENSE}")


def moore_penrose_residual(M: np.ndarray, P: np.ndarray) -> float:
    """Largest relative violation of the four Moore-Penrose conditions."""
    scale = max(np.linalg.norm(M), 1e-300)
    pscale = max(np.linalg.norm(P), 1e-300)
    errs = [
        np.linalg.norm(M @ P @ M - M) / scale,
        np.linalg.norm(P @ M @ P - P) / pscale,
        np.linalg.norm((M @ P).T - M @ P) / max(np.linalg.norm(M @ P), 1e-300),
        np.linalg.norm((P @ M).T - P @ M) / max(np.linalg.norm(P @ M), 1e-300),
    ]
    return float(max(errs))


# ---------------------------------------------------------------------------
# epoch operator  P_pi(X) = T_pi * X + G_pi
# ---------------------------------------------------------------------------


def _row_projector(A, i, rank_tol):
    bc = bcirc(A[i:i + 1])
    pinv = np.linalg.pinv(bc, rcond=rank_tol)
    return pinv, np.eye(bc.shape[1]) - pinv @ bc


def compute_T_pi(A, pi, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Linear part of one sweep, ``(I - A_m^+ A_m) * ... * (I - A_1^+ A_1)``."""
    A = np.asarray(A, dtype=float)
    _check_dense(A)
    m, l, n = A.shape
    T = np.eye(l * n)
    for i in pi:
        _, proj = _row_projector(A, int(i), rank_tol)
        T = proj @ T
    return from_bcirc(T, n)


def compute_G_pi(A, B, pi, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Affine part of one sweep: the sweep applied to the zero tensor."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    _check_dense(A)
    m, l, n = A.shape
    g = np.zeros((l * n, B.shape[1]))
    for i in pi:
        i = int(i)
        pinv, proj = _row_projector(A, i, rank_tol)
        g = proj @ g + pinv @ unfold(B[i:i + 1])
    return fold(g, n)


def rho_pi(A, pi, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """``||bcirc(T_pi * A^+ * A)||_2^2``, the per-epoch contraction of plain TK."""
    A = np.asarray(A, dtype=float)
    _check_dense(A)
    n = A.shape[2]
    T = bcirc(compute_T_pi(A, pi, rank_tol))
    bcA = bcirc(A)
    M = T @ np.linalg.pinv(bcA, rcond=rank_tol) @ bcA
    return float(np.linalg.norm(M, 2) ** 2)


# ---------------------------------------------------------------------------
# rate quantities of one accelerated step
# ---------------------------------------------------------------------------


@dataclass
class RateReport:
    rho_pi: Optional[float]
    rate_beta: float
    zeta: float
    bound: float
    observed_factor: Optional[float]


def projection_fraction(window: Sequence[np.ndarray], x, d) -> float:
    """``||V V^+ d||^2 / ||d||^2`` for ``V = [X^j - X^k, ..., X^{k-1} - X^k]``."""
    dvec = tv(d)
    dd = float(dvec @ dvec)
    if not window:
        return 0.0
    V = np.column_stack([tv(xi - x) for xi in window])
    coef, *_ = np.linalg.lstsq(V, dvec, rcond=None)
    proj = V @ coef
    return float(proj @ proj) / dd


def rate_beta_zeta(window, x, projected, x_star, x_next=None, rho=None) -> RateReport:
    """Rate quantities of the step taken from ``x`` with previous iterates ``window``.

    ``bound = 1 - beta * zeta**2`` bounds ``||X^{k+1} - X*||^2 / ||X^k - X*||^2``.
    """
    x = np.asarray(x)
    d = projected - x
    frac = projection_fraction(window, x, d)
    beta = 1.0 / (1.0 - frac)
    e = x - x_star
    ne = np.linalg.norm(e)
    zeta = float(np.vdot(e, -d)) / (ne * np.linalg.norm(d))
    observed = None
    if x_next is not None:
        observed = float(np.sum((x_next - x_star) ** 2)) / ne**2
    return RateReport(rho, beta, zeta, 1.0 - beta * zeta**2, observed)


def _rel(a: float, b: float, scale: float) -> float:
    return abs(a - b) / scale if scale > 0 else abs(a - b)


@dataclass
class EpochAudit:
    """Identity residuals and rate quantities at one epoch of an accelerated run."""

    epoch: int
    pythagoras: float
    gamma_dual: float
    gamma_square: float
    in_range: float
    rate: RateReport


def sweep_identities(sw: SweepResult, x_star) -> tuple:
    """Relative residuals of the three per-sweep identities.

    ``||r||^2`` is recovered as ``2 gamma - delta`` from the logged values, so
    a corrupted gamma shows up here.
    """
    x, P = sw.x, sw.projected
    r2 = 2.0 * sw.gamma - sw.delta
    e2 = float(np.sum((x - x_star) ** 2))
    pyth = _rel(e2, float(np.sum((P - x_star) ** 2)) + r2, e2)
    dual = float(np.vdot(P - x, x_star - x))
    dual_err = _rel(dual, sw.gamma, max(abs(dual), abs(sw.gamma)))
    lhs = float(np.vdot(x - x_star, x - P)) ** 2
    rhs = sw.delta * r2 + float(np.vdot(P - x_star, x - P)) ** 2
    sq_err = _rel(lhs, rhs, max(lhs, rhs))
    return pyth, dual_err, sq_err


def audit_run(
    problem: ProblemInstance,
    config: SolverConfig,
    kind: str = "tkgk",
    *,
    fault: Optional[str] = None,
    x0=None,
):
    """Run an accelerated solver and audit every epoch against the theory.

    Returns ``(result, audits, rho)`` where ``rho`` maps permutation tuples to
    their contraction factor.  ``fault="gamma"`` perturbs the logged gamma
    before the checks (negative control).
    """
    if problem.x_star0 is None:
        raise ValueError("auditing needs the least-norm solution")
    A = problem.A
    _check_dense(A)
    shape = problem.solution_shape
    x0 = np.zeros(shape) if x0 is None else np.asarray(x0, dtype=float)
    x_star = problem.x_star0
    if np.any(x0):
        x_star = x_star + x0 - t_product(t_pinv(A, config.rank_tol), t_product(A, x0))
    null_proj = t_identity(shape[0], shape[2]) - t_product(t_pinv(A, config.rank_tol), A)
    tau = config.tau
    history: deque = deque(maxlen=None if tau == UNBOUNDED else int(tau) - 1)
    rho_cache: dict = {}
    audits: List[EpochAudit] = []
    perms: List[np.ndarray] = []
    strategy = StrategyState(config.strategy, A.shape[0], config.seed)

    # replay the permutation stream to know pi_k inside the callback
    def perm_for(k):
        while len(perms) <= k:
            perms.append(next_permutation(strategy))
        return perms[k]

    def callback(k, sw, x_next):
        if fault == "gamma":
            sw = SweepResult(sw.x, sw.projected, sw.delta, sw.rnorm2, 1.25 * sw.gamma)
        pi = tuple(int(i) for i in perm_for(k))
        if pi not in rho_cache:
            rho_cache[pi] = rho_pi(A, pi, config.rank_tol)
        pyth, dual, sq = sweep_identities(sw, x_star)
        rate = rate_beta_zeta(list(history), sw.x, sw.projected, x_star, x_next, rho_cache[pi])
        drift = np.linalg.norm(t_product(null_proj, x_next - x0))
        in_range = drift / max(np.linalg.norm(x_next), 1e-300)
        audits.append(EpochAudit(k, pyth, dual, sq, float(in_range), rate))
        history.append(sw.x)

    result = run_solver(problem, config, kind, x0, callback=callback)
    return result, audits, rho_cache


# ---------------------------------------------------------------------------
# affine minimization oracle
# ---------------------------------------------------------------------------


def affine_argmin_oracle(window: Sequence[np.ndarray], projected, x_star, method: str = "lstsq"):
    """Point of ``aff(window + [projected])`` closest to ``x_star``.

    ``method`` selects an SVD-based (``lstsq``) or pivoted-QR (``qr``) solve of
    the same least-squares problem; the two serve as mutual checks.
    """
    base = np.asarray(projected, dtype=float)
    if not window:
        return base.copy()
    D = np.column_stack([tv(w - base) for w in window])
    rhs = tv(x_star - base)
    if method == "lstsq":
        coef, *_ = np.linalg.lstsq(D, rhs, rcond=None)
    elif method == "qr":
        Q, R, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        r = int(np.sum(diag > diag.max() * 1e-13)) if diag.size and diag.max() > 0 else 0
        coef = np.zeros(D.shape[1])
        if r:
            coef[piv[:r]] = scipy.linalg.solve_triangular(R[:r, :r], Q[:, :r].T @ rhs)
    else:
        raise ValueError(f"unknown method {method!r}")
    return base + (D @ coef).reshape(base.shape, order="F")


# ---------------------------------------------------------------------------
# Arnoldi structure for a fixed permutation and an unbounded window
# ---------------------------------------------------------------------------


@dataclass
class ArnoldiReport:
    hessenberg: np.ndarray
    orth_error: float
    decomposition_residual: float
    subdiag_error: float
    below_subdiag_max: float
    lambdas: List[float] = field(default_factory=list)


def _fixed_perm_run(problem: ProblemInstance, strategy: str, steps: int, seed: int, x0=None, rank_tol=DEFAULT_RANK_TOL):
    """Unbounded-window GS run returning ``(pi, iterates, basis, lambdas)``."""
    if strategy.lower() == "rr":
        raise ValueError(
            "the Arnoldi decomposition needs one fixed permutation; use the 'is' or 'so' strategy, not 'rr'"
        )
    A = problem.A
    _check_dense(A)
    bank = ProjectorBank(A, problem.B, rank_tol)
    perm = next_permutation(StrategyState(strategy, A.shape[0], seed))
    x = np.zeros(problem.solution_shape) if x0 is None else np.asarray(x0, dtype=float)
    state = gs_state(x, UNBOUNDED)
    iterates = [state.x]
    for _ in range(steps):
        sw = bank.sweep(state.x, perm)
        if sw.delta <= SolverConfig.tol_delta:
            break
        gs_tkgk_step(state, sw)
        iterates.append(state.x)
    if state.restarts:
        raise RuntimeError("Gram-Schmidt breakdown during the Arnoldi run")
    basis = [u for u, _ in state.basis]
    return perm, iterates, basis, list(state.lambdas)


def arnoldi_check(problem: ProblemInstance, strategy: str = "is", epochs: int = 15, seed: int = 0,
                  rank_tol: float = DEFAULT_RANK_TOL) -> ArnoldiReport:
    """Hessenberg matrix and Arnoldi-decomposition residual after ``epochs`` steps.

    ``epochs`` counts ``k + 1``: the report covers ``U_0 .. U_k`` with
    ``k = epochs - 1`` and uses ``U_{k+1}`` for the remainder term.
    """
    perm, _, basis, lambdas = _fixed_perm_run(problem, strategy, epochs + 1, seed, rank_tol=rank_tol)
    if len(basis) < epochs + 1:
        raise RuntimeError("run converged before the requested number of Arnoldi steps")
    k = epochs - 1
    l, p, n = problem.solution_shape
    C = t_identity(l, n) - compute_T_pi(problem.A, perm, rank_tol)
    U = basis[: k + 2]
    CU = [t_product(C, U[j]) for j in range(k + 1)]
    norms = [float(np.sum(u * u)) for u in U]

    H = np.zeros((k + 1, k + 1))
    for j in range(k + 1):
        for i in range(j + 1):
            H[i, j] = float(np.vdot(U[i], CU[j])) / norms[i]
        if j < k:
            H[j + 1, j] = -1.0 / lambdas[j]

    # compact form  C * U^k = U^k * H_k + R_k * E_k^T
    Uk = np.concatenate(U[: k + 1], axis=1)
    Hk = np.zeros(((k + 1) * p, (k + 1) * p, n))
    Hk[:, :, 0] = np.kron(H, np.eye(p))
    Ek = np.zeros(((k + 1) * p, p, n))
    e_last = np.zeros((k + 1, 1))
    e_last[-1] = 1.0
    Ek[:, :, 0] = np.kron(e_last, np.eye(p))
    Rk = (-1.0 / lambdas[k]) * U[k + 1]
    lhs = t_product(C, Uk)
    resid = lhs - t_product(Uk, Hk) - t_product(Rk, t_transpose(Ek))
    decomp = float(np.linalg.norm(resid) / np.linalg.norm(lhs))

    orth = 0.0
    for i in range(k + 2):
        for j in range(i):
            orth = max(orth, abs(float(np.vdot(U[i], U[j]))) / math.sqrt(norms[i] * norms[j]))
    sub = max((abs(H[j + 1, j] + 1.0 / lambdas[j]) for j in range(k)), default=0.0)
    below = float(np.abs(np.tril(H, -2)).max()) if k >= 2 else 0.0
    return ArnoldiReport(H, orth, decomp, sub, below, lambdas[: k + 1])


def krylov_membership_check(problem: ProblemInstance, strategy: str = "is", epochs: int = 10, seed: int = 0,
                            x0=None, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Max relative distance of ``X^{k+1} - X^0`` from ``K_{k+1}(C, G - C * X^0)``.

    The Krylov basis is built independently of the solver by repeatedly
    applying the dense ``C = I - T_pi`` and orthonormalizing.
    """
    perm, iterates, _, _ = _fixed_perm_run(problem, strategy, epochs, seed, x0=x0, rank_tol=rank_tol)
    l, p, n = problem.solution_shape
    x0 = iterates[0]
    C = bcirc(t_identity(l, n) - compute_T_pi(problem.A, perm, rank_tol))
    G = compute_G_pi(problem.A, problem.B, perm, rank_tol)
    # C acts on tv(X) through unfold; apply it column block by column block
    def apply_C(X):
        return fold(C @ unfold(X), n)

    r0 = G - apply_C(x0)
    Q: List[np.ndarray] = []
    worst = 0.0
    v = r0
    for k in range(len(iterates) - 1):
        # grow K_{k+1} by one vector
        q = tv(v).copy()
        for qi in Q:
            q -= (qi @ q) * qi
        for qi in Q:
            q -= (qi @ q) * qi
        nq = np.linalg.norm(q)
        if nq > 1e-12 * max(np.linalg.norm(tv(v)), 1e-300):
            Q.append(q / nq)
        v = apply_C(v)
        step = tv(iterates[k + 1] - x0)
        ns = np.linalg.norm(step)
        if ns == 0.0:
            continue
        Qm = np.column_stack(Q)
        resid = step - Qm @ (Qm.T @ step)
        worst = max(worst, float(np.linalg.norm(resid) / ns))
    return worst


# ---------------------------------------------------------------------------
# verification suite behind `tkz verify`
# ---------------------------------------------------------------------------


SCALES = {
    # (algebra trials, synthetic instance (m, l, n, p, r, kappa), epochs, arnoldi instance)
    "tiny": (100, (12, 9, 2, 2, 9, 10.0), 60, (20, 15, 2, 3, 15, 10.0)),
    "small": (400, (40, 30, 3, 5, 30, 10.0), 100, (20, 15, 2, 3, 15, 10.0)),
}

FAULTS = ("gamma",)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool


def _check(name, value, threshold, *, strict=False) -> Check:
    value = float(value)
    ok = value < threshold if strict else value <= threshold
    return Check(name, value, float(threshold), bool(ok and math.isfinite(value)))


def algebra_checks(trials: int, seed: int) -> List[Check]:
    rng = np.random.default_rng(seed)
    worst = {"homomorphism": 0.0, "adjoint": 0.0, "fold_unfold": 0.0, "moore_penrose": 0.0, "fourier_vs_dense": 0.0}
    for _ in range(trials):
        m, l, p = rng.integers(1, 7, size=3)
        n = int(rng.integers(1, 5))
        A = rng.standard_normal((m, l, n))
        B = rng.standard_normal((l, p, n))
        Cc = rng.standard_normal((m, p, n))
        AB = t_product(A, B)
        lhs = bcirc(AB)
        rhs = bcirc(A) @ bcirc(B)
        worst["homomorphism"] = max(worst["homomorphism"], np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300))
        a1 = float(np.vdot(AB, Cc))
        a2 = float(np.vdot(B, t_product(t_transpose(A), Cc)))
        worst["adjoint"] = max(worst["adjoint"], abs(a1 - a2) / max(np.linalg.norm(AB) * np.linalg.norm(Cc), 1e-300))
        worst["fold_unfold"] = max(worst["fold_unfold"], float(np.abs(fold(unfold(A), n) - A).max()))
        P = t_pinv(A)
        worst["moore_penrose"] = max(worst["moore_penrose"], moore_penrose_residual(bcirc(A), bcirc(P)))
        dense = fold(bcirc(A) @ unfold(B), n)
        worst["fourier_vs_dense"] = max(worst["fourier_vs_dense"], np.linalg.norm(AB - dense) / max(np.linalg.norm(dense), 1e-300))
    return [_check(f"algebra.{k}", v, 1e-10) for k, v in worst.items()]


def solver_checks(spec: SyntheticSpec, epochs: int, strategy: str, fault: Optional[str]) -> List[Check]:
    problem = gen_synthetic(spec)
    config = SolverConfig(strategy=strategy, tau=5, max_epochs=epochs, seed=spec.seed, tol_rse=1e-12)
    res, audits, rho = audit_run(problem, config, "tkgk", fault=fault)
    checks = [
        _check("identity.pythagoras", max(a.pythagoras for a in audits), 1e-8),
        _check("identity.gamma_dual", max(a.gamma_dual for a in audits), 1e-8),
        _check("identity.gamma_square", max(a.gamma_square for a in audits), 1e-6),
        _check("rate.rho_below_one", max(rho.values()), 1.0, strict=True),
        _check("rate.bound_minus_rho", max(a.rate.bound - a.rate.rho_pi for a in audits), 1e-8),
        _check("rate.observed_minus_rho", max(a.rate.observed_factor - a.rate.rho_pi for a in audits), 1e-8),
        _check("rate.observed_vs_bound", max(abs(a.rate.observed_factor - a.rate.bound) for a in audits), 1e-6),
        _check("range.iterates_in_affine_range", max(a.in_range for a in audits), 1e-8),
    ]
    runs = {}
    for kind in ("tkgk", "gs", "tri"):
        xs = []
        run_solver(problem, SolverConfig(strategy=strategy, tau=5, max_epochs=epochs, seed=spec.seed),
                   kind, callback=lambda k, sw, xn, xs=xs: xs.append(xn))
        runs[kind] = xs
    dev = 0.0
    for other in ("gs", "tri"):
        for a, b in zip(runs["tkgk"], runs[other]):
            dev = max(dev, np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))
    checks.append(_check("equivalence.direct_gs_tri", dev, 1e-8))
    final = run_solver(problem, SolverConfig(strategy=strategy, tau=5, max_epochs=2000, seed=spec.seed, tol_rse=1e-20), "gs")
    rel = np.linalg.norm(final.x - problem.x_star0) / np.linalg.norm(problem.x_star0)
    checks.append(_check("convergence.least_norm", rel, 1e-6))
    return checks


def arnoldi_checks(spec: SyntheticSpec, strategy: str, steps: int) -> List[Check]:
    problem = gen_synthetic(spec)
    rep = arnoldi_check(problem, strategy, steps, seed=spec.seed)
    kry = krylov_membership_check(problem, strategy, min(steps, 10), seed=spec.seed)
    return [
        _check("arnoldi.orthogonality", rep.orth_error, 1e-8),
        _check("arnoldi.decomposition_residual", rep.decomposition_residual, 1e-7),
        _check("arnoldi.subdiagonal", rep.subdiag_error, 0.0),
        _check("arnoldi.below_subdiagonal", rep.below_subdiag_max, 0.0),
        _check("arnoldi.krylov_membership", kry, 1e-6),
    ]


def run_verification(scale: str = "small", seed: int = 0, fault: Optional[str] = None,
                     strategy: str = "so") -> List[Check]:
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; available: {FAULTS}")
    if strategy == "rr":
        raise ValueError(
            "the Arnoldi checks need one fixed permutation; use the 'is' or 'so' strategy, not 'rr'"
        )
    trials, synth, epochs, arn = SCALES[scale]
    checks = algebra_checks(trials, seed)
    checks += solver_checks(SyntheticSpec(*synth, seed=seed), epochs, strategy, fault)
    checks += arnoldi_checks(SyntheticSpec(*arn, seed=seed), strategy, 15)
    return checks


def report(checks: List[Check]) -> dict:
    return {
        "passed": all(c.passed for c in checks),
        "checks": [asdict(c) for c in checks],
    }
