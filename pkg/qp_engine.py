#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Convex QP / LP engine.

QPs come in the lifted least-squares form

    minimize   |W y|^2
    subject to E y = b,  C y <= d

whose dual in the multipliers pi = (lam, rho, eta) reads

    maximize   -b'lam - d'eta - |rho|^2 / 4
    subject to E'lam + W'rho + C'eta = 0,  eta >= 0.

The solver works on that dual with a primal active-set method: every iterate
is dual feasible, the dual objective never decreases, and a solve can stop as
soon as it crosses a cutoff. Each working set fixes some eta entries at zero.
The maximizer over that face comes from the sparse primal KKT system of the
equality-constrained problem with the free rows of C held active, factored with
a quasidefinite regularization and refined against the exact system. When the
face system is inconsistent the dual is unbounded along a zero-curvature ray,
found on a dense least-squares path and returned as a Farkas certificate of
primal infeasibility.

LPs go through scipy's HiGHS interface.
"""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import lstsq, null_space
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from config import (
    QP_ASCENT_TOL,
    QP_FEASIBILITY_TOL,
    QP_KKT_REGULARIZATION,
    QP_MAX_ITER_FACTOR,
    QP_OPTIMALITY_TOL,
    QP_PIVOT_TOL,
    QP_REFINE_STEPS,
    QP_STALL_LIMIT,
    logger,
)


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    CUTOFF = "cutoff"
    ITERATION_LIMIT = "iteration_limit"
    NUMERICAL = "numerical"  # dual ascent lost beyond round-off
    UNBOUNDED = "unbounded"


def _csc(M) -> sparse.csc_matrix:
    if sparse.issparse(M):
        return sparse.csc_matrix(M, dtype=float)
    return sparse.csc_matrix(np.atleast_2d(np.asarray(M, dtype=float)))


def _hstack(blocks: Sequence[sparse.spmatrix], n_rows: int) -> sparse.csc_matrix:
    blocks = [B for B in blocks if B.shape[1]]
    if not blocks:
        return sparse.csc_matrix((n_rows, 0))
    return sparse.hstack(blocks, format="csc")


def _vstack(blocks: Sequence[sparse.spmatrix], n_cols: int) -> sparse.csc_matrix:
    blocks = [B for B in blocks if B.shape[0]]
    if not blocks:
        return sparse.csc_matrix((0, n_cols))
    return sparse.vstack(blocks, format="csc")


@dataclass(frozen=True)
class ConvexQP:
    """min |W y|^2 s.t. E y = b, C y <= d. W, E and C are kept as CSC blocks."""

    W: sparse.csc_matrix
    E: sparse.csc_matrix
    b: np.ndarray
    C: sparse.csc_matrix
    d: np.ndarray

    def __post_init__(self):
        for name in ("W", "E", "C"):
            object.__setattr__(self, name, _csc(getattr(self, name)))
        for name in ("b", "d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_vars(self) -> int:
        return self.W.shape[1]

    @property
    def n_lift(self) -> int:
        return self.W.shape[0]

    @property
    def n_eq(self) -> int:
        return self.E.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.C.shape[0]

    def stationarity_matrix(self) -> sparse.csc_matrix:
        return _hstack([self.E.T, self.W.T, self.C.T], self.n_vars)


@dataclass
class LagrangeMultipliers:
    """Stacked dual point: equalities, lift rows, inequalities."""

    lam: np.ndarray
    rho: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros(cls, qp: ConvexQP) -> "LagrangeMultipliers":
        return cls(np.zeros(qp.n_eq), np.zeros(qp.n_lift), np.zeros(qp.n_ineq))

    @classmethod
    def from_vector(cls, pi: np.ndarray, n_eq: int, n_lift: int) -> "LagrangeMultipliers":
        pi = np.asarray(pi, dtype=float)
        return cls(
            pi[:n_eq].copy(),
            pi[n_eq : n_eq + n_lift].copy(),
            pi[n_eq + n_lift :].copy(),
        )

    def vector(self) -> np.ndarray:
        return np.concatenate([self.lam, self.rho, self.eta])


def dual_value(qp: ConvexQP, mult: LagrangeMultipliers) -> float:
    return float(-qp.b @ mult.lam - qp.d @ mult.eta - 0.25 * mult.rho @ mult.rho)


def stationarity_residual(qp: ConvexQP, mult: LagrangeMultipliers) -> float:
    r = qp.E.T @ mult.lam + qp.W.T @ mult.rho + qp.C.T @ mult.eta
    return float(np.max(np.abs(r), initial=0.0))


@dataclass
class SolveResult:
    status: SolveStatus
    objective: float
    primal: Optional[np.ndarray] = None
    dual: Optional[LagrangeMultipliers] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0
    history: List[float] = field(default_factory=list)
    solve_time: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v), initial=0.0))


class DualActiveSetSolver:
    """
    Dual active-set QP solver. Holds a mutable workspace (counters and the last
    working set), so one instance per thread.
    """

    def __init__(
        self,
        pivot_tol: float = QP_PIVOT_TOL,
        feasibility_tol: float = QP_FEASIBILITY_TOL,
        optimality_tol: float = QP_OPTIMALITY_TOL,
        max_iter: Optional[int] = None,
        stall_limit: int = QP_STALL_LIMIT,
        ascent_tol: float = QP_ASCENT_TOL,
        regularization: float = QP_KKT_REGULARIZATION,
        refine_steps: int = QP_REFINE_STEPS,
    ):
        self.pivot_tol = pivot_tol
        self.feasibility_tol = feasibility_tol
        self.optimality_tol = optimality_tol
        self.max_iter = max_iter
        self.stall_limit = stall_limit
        self.ascent_tol = ascent_tol
        self.regularization = regularization
        self.refine_steps = refine_steps

        self.solves = 0
        self.total_iterations = 0
        self.dense_steps = 0
        self.last_working_set: Optional[np.ndarray] = None

    def solve(
        self,
        qp: ConvexQP,
        warm: Optional[LagrangeMultipliers] = None,
        cutoff: Optional[float] = None,
    ) -> SolveResult:
        start = time.perf_counter()
        self.solves += 1

        p, k, m = qp.n_eq, qp.n_lift, qp.n_ineq
        N = qp.stationarity_matrix()
        c = np.concatenate([qp.b, np.zeros(k), qp.d])
        rho = slice(p, p + k)
        off = p + k
        H = (2.0 * (qp.W.T @ qp.W)).tocsc()
        N_dense: Optional[np.ndarray] = None

        def value_at(pi: np.ndarray) -> float:
            return -float(c @ pi + 0.25 * pi[rho] @ pi[rho])

        pi = self._initial_point(qp, N, warm)
        working = pi[off:] <= self.feasibility_tol
        pi[off:][working] = 0.0

        max_iter = self.max_iter or QP_MAX_ITER_FACTOR * max(1, p + m)
        history: List[float] = []
        bland = False
        stall = 0

        def finish(status, objective, **kwargs) -> SolveResult:
            self.total_iterations += len(history)
            self.last_working_set = np.flatnonzero(working)
            return SolveResult(
                status=status,
                objective=objective,
                iterations=len(history),
                history=history,
                solve_time=time.perf_counter() - start,
                **kwargs,
            )

        for _ in range(max_iter):
            value = value_at(pi)
            if history:
                if value <= history[-1] + 1e-12 * (1.0 + abs(value)):
                    stall += 1
                else:
                    stall = 0
                if stall > self.stall_limit and not bland:
                    logger.debug("QP stalled, switching to Bland's rule")
                    bland = True
            history.append(value)

            if cutoff is not None and value >= cutoff:
                return finish(
                    SolveStatus.CUTOFF,
                    value,
                    dual=LagrangeMultipliers.from_vector(pi, p, k),
                )

            step = None
            face = self._face_point(qp, H, np.flatnonzero(~working))
            if face is not None:
                primal, target = face
                step = self._advance(value_at, value, pi, target - pi, working, off)
                if step is None:
                    logger.debug("sparse face step lost dual ascent, retrying on the dense path")
            if step is None:
                if N_dense is None:
                    N_dense = N.toarray()
                direction, primal = self._dense_direction(N_dense, c, pi, working, p, k)
                if primal is None:
                    alpha, block = self._ratio_test(pi, direction, working, off, np.inf)
                    if block is None:
                        return finish(SolveStatus.INFEASIBLE, **self._certificate(qp, direction, p, k))
                    pi += alpha * direction
                    working[block] = True
                    pi[off + block] = 0.0
                    continue
                step = self._advance(value_at, value, pi, direction, working, off)
                if step is None:
                    logger.warning("QP step lost dual ascent beyond round-off, stopping at the last dual point")
                    return finish(SolveStatus.NUMERICAL, value, dual=LagrangeMultipliers.from_vector(pi, p, k))

            pi, block = step
            if block is not None:
                working[block] = True
                continue

            active = np.flatnonzero(working)
            kappa = qp.d[active] - qp.C[active] @ primal
            scale = 1.0 + _inf_norm(qp.d)
            if active.size == 0 or kappa.min() >= -self.optimality_tol * scale:
                dual = LagrangeMultipliers.from_vector(pi, p, k)
                objective = dual_value(qp, dual)
                primal_objective = float(np.sum((qp.W @ primal) ** 2))
                if abs(primal_objective - objective) > 1e-6 * (1.0 + abs(objective)):
                    logger.debug(
                        f"QP duality gap {primal_objective - objective:.3e} at optimum"
                    )
                return finish(SolveStatus.OPTIMAL, objective, primal=primal, dual=dual)

            if bland:
                release = int(active[np.flatnonzero(kappa < -self.optimality_tol * scale)[0]])
            else:
                release = int(active[np.argmin(kappa)])
            working[release] = False

        logger.warning(f"QP iteration limit {max_iter} reached")
        dual = LagrangeMultipliers.from_vector(pi, p, k)
        return finish(SolveStatus.ITERATION_LIMIT, dual_value(qp, dual), dual=dual)

    def _face_point(
        self, qp: ConvexQP, H: sparse.csc_matrix, free: np.ndarray
    ) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """
        (primal y, dual maximizer) on the face where only the `free` entries of
        eta may be nonzero, from

            [2W'W  A'] [y]   [0]
            [A     0 ] [z] = [r],   A = [E; C_free], r = [b; d_free].

        None when the refined solution does not reach the residual tolerance,
        which is the case for inconsistent faces.
        """
        n, p, k = qp.n_vars, qp.n_eq, qp.n_lift
        A = _vstack([qp.E, qp.C[free]], n)
        q = A.shape[0]
        K = sparse.bmat([[H, A.T], [A, None]], format="csc") if q else H
        delta = self.regularization * (1.0 + float(abs(H).max()))
        reg = sparse.diags(np.concatenate([np.full(n, delta), np.full(q, -delta)]))
        try:
            lu = splu((K + reg).tocsc())
        except RuntimeError:
            return None

        rhs = np.concatenate([np.zeros(n), qp.b, qp.d[free]])
        tol = self.optimality_tol * (1.0 + _inf_norm(rhs))
        floor = 1e-14 * (1.0 + _inf_norm(rhs))
        sol = np.zeros(n + q)
        residual, error = rhs, np.inf
        for _ in range(self.refine_steps):
            trial = sol + lu.solve(residual)
            trial_residual = rhs - K @ trial
            trial_error = _inf_norm(trial_residual)
            if trial_error >= error:
                break
            sol, residual, previous, error = trial, trial_residual, error, trial_error
            if error <= floor or error > 0.5 * previous:
                break
        if error > tol:
            return None

        y, z = sol[:n], sol[n:]
        target = np.zeros(p + k + qp.n_ineq)
        target[:p] = z[:p]
        target[p : p + k] = 2.0 * (qp.W @ y)
        target[p + k + free] = z[p:]
        return y, target

    def _dense_direction(
        self, N: np.ndarray, c: np.ndarray, pi: np.ndarray, working: np.ndarray, p: int, k: int
    ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """
        Least-squares step on the dual face. Returns (step, primal), or
        (ray, None) when the face system is inconsistent and the dual grows
        without bound along a zero-curvature direction.
        """
        off = p + k
        nv = pi.size
        self.dense_steps += 1
        hdiag = np.zeros(nv)
        hdiag[p:off] = 0.5
        g = c.copy()
        g[p:off] += 0.5 * pi[p:off]
        F = np.flatnonzero(np.concatenate([np.ones(off, dtype=bool), ~working]))
        nF = F.size
        NF = N[:, F]
        hF = hdiag[F]

        K = np.zeros((nF + N.shape[0], nF + N.shape[0]))
        K[:nF, :nF] = np.diag(hF)
        K[:nF, nF:] = -NF.T
        K[nF:, :nF] = NF
        rhs = np.concatenate([-g[F], -N @ pi])
        sol = lstsq(K, rhs, cond=self.pivot_tol, lapack_driver="gelsd")[0]

        direction = np.zeros(nv)
        if _inf_norm(K @ sol - rhs) > self.optimality_tol * (1.0 + _inf_norm(rhs)):
            M = np.vstack([np.eye(nF)[hF > 0], NF])
            Z = null_space(M, rcond=self.pivot_tol)
            r = Z.T @ g[F] if Z.size else np.zeros(0)
            if _inf_norm(r) > self.optimality_tol:
                direction[F] = -Z @ r
                return direction, None
        direction[F] = sol[:nF]
        return direction, sol[nF:]

    def _advance(self, value_at, value, pi, direction, working, off):
        """Ratio-tested step towards pi + direction; None if it loses dual ascent beyond round-off."""
        alpha, block = self._ratio_test(pi, direction, working, off, 1.0)
        candidate = pi + alpha * direction
        candidate[off:][working] = 0.0
        if block is not None:
            candidate[off + block] = 0.0
        if value - value_at(candidate) > self.ascent_tol * (1.0 + abs(value)):
            return None
        return candidate, block

    def _initial_point(
        self, qp: ConvexQP, N: sparse.csc_matrix, warm: Optional[LagrangeMultipliers]
    ) -> np.ndarray:
        nv = N.shape[1]
        if warm is None:
            return np.zeros(nv)
        pi = warm.vector().astype(float)
        if pi.size != nv:
            raise ValueError(f"warm dual has {pi.size} entries, expected {nv}")
        off = qp.n_eq + qp.n_lift
        pi[off:] = np.maximum(pi[off:], 0.0)
        scale = max(1.0, _inf_norm(pi))
        residual = N @ pi
        if _inf_norm(residual) <= self.feasibility_tol * scale:
            return pi
        # project the unconstrained multipliers back onto stationarity
        delta = lstsq(N[:, :off].toarray(), -residual, cond=self.pivot_tol)[0]
        pi[:off] += delta
        if _inf_norm(N @ pi) <= self.feasibility_tol * scale:
            logger.debug(f"warm dual repaired, residual was {_inf_norm(residual):.3e}")
            return pi
        logger.warning("warm dual could not be repaired, starting from zero")
        return np.zeros(nv)

    def _ratio_test(self, pi, step, working, off, limit):
        eta = pi[off:]
        s = step[off:]
        candidates = (~working) & (s < -self.pivot_tol)
        if not candidates.any():
            return limit, None
        ratios = np.full(eta.size, np.inf)
        ratios[candidates] = eta[candidates] / -s[candidates]
        i = int(np.argmin(ratios))
        if ratios[i] >= limit:
            return limit, None
        return max(float(ratios[i]), 0.0), i

    def _certificate(self, qp: ConvexQP, ray: np.ndarray, p: int, k: int) -> dict:
        ray = ray / max(_inf_norm(ray), 1e-300)
        ray[p : p + k] = 0.0
        ray[p + k :] = np.maximum(ray[p + k :], 0.0)
        dual = LagrangeMultipliers.from_vector(ray, p, k)
        return {"objective": dual_value(qp, dual), "dual": dual}


def solve_qp(
    qp: ConvexQP,
    warm: Optional[LagrangeMultipliers] = None,
    cutoff: Optional[float] = None,
    solver: Optional[DualActiveSetSolver] = None,
) -> SolveResult:
    return (solver or DualActiveSetSolver()).solve(qp, warm=warm, cutoff=cutoff)


@dataclass(frozen=True)
class LinearProgram:
    """min c'z s.t. C z <= d, E z = f, optionally z >= 0."""

    c: np.ndarray
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    nonnegative: bool = False

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def blocks(self):
        n = self.n_vars
        C = np.zeros((0, n)) if self.C is None else np.atleast_2d(self.C)
        d = np.zeros(0) if self.d is None else np.asarray(self.d, dtype=float)
        E = np.zeros((0, n)) if self.E is None else np.atleast_2d(self.E)
        f = np.zeros(0) if self.f is None else np.asarray(self.f, dtype=float)
        return C, d, E, f


def _linprog(c, C, d, E, f, bounds, max_iter):
    options = {} if max_iter is None else {"maxiter": max_iter}
    return linprog(
        c,
        A_ub=C if C.shape[0] else None,
        b_ub=d if C.shape[0] else None,
        A_eq=E if E.shape[0] else None,
        b_eq=f if E.shape[0] else None,
        bounds=bounds,
        method="highs",
        options=options,
    )


def solve_lp(lp: LinearProgram, max_iter: Optional[int] = None) -> SolveResult:
    start = time.perf_counter()
    c = np.asarray(lp.c, dtype=float)
    C, d, E, f = lp.blocks()
    bounds = (0, None) if lp.nonnegative else (None, None)
    res = _linprog(c, C, d, E, f, bounds, max_iter)

    if res.status == 0:
        dual = LagrangeMultipliers(
            lam=-np.asarray(res.eqlin.marginals) if E.shape[0] else np.zeros(0),
            rho=np.zeros(0),
            eta=-np.asarray(res.ineqlin.marginals) if C.shape[0] else np.zeros(0),
        )
        return SolveResult(
            SolveStatus.OPTIMAL,
            float(res.fun),
            primal=np.asarray(res.x),
            dual=dual,
            iterations=int(res.nit),
            solve_time=time.perf_counter() - start,
        )
    if res.status == 2:
        dual = _farkas_certificate(C, d, E, f, lp.nonnegative)
        objective = -float(d @ dual.eta + f @ dual.lam) if dual is not None else np.inf
        return SolveResult(
            SolveStatus.INFEASIBLE,
            objective,
            dual=dual,
            iterations=int(res.nit),
            solve_time=time.perf_counter() - start,
        )
    if res.status == 3:
        ray = _recession_ray(c, C, E, lp.nonnegative)
        return SolveResult(
            SolveStatus.UNBOUNDED,
            -np.inf,
            ray=ray,
            iterations=int(res.nit),
            solve_time=time.perf_counter() - start,
        )
    logger.warning(f"LP stopped early: {res.message}")
    return SolveResult(
        SolveStatus.ITERATION_LIMIT,
        np.nan,
        iterations=int(res.nit),
        solve_time=time.perf_counter() - start,
    )


def _farkas_certificate(C, d, E, f, nonnegative) -> Optional[LagrangeMultipliers]:
    """(eta >= 0, lam) with C'eta + E'lam = 0 (>= 0 over z >= 0) and d'eta + f'lam < 0."""
    m, p = C.shape[0], E.shape[0]
    n = C.shape[1] if m else E.shape[1]
    cost = np.concatenate([d, f])
    A = np.hstack([C.T, E.T]) if p else C.T
    if nonnegative:
        A_ub, b_ub = np.vstack([-A, -cost[None, :]]), np.concatenate([np.zeros(n), [1.0]])
        A_eq, b_eq = None, None
    else:
        A_ub, b_ub = -cost[None, :], np.array([1.0])
        A_eq, b_eq = A, np.zeros(n)
    bounds = [(0, None)] * m + [(None, None)] * p
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    y = np.asarray(res.x)
    return LagrangeMultipliers(lam=y[m:], rho=np.zeros(0), eta=y[:m])


def _recession_ray(c, C, E, nonnegative) -> Optional[np.ndarray]:
    n = len(c)
    lower = 0.0 if nonnegative else -1.0
    res = linprog(
        c,
        A_ub=C if C.shape[0] else None,
        b_ub=np.zeros(C.shape[0]) if C.shape[0] else None,
        A_eq=E if E.shape[0] else None,
        b_eq=np.zeros(E.shape[0]) if E.shape[0] else None,
        bounds=[(lower, 1.0)] * n,
        method="highs",
    )
    return np.asarray(res.x) if res.status == 0 else None
