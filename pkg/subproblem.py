#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Convex relaxation P(V) of the hybrid MPC problem for one interval V of binary
bounds, and its dual D(V).

Decision variables are ordered stage-major, y = (x_0, u_0, x_1, u_1, ..., x_T).
Quadratic costs are written through the lift rows z_t = Q_t x_t, w_t = R_t u_t,
so rank-deficient weights need no special treatment and the dual quadratic is
separable in (rho, sigma). E, W and C are assembled as sparse CSC blocks;
only the right-hand sides b and d change with x_tau and V.

Multipliers:
    lam_0          initial condition x_0 = x_tau
    lam_{t+1}      dynamics x_{t+1} = A x_t + B u_t
    rho_t, sigma_t lift rows Q_t x_t and R_t u_t
    mu_t           F_t x_t + G_t u_t <= h_t
    nu_upper_t     V u_t <= v_upper_t
    nu_lower_t     -V u_t <= -v_lower_t
"""

import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from config import DUAL_ACCEPT_TOL, logger
from cover import Interval
from model_core import DimensionError, StageData
from qp_engine import (
    ConvexQP,
    DualActiveSetSolver,
    LagrangeMultipliers,
    SolveStatus,
)


@dataclass(frozen=True)
class DualSolution:
    lam: Tuple[np.ndarray, ...]
    rho: Tuple[np.ndarray, ...]
    mu: Tuple[np.ndarray, ...]
    nu_lower: Tuple[np.ndarray, ...]
    nu_upper: Tuple[np.ndarray, ...]
    sigma: Tuple[np.ndarray, ...]

    @property
    def T(self) -> int:
        return len(self.mu)

    @classmethod
    def zeros(cls, stage: StageData) -> "DualSolution":
        n_x, m_u, T = stage.model.n_x, stage.model.m_u, stage.T
        return cls(
            lam=tuple(np.zeros(n_x) for _ in range(T + 1)),
            rho=tuple(np.zeros(stage.Q[t].shape[0]) for t in range(T + 1)),
            mu=tuple(np.zeros(stage.D[t].n_facets) for t in range(T)),
            nu_lower=tuple(np.zeros(m_u) for _ in range(T)),
            nu_upper=tuple(np.zeros(m_u) for _ in range(T)),
            sigma=tuple(np.zeros(stage.R[t].shape[0]) for t in range(T)),
        )

    def scaled(self, factor: float) -> "DualSolution":
        return DualSolution(
            *(tuple(factor * v for v in block) for block in self._blocks())
        )

    def _blocks(self):
        return (self.lam, self.rho, self.mu, self.nu_lower, self.nu_upper, self.sigma)

    @property
    def has_zero_quadratic(self) -> bool:
        return all(not np.any(r) for r in self.rho) and all(not np.any(s) for s in self.sigma)


@dataclass(frozen=True)
class InfeasibilityCertificate:
    """Dual ray with rho = sigma = 0 and positive objective."""

    dual: DualSolution
    objective: float

    def scaled(self, factor: float) -> "InfeasibilityCertificate":
        return InfeasibilityCertificate(self.dual.scaled(factor), factor * self.objective)


@dataclass(frozen=True)
class ProblemDimensions:
    total: int
    continuous: int
    binary: int
    equalities: int
    inequalities: int


def count_dimensions(stage: StageData) -> ProblemDimensions:
    m = stage.model
    continuous = (stage.T + 1) * m.n_x + stage.T * m.n_u
    binary = stage.T * m.m_u
    inequalities = sum(D.n_facets for D in stage.D) + 2 * stage.T * m.m_u
    return ProblemDimensions(
        total=continuous + binary,
        continuous=continuous,
        binary=binary,
        equalities=(stage.T + 1) * m.n_x,
        inequalities=inequalities,
    )


@dataclass(frozen=True)
class _Layout:
    n_x: int
    n_in: int
    T: int
    lift_rows: Tuple[Tuple[int, int, int], ...]  # per stage: rho start, sigma start, sigma end
    ineq_rows: Tuple[Tuple[int, int, int, int], ...]  # per stage: mu, nu_upper, nu_lower, end

    def x(self, t: int) -> int:
        return t * (self.n_x + self.n_in)

    def u(self, t: int) -> int:
        return self.x(t) + self.n_x

    @property
    def n_vars(self) -> int:
        return self.x(self.T) + self.n_x


def _layout(stage: StageData) -> _Layout:
    m = stage.model
    lift, ineq = [], []
    row = 0
    for t in range(stage.T):
        q, r = stage.Q[t].shape[0], stage.R[t].shape[0]
        lift.append((row, row + q, row + q + r))
        row += q + r
    lift.append((row, row + stage.Q[stage.T].shape[0], row + stage.Q[stage.T].shape[0]))
    row = 0
    for t in range(stage.T):
        f = stage.D[t].n_facets
        ineq.append((row, row + f, row + f + m.m_u, row + f + 2 * m.m_u))
        row += f + 2 * m.m_u
    return _Layout(m.n_x, m.n_in, stage.T, tuple(lift), tuple(ineq))


@dataclass(frozen=True)
class SubproblemQP:
    stage: StageData
    x_tau: np.ndarray
    interval: Interval
    qp: ConvexQP
    layout: _Layout

    def bounds(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        m_u = self.stage.model.m_u
        return (
            self.interval.lower[t * m_u : (t + 1) * m_u],
            self.interval.upper[t * m_u : (t + 1) * m_u],
        )

    def with_interval(self, V: Interval) -> "SubproblemQP":
        return replace(self, interval=V, qp=replace(self.qp, d=_ineq_rhs(self.stage, V, self.layout)))

    def with_state(self, x_tau: np.ndarray) -> "SubproblemQP":
        x_tau = np.asarray(x_tau, dtype=float)
        b = self.qp.b.copy()
        b[: self.stage.model.n_x] = x_tau
        return replace(self, x_tau=x_tau, qp=replace(self.qp, b=b))

    def stack(self, d: DualSolution) -> LagrangeMultipliers:
        L = self.layout
        rho = np.zeros(self.qp.n_lift)
        for t in range(self.stage.T + 1):
            r0, s0, s1 = L.lift_rows[t]
            rho[r0:s0] = d.rho[t]
            if t < self.stage.T:
                rho[s0:s1] = d.sigma[t]
        eta = np.zeros(self.qp.n_ineq)
        for t in range(self.stage.T):
            a, b, c, e = L.ineq_rows[t]
            eta[a:b], eta[b:c], eta[c:e] = d.mu[t], d.nu_upper[t], d.nu_lower[t]
        return LagrangeMultipliers(np.concatenate(d.lam), rho, eta)

    def unstack(self, mult: LagrangeMultipliers) -> DualSolution:
        L, T, n_x = self.layout, self.stage.T, self.stage.model.n_x
        lam = tuple(mult.lam[t * n_x : (t + 1) * n_x].copy() for t in range(T + 1))
        rho = tuple(mult.rho[L.lift_rows[t][0] : L.lift_rows[t][1]].copy() for t in range(T + 1))
        sigma = tuple(mult.rho[L.lift_rows[t][1] : L.lift_rows[t][2]].copy() for t in range(T))
        mu = tuple(mult.eta[L.ineq_rows[t][0] : L.ineq_rows[t][1]].copy() for t in range(T))
        nu_upper = tuple(mult.eta[L.ineq_rows[t][1] : L.ineq_rows[t][2]].copy() for t in range(T))
        nu_lower = tuple(mult.eta[L.ineq_rows[t][2] : L.ineq_rows[t][3]].copy() for t in range(T))
        return DualSolution(lam, rho, mu, nu_lower, nu_upper, sigma)

    def split_primal(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        L = self.layout
        x = np.array([y[L.x(t) : L.x(t) + L.n_x] for t in range(L.T + 1)])
        u = np.array([y[L.u(t) : L.u(t) + L.n_in] for t in range(L.T)])
        return x, u


def _ineq_rhs(stage: StageData, V: Interval, layout: _Layout) -> np.ndarray:
    lower, upper = V.stage_bounds(stage.T, stage.model.m_u)
    d = np.zeros(layout.ineq_rows[-1][3] if stage.T else 0)
    for t in range(stage.T):
        a, b, c, e = layout.ineq_rows[t]
        d[a:b] = stage.h(t)
        d[b:c] = upper[t]
        d[c:e] = -lower[t]
    return d


def assemble_subproblem(stage: StageData, x_tau: np.ndarray, V: Interval) -> SubproblemQP:
    m = stage.model
    x_tau = np.asarray(x_tau, dtype=float)
    if x_tau.shape != (m.n_x,):
        raise DimensionError(f"initial state has shape {x_tau.shape}, expected ({m.n_x},)")
    if V.n != stage.T * m.m_u:
        raise DimensionError(f"interval has {V.n} entries, expected {stage.T * m.m_u}")

    L = _layout(stage)
    n, T, n_x = L.n_vars, stage.T, m.n_x

    E = sparse.lil_matrix(((T + 1) * n_x, n))
    E[:n_x, L.x(0) : L.x(0) + n_x] = np.eye(n_x)
    for t in range(T):
        rows = slice((t + 1) * n_x, (t + 2) * n_x)
        E[rows, L.x(t + 1) : L.x(t + 1) + n_x] = np.eye(n_x)
        E[rows, L.x(t) : L.x(t) + n_x] = -m.A
        E[rows, L.u(t) : L.u(t) + m.n_in] = -m.B
    b = np.zeros(E.shape[0])
    b[:n_x] = x_tau

    W = sparse.lil_matrix((L.lift_rows[-1][2], n))
    for t in range(T + 1):
        r0, s0, s1 = L.lift_rows[t]
        W[r0:s0, L.x(t) : L.x(t) + n_x] = stage.Q[t]
        if t < T:
            W[s0:s1, L.u(t) : L.u(t) + m.n_in] = stage.R[t]

    C = sparse.lil_matrix((L.ineq_rows[-1][3], n))
    for t in range(T):
        a, bb, c, e = L.ineq_rows[t]
        C[a:bb, L.x(t) : L.x(t) + n_x] = stage.F(t)
        C[a:bb, L.u(t) : L.u(t) + m.n_in] = stage.G(t)
        C[bb:c, L.u(t) : L.u(t) + m.n_in] = m.V
        C[c:e, L.u(t) : L.u(t) + m.n_in] = -m.V

    qp = ConvexQP(W=W.tocsc(), E=E.tocsc(), b=b, C=C.tocsc(), d=_ineq_rhs(stage, V, L))
    return SubproblemQP(stage=stage, x_tau=x_tau, interval=V, qp=qp, layout=L)


def fixed_binary_subproblem(stage: StageData, x_tau: np.ndarray, assignment: Sequence[int]) -> SubproblemQP:
    a = np.asarray(assignment).reshape(-1)
    return assemble_subproblem(stage, x_tau, Interval.singleton(a))


def dual_objective(d: DualSolution, qp: SubproblemQP) -> float:
    stage = qp.stage
    value = -float(qp.x_tau @ d.lam[0])
    value -= sum(0.25 * float(r @ r) for r in d.rho)
    value -= sum(0.25 * float(s @ s) for s in d.sigma)
    for t in range(stage.T):
        lower, upper = qp.bounds(t)
        value -= float(stage.h(t) @ d.mu[t] + upper @ d.nu_upper[t] - lower @ d.nu_lower[t])
    return value


def dual_residual(d: DualSolution, qp: SubproblemQP) -> float:
    """Largest stationarity residual, relative to the size of the summed terms."""
    stage, m = qp.stage, qp.stage.model
    worst = 0.0

    def update(terms):
        nonlocal worst
        total = np.sum(terms, axis=0)
        scale = 1.0 + max(float(np.max(np.abs(v), initial=0.0)) for v in terms)
        worst = max(worst, float(np.max(np.abs(total), initial=0.0)) / scale)

    T = stage.T
    update([stage.Q[T].T @ d.rho[T], d.lam[T]])
    for t in range(T):
        update([stage.Q[t].T @ d.rho[t], d.lam[t], -m.A.T @ d.lam[t + 1], stage.F(t).T @ d.mu[t]])
        update(
            [
                stage.R[t].T @ d.sigma[t],
                -m.B.T @ d.lam[t + 1],
                stage.G(t).T @ d.mu[t],
                m.V.T @ (d.nu_upper[t] - d.nu_lower[t]),
            ]
        )
    return worst


def check_dual_feasible(d: DualSolution, qp: SubproblemQP, tol: float = DUAL_ACCEPT_TOL) -> bool:
    for block in (d.mu, d.nu_lower, d.nu_upper):
        if any(np.any(v < -tol) for v in block):
            return False
    return dual_residual(d, qp) <= tol


@dataclass
class SubproblemResult:
    status: SolveStatus
    objective: float
    dual: Optional[DualSolution] = None
    certificate: Optional[InfeasibilityCertificate] = None
    x: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    iterations: int = 0
    solve_time: float = 0.0
    history: Optional[List[float]] = None

    def binaries(self, V: np.ndarray) -> Optional[np.ndarray]:
        """Relaxed binary inputs, T x m_u."""
        return None if self.u is None else self.u @ V.T


def solve_subproblem(
    qp: SubproblemQP,
    warm: Union[DualSolution, InfeasibilityCertificate, None] = None,
    cutoff: Optional[float] = None,
    solver: Optional[DualActiveSetSolver] = None,
) -> SubproblemResult:
    start = time.perf_counter()
    solver = solver or DualActiveSetSolver()
    if isinstance(warm, InfeasibilityCertificate):
        warm = warm.dual
    res = solver.solve(qp.qp, warm=qp.stack(warm) if warm is not None else None, cutoff=cutoff)
    out = SubproblemResult(
        status=res.status,
        objective=res.objective,
        iterations=res.iterations,
        history=res.history,
    )
    if res.dual is not None:
        dual = qp.unstack(res.dual)
        if res.status == SolveStatus.INFEASIBLE:
            out.certificate = InfeasibilityCertificate(dual, res.objective)
            out.objective = np.inf
        else:
            out.dual = dual
    if res.primal is not None:
        out.x, out.u = qp.split_primal(res.primal)
    out.solve_time = time.perf_counter() - start
    logger.debug(
        f"QP {res.status.value}: objective={res.objective:.6g}, iterations={res.iterations}"
    )
    return out
