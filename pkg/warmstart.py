#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Warm start of the next B&B solve from the previous outcome.

The final cover is shifted one step, every kept interval gets its dual point
shifted to the next problem, and the dual bound moves by a handful of
correction terms:

    pi1 = -|Q_0 x_0|^2 - |R_0 u_0|^2
    pi2 = |rho_0/2 - Q_0 x_0|^2 + |sigma_0/2 - R_0 u_0|^2
    pi3 = (h_0 - F_0 x_0 - G_0 u_0)'mu_0 + (v_0 - lo_0)'nu_lo_0 + (up_0 - v_0)'nu_up_0
    pi4 = -e_0'lam_1
    pi5 = sum_t (|rho_{t+1}|^2 - |rho'_t|^2) / 4
    pi6 = sum_t (|sigma_{t+1}|^2 - |sigma'_t|^2) / 4
    pi7 = sum_t (h_{t+1}'mu_{t+1} - h_t'mu'_t)

(primes mark shifted multipliers). Only pi4 depends on the measured state,
so everything else is done before the measurement arrives.
"""

import itertools
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lstsq

from bnb import BnbOutcome, Incumbent
from config import ASSUMPTION_TOL, logger
from cover import Cover, Interval, NodeRecord, NodeStatus, shift_cover
from model_core import StageData
from qp_engine import DualActiveSetSolver, SolveStatus
from subproblem import (
    DualSolution,
    InfeasibilityCertificate,
    assemble_subproblem,
    dual_objective,
    fixed_binary_subproblem,
    solve_subproblem,
)


class ShiftResidualError(RuntimeError):
    pass


@dataclass(frozen=True)
class PiTerms:
    pi1: float = 0.0
    pi2: float = 0.0
    pi3: float = 0.0
    pi4: float = 0.0
    pi5: float = 0.0
    pi6: float = 0.0
    pi7: float = 0.0

    @property
    def total(self) -> float:
        return self.pi1 + self.pi2 + self.pi3 + self.pi4 + self.pi5 + self.pi6 + self.pi7


@dataclass
class WarmStart:
    cover: Cover
    upper_bound: float = np.inf
    incumbent: Optional[Incumbent] = None
    pre_time: float = 0.0
    post_time: float = 0.0

    @classmethod
    def cold(cls, stage: StageData) -> "WarmStart":
        return cls(Cover.trivial(stage.T * stage.model.m_u))


def shift_dual(d0: DualSolution) -> DualSolution:
    """Drop stage 0, zero the tail; exact for time-invariant stage data."""

    def shifted(block):
        return tuple(v.copy() for v in block[1:]) + (np.zeros_like(block[-1]),)

    return DualSolution(
        lam=shifted(d0.lam),
        rho=shifted(d0.rho),
        mu=shifted(d0.mu),
        nu_lower=shifted(d0.nu_lower),
        nu_upper=shifted(d0.nu_upper),
        sigma=shifted(d0.sigma),
    )


def _pull_back(M: np.ndarray, M_next: np.ndarray, y: np.ndarray, what: str) -> np.ndarray:
    """Solve M'z = M_next'y in the least-squares sense and insist it is exact."""
    rhs = M_next.T @ y
    if not np.any(rhs):
        return np.zeros(M.shape[0])
    z = lstsq(M.T, rhs)[0]
    residual = float(np.max(np.abs(M.T @ z - rhs)))
    if residual > ASSUMPTION_TOL * (1.0 + float(np.max(np.abs(rhs)))):
        raise ShiftResidualError(f"{what}: pseudoinverse residual {residual:.2e}")
    return z


def shift_dual_general(
    d0: DualSolution, stage: StageData, links: Optional[Sequence[Optional[np.ndarray]]] = None
) -> DualSolution:
    """
    Shift for time-varying weights and constraint sets. `links[t]` maps
    multipliers of D_{t+1} onto D_t; None (or a missing list) stands for the
    identity and is only accepted between identical stages.
    """
    T, model = stage.T, stage.model

    rho = [_pull_back(stage.Q[t], stage.Q[t + 1], d0.rho[t + 1], f"rho_{t}") for t in range(T)]
    rho.append(np.zeros(stage.Q[T].shape[0]))
    sigma = [
        _pull_back(stage.R[t], stage.R[t + 1], d0.sigma[t + 1], f"sigma_{t}") for t in range(T - 1)
    ]
    sigma.append(np.zeros(stage.R[T - 1].shape[0]))

    mu = []
    for t in range(T - 1):
        M = None if links is None else links[t]
        if M is None:
            if not stage.same_stage(t, t + 1):
                raise ValueError(f"stages {t} and {t + 1} differ, a link matrix is required")
            mu.append(d0.mu[t + 1].copy())
        else:
            mu.append(M @ d0.mu[t + 1])
    mu.append(np.zeros(stage.D[T - 1].n_facets))

    nu_lower = tuple(v.copy() for v in d0.nu_lower[1:]) + (np.zeros(model.m_u),)
    nu_upper = tuple(v.copy() for v in d0.nu_upper[1:]) + (np.zeros(model.m_u),)

    # lam_T = -Q_T'rho_T = 0, then backward through the state stationarity rows
    lam = [np.zeros(model.n_x) for _ in range(T + 1)]
    for t in range(T - 1, -1, -1):
        lam[t] = model.A.T @ lam[t + 1] - stage.Q[t].T @ rho[t] - stage.F(t).T @ mu[t]

    return DualSolution(
        lam=tuple(lam),
        rho=tuple(rho),
        mu=tuple(mu),
        nu_lower=nu_lower,
        nu_upper=nu_upper,
        sigma=tuple(sigma),
    )


def compute_pi(
    x0: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    V0: Interval,
    d0: DualSolution,
    e0: np.ndarray,
    stage: StageData,
    shifted: DualSolution,
) -> PiTerms:
    T, m_u = stage.T, stage.model.m_u
    Q0, R0 = stage.Q[0], stage.R[0]
    Qx, Ru = Q0 @ x0, R0 @ u0
    lower = V0.lower[:m_u]
    upper = V0.upper[:m_u]

    pi1 = -float(Qx @ Qx) - float(Ru @ Ru)
    a = d0.rho[0] / 2 - Qx
    b = d0.sigma[0] / 2 - Ru
    pi2 = float(a @ a) + float(b @ b)
    slack = stage.h(0) - stage.F(0) @ x0 - stage.G(0) @ u0
    pi3 = float(slack @ d0.mu[0] + (v0 - lower) @ d0.nu_lower[0] + (upper - v0) @ d0.nu_upper[0])
    pi4 = -float(np.asarray(e0) @ d0.lam[1])
    pi5 = 0.25 * sum(
        float(d0.rho[t + 1] @ d0.rho[t + 1]) - float(shifted.rho[t] @ shifted.rho[t]) for t in range(T)
    )
    pi6 = 0.25 * sum(
        float(d0.sigma[t + 1] @ d0.sigma[t + 1]) - float(shifted.sigma[t] @ shifted.sigma[t])
        for t in range(T - 1)
    )
    pi7 = sum(
        float(stage.h(t + 1) @ d0.mu[t + 1]) - float(stage.h(t) @ shifted.mu[t]) for t in range(T - 1)
    )
    return PiTerms(pi1, pi2, pi3, pi4, pi5, pi6, pi7)


def compute_omega(
    x0: np.ndarray,
    x1: np.ndarray,
    V0: Interval,
    d0: DualSolution,
    stage: StageData,
    shifted: DualSolution,
) -> Tuple[float, float, float]:
    """
    Stage-0 split of the bound change: initial-condition term, stage-0
    constraint term and stage-0 quadratic term. Their sum equals pi1+...+pi4.
    """
    m_u = stage.model.m_u
    omega1 = float(x0 @ d0.lam[0]) - float(x1 @ shifted.lam[0])
    omega2 = float(
        stage.h(0) @ d0.mu[0]
        + V0.upper[:m_u] @ d0.nu_upper[0]
        - V0.lower[:m_u] @ d0.nu_lower[0]
    )
    omega3 = 0.25 * (float(d0.rho[0] @ d0.rho[0]) + float(d0.sigma[0] @ d0.sigma[0]))
    return omega1, omega2, omega3


def propagate_lower_bound(theta0: float, pi: PiTerms) -> float:
    return max(0.0, theta0 + pi.total)


def propagate_certificate(
    cert: InfeasibilityCertificate,
    e0: np.ndarray,
    pi3: float,
    pi7: float,
    shifted: Optional[DualSolution] = None,
) -> Optional[InfeasibilityCertificate]:
    """The shifted ray still certifies infeasibility iff lam_1'e_0 < theta0 + pi3 + pi7."""
    drift = float(cert.dual.lam[1] @ np.asarray(e0))
    if drift >= cert.objective + pi3 + pi7:
        return None
    shifted = shift_dual(cert.dual) if shifted is None else shifted
    return InfeasibilityCertificate(shifted, cert.objective + pi3 + pi7 - drift)


def _best_shifted_completion(
    incumbent: Incumbent,
    stage: StageData,
    x1: Optional[np.ndarray] = None,
    solver: Optional[DualActiveSetSolver] = None,
) -> Tuple[float, Optional[Incumbent]]:
    solver = solver or DualActiveSetSolver()
    x1 = incumbent.x[1] if x1 is None else np.asarray(x1, dtype=float)
    m_u = stage.model.m_u
    head = np.asarray(incumbent.binaries)[1:]
    best, best_incumbent = np.inf, None
    for tail in itertools.product((0, 1), repeat=m_u):
        assignment = np.vstack([head, np.array(tail, dtype=float).reshape(1, m_u)])
        res = solve_subproblem(fixed_binary_subproblem(stage, x1, assignment), solver=solver)
        if res.status == SolveStatus.OPTIMAL and res.objective < best:
            best = res.objective
            best_incumbent = Incumbent(res.objective, assignment, res.x, res.u)
    return best, best_incumbent


def propagate_upper_bound(
    incumbent: Incumbent,
    stage: StageData,
    x1: Optional[np.ndarray] = None,
    solver: Optional[DualActiveSetSolver] = None,
) -> float:
    """
    Cost of the previous incumbent shifted by one step and completed by the
    best binary choice for the new last stage. Valid for nominal steps only;
    the terminal set composed into the last stage keeps the shifted plan
    feasible.
    """
    if incumbent is None:
        return np.inf
    return _best_shifted_completion(incumbent, stage, x1, solver)[0]


@dataclass
class _PendingRecord:
    interval: Interval
    created: int
    theta0: float
    pi: PiTerms
    lam1: np.ndarray
    shifted: DualSolution
    certificate: Optional[InfeasibilityCertificate] = None


@dataclass
class PreparedWarmStart:
    """Everything that does not depend on the measured state."""

    stage: StageData
    n: int
    x_pred: np.ndarray
    pending: List[_PendingRecord] = field(default_factory=list)
    upper_bound: float = np.inf
    incumbent: Optional[Incumbent] = None
    pre_time: float = 0.0

    def finalize(self, x1: np.ndarray, nominal_tol: float = 1e-12) -> WarmStart:
        start = time.perf_counter()
        e0 = np.asarray(x1, dtype=float) - self.x_pred
        records: List[NodeRecord] = []
        for p in self.pending:
            pi = replace(p.pi, pi4=-float(e0 @ p.lam1))
            if p.certificate is not None:
                cert = propagate_certificate(p.certificate, e0, pi.pi3, pi.pi7, p.shifted)
                if cert is not None:
                    records.append(NodeRecord(p.interval, np.inf, cert, NodeStatus.INFEASIBLE, p.created))
                    continue
                bound = max(0.0, p.theta0 + pi.pi3 + pi.pi4 + pi.pi7)
            else:
                bound = propagate_lower_bound(p.theta0, pi)
            records.append(NodeRecord(p.interval, bound, p.shifted, NodeStatus.INHERITED_BOUND, p.created))

        upper, incumbent = self.upper_bound, self.incumbent
        if np.max(np.abs(e0), initial=0.0) > nominal_tol:
            upper, incumbent = np.inf, None
        warm = WarmStart(Cover(self.n, records), upper, incumbent, self.pre_time)
        warm.post_time = time.perf_counter() - start
        return warm


def prepare_warm_start(
    outcome: BnbOutcome,
    stage: StageData,
    links: Optional[Sequence[Optional[np.ndarray]]] = None,
    v0: Optional[np.ndarray] = None,
    upper_bound: bool = False,
    solver: Optional[DualActiveSetSolver] = None,
) -> PreparedWarmStart:
    start = time.perf_counter()
    if outcome.incumbent is None:
        raise ValueError("cannot warm start from an infeasible outcome")
    model = stage.model
    x0 = outcome.incumbent.x[0]
    u0, v_applied = outcome.applied_action()
    v0 = v_applied if v0 is None else np.asarray(v0, dtype=float)
    x_pred = model.A @ x0 + model.B @ u0

    general = links is not None or not stage.is_time_invariant()
    shift = (lambda d: shift_dual_general(d, stage, links)) if general else shift_dual
    template = assemble_subproblem(stage, x0, Interval.hypercube(outcome.cover.n))
    zero = DualSolution.zeros(stage)

    prepared = PreparedWarmStart(stage=stage, n=outcome.cover.n, x_pred=x_pred)
    kept = [r for r in outcome.cover.records if r.interval.agrees_with_first(v0)]
    for r, s in zip(kept, shift_cover(outcome.cover, v0, model.m_u).records):
        qp0 = template.with_interval(r.interval)
        cert = r.dual if isinstance(r.dual, InfeasibilityCertificate) else None
        d0 = cert.dual if cert is not None else (r.dual if r.dual is not None else zero)
        shifted = shift(d0)
        theta0 = dual_objective(d0, qp0)
        if cert is not None:
            cert = InfeasibilityCertificate(d0, theta0)
        pi = compute_pi(x0, u0, v0, r.interval, d0, np.zeros(model.n_x), stage, shifted)
        prepared.pending.append(
            _PendingRecord(s.interval, s.created, theta0, pi, d0.lam[1], shifted, cert)
        )

    if upper_bound:
        prepared.upper_bound, prepared.incumbent = _best_shifted_completion(
            outcome.incumbent, stage, x_pred, solver
        )
    prepared.pre_time = time.perf_counter() - start
    logger.debug(
        f"warm start prepared: {len(prepared.pending)} of {len(outcome.cover)} intervals kept"
    )
    return prepared


def build_warm_start(
    outcome: BnbOutcome,
    v0: Optional[np.ndarray],
    x1: np.ndarray,
    stage: StageData,
    links: Optional[Sequence[Optional[np.ndarray]]] = None,
    upper_bound: bool = False,
    solver: Optional[DualActiveSetSolver] = None,
) -> WarmStart:
    prepared = prepare_warm_start(outcome, stage, links, v0, upper_bound, solver)
    return prepared.finalize(x1)

