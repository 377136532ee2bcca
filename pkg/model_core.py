#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
MLD systems x+ = A x + B u + e, (x, u) in D = {F x + G u <= h}, and the
per-stage problem data (Q_t, R_t, D_t) of the finite-horizon MIQP.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lstsq

from config import ASSUMPTION_TOL, logger
from qp_engine import LinearProgram, SolveStatus, solve_lp


class DimensionError(ValueError):
    pass


class AssumptionViolation(ValueError):
    def __init__(self, message: str, violations: List[str]):
        super().__init__(message)
        self.violations = violations


@dataclass(frozen=True)
class Polyhedron:
    """{z | C z <= d}"""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if C.shape[0] != d.shape[0]:
            raise DimensionError(f"{C.shape[0]} rows in C but {d.shape[0]} in d")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @classmethod
    def full_space(cls, dim: int) -> "Polyhedron":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def box(cls, upper: np.ndarray, lower: Optional[np.ndarray] = None) -> "Polyhedron":
        upper = np.asarray(upper, dtype=float)
        lower = -upper if lower is None else np.asarray(lower, dtype=float)
        n = upper.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))

    @property
    def n_facets(self) -> int:
        return self.C.shape[0]

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    def contains(self, z: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.C @ np.asarray(z, dtype=float) <= self.d + tol))

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        if other.dim != self.dim:
            raise DimensionError(f"cannot intersect dimensions {self.dim} and {other.dim}")
        return Polyhedron(np.vstack([self.C, other.C]), np.concatenate([self.d, other.d]))

    def normalized(self) -> "Polyhedron":
        norms = np.linalg.norm(self.C, axis=1)
        zero = norms <= 1e-12
        # zero rows with d < 0 make the set empty and are kept as witnesses
        keep = ~zero | (self.d < 0)
        scale = np.where(zero, 1.0, norms)
        return Polyhedron(self.C[keep] / scale[keep, None], self.d[keep] / scale[keep])

    def maximize(self, direction: np.ndarray) -> float:
        res = solve_lp(LinearProgram(c=-np.asarray(direction, dtype=float), C=self.C, d=self.d))
        if res.status == SolveStatus.UNBOUNDED:
            return np.inf
        if res.status == SolveStatus.INFEASIBLE:
            return -np.inf
        return -res.objective

    def is_empty(self) -> bool:
        res = solve_lp(LinearProgram(c=np.zeros(self.dim), C=self.C, d=self.d))
        return res.status == SolveStatus.INFEASIBLE

    def is_bounded(self) -> bool:
        for e in np.vstack([np.eye(self.dim), -np.eye(self.dim)]):
            if self.maximize(e) == np.inf:
                return False
        return True


@dataclass(frozen=True)
class MldModel:
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    h: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "F", "G", "V"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float).reshape(-1))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def m_u(self) -> int:
        return self.V.shape[0]

    @property
    def n_u(self) -> int:
        return self.n_in - self.m_u

    @property
    def binary_indices(self) -> np.ndarray:
        return np.argmax(self.V, axis=1)

    @property
    def domain(self) -> Polyhedron:
        return Polyhedron(np.hstack([self.F, self.G]), self.h)


def validate_mld(model: MldModel) -> List[str]:
    report: List[str] = []
    n_x, n_in = model.A.shape[0], model.B.shape[1]
    if model.A.shape != (n_x, n_x):
        report.append(f"A must be square, got {model.A.shape}")
    if model.B.shape[0] != n_x:
        report.append(f"B has {model.B.shape[0]} rows, expected {n_x}")
    q = model.h.size
    if model.F.shape != (q, n_x):
        report.append(f"F has shape {model.F.shape}, expected {(q, n_x)}")
    if model.G.shape != (q, n_in):
        report.append(f"G has shape {model.G.shape}, expected {(q, n_in)}")
    if model.V.shape[1] != n_in or model.V.shape[0] > n_in:
        report.append(f"V has shape {model.V.shape}, expected (m_u, {n_in}) with m_u <= {n_in}")
    if not np.all(np.isin(model.V, (0.0, 1.0))):
        report.append("selection matrix V has entries other than 0/1")
    elif model.V.size and (
        np.any(model.V.sum(axis=1) != 1) or np.any(model.V.sum(axis=0) > 1)
    ):
        report.append("selection matrix V needs exactly one 1 per row and at most one per column")
    if np.any(model.h < 0):
        report.append(f"origin not in D: h has negative entries at {np.flatnonzero(model.h < 0).tolist()}")
    return report


def simulate_step(model: MldModel, x: np.ndarray, u: np.ndarray, e: Optional[np.ndarray] = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    e = np.zeros(model.n_x) if e is None else np.asarray(e, dtype=float)
    if x.shape != (model.n_x,) or u.shape != (model.n_in,) or e.shape != (model.n_x,):
        raise DimensionError(
            f"expected x:{model.n_x}, u:{model.n_in}, e:{model.n_x}; got {x.shape}, {u.shape}, {e.shape}"
        )
    return model.A @ x + model.B @ u + e


@dataclass(frozen=True)
class StageData:
    model: MldModel
    T: int
    Q: Tuple[np.ndarray, ...]
    R: Tuple[np.ndarray, ...]
    D: Tuple[Polyhedron, ...]
    terminal_set: Optional[Polyhedron] = field(default=None, compare=False)

    def F(self, t: int) -> np.ndarray:
        return self.D[t].C[:, : self.model.n_x]

    def G(self, t: int) -> np.ndarray:
        return self.D[t].C[:, self.model.n_x :]

    def h(self, t: int) -> np.ndarray:
        return self.D[t].d

    def same_stage(self, t: int, s: int) -> bool:
        a, b = self.D[t], self.D[s]
        return a.C.shape == b.C.shape and np.array_equal(a.C, b.C) and np.array_equal(a.d, b.d)

    def is_time_invariant(self) -> bool:
        return (
            all(np.array_equal(Qt, self.Q[0]) for Qt in self.Q)
            and all(np.array_equal(Rt, self.R[0]) for Rt in self.R)
            and all(self.same_stage(t, 0) for t in range(self.T))
        )


def _row_space_residual(base: np.ndarray, rows: np.ndarray) -> float:
    """How far the rows of `rows` are from the row space of `base`."""
    if rows.size == 0:
        return 0.0
    if base.size == 0:
        return float(np.max(np.abs(rows)))
    X = lstsq(base.T, rows.T)[0]
    return float(np.max(np.abs(base.T @ X - rows.T)))


def conic_multipliers(D_t: Polyhedron, D_next: Polyhedron, i: int) -> Optional[np.ndarray]:
    """
    Cheapest mu >= 0 with [F_t G_t]'mu equal to facet i of D_next, i.e. column i
    of the link matrix. None when facet i is outside the conic hull of D_t.
    """
    lp = LinearProgram(c=D_t.d, E=D_t.C.T, f=D_next.C[i], nonnegative=True)
    res = solve_lp(lp)
    if res.status == SolveStatus.OPTIMAL:
        return res.primal
    if res.status == SolveStatus.UNBOUNDED:
        # h_t'mu unbounded below means D_t is empty; any feasible mu will do
        feas = solve_lp(LinearProgram(c=np.zeros(D_t.n_facets), E=D_t.C.T, f=D_next.C[i], nonnegative=True))
        return feas.primal if feas.status == SolveStatus.OPTIMAL else None
    return None


def check_assumptions(stage: StageData, tol: float = ASSUMPTION_TOL) -> List[str]:
    violations: List[str] = []
    for t in range(stage.T):
        res = _row_space_residual(stage.Q[t], stage.Q[t + 1])
        if res > tol:
            violations.append(f"row space of Q_{t} misses rows of Q_{t + 1} (residual {res:.2e})")
    for t in range(stage.T - 1):
        res = _row_space_residual(stage.R[t], stage.R[t + 1])
        if res > tol:
            violations.append(f"row space of R_{t} misses rows of R_{t + 1} (residual {res:.2e})")
        if stage.same_stage(t, t + 1):
            continue
        for i in range(stage.D[t + 1].n_facets):
            if conic_multipliers(stage.D[t], stage.D[t + 1], i) is None:
                violations.append(f"facet {i} of D_{t + 1} outside the conic hull of D_{t}")
    return violations


def build_stage_data(
    model: MldModel,
    Q: np.ndarray,
    R: np.ndarray,
    T: int,
    terminal: Optional[Tuple[np.ndarray, Polyhedron]] = None,
    check: bool = True,
) -> StageData:
    """
    Stage data with constant Q, R, D for t < T. The optional terminal pair
    (Q_T, X_term) sets the terminal weight and composes x_T in X_term into
    D_{T-1} through the dynamics.
    """
    if T < 1:
        raise DimensionError(f"horizon must be positive, got {T}")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape[1] != model.n_x or R.shape[1] != model.n_in:
        raise DimensionError(f"Q needs {model.n_x} columns and R {model.n_in}; got {Q.shape}, {R.shape}")

    D = [model.domain] * T
    Q_T, X_term = Q, None
    if terminal is not None:
        Q_T, X_term = terminal
        Q_T = np.atleast_2d(np.asarray(Q_T, dtype=float))
        if X_term.dim != model.n_x:
            raise DimensionError(f"terminal set lives in dimension {X_term.dim}, expected {model.n_x}")
        composed = Polyhedron(X_term.C @ np.hstack([model.A, model.B]), X_term.d)
        D[T - 1] = model.domain.intersect(composed)

    stage = StageData(
        model=model,
        T=T,
        Q=tuple([Q] * T + [Q_T]),
        R=tuple([R] * T),
        D=tuple(D),
        terminal_set=X_term,
    )
    if check:
        violations = check_assumptions(stage)
        if violations:
            raise AssumptionViolation(f"stage data rejected: {violations[0]}", violations)
    logger.debug(
        f"stage data: T={T}, facets per stage {[p.n_facets for p in stage.D]}"
    )
    return stage


def stage_data_from_lists(
    model: MldModel,
    Q: Sequence[np.ndarray],
    R: Sequence[np.ndarray],
    D: Sequence[Polyhedron],
    check: bool = True,
) -> StageData:
    """General time-varying stage data."""
    T = len(R)
    if len(Q) != T + 1 or len(D) != T:
        raise DimensionError(f"need T+1 Q's and T D's for T={T}, got {len(Q)} and {len(D)}")
    stage = StageData(
        model=model,
        T=T,
        Q=tuple(np.atleast_2d(np.asarray(q, dtype=float)) for q in Q),
        R=tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in R),
        D=tuple(D),
    )
    if check:
        violations = check_assumptions(stage)
        if violations:
            raise AssumptionViolation(f"stage data rejected: {violations[0]}", violations)
    return stage
