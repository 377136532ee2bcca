#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Offline pieces of the controller: the DARE terminal penalty, the maximal
positive-invariant terminal set and the link matrices used to shift
multipliers between different constraint sets.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import (
    DARE_MAX_ITER,
    DARE_TOL,
    INVARIANT_MAX_ITER,
    REDUNDANCY_TOL,
    logger,
)
from model_core import Polyhedron, StageData, conic_multipliers


class DareConvergenceError(RuntimeError):
    pass


class InvariantSetError(RuntimeError):
    def __init__(self, message: str, partial: Polyhedron):
        super().__init__(message)
        self.partial = partial


class LinkMatrixError(ValueError):
    def __init__(self, message: str, stage: int, facet: int):
        super().__init__(message)
        self.stage = stage
        self.facet = facet


@dataclass(frozen=True)
class TerminalData:
    P: np.ndarray
    K: np.ndarray
    invariant_set: Polyhedron
    links: Tuple[Optional[np.ndarray], ...] = ()


@dataclass(frozen=True)
class Controller:
    """Everything a closed loop needs: stage data plus the offline terminal data."""

    stage: StageData
    terminal: Optional[TerminalData] = None

    @property
    def links(self) -> Optional[Tuple[Optional[np.ndarray], ...]]:
        if self.terminal is None or not self.terminal.links:
            return None
        return self.terminal.links


def riccati_map(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
    return (P_next + P_next.T) / 2


def solve_dare(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fixed point of the Riccati recursion started at P = Q. Returns (P, K) with
    the optimal feedback u = -K x.
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    P = Q.copy()
    for k in range(max_iter):
        P_next = riccati_map(P, A, B, Q, R)
        step = float(np.max(np.abs(P_next - P)))
        P = P_next
        if step <= tol * (1.0 + float(np.max(np.abs(P)))):
            break
    else:
        raise DareConvergenceError(f"Riccati iteration did not settle in {max_iter} steps (last step {step:.2e})")

    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    logger.debug(f"DARE converged after {k + 1} iterations")
    return P, K


def remove_redundant(P: Polyhedron, tol: float = REDUNDANCY_TOL) -> Polyhedron:
    """Drop every facet whose maximum over the remaining ones stays within its offset."""
    P = P.normalized()
    keep = list(range(P.n_facets))
    for i in range(P.n_facets):
        others = [j for j in keep if j != i]
        if not others:
            continue
        rest = Polyhedron(P.C[others], P.d[others])
        if rest.maximize(P.C[i]) <= P.d[i] + tol:
            keep = others
    return Polyhedron(P.C[keep], P.d[keep])


def max_positive_invariant(
    A_cl: np.ndarray,
    constraints: Polyhedron,
    max_iter: int = INVARIANT_MAX_ITER,
    tol: float = REDUNDANCY_TOL,
    observer: Optional[Callable[[int, Polyhedron], None]] = None,
) -> Polyhedron:
    """
    Largest subset of `constraints` that x+ = A_cl x never leaves.
    `observer(k, omega)` sees every intermediate set, starting from k = 0.

    Rows C A_cl^k are added for k = 1, 2, ... while some of them still cut the
    current set; the first k for which none does closes the set.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    X = constraints.normalized()
    if not X.contains(np.zeros(X.dim)):
        raise ValueError("the constraint set does not contain the origin")

    omega = X
    if observer is not None:
        observer(0, omega)
    power = np.eye(A_cl.shape[0])
    for k in range(1, max_iter + 1):
        power = power @ A_cl
        J = X.C @ power
        cuts = [i for i in range(X.n_facets) if omega.maximize(J[i]) > X.d[i] + tol]
        logger.debug(f"invariant set step {k}: {len(cuts)} new facets, {omega.n_facets} so far")
        if not cuts:
            omega = remove_redundant(omega, tol)
            logger.info(f"invariant set closed after {k} steps with {omega.n_facets} facets")
            return omega
        omega = omega.intersect(Polyhedron(J[cuts], X.d[cuts]).normalized())
        if observer is not None:
            observer(k, omega)
    raise InvariantSetError(
        f"invariant set not determined after {max_iter} steps", remove_redundant(omega, tol)
    )


def link_matrix(D_t: Polyhedron, D_next: Polyhedron, stage: int = 0) -> np.ndarray:
    """Column i carries facet i of D_next onto a cheapest conic combination of D_t."""
    M = np.zeros((D_t.n_facets, D_next.n_facets))
    for i in range(D_next.n_facets):
        column = conic_multipliers(D_t, D_next, i)
        if column is None:
            raise LinkMatrixError(
                f"facet {i} of D_{stage + 1} is not a conic combination of D_{stage}", stage, i
            )
        M[:, i] = np.maximum(column, 0.0)
    return M


def compute_link_matrices(stage: StageData) -> List[Optional[np.ndarray]]:
    """One entry per consecutive pair; None where the stages coincide."""
    links: List[Optional[np.ndarray]] = []
    for t in range(stage.T - 1):
        if stage.same_stage(t, t + 1):
            links.append(None)
        else:
            links.append(link_matrix(stage.D[t], stage.D[t + 1], t))
    return links
