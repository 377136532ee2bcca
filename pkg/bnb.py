#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Branch and bound over a cover of {0,1}^(T*m_u).

The frontier is the cover itself: every leaf stays in it with its bound,
whether it was pruned, solved to a binary-feasible incumbent or never touched.
A node is processed while its bound is below the incumbent value minus the
tolerance; best-first selection, chronological branching.
"""

import itertools
import time
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Optional, Tuple

import numpy as np

from config import BINARY_TOL, BNB_EPSILON, BNB_MAX_NODES, QP_ASCENT_TOL, logger
from cover import Cover, Interval, NodeRecord, NodeStatus, branch_split
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

if TYPE_CHECKING:
    from warmstart import WarmStart


class BranchingError(ValueError):
    pass


@dataclass(frozen=True)
class BnbConfig:
    epsilon: float = BNB_EPSILON
    max_nodes: int = BNB_MAX_NODES
    node_selection: str = "best-first"
    branching: str = "chronological"
    verbose: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.node_selection != "best-first" or self.branching != "chronological":
            raise ValueError("only best-first selection with chronological branching is available")


@dataclass
class Incumbent:
    objective: float
    binaries: np.ndarray  # T x m_u
    x: np.ndarray  # (T+1) x n_x
    u: np.ndarray  # T x n_in


@dataclass
class BnbStats:
    qp_solves: int = 0
    qp_iterations: int = 0
    pruned_by_bound: int = 0  # solved nodes closed by the cutoff or the incumbent
    inherited_bound: int = 0  # leaves closed on a bound they inherited, without a QP
    wall_time: float = 0.0
    qp_time: float = 0.0


@dataclass
class BnbOutcome:
    theta_star: float
    incumbent: Optional[Incumbent]
    cover: Cover
    stats: BnbStats = field(default_factory=BnbStats)
    complete: bool = True

    @property
    def feasible(self) -> bool:
        return self.incumbent is not None

    def applied_action(self) -> Tuple[np.ndarray, np.ndarray]:
        """(u_0, v_0) of the incumbent."""
        if self.incumbent is None:
            raise ValueError("infeasible problem has no action to apply")
        return self.incumbent.u[0], self.incumbent.binaries[0]


def select_node(frontier: Cover, upper: float, epsilon: float) -> Optional[NodeRecord]:
    best = None
    for r in frontier.records:
        if r.lower_bound < upper - epsilon and (
            best is None
            or r.lower_bound < best.lower_bound
            or (r.lower_bound == best.lower_bound and r.created < best.created)
        ):
            best = r
    return best


def choose_branch(
    relaxed: np.ndarray, interval: Optional[Interval] = None, tol: float = BINARY_TOL
) -> Tuple[int, int]:
    """First fractional entry in chronological order, skipping fixed ones."""
    relaxed = np.atleast_2d(relaxed)
    T, m_u = relaxed.shape
    for t in range(T):
        for j in range(m_u):
            if interval is not None and interval.is_fixed(t * m_u + j):
                continue
            v = relaxed[t, j]
            if min(abs(v), abs(v - 1.0)) > tol:
                return t, j
    raise BranchingError("relaxed solution is binary, nothing to branch on")


def _first_free(interval: Interval, m_u: int) -> Optional[Tuple[int, int]]:
    for k in range(interval.n):
        if not interval.is_fixed(k):
            return divmod(k, m_u)
    return None


def _is_binary(v: np.ndarray, tol: float) -> bool:
    return bool(np.all(np.minimum(np.abs(v), np.abs(v - 1.0)) <= tol))


def solve_miqp(
    stage: StageData,
    x_tau: np.ndarray,
    warm: Optional["WarmStart"] = None,
    cfg: Optional[BnbConfig] = None,
    solver: Optional[DualActiveSetSolver] = None,
    observer: Optional[Callable[[Cover], None]] = None,
) -> BnbOutcome:
    cfg = cfg or BnbConfig()
    solver = solver or DualActiveSetSolver()
    start = time.perf_counter()
    model = stage.model
    m_u, n = model.m_u, stage.T * model.m_u
    log = logger.info if cfg.verbose else logger.debug

    if warm is not None:
        frontier = Cover(n, [replace(r) for r in warm.cover.records])
        upper = warm.upper_bound
        incumbent = warm.incumbent if np.isfinite(warm.upper_bound) else None
    else:
        frontier = Cover.trivial(n)
        upper, incumbent = np.inf, None
    counter = itertools.count(max((r.created for r in frontier.records), default=-1) + 1)

    template = assemble_subproblem(stage, x_tau, Interval.hypercube(n))
    stats = BnbStats()
    complete = True
    processed = 0

    while True:
        if observer is not None:
            observer(frontier)
        node = select_node(frontier, upper, cfg.epsilon)
        if node is None:
            break
        if processed >= cfg.max_nodes:
            logger.warning(f"node limit {cfg.max_nodes} reached, outcome incomplete")
            complete = False
            break
        processed += 1

        qp = template.with_interval(node.interval)
        warm_dual = node.dual.dual if isinstance(node.dual, InfeasibilityCertificate) else node.dual
        cutoff = upper - cfg.epsilon if np.isfinite(upper) else None
        res = solve_subproblem(qp, warm=warm_dual, cutoff=cutoff, solver=solver)
        stats.qp_solves += 1
        stats.qp_iterations += res.iterations
        stats.qp_time += res.solve_time
        tag = node.interval.format()

        if res.status == SolveStatus.INFEASIBLE:
            node.status, node.dual, node.lower_bound = NodeStatus.INFEASIBLE, res.certificate, np.inf
            log(f"node {node.created} [{tag}] prune infeasible")
            continue

        if res.status == SolveStatus.CUTOFF:
            node.status, node.dual = NodeStatus.CUTOFF, res.dual
            node.lower_bound = max(node.lower_bound, res.objective)
            stats.pruned_by_bound += 1
            log(f"node {node.created} [{tag}] prune bound={node.lower_bound:.6g} cutoff={cutoff:.6g}")
            continue

        if res.status in (SolveStatus.ITERATION_LIMIT, SolveStatus.NUMERICAL):
            node.dual = res.dual
            node.lower_bound = max(node.lower_bound, res.objective, 0.0)
            free = _first_free(node.interval, m_u)
            if free is None:
                logger.warning(f"node {node.created} QP stopped early ({res.status.value}) on a leaf")
                complete = False
                break
            _branch(frontier, node, free, template, counter, log, tag)
            continue

        theta = res.objective
        node.status, node.dual = NodeStatus.SOLVED_OPTIMAL, res.dual
        node.lower_bound = max(node.lower_bound, theta, 0.0)
        relaxed = res.binaries(model.V)
        if theta >= upper - cfg.epsilon:
            stats.pruned_by_bound += 1
            log(f"node {node.created} [{tag}] prune bound={node.lower_bound:.6g} objective={theta:.6g}")
        elif _is_binary(relaxed, BINARY_TOL):
            upper = theta
            incumbent = Incumbent(theta, np.round(relaxed), res.x, _snap_binaries(res.u, model.V))
            log(f"node {node.created} [{tag}] incumbent objective={theta:.6g}")
        else:
            _branch(frontier, node, choose_branch(relaxed, node.interval), template, counter, log, tag)

    stats.inherited_bound = sum(
        1 for r in frontier.records if r.status == NodeStatus.INHERITED_BOUND
    )
    stats.wall_time = time.perf_counter() - start
    logger.debug(
        f"B&B done: theta*={upper:.6g}, {stats.qp_solves} QPs, {len(frontier)} leaves"
    )
    return BnbOutcome(upper, incumbent, frontier, stats, complete)


def _snap_binaries(u: np.ndarray, V: np.ndarray) -> np.ndarray:
    u = u.copy()
    idx = np.argmax(V, axis=1)
    u[:, idx] = np.round(u[:, idx])
    return u


def _branch(frontier, node, entry, template, counter, log, tag):
    t, j = entry
    m_u = template.stage.model.m_u
    parent_bound = node.lower_bound
    parent_dual = node.dual
    children = []
    if isinstance(parent_dual, DualSolution):
        parent_value = dual_objective(parent_dual, template.with_interval(node.interval))
    for V in branch_split(node.interval, t, j, m_u):
        bound = parent_bound
        if isinstance(parent_dual, DualSolution):
            value = dual_objective(parent_dual, template.with_interval(V))
            # tightening a binary bound can only add nonnegative nu terms
            if value < parent_value - QP_ASCENT_TOL * (1.0 + abs(parent_value)):
                logger.warning(
                    f"child [{V.format()}] bound {value:.10g} below parent bound {parent_value:.10g}, "
                    "keeping the parent bound"
                )
            else:
                bound = max(bound, value, 0.0)
        children.append(
            NodeRecord(V, bound, parent_dual, NodeStatus.INHERITED_BOUND, next(counter))
        )
    i = frontier.records.index(node)
    frontier.records[i : i + 1] = children
    log(f"node {node.created} [{tag}] branch at ({t}, {j}) bound={parent_bound:.6g}")


def enumerate_miqp(
    stage: StageData, x_tau: np.ndarray, solver: Optional[DualActiveSetSolver] = None
) -> Tuple[float, Optional[np.ndarray]]:
    """Brute force over every binary assignment; returns (optimum, minimizer)."""
    solver = solver or DualActiveSetSolver()
    n = stage.T * stage.model.m_u
    best, argbest = np.inf, None
    for bits in itertools.product((0, 1), repeat=n):
        res = solve_subproblem(fixed_binary_subproblem(stage, x_tau, bits), solver=solver)
        if res.status == SolveStatus.OPTIMAL and res.objective < best:
            best, argbest = res.objective, np.array(bits).reshape(stage.T, stage.model.m_u)
    return best, argbest
