#!/usr/bin/python3
# -*- coding: utf-8 -*-

"""
Closed-loop simulation of the hybrid MPC controller with random model error,
and the warm/cold study built on top of it.
"""

import asyncio
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bnb import BnbConfig, BnbOutcome, solve_miqp
from config import logger
from model_core import MldModel, Polyhedron, simulate_step
from qp_engine import DualActiveSetSolver
from terminal_offline import Controller
from warmstart import PreparedWarmStart, WarmStart, prepare_warm_start

CSV_COLUMNS = [
    "trial",
    "tau",
    "mode",
    "c",
    "qp_count",
    "cover_size",
    "theta_star",
    "warmstart_pre_ms",
    "warmstart_post_ms",
    "solve_ms",
    "terminated",
]
TIMING_COLUMNS = ["warmstart_pre_ms", "warmstart_post_ms", "solve_ms"]
STAT_COLUMNS = ["qp_count", "cover_size"] + TIMING_COLUMNS
MODES = ("warm", "cold")


class TerminationStatus(Enum):
    COMPLETED = "completed"
    INFEASIBLE_STATE = "infeasible-state"


def _axis_bound(domain: Polyhedron, i: int) -> Optional[float]:
    """Bound on |x_i| from facets that bound x_i alone, or None if x_i has no such facet on both sides."""
    single = np.count_nonzero(domain.C, axis=1) == 1
    upper = single & (domain.C[:, i] > 0)
    lower = single & (domain.C[:, i] < 0)
    if not upper.any() or not lower.any():
        return None
    hi = np.min(domain.d[upper] / domain.C[upper, i])
    lo = np.min(domain.d[lower] / -domain.C[lower, i])
    return float(max(hi, lo))


def state_scale(model: MldModel) -> np.ndarray:
    """
    State bounds x_bar. Read off the box facets of the constraint set where there
    are any; otherwise the largest |x_i| over the set, from two LPs. 1 where
    the set is unbounded in x_i.
    """
    domain = model.domain
    scale = np.ones(model.n_x)
    for i in range(model.n_x):
        reach = _axis_bound(domain, i)
        if reach is None:
            e = np.zeros(domain.dim)
            e[i] = 1.0
            reach = max(domain.maximize(e), domain.maximize(-e))
        if np.isfinite(reach) and reach > 0:
            scale[i] = reach
    return scale


@dataclass(frozen=True)
class ErrorModel:
    """Zero-mean normal additive error with per-state std c * scale_i."""

    c: float
    scale: Tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"error scale must be nonnegative, got {self.c}")
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))

    @property
    def sigma(self) -> np.ndarray:
        return self.c * np.asarray(self.scale)

    def generator(self, trial: int = 0) -> np.random.Generator:
        # counter-based stream per (seed, trial)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, trial])))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, 1.0, size=len(self.scale)) * self.sigma


@dataclass
class StepRecord:
    tau: int
    x: np.ndarray
    u: Optional[np.ndarray]
    e: Optional[np.ndarray]
    theta_star: float
    qp_count: int
    cover_size: int
    warmstart_pre_ms: float = 0.0
    warmstart_post_ms: float = 0.0
    solve_ms: float = 0.0
    wall_ms: float = 0.0
    tight_fraction: float = 0.0


@dataclass
class SimTrace:
    mode: str
    c: float
    trial: int = 0
    records: List[StepRecord] = field(default_factory=list)
    status: TerminationStatus = TerminationStatus.COMPLETED

    @property
    def states(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def inputs(self) -> np.ndarray:
        return np.array([r.u for r in self.records if r.u is not None])

    def to_frame(self, timings: bool = True) -> pd.DataFrame:
        rows = [
            {
                "trial": self.trial,
                "tau": r.tau,
                "mode": self.mode,
                "c": self.c,
                "qp_count": r.qp_count,
                "cover_size": r.cover_size,
                "theta_star": r.theta_star,
                "warmstart_pre_ms": r.warmstart_pre_ms if timings else 0.0,
                "warmstart_post_ms": r.warmstart_post_ms if timings else 0.0,
                "solve_ms": r.solve_ms if timings else 0.0,
                "terminated": self.status.value,
                "tight_fraction": r.tight_fraction,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=CSV_COLUMNS + ["tight_fraction"])


def tight_fraction(warm: Optional[WarmStart], theta_star: float, epsilon: float) -> float:
    """Share of warm-start intervals whose inherited bound already reaches theta* - epsilon."""
    if warm is None or not len(warm.cover):
        return 0.0
    hits = sum(1 for r in warm.cover.records if r.lower_bound >= theta_star - epsilon)
    return hits / len(warm.cover)


def run_closed_loop(
    controller: Controller,
    x0: np.ndarray,
    steps: int,
    err: ErrorModel,
    mode: str = "warm",
    cfg: Optional[BnbConfig] = None,
    trial: int = 0,
    upper_bound: bool = False,
    solver: Optional[DualActiveSetSolver] = None,
) -> SimTrace:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = cfg or BnbConfig()
    solver = solver or DualActiveSetSolver()
    stage = controller.stage
    model = stage.model
    rng = err.generator(trial)
    trace = SimTrace(mode, err.c, trial)

    x = np.asarray(x0, dtype=float)
    prepared: Optional[PreparedWarmStart] = None
    for tau in range(steps):
        start = time.perf_counter()
        warm = prepared.finalize(x) if prepared is not None else None
        outcome: BnbOutcome = solve_miqp(stage, x, warm, cfg, solver)
        record = StepRecord(
            tau=tau,
            x=x,
            u=None,
            e=None,
            theta_star=outcome.theta_star,
            qp_count=outcome.stats.qp_solves,
            cover_size=len(warm.cover) if warm is not None else 1,
            warmstart_pre_ms=1e3 * warm.pre_time if warm is not None else 0.0,
            warmstart_post_ms=1e3 * warm.post_time if warm is not None else 0.0,
            solve_ms=1e3 * outcome.stats.qp_time,
            tight_fraction=tight_fraction(warm, outcome.theta_star, cfg.epsilon),
        )
        trace.records.append(record)
        if not outcome.feasible:
            trace.status = TerminationStatus.INFEASIBLE_STATE
            record.wall_ms = 1e3 * (time.perf_counter() - start)
            logger.info(f"trial {trial} ({mode}, c={err.c}): infeasible state at step {tau}")
            break
        if not outcome.complete:
            logger.warning(f"trial {trial} ({mode}) step {tau}: search stopped at the node limit")

        u, v = outcome.applied_action()
        if mode == "warm":
            prepared = prepare_warm_start(outcome, stage, controller.links, v, upper_bound, solver)
        e = err.draw(rng)
        record.u, record.e = u, e
        record.wall_ms = 1e3 * (time.perf_counter() - start)
        logger.debug(
            f"trial {trial} ({mode}) step {tau}: theta*={outcome.theta_star:.6g}, "
            f"{record.qp_count} QPs, cover {record.cover_size}"
        )
        x = simulate_step(model, x, u, e)
    return trace


@dataclass(frozen=True)
class TrialSpec:
    controller: Controller
    x0: Tuple[float, ...]
    steps: int
    c: float
    mode: str
    trial: int
    seed: int
    scale: Tuple[float, ...]
    cfg: BnbConfig = field(default_factory=BnbConfig)
    upper_bound: bool = False

    @property
    def key(self) -> Tuple[float, str, int]:
        return self.c, self.mode, self.trial


def run_trial(spec: TrialSpec) -> SimTrace:
    """One closed loop with its own solver instance."""
    err = ErrorModel(spec.c, spec.scale, spec.seed)
    return run_closed_loop(
        spec.controller,
        np.asarray(spec.x0),
        spec.steps,
        err,
        spec.mode,
        spec.cfg,
        spec.trial,
        spec.upper_bound,
        DualActiveSetSolver(),
    )


@dataclass
class StudyResult:
    traces: pd.DataFrame
    summary: pd.DataFrame
    counts: pd.DataFrame
    failed: List[Tuple[float, str, int]] = field(default_factory=list)


def summarize(traces: pd.DataFrame) -> pd.DataFrame:
    """Per (c, mode, tau): min, max, 80th and 90th percentile over completed trials."""
    done = traces[traces["terminated"] == TerminationStatus.COMPLETED.value]
    grouped = done.groupby(["c", "mode", "tau"])
    stats = grouped[STAT_COLUMNS].agg(
        ["min", "max", lambda s: s.quantile(0.8), lambda s: s.quantile(0.9)]
    )
    stats.columns = [
        f"{col}_{name}" for col in STAT_COLUMNS for name in ("min", "max", "p80", "p90")
    ]
    if "tight_fraction" in done:
        stats["tight_fraction_mean"] = grouped["tight_fraction"].mean()
    return stats.reset_index()


def trial_counts(traces: pd.DataFrame) -> pd.DataFrame:
    per_trial = traces.groupby(["c", "mode", "trial"])["terminated"].first().reset_index()
    counts = per_trial.groupby(["c", "mode"])["terminated"].value_counts().unstack(fill_value=0)
    for status in TerminationStatus:
        if status.value not in counts:
            counts[status.value] = 0
    return counts[[s.value for s in TerminationStatus]].reset_index()


def collect(traces: Sequence[Optional[SimTrace]], timings: bool = True) -> pd.DataFrame:
    frames = [t.to_frame(timings) for t in traces if t is not None]
    if not frames:
        return pd.DataFrame(columns=CSV_COLUMNS + ["tight_fraction"])
    return pd.concat(frames, ignore_index=True)


def run_study(
    controller: Controller,
    x0: np.ndarray,
    steps: int,
    c_values: Sequence[float],
    trials: int,
    seed: int = 0,
    modes: Sequence[str] = MODES,
    cfg: Optional[BnbConfig] = None,
    upper_bound: bool = False,
    timings: bool = True,
) -> StudyResult:
    """
    Every (c, mode, trial) closed loop through the trial queue. Warm and cold
    runs of the same trial share one error stream.
    """
    from async_worker import run_trials

    if trials < 1:
        raise ValueError(f"need at least one trial, got {trials}")
    cfg = cfg or BnbConfig()
    scale = tuple(state_scale(controller.stage.model))
    specs = [
        TrialSpec(controller, tuple(np.asarray(x0, dtype=float)), steps, float(c), mode, k, seed, scale, cfg, upper_bound)
        for c in c_values
        for mode in modes
        for k in range(trials)
    ]
    logger.info(f"study: {len(specs)} closed loops over c={list(c_values)}, modes={list(modes)}")
    results = asyncio.run(run_trials(specs))

    failed = [s.key for s, r in zip(specs, results) if r is None]
    traces = collect(results, timings)
    return StudyResult(traces, summarize(traces), trial_counts(traces), failed)


def write_csv(frame: pd.DataFrame, path: str, columns: Optional[List[str]] = None) -> None:
    frame.to_csv(path, columns=columns, index=False, float_format="%.10g")
    logger.info(f"wrote {len(frame)} rows to {path}")


def trace_summary(trace: SimTrace) -> Dict[str, float]:
    qp = [r.qp_count for r in trace.records]
    return {
        "steps": len(trace.records),
        "status": trace.status.value,
        "qp_total": int(np.sum(qp)) if qp else 0,
        "qp_min": int(np.min(qp)) if qp else 0,
        "final_norm": float(np.linalg.norm(trace.records[-1].x)) if trace.records else np.nan,
    }
