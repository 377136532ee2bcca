#!/usr/bin/python3
# -*- coding: utf-8 -*-

import numpy as np
import pandas as pd
import pytest

from cartpole_bench import build_cartpole_mld
from conftest import CLUTCH_X0, clutch_model, clutch_stage
from cover import Cover, Interval, NodeRecord, NodeStatus
from main import CARTPOLE_X0
from model_core import MldModel, Polyhedron, simulate_step
from simulator import (
    CSV_COLUMNS,
    ErrorModel,
    TerminationStatus,
    collect,
    run_closed_loop,
    run_study,
    state_scale,
    summarize,
    tight_fraction,
    trace_summary,
    trial_counts,
    write_csv,
)
from terminal_offline import Controller
from warmstart import WarmStart


@pytest.fixture(scope="module")
def controller():
    return Controller(clutch_stage(T=4))


@pytest.fixture(scope="module")
def scale():
    return tuple(state_scale(clutch_model()))


class TestErrorModel:
    def test_scale_of_constraint_set(self, scale):
        assert scale == pytest.approx((5.0, 5.0))
        assert state_scale(build_cartpole_mld()) == pytest.approx([0.5, np.pi / 10, 1.0, 1.0])

    def test_rejects_negative_scale(self):
        with pytest.raises(ValueError):
            ErrorModel(-0.1, (1.0,))

    def test_moments(self):
        err = ErrorModel(0.01, (5.0, 2.0), seed=3)
        rng = err.generator(0)
        draws = np.array([err.draw(rng) for _ in range(20000)])
        assert np.allclose(draws.mean(axis=0), 0.0, atol=0.003)
        assert draws.std(axis=0) == pytest.approx([0.05, 0.02], rel=0.03)

    def test_streams_are_reproducible(self):
        err = ErrorModel(0.01, (1.0, 1.0), seed=11)
        a = [err.draw(err.generator(2)) for _ in range(2)]
        assert np.array_equal(a[0], a[1])
        assert not np.array_equal(err.draw(err.generator(2)), err.draw(err.generator(3)))

    def test_zero_scale_draws_zero(self):
        err = ErrorModel(0.0, (1.0, 1.0))
        assert not np.any(err.draw(err.generator(0)))


class TestClosedLoop:
    def test_nominal_warm_matches_cold(self, controller, scale):
        err = ErrorModel(0.0, scale)
        warm = run_closed_loop(controller, CLUTCH_X0, 6, err, "warm")
        cold = run_closed_loop(controller, CLUTCH_X0, 6, err, "cold")
        assert warm.status == cold.status == TerminationStatus.COMPLETED
        assert len(warm.records) == 6
        assert [r.theta_star for r in warm.records] == pytest.approx(
            [r.theta_star for r in cold.records], rel=1e-6, abs=1e-8
        )
        assert np.allclose(warm.states, cold.states, atol=1e-6)
        assert warm.records[0].cover_size == 1
        assert all(r.cover_size == 1 for r in cold.records)

    def test_noisy_warm_matches_cold(self, controller, scale):
        err = ErrorModel(0.01, scale, seed=5)
        warm = run_closed_loop(controller, CLUTCH_X0, 5, err, "warm", trial=1)
        cold = run_closed_loop(controller, CLUTCH_X0, 5, err, "cold", trial=1)
        assert [r.theta_star for r in warm.records] == pytest.approx(
            [r.theta_star for r in cold.records], rel=1e-6, abs=1e-8
        )
        assert np.allclose(np.array([r.e for r in warm.records]), np.array([r.e for r in cold.records]))

    def test_state_follows_the_plant(self, controller, scale):
        trace = run_closed_loop(controller, CLUTCH_X0, 3, ErrorModel(0.01, scale, seed=2), "warm")
        A, B = controller.stage.model.A, controller.stage.model.B
        for r, nxt in zip(trace.records, trace.records[1:]):
            assert nxt.x == pytest.approx(A @ r.x + B @ r.u + r.e)

    def test_infeasible_state_ends_the_trial(self, controller, scale):
        trace = run_closed_loop(controller, np.array([4.9, 5.0]), 5, ErrorModel(0.0, scale), "cold")
        assert trace.status == TerminationStatus.INFEASIBLE_STATE
        assert len(trace.records) == 1
        assert trace.records[0].u is None
        assert trace.records[0].theta_star == np.inf
        assert trace.to_frame()["terminated"].tolist() == ["infeasible-state"]

    def test_unknown_mode(self, controller, scale):
        with pytest.raises(ValueError):
            run_closed_loop(controller, CLUTCH_X0, 1, ErrorModel(0.0, scale), "lukewarm")

    def test_frame_without_timings(self, controller, scale):
        trace = run_closed_loop(controller, CLUTCH_X0, 3, ErrorModel(0.0, scale), "warm")
        frame = trace.to_frame(timings=False)
        assert list(frame.columns[: len(CSV_COLUMNS)]) == CSV_COLUMNS
        assert not frame[["warmstart_pre_ms", "warmstart_post_ms", "solve_ms"]].to_numpy().any()
        assert frame["tau"].tolist() == [0, 1, 2]
        summary = trace_summary(trace)
        assert summary["steps"] == 3
        assert summary["qp_total"] == frame["qp_count"].sum()


def test_tight_fraction():
    records = [
        NodeRecord(Interval.singleton((0,)), 2.0, None, NodeStatus.INHERITED_BOUND, 0),
        NodeRecord(Interval.singleton((1,)), 0.5, None, NodeStatus.INHERITED_BOUND, 1),
    ]
    warm = WarmStart(Cover(1, records))
    assert tight_fraction(warm, 1.0, 0.0) == 0.5
    assert tight_fraction(warm, 1.0, 0.6) == 1.0
    assert tight_fraction(None, 1.0, 0.0) == 0.0


def frame_of(rows):
    base = {k: 0.0 for k in CSV_COLUMNS}
    return pd.DataFrame([{**base, "terminated": "completed", **r} for r in rows], columns=CSV_COLUMNS)


def test_summarize_single_trial():
    frame = frame_of([{"c": 0.0, "mode": "warm", "tau": 0, "qp_count": 4, "cover_size": 2}])
    row = summarize(frame).iloc[0]
    for stat in ("min", "max", "p80", "p90"):
        assert row[f"qp_count_{stat}"] == 4
        assert row[f"cover_size_{stat}"] == 2


def test_summarize_skips_terminated_trials():
    frame = frame_of(
        [
            {"trial": 0, "c": 0.1, "mode": "cold", "tau": 0, "qp_count": 3},
            {"trial": 1, "c": 0.1, "mode": "cold", "tau": 0, "qp_count": 9, "terminated": "infeasible-state"},
            {"trial": 2, "c": 0.1, "mode": "cold", "tau": 0, "qp_count": 5},
        ]
    )
    row = summarize(frame).iloc[0]
    assert row["qp_count_min"] == 3
    assert row["qp_count_max"] == 5
    counts = trial_counts(frame).iloc[0]
    assert counts["completed"] == 2
    assert counts["infeasible-state"] == 1


def test_collect_skips_failed_trials(controller, scale):
    trace = run_closed_loop(controller, CLUTCH_X0, 2, ErrorModel(0.0, scale), "cold")
    frame = collect([trace, None])
    assert len(frame) == 2
    assert collect([None]).empty


def test_write_csv(tmp_path, controller, scale):
    trace = run_closed_loop(controller, CLUTCH_X0, 2, ErrorModel(0.0, scale), "cold")
    path = tmp_path / "trace.csv"
    write_csv(trace.to_frame(timings=False), str(path), CSV_COLUMNS)
    back = pd.read_csv(path)
    assert list(back.columns) == CSV_COLUMNS
    assert back["mode"].tolist() == ["cold", "cold"]


def test_study_runs_every_combination(controller):
    result = run_study(controller, CLUTCH_X0, 3, [0.0, 0.01], trials=2, seed=1)
    assert not result.failed
    assert len(result.traces) == 2 * 2 * 2 * 3
    assert len(result.summary) == 2 * 2 * 3
    assert result.counts["completed"].tolist() == [2, 2, 2, 2]
    warm = result.traces[result.traces["mode"] == "warm"].sort_values(["c", "trial", "tau"])
    cold = result.traces[result.traces["mode"] == "cold"].sort_values(["c", "trial", "tau"])
    assert warm["theta_star"].to_numpy() == pytest.approx(cold["theta_star"].to_numpy(), rel=1e-6, abs=1e-8)


def test_study_needs_a_trial(controller):
    with pytest.raises(ValueError):
        run_study(controller, CLUTCH_X0, 3, [0.0], trials=0)


@pytest.mark.slow
def test_cartpole_warm_matches_cold(cartpole_controller):
    scale = tuple(state_scale(cartpole_controller.stage.model))
    err = ErrorModel(0.001, scale, seed=0)
    x0 = np.array([0.0, 0.0, 1.0, 0.0])
    warm = run_closed_loop(cartpole_controller, x0, 5, err, "warm")
    cold = run_closed_loop(cartpole_controller, x0, 5, err, "cold")
    assert [r.theta_star for r in warm.records] == pytest.approx(
        [r.theta_star for r in cold.records], rel=1e-6
    )


def diamond_model(x1_bound=None):
    """|x1 + x2| <= 2, |x1 - x2| <= 2, optionally |x1| <= x1_bound, boxed inputs."""
    F = [np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]]), np.zeros((4, 2))]
    G = [np.zeros((4, 2)), np.vstack([np.eye(2), -np.eye(2)])]
    h = [np.full(4, 2.0), np.array([1.0, 1.0, 1.0, 0.0])]
    if x1_bound is not None:
        F.append(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        G.append(np.zeros((2, 2)))
        h.append(np.full(2, x1_bound))
    return MldModel(np.eye(2), np.zeros((2, 2)), np.vstack(F), np.vstack(G), np.concatenate(h), [[0.0, 1.0]])


class TestStateScale:
    def test_reach_over_coupled_facets(self):
        assert state_scale(diamond_model()) == pytest.approx([2.0, 2.0])

    def test_box_facets_win(self):
        assert state_scale(diamond_model(0.5)) == pytest.approx([0.5, 2.0])

    def test_box_facets_skip_the_lps(self, mocker):
        spy = mocker.spy(Polyhedron, "maximize")
        assert state_scale(build_cartpole_mld()) == pytest.approx([0.5, np.pi / 10, 1.0, 1.0])
        assert spy.call_count == 0


@pytest.fixture(scope="module")
def nominal_cartpole(cartpole_controller):
    scale = tuple(state_scale(cartpole_controller.stage.model))
    return run_closed_loop(cartpole_controller, np.array(CARTPOLE_X0), 50, ErrorModel(0.0, scale), "warm")


@pytest.mark.slow
class TestCartPoleNominal:
    def test_regulates_to_the_origin(self, cartpole_controller, nominal_cartpole):
        assert nominal_cartpole.status == TerminationStatus.COMPLETED
        assert len(nominal_cartpole.records) == 50
        last = nominal_cartpole.records[-1]
        x50 = simulate_step(cartpole_controller.stage.model, last.x, last.u, last.e)
        assert np.linalg.norm(x50) <= 1e-2

    def test_optimal_cost_drops_by_the_stage_cost(self, cartpole_controller, nominal_cartpole):
        stage = cartpole_controller.stage
        Q0, R0 = stage.Q[0], stage.R[0]
        records = nominal_cartpole.records
        for r, nxt in zip(records, records[1:]):
            stage_cost = float(np.sum((Q0 @ r.x) ** 2) + np.sum((R0 @ r.u) ** 2))
            tol = 1e-6 * (1.0 + r.theta_star)
            assert nxt.theta_star >= r.theta_star - stage_cost - tol
            assert nxt.theta_star <= r.theta_star - stage_cost + tol

    def test_reaches_the_minimum_qp_count(self, cartpole_controller, nominal_cartpole):
        m_u = cartpole_controller.stage.model.m_u
        counts = [r.qp_count for r in nominal_cartpole.records[1:]]
        assert 2 * m_u + 1 in counts


@pytest.mark.slow
def test_cartpole_study_warm_needs_fewer_qps(cartpole_controller):
    result = run_study(cartpole_controller, np.array(CARTPOLE_X0), 50, [1e-3], trials=10, seed=0, timings=False)
    assert not result.failed
    done = result.traces[result.traces["terminated"] == TerminationStatus.COMPLETED.value]
    median = done.groupby("mode")["qp_count"].median()
    assert median["warm"] <= 0.5 * median["cold"]
