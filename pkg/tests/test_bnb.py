#!/usr/bin/python3
# -*- coding: utf-8 -*-

import numpy as np
import pytest

from bnb import (
    BnbConfig,
    BranchingError,
    choose_branch,
    enumerate_miqp,
    select_node,
    solve_miqp,
)
from conftest import CLUTCH_X0, clutch_stage, random_stage
from cover import Cover, Interval, NodeRecord, NodeStatus, validate_cover
from main import CARTPOLE_X0
from qp_engine import SolveStatus
from subproblem import DualSolution, SubproblemResult, fixed_binary_subproblem, solve_subproblem


def assert_matches_enumeration(stage, x0, outcome):
    best, _ = enumerate_miqp(stage, x0)
    if np.isinf(best):
        assert not outcome.feasible
        assert outcome.theta_star == np.inf
    else:
        assert outcome.feasible
        assert outcome.theta_star == pytest.approx(best, rel=1e-6, abs=1e-8)


class TestChooseBranch:
    def test_first_fractional_in_time_order(self):
        relaxed = np.array([[0.0, 0.5], [0.3, 1.0]])
        assert choose_branch(relaxed) == (0, 1)

    def test_skips_fixed_entries(self):
        relaxed = np.array([[0.0, 0.5], [0.3, 1.0]])
        V = Interval.hypercube(4).fix(1, 1)
        assert choose_branch(relaxed, V) == (1, 0)

    def test_tolerance(self):
        assert choose_branch(np.array([[1e-9, 0.4]])) == (0, 1)

    def test_binary_point_raises(self):
        with pytest.raises(BranchingError):
            choose_branch(np.array([[0.0, 1.0], [1.0, 0.0]]))


class TestSelectNode:
    def records(self, bounds):
        return Cover(
            2,
            [
                NodeRecord(Interval.singleton(bits), b, None, NodeStatus.INHERITED_BOUND, k)
                for k, (bits, b) in enumerate(zip([(0, 0), (0, 1), (1, 0), (1, 1)], bounds))
            ],
        )

    def test_lowest_bound_first(self):
        node = select_node(self.records([3.0, 1.0, 2.0, 5.0]), np.inf, 0.0)
        assert node.created == 1

    def test_ties_go_to_the_oldest(self):
        node = select_node(self.records([2.0, 1.0, 1.0, 5.0]), np.inf, 0.0)
        assert node.created == 1

    def test_nothing_left_below_incumbent(self):
        frontier = self.records([3.0, 1.0, 2.0, 5.0])
        assert select_node(frontier, 1.0, 0.0) is None
        assert select_node(frontier, 2.5, 1.0) is not None
        assert select_node(frontier, 2.0, 1.0) is None


class TestConfig:
    def test_negative_epsilon(self):
        with pytest.raises(ValueError):
            BnbConfig(epsilon=-1.0)

    def test_only_best_first_chronological(self):
        with pytest.raises(ValueError):
            BnbConfig(node_selection="depth-first")
        with pytest.raises(ValueError):
            BnbConfig(branching="most-fractional")


class TestSolveMiqp:
    @pytest.mark.parametrize("x0", [CLUTCH_X0, np.array([1.5, -0.5]), np.array([0.0, 1.0]), np.zeros(2)])
    def test_clutch_matches_enumeration(self, x0):
        stage = clutch_stage(T=4)
        assert_matches_enumeration(stage, x0, solve_miqp(stage, x0))

    @pytest.mark.parametrize("seed", range(8))
    def test_random_models_match_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        stage = random_stage(rng, T=3, n_x=2, n_u=1, m_u=2)
        x0 = rng.uniform(-1.0, 1.0, 2)
        assert_matches_enumeration(stage, x0, solve_miqp(stage, x0))

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(200))
    def test_brute_force_equivalence(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n_x, m_u = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        stage = random_stage(rng, T=int(rng.integers(1, 5)), n_x=n_x, n_u=1, m_u=m_u)
        # every fourth instance starts outside the state box
        x0 = rng.uniform(-1.0, 1.0, n_x) * (6.0 if seed % 4 == 3 else 1.0)
        assert_matches_enumeration(stage, x0, solve_miqp(stage, x0))

    def test_incumbent_is_consistent(self):
        stage = clutch_stage(T=4)
        outcome = solve_miqp(stage, CLUTCH_X0)
        inc = outcome.incumbent
        assert set(np.unique(inc.binaries)) <= {0.0, 1.0}
        res = solve_subproblem(fixed_binary_subproblem(stage, CLUTCH_X0, inc.binaries))
        assert res.objective == pytest.approx(outcome.theta_star, rel=1e-6, abs=1e-8)
        u0, v0 = outcome.applied_action()
        assert u0.shape == (2,) and v0.shape == (1,)
        assert u0[1] == v0[0]
        assert abs(u0[0]) <= v0[0] + 1e-5

    def test_final_cover_is_valid_at_every_step(self):
        stage = clutch_stage(T=4)
        snapshots = []
        outcome = solve_miqp(stage, CLUTCH_X0, observer=lambda c: snapshots.append(c.intervals))
        assert len(snapshots) >= 2
        assert all(validate_cover(s, 4, 1) for s in snapshots)
        assert validate_cover(outcome.cover, 4, 1)
        assert outcome.stats.qp_solves >= 1

    def test_final_bounds_reach_the_optimum(self):
        stage = clutch_stage(T=4)
        outcome = solve_miqp(stage, CLUTCH_X0)
        for r in outcome.cover.records:
            assert r.lower_bound >= outcome.theta_star - 1e-9

    def test_epsilon_suboptimality(self):
        stage = clutch_stage(T=4)
        best, _ = enumerate_miqp(stage, CLUTCH_X0)
        loose = solve_miqp(stage, CLUTCH_X0, cfg=BnbConfig(epsilon=0.5))
        assert best - 1e-8 <= loose.theta_star <= best + 0.5 + 1e-8

    def test_infeasible_state(self):
        stage = clutch_stage(T=4)
        outcome = solve_miqp(stage, np.array([4.9, 5.0]))
        assert not outcome.feasible
        assert outcome.theta_star == np.inf
        assert outcome.stats.qp_solves == 1
        assert outcome.cover.records[0].status == NodeStatus.INFEASIBLE
        with pytest.raises(ValueError):
            outcome.applied_action()

    def test_node_limit(self):
        stage = clutch_stage(T=4)
        outcome = solve_miqp(stage, CLUTCH_X0, cfg=BnbConfig(max_nodes=1))
        assert not outcome.complete
        assert outcome.stats.qp_solves == 1

    def test_fixed_binaries_enumeration(self):
        stage = clutch_stage(T=2)
        best, argbest = enumerate_miqp(stage, CLUTCH_X0)
        assert argbest.shape == (2, 1)
        res = solve_subproblem(fixed_binary_subproblem(stage, CLUTCH_X0, argbest))
        assert res.status == SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(best)

    def test_stats_separate_inherited_leaves(self):
        stage = clutch_stage(T=4)
        outcome = solve_miqp(stage, CLUTCH_X0)
        statuses = [r.status for r in outcome.cover.records]
        assert outcome.stats.inherited_bound == statuses.count(NodeStatus.INHERITED_BOUND)
        assert outcome.stats.pruned_by_bound >= statuses.count(NodeStatus.CUTOFF)
        closed = outcome.stats.pruned_by_bound + statuses.count(NodeStatus.INFEASIBLE)
        assert closed <= outcome.stats.qp_solves

    def test_lost_ascent_at_the_root_branches_on(self, mocker):
        stage = clutch_stage(T=2)
        real = solve_subproblem
        calls = []

        def flaky(qp, **kwargs):
            calls.append(qp.interval.format())
            if len(calls) == 1:
                return SubproblemResult(SolveStatus.NUMERICAL, 0.0, dual=DualSolution.zeros(stage))
            return real(qp, **kwargs)

        mocker.patch("bnb.solve_subproblem", side_effect=flaky)
        outcome = solve_miqp(stage, CLUTCH_X0)
        mocker.stopall()
        assert outcome.complete
        assert calls[0] == Interval.hypercube(2).format()
        assert len(calls) >= 3
        assert validate_cover(outcome.cover, 2, 1)
        assert_matches_enumeration(stage, CLUTCH_X0, outcome)

    def test_cartpole_cold_solve(self, cartpole_controller):
        outcome = solve_miqp(cartpole_controller.stage, np.array(CARTPOLE_X0))
        assert outcome.complete
        assert outcome.feasible
        assert 0.0 < outcome.theta_star < np.inf
        assert outcome.stats.qp_solves >= 1
        assert outcome.incumbent.x[0] == pytest.approx(CARTPOLE_X0)
        for r in outcome.cover.records:
            assert r.lower_bound >= outcome.theta_star - 1e-6 * (1.0 + outcome.theta_star)
