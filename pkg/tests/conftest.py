#!/usr/bin/python3
# -*- coding: utf-8 -*-

import os
import sys

# Add the parent directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import numpy as np
import pytest

from model_core import MldModel, Polyhedron, build_stage_data


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: closed-loop and study-scale runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_mld(rng: np.random.Generator, n_x: int = 2, n_u: int = 1, m_u: int = 1, box: float = 5.0) -> MldModel:
    """
    Random model with bounded states and inputs and a couple of random
    couplings between continuous and binary inputs. The origin is always
    feasible.
    """
    n_in = n_u + m_u
    A = rng.uniform(-1.0, 1.0, (n_x, n_x))
    A /= max(1.0, np.max(np.abs(np.linalg.eigvals(A))) / 1.1)
    B = rng.uniform(-1.0, 1.0, (n_x, n_in))

    F = [np.vstack([np.eye(n_x), -np.eye(n_x)]), np.zeros((2 * n_u, n_x))]
    G = [np.zeros((2 * n_x, n_in)), np.hstack([np.vstack([np.eye(n_u), -np.eye(n_u)]), np.zeros((2 * n_u, m_u))])]
    h = [np.full(2 * n_x, box), np.full(2 * n_u, 2.0)]
    # u_j <= 2 v_j style couplings and a random mixed row
    for j in range(min(n_u, m_u)):
        g = np.zeros(n_in)
        g[j], g[n_u + j] = 1.0, -2.0
        F.append(np.zeros((1, n_x)))
        G.append(g[None, :])
        h.append(np.array([0.5]))
    f = rng.uniform(-1.0, 1.0, (1, n_x))
    g = rng.uniform(-1.0, 1.0, (1, n_in))
    F.append(f)
    G.append(g)
    h.append(np.array([rng.uniform(0.5, 3.0)]))

    V = np.hstack([np.zeros((m_u, n_u)), np.eye(m_u)])
    return MldModel(A, B, np.vstack(F), np.vstack(G), np.concatenate(h), V)


def random_stage(rng: np.random.Generator, T: int = 3, **kwargs):
    model = random_mld(rng, **kwargs)
    Q = np.eye(model.n_x)
    R = np.eye(model.n_in)
    return build_stage_data(model, Q, R, T)


def clutch_model() -> MldModel:
    """
    Double integrator whose force only acts with the clutch closed:
    |p|, |s| <= 5, |u| <= 1, -v <= u <= v. Standing still is always feasible.
    """
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.0, 0.0], [1.0, 0.0]])
    F = np.vstack([np.eye(2), -np.eye(2), np.zeros((4, 2))])
    G = np.zeros((8, 2))
    G[4, 0], G[5, 0] = 1.0, -1.0
    G[6] = [1.0, -1.0]
    G[7] = [-1.0, -1.0]
    h = np.array([5.0, 5.0, 5.0, 5.0, 1.0, 1.0, 0.0, 0.0])
    return MldModel(A, B, F, G, h, [[0.0, 1.0]])


def clutch_stage(T: int = 4, terminal: bool = False):
    model = clutch_model()
    pair = (2.0 * np.eye(2), Polyhedron.box([3.0, 3.0])) if terminal else None
    return build_stage_data(model, np.eye(2), np.eye(2), T, terminal=pair)


CLUTCH_X0 = np.array([-2.0, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_stage(rng):
    return random_stage(rng, T=3, n_x=2, n_u=1, m_u=1)


@pytest.fixture(scope="session")
def cartpole_controller():
    from cartpole_bench import CartPoleParams, build_controller

    return build_controller(CartPoleParams(), T=20)


@pytest.fixture(scope="session")
def short_cartpole_controller():
    from cartpole_bench import CartPoleParams, build_controller

    return build_controller(CartPoleParams(), T=4)
