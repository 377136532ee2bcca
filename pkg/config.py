#!/usr/bin/python3
# -*- coding: utf-8 -*-

import logging
import os

from dotenv import load_dotenv

load_dotenv()

# QP engine tolerances
QP_PIVOT_TOL = float(os.getenv("QP_PIVOT_TOL", 1e-10))
QP_FEASIBILITY_TOL = float(os.getenv("QP_FEASIBILITY_TOL", 1e-8))
QP_OPTIMALITY_TOL = float(os.getenv("QP_OPTIMALITY_TOL", 1e-8))
QP_MAX_ITER_FACTOR = int(os.getenv("QP_MAX_ITER_FACTOR", 10))  # x constraint count
QP_STALL_LIMIT = int(os.getenv("QP_STALL_LIMIT", 25))  # Bland's rule after this
QP_ASCENT_TOL = float(os.getenv("QP_ASCENT_TOL", 1e-6))  # relative, round-off allowance
QP_KKT_REGULARIZATION = float(os.getenv("QP_KKT_REGULARIZATION", 1e-9))
QP_REFINE_STEPS = int(os.getenv("QP_REFINE_STEPS", 20))

# acceptance checks on dual points
DUAL_ACCEPT_TOL = float(os.getenv("DUAL_ACCEPT_TOL", 1e-6))
ASSUMPTION_TOL = float(os.getenv("ASSUMPTION_TOL", 1e-8))
BINARY_TOL = float(os.getenv("BINARY_TOL", 1e-6))

# offline toolchain
REDUNDANCY_TOL = float(os.getenv("REDUNDANCY_TOL", 1e-9))
DARE_TOL = float(os.getenv("DARE_TOL", 1e-12))
DARE_MAX_ITER = int(os.getenv("DARE_MAX_ITER", 100000))
INVARIANT_MAX_ITER = int(os.getenv("INVARIANT_MAX_ITER", 500))

# branch and bound
BNB_EPSILON = float(os.getenv("BNB_EPSILON", 0.0))
BNB_MAX_NODES = int(os.getenv("BNB_MAX_NODES", 100000))

# study queue
STUDY_MAX_WORKERS = int(os.getenv("STUDY_MAX_WORKERS", 4))  # concurrent jobs
STUDY_PER_JOB_CONCURRENCY = int(
    os.getenv("STUDY_PER_JOB_CONCURRENCY", 4)
)  # trials per job
STUDY_THREAD_POOL_SIZE = int(os.getenv("STUDY_THREAD_POOL_SIZE", 8))

# logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger("hybrid_mpc")
