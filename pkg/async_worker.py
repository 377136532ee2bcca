#!/usr/bin/python3
# -*- coding: utf-8 -*-

import asyncio
import concurrent.futures
from contextlib import asynccontextmanager
from functools import partial
from typing import AsyncIterator, List, Optional, Sequence

from config import (
    STUDY_MAX_WORKERS,
    STUDY_PER_JOB_CONCURRENCY,
    STUDY_THREAD_POOL_SIZE,
    logger,
)
from jobs import AsyncTrialQueue, TrialStatusEnum
from simulator import SimTrace, TrialSpec, run_trial


async def run_trial_blocking(spec: TrialSpec, pool: concurrent.futures.Executor) -> SimTrace:
    try:
        trace = await asyncio.get_running_loop().run_in_executor(pool, run_trial, spec)
        logger.info(
            f"Completed trial {spec.trial} ({spec.mode}, c={spec.c}): "
            f"{len(trace.records)} steps, {trace.status.value}"
        )
        return trace

    except Exception as e:
        logger.error(f"Trial {spec.trial} ({spec.mode}, c={spec.c}) failed: {e}")
        raise


@asynccontextmanager
async def trial_queue(
    max_workers: int = STUDY_MAX_WORKERS,
    per_job_concurrency: int = STUDY_PER_JOB_CONCURRENCY,
    pool_size: int = STUDY_THREAD_POOL_SIZE,
) -> AsyncIterator[AsyncTrialQueue]:
    # Thread pool for the closed-loop solves
    pool = concurrent.futures.ThreadPoolExecutor(max_workers=pool_size)
    queue = AsyncTrialQueue(
        worker_callable=partial(run_trial_blocking, pool=pool),
        max_workers=max_workers,
        per_job_concurrency=per_job_concurrency,
    )
    await queue.start()
    logger.info("Trial queue started")
    try:
        yield queue
    finally:
        logger.info("Shutting down...")
        await queue.stop()
        pool.shutdown(wait=True)
        logger.info("Cleanup completed")


async def run_trials(specs: Sequence[TrialSpec], **queue_options) -> List[Optional[SimTrace]]:
    """Run all specs as one job; traces come back in submission order."""
    async with trial_queue(**queue_options) as queue:
        job_id = await queue.submit(specs)
        job = await queue.wait(job_id)
    if job.status == TrialStatusEnum.FAILED:
        logger.error(f"Study job failed: {job.error}")
    return job.traces
