#!/usr/bin/python3
# -*- coding: utf-8 -*-


import asyncio
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Awaitable, Callable, Dict, List, Optional

from config import logger

TrialRunner = Callable[[Any], Awaitable[Any]]


class TrialStatusEnum(Enum):
    CANCELED = "canceled"
    PENDING = "pending"
    RUNNING = "running"
    FAILED = "failed"
    DONE = "done"


FINAL_STATES = (TrialStatusEnum.DONE, TrialStatusEnum.FAILED, TrialStatusEnum.CANCELED)


@dataclass
class StudyJob:
    """One submitted batch of trials. traces[i] belongs to trials[i]; None if it failed or never ran."""

    job_id: str
    trials: List[Any]
    status: TrialStatusEnum = TrialStatusEnum.PENDING
    traces: List[Any] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    completed: int = 0
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)
    finished: asyncio.Event = field(default_factory=asyncio.Event)

    def __post_init__(self):
        self.traces = [None] * len(self.trials)

    @property
    def failure(self) -> int:
        return len(self.errors)

    @property
    def count(self) -> int:
        return sum(t is not None for t in self.traces)

    @property
    def error(self) -> Optional[str]:
        if not self.errors:
            return None
        head = "; ".join(self.errors[:3])
        if self.status == TrialStatusEnum.FAILED:
            return f"All {len(self.trials)} trial(s) failed. Errors: {head}"
        return head

    def touch(self, status: Optional[TrialStatusEnum] = None) -> None:
        if status is not None:
            self.status = status
        self.updated_at = time.time()

    def close(self) -> None:
        if self.status not in FINAL_STATES:
            failed = self.trials and self.failure == len(self.trials)
            self.status = TrialStatusEnum.FAILED if failed else TrialStatusEnum.DONE
        self.touch()
        self.finished.set()


class AsyncTrialQueue:
    """
    Queue of study jobs. Workers pick jobs off the queue and run the trials of
    one job concurrently, at most `per_job_concurrency` at a time.
    """

    def __init__(
        self,
        worker_callable: TrialRunner,
        max_workers: int = 2,
        per_job_concurrency: int = 4,
    ):
        """
        Args:
            worker_callable: coroutine function running a single trial.
                             signature: await worker_callable(trial) -> trace
            max_workers: number of jobs processed concurrently.
            per_job_concurrency: how many trials inside one job run concurrently.
        """
        self.worker_callable = worker_callable
        self.max_workers = max_workers
        self.per_job_concurrency = per_job_concurrency

        self._jobs: Dict[str, StudyJob] = {}
        self._queue: asyncio.Queue = asyncio.Queue()
        self._workers: List[asyncio.Task] = []

    async def start(self):
        self._workers = [
            asyncio.create_task(self._worker_loop(), name=f"trial-worker-{i}")
            for i in range(self.max_workers)
        ]
        logger.info(f"Started {self.max_workers} trial workers")

    async def stop(self):
        for worker in self._workers:
            worker.cancel()
        await asyncio.gather(*self._workers, return_exceptions=True)
        self._workers.clear()

    async def submit(self, trials: List[Any]) -> str:
        job = StudyJob(os.urandom(8).hex(), list(trials))
        self._jobs[job.job_id] = job
        await self._queue.put(job.job_id)
        return job.job_id

    async def get(self, job_id: str) -> Optional[StudyJob]:
        return self._jobs.get(job_id)

    async def wait(self, job_id: str) -> Optional[StudyJob]:
        job = self._jobs.get(job_id)
        if job is not None:
            await job.finished.wait()
        return job

    async def remove(self, job_id: str) -> None:
        self._jobs.pop(job_id, None)

    def cancel(self, job_id: str) -> Optional[StudyJob]:
        """Trials already running finish; the rest are skipped."""
        job = self._jobs.get(job_id)
        if job is not None and job.status not in FINAL_STATES:
            job.touch(TrialStatusEnum.CANCELED)
            job.finished.set()
        return job

    async def _worker_loop(self):
        while True:
            job_id = await self._queue.get()
            try:
                job = self._jobs.get(job_id)
                if job is not None and job.status != TrialStatusEnum.CANCELED:
                    await self._run_job(job)
            except Exception as e:
                logger.error(f"Worker loop error: {e}")
            finally:
                self._queue.task_done()

    async def _run_job(self, job: StudyJob):
        job.touch(TrialStatusEnum.RUNNING)
        semaphore = asyncio.Semaphore(self.per_job_concurrency)

        async def run_one(idx: int, trial: Any):
            async with semaphore:
                if job.status == TrialStatusEnum.CANCELED:
                    return
                try:
                    job.traces[idx] = await self.worker_callable(trial)
                except Exception as e:
                    job.errors.append(f"trial {idx}: {e}")
                    logger.error(f"Failed trial {idx}: {e}")
                finally:
                    job.completed += 1
                    job.touch()

        try:
            await asyncio.gather(*(run_one(i, t) for i, t in enumerate(job.trials)))
        except Exception as e:
            job.errors.append(f"job processing failed: {e}")
            job.touch(TrialStatusEnum.FAILED)
            logger.error(f"Job {job.job_id} failed: {e}")
        finally:
            job.close()
