"""In-memory job store for background experiment runs."""

from __future__ import annotations

import threading
import uuid

from .models import JobInfo, RunRequest, RunResult


class JobStore:
    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, JobInfo] = {}

    def create(self, request: RunRequest) -> JobInfo:
        job = JobInfo(job_id=uuid.uuid4().hex[:12], status="queued", request=request)
        with self._lock:
            self._jobs[job.job_id] = job
        return job

    def get(self, job_id: str) -> JobInfo:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise KeyError(job_id)
        return job

    def all(self) -> list:
        with self._lock:
            return list(self._jobs.values())

    def start(self, job: JobInfo, target) -> None:
        """Run ``target(request) -> RunResult`` on a worker thread."""

        def runner():
            with self._lock:
                job.status = "running"
            try:
                result = target(job.request)
            except Exception as exc:  # surfaced through the job record
                with self._lock:
                    job.status = "error"
                    job.error = f"{type(exc).__name__}: {exc}"
                return
            with self._lock:
                job.status = "done"
                job.result = result

        threading.Thread(target=runner, daemon=True).start()
