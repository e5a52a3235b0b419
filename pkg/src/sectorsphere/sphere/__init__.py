"""Stream processing over stored datasets: UDFs applied per record, in parallel."""

from .job import JobHandle, JobSpec, Stage, job_collect, read_output, run_job, submit_job
from .plan import SchedulerState, Segment, SegState, assign_segment, plan_segments, shuffle_route
from .records import FIXED, LENGTH_PREFIXED, RecordFormat, RecordStream
from .udf import Engine, Udf, register_udf
from .worker import SphereWorker


def handle_worker_failure(job: JobHandle, worker):
    return job.handle_worker_failure(worker)


__all__ = [
    "FIXED", "LENGTH_PREFIXED", "Engine", "JobHandle", "JobSpec", "RecordFormat", "RecordStream",
    "SchedulerState", "SegState", "Segment", "SphereWorker", "Stage", "Udf", "assign_segment",
    "handle_worker_failure", "job_collect", "plan_segments", "read_output", "register_udf",
    "run_job", "shuffle_route", "submit_job",
]
