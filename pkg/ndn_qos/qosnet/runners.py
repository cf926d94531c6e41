import logging
import time as pytime
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .engine import Simulator
from .metrics import export_csv, success_summary
from .utils import write_key_values

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunJob:
    slug: str
    config: object
    run_dir: Path
    trace: bool = False
    echo: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    slug: str
    runtime: float = 0.0
    summary: dict = field(default_factory=dict)
    error: str = None


def run_simulation(config, trace_path=None):
    """
    Run one simulation and time it.
    Args:
        config (SimConfig): run description.
        trace_path (Path | None): write the event trace there when given.
    Returns:
        tuple: the MetricsLog and the wall-clock runtime in seconds.
    """
    start = pytime.perf_counter()
    if trace_path is not None:
        with open(trace_path, "w", newline="\n", encoding="utf-8") as trace:
            log = Simulator(config, trace=trace).run()
    else:
        log = Simulator(config).run()
    end = pytime.perf_counter()
    return log, end - start


def execute_job(job):
    """
    Run a job and write its CSVs, config echo and optional trace into job.run_dir.
    Failures are returned, not raised, so a worker process can report them by slug.
    """
    try:
        job.run_dir.mkdir(parents=True, exist_ok=True)
        trace_path = job.run_dir / "trace.txt" if job.trace else None
        log, runtime = run_simulation(job.config, trace_path)
        export_csv(log, job.run_dir)
        write_key_values(job.run_dir / "config.txt", job.echo)
        return RunResult(job.slug, runtime, success_summary(log))
    except Exception as exc:
        return RunResult(job.slug, error=f"{type(exc).__name__}: {exc}")


def run_jobs(jobs, max_workers=1):
    """
    Execute independent runs, in-process for a single worker or on a process pool.
    Returns:
        list: RunResult per job, in job order.
    """
    if max_workers <= 1 or len(jobs) <= 1:
        return [execute_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(execute_job, jobs))
