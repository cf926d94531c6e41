import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from .engine import LinkModel, SimConfig
from .forwarder import CacheStrategy, CachingDecision, NodeConfig
from .metrics import MINUTE_MS
from .runners import RunJob, run_jobs
from .scenarios import QosMode, Scenario, TrafficSpec, build_topology, default_class_table
from .utils import read_key_values

logger = logging.getLogger(__name__)

ACTUATOR_WARMUP_MIN = 8
POINT_KEYS = ["scenario", "qos", "cache", "pit_size", "cs_size"]
INTEGER_KEYS = {"pit_size", "cs_size", "seed"}


class RunFailure(RuntimeError):
    def __init__(self, slug, message):
        super().__init__(f"run {slug} failed: {message}")
        self.slug = slug


@dataclass(frozen=True)
class PlanPoint:
    scenario: str
    qos: str
    cache: str
    pit_size: int
    cs_size: int
    seed: int

    @property
    def slug(self):
        return f"{self.scenario}-{self.qos}-{self.cache}-pit{self.pit_size}-cs{self.cs_size}-seed{self.seed}"


class QosExperiment:
    def __init__(self, plan):
        """
        Helper class to run a sweep of QoS forwarding simulations.
        Every point of the Cartesian product scenario x qos x cache x PIT size x
        CS size x seed is simulated once; each run writes its CSVs into
        <out_dir>/<slug>/ and seed aggregates are written to <out_dir>.

        Args:
            plan (ExperimentPlan): validated experiment plan.
        """
        self.plan = plan
        self.out_dir = Path(plan.out_dir)
        self.topology = build_topology(plan.topology)

    def points(self):
        plan = self.plan
        return [
            PlanPoint(scenario, qos, cache, pit_size, cs_size, seed)
            for scenario, qos, cache, pit_size, cs_size, seed in itertools.product(
                plan.scenario, plan.qos, plan.cache, plan.pit_sizes, plan.cs_sizes, plan.seeds
            )
        ]

    def build_config(self, point):
        plan = self.plan
        mode = QosMode(point.qos)
        actuator_start = 0 if plan.warmup == "none" else ACTUATOR_WARMUP_MIN * MINUTE_MS
        traffic = TrafficSpec(scenario=Scenario(point.scenario), actuator_start_ms=actuator_start)
        decision = CachingDecision(CacheStrategy(point.cache), plan.p_reg, plan.p_rel)
        node = NodeConfig(
            pit_capacity=point.pit_size,
            cs_capacity=point.cs_size,
            decision=decision,
            qos_enabled=mode.enabled,
        )
        link = LinkModel() if plan.loss is None else LinkModel(loss_prob=plan.loss)
        return SimConfig(
            topology=self.topology,
            seed=point.seed,
            duration_min=plan.duration_min,
            traffic=traffic,
            node=node,
            gateway_pit=plan.gateway_pit,
            class_table=default_class_table(mode),
            link=link,
            labels={"scenario": point.scenario, "qos": point.qos},
        )

    def echo(self, point):
        plan = self.plan
        return {
            "scenario": point.scenario,
            "qos": point.qos,
            "cache": point.cache,
            "pit_size": point.pit_size,
            "cs_size": point.cs_size,
            "seed": point.seed,
            "gateway_pit": plan.gateway_pit,
            "p_reg": plan.p_reg,
            "p_rel": plan.p_rel,
            "duration_min": plan.duration_min,
            "warmup": plan.warmup,
            "loss": "" if plan.loss is None else plan.loss,
            "topology": "" if plan.topology is None else plan.topology,
        }

    def run_plan(self):
        points = self.points()
        jobs = [
            RunJob(point.slug, self.build_config(point), self.out_dir / point.slug, self.plan.trace, self.echo(point))
            for point in points
        ]
        logger.info("Running %d simulations with %d worker(s) into %s", len(jobs), self.plan.jobs, self.out_dir)
        results = run_jobs(jobs, self.plan.jobs)
        for result in results:
            if result.error is not None:
                raise RunFailure(result.slug, result.error)
            logger.info(
                f"Run: slug={result.slug}, actuator success = {result.summary['actuator']:.1f}%, "
                f"gateway success = {result.summary['gateway']:.1f}%, time = {result.runtime:.2f}s"
            )
        paths = aggregate_runs(self.out_dir, [job.run_dir for job in jobs])
        for name, path in paths.items():
            logger.info(f"  {name:20s} -> {path}")
        return results


def _read_run(run_dir, filename):
    frame = pd.read_csv(run_dir / filename)
    config = read_key_values(run_dir / "config.txt")
    for key in POINT_KEYS + ["seed"]:
        frame[key] = int(config[key]) if key in INTEGER_KEYS else config[key]
    return frame


def _collect(run_dirs, filename):
    # fixed order so aggregates do not depend on how the runs were scheduled
    frames = [_read_run(Path(run_dir), filename) for run_dir in sorted(run_dirs, key=str)]
    frames = [frame for frame in frames if not frame.empty]
    if not frames:
        return None
    return pd.concat(frames, ignore_index=True)


def _spread(frame, keys, columns):
    grouped = frame.groupby(keys, sort=True)
    parts = []
    for column in columns:
        stats = grouped[column].agg(["mean", "min", "max"])
        stats.columns = [f"{column}_{stat}" for stat in stats.columns]
        parts.append(stats)
    parts.append(grouped["seed"].nunique().rename("seeds"))
    return pd.concat(parts, axis=1).reset_index()


def _write(frame, path, columns):
    if frame is None:
        frame = pd.DataFrame(columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.3f")
    return path


def aggregate_runs(out_dir, run_dirs):
    """
    Seed aggregates (mean, min, max) computed from the per-run CSV files only.
    Args:
        out_dir (Path): where the aggregate files are written.
        run_dirs (list): run directories holding CSVs and config.txt.
    Returns:
        dict: aggregate name -> written path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    success = _collect(run_dirs, "success_by_rank.csv")
    keys = POINT_KEYS + ["traffic", "rank"]
    paths["success_by_rank_agg"] = _write(
        None if success is None else _spread(success, keys, ["success_rate_pct"]),
        out_dir / "success_by_rank_agg.csv",
        keys + ["success_rate_pct_mean", "success_rate_pct_min", "success_rate_pct_max", "seeds"],
    )

    hits = _collect(run_dirs, "cache_hits.csv")
    paths["cache_hits_agg"] = _write(
        None if hits is None else _spread(hits, POINT_KEYS, ["hit_ratio_pct"]),
        out_dir / "cache_hits_agg.csv",
        POINT_KEYS + ["hit_ratio_pct_mean", "hit_ratio_pct_min", "hit_ratio_pct_max", "seeds"],
    )

    load = _collect(run_dirs, "gateway_load.csv")
    keys = POINT_KEYS + ["minute"]
    paths["gateway_load_agg"] = _write(
        None if load is None else _spread(load, keys, ["out_requests", "in_responses"]),
        out_dir / "gateway_load_agg.csv",
        keys + ["out_requests_mean", "out_requests_min", "out_requests_max",
                "in_responses_mean", "in_responses_min", "in_responses_max", "seeds"],
    )

    ttc = _collect(run_dirs, "ttc.csv")
    keys = POINT_KEYS + ["traffic", "class", "rank"]
    medians = None
    if ttc is not None:
        medians = ttc.groupby(keys + ["seed"], sort=True)["ttc_ms"].median().rename("median_ttc_ms").reset_index()
        medians = _spread(medians, keys, ["median_ttc_ms"])
    paths["ttc_median_agg"] = _write(
        medians,
        out_dir / "ttc_median_agg.csv",
        keys + ["median_ttc_ms_mean", "median_ttc_ms_min", "median_ttc_ms_max", "seeds"],
    )
    return paths
