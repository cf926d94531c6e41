"""
Command-line experiment runner.

Values come from built-in defaults, then an optional key = value config file,
then command-line flags; later sources win. Exit codes: 0 success, 1 a run
failed, 2 usage or configuration error.
"""
import argparse
import logging
import os
import sys
from dataclasses import dataclass

from .experiment import QosExperiment, RunFailure
from .forwarder import CacheStrategy
from .scenarios import QosMode, Scenario, TopologyError
from .utils import ConfigFileError, read_key_values

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_USAGE = 2


class PlanError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: tuple = ("s1",)
    pit_sizes: tuple = (5,)
    cs_sizes: tuple = (5,)
    gateway_pit: int = 50
    qos: tuple = ("regular",)
    cache: tuple = ("always",)
    p_reg: float = 0.30
    p_rel: float = 0.70
    seeds: tuple = (1,)
    duration_min: float = 18.0
    topology: str = None
    out_dir: str = "results"
    trace: bool = False
    jobs: int = 1
    warmup: str = "staggered"
    loss: float = None


def _choice(allowed):
    def convert(raw):
        if raw not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {raw!r}")
        return raw
    return convert


def _flag(raw):
    if isinstance(raw, bool):
        return raw
    lowered = str(raw).lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


# option key -> (plan field, converter, takes a list)
OPTIONS = {
    "scenario": ("scenario", _choice([s.value for s in Scenario]), True),
    "pit_size": ("pit_sizes", int, True),
    "cs_size": ("cs_sizes", int, True),
    "gateway_pit": ("gateway_pit", int, False),
    "qos": ("qos", _choice([m.value for m in QosMode]), True),
    "cache": ("cache", _choice([c.value for c in CacheStrategy]), True),
    "p_reg": ("p_reg", float, False),
    "p_rel": ("p_rel", float, False),
    "seed": ("seeds", int, True),
    "duration_min": ("duration_min", float, False),
    "topology": ("topology", str, False),
    "out": ("out_dir", str, False),
    "trace": ("trace", _flag, False),
    "jobs": ("jobs", int, False),
    "warmup": ("warmup", _choice(["staggered", "none"]), False),
    "loss": ("loss", float, False),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ndn-qos",
        description="Simulate QoS-aware NDN forwarding in the two IoT scenarios and write CSV metrics.",
    )
    parser.add_argument("--config", help="key = value file with default option values")
    parser.add_argument("--scenario", action="append", help="s1 or s2 (repeatable)")
    parser.add_argument("--pit-size", action="append", help="PIT capacity of non-gateway nodes (repeatable)")
    parser.add_argument("--cs-size", action="append", help="CS capacity (repeatable)")
    parser.add_argument("--gateway-pit", help="PIT capacity of the gateway (default 50)")
    parser.add_argument("--qos", action="append",
                        help="regular, prompt_reliable, reliable_only or prompt_only (repeatable)")
    parser.add_argument("--cache", action="append", help="always or prob (repeatable)")
    parser.add_argument("--p-reg", help="caching probability of regular content (default 0.30)")
    parser.add_argument("--p-rel", help="caching probability of reliable content (default 0.70)")
    parser.add_argument("--seed", action="append", help="master seed (repeatable)")
    parser.add_argument("--duration-min", help="simulated minutes per run (default 18)")
    parser.add_argument("--topology", help="topology file; the built-in tree when omitted")
    parser.add_argument("--out", help="output directory (default results)")
    parser.add_argument("--trace", action="store_true", default=None, help="write trace.txt per run")
    parser.add_argument("--jobs", help="parallel runs (default: available cores)")
    parser.add_argument("--warmup", help="staggered (actuators start at minute 8) or none")
    parser.add_argument("--loss", help="per-hop loss probability override")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings only")
    return parser


def _convert(key, raw):
    field_name, converter, many = OPTIONS[key]
    try:
        if many:
            items = raw if isinstance(raw, list) else str(raw).split(",")
            return field_name, tuple(converter(str(item).strip()) for item in items if str(item).strip())
        return field_name, converter(raw)
    except ValueError as exc:
        raise PlanError(key, str(exc)) from exc


def validate_plan(plan):
    for key, sizes in (("pit_size", plan.pit_sizes), ("cs_size", plan.cs_sizes)):
        if not sizes:
            raise PlanError(key, "needs at least one value")
        if any(size <= 0 for size in sizes):
            raise PlanError(key, "sizes must be positive")
    if plan.gateway_pit <= 0:
        raise PlanError("gateway_pit", "must be positive")
    for key, value in (("p_reg", plan.p_reg), ("p_rel", plan.p_rel)):
        if not 0.0 <= value <= 1.0:
            raise PlanError(key, "must lie in [0, 1]")
    if plan.p_reg > plan.p_rel:
        raise PlanError("p_reg", f"p_reg ({plan.p_reg}) must not exceed p_rel ({plan.p_rel})")
    if not plan.seeds:
        raise PlanError("seed", "needs at least one seed")
    if any(seed < 0 for seed in plan.seeds):
        raise PlanError("seed", "seeds must be non-negative")
    for key, values in (("scenario", plan.scenario), ("qos", plan.qos), ("cache", plan.cache)):
        if not values:
            raise PlanError(key, "needs at least one value")
        if len(set(values)) != len(values):
            raise PlanError(key, "values must be distinct")
    if len(set(plan.pit_sizes)) != len(plan.pit_sizes) or len(set(plan.cs_sizes)) != len(plan.cs_sizes):
        raise PlanError("pit_size" if len(set(plan.pit_sizes)) != len(plan.pit_sizes) else "cs_size",
                        "values must be distinct")
    if len(set(plan.seeds)) != len(plan.seeds):
        raise PlanError("seed", "values must be distinct")
    if plan.duration_min <= 0:
        raise PlanError("duration_min", "must be positive")
    if plan.jobs < 1:
        raise PlanError("jobs", "must be at least 1")
    if plan.loss is not None and not 0.0 <= plan.loss <= 1.0:
        raise PlanError("loss", "must lie in [0, 1]")
    return plan


def plan_from_args(args, config_path=None):
    values = {"jobs": os.cpu_count() or 1}
    config_path = config_path or getattr(args, "config", None)
    if config_path:
        for key, raw in read_key_values(config_path).items():
            if key not in OPTIONS:
                raise PlanError(key, f"unknown key in {config_path}")
            field_name, value = _convert(key, raw)
            values[field_name] = value
    for key in OPTIONS:
        raw = getattr(args, key, None)
        if raw is not None:
            field_name, value = _convert(key, raw)
            values[field_name] = value
    return validate_plan(ExperimentPlan(**values))


def parse_plan(argv=None, config_path=None):
    """
    Build an ExperimentPlan from command-line arguments and an optional config file.
    Args:
        argv (list | None): arguments without the program name.
        config_path (str | None): config file, same as --config.
    Returns:
        ExperimentPlan: the validated plan.
    Raises:
        PlanError: out-of-domain or contradictory values, naming the offending key.
        ConfigFileError: unreadable or malformed config file.
    """
    return plan_from_args(build_parser().parse_args(argv), config_path)


def run_plan(plan):
    try:
        QosExperiment(plan).run_plan()
    except TopologyError as exc:
        logger.error("topology: %s", exc)
        return EXIT_USAGE
    except RunFailure as exc:
        logger.error("%s", exc)
        return EXIT_RUN_FAILURE
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        plan = plan_from_args(args)
    except (PlanError, ConfigFileError) as exc:
        logger.error("usage error: %s", exc)
        return EXIT_USAGE
    return run_plan(plan)


if __name__ == "__main__":
    sys.exit(main())
