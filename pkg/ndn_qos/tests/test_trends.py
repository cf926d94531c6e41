"""
Multi-seed trend checks on the built-in topology. Each case runs full-length
simulations; enable with --run-slow.
"""
from collections import defaultdict

import numpy as np
import pytest

from qosnet.cli import ExperimentPlan
from qosnet.engine import run
from qosnet.experiment import PlanPoint, QosExperiment
from qosnet.metrics import cache_hit_ratio, median_ttc, success_by_rank

SEEDS = tuple(range(1, 11))


def _logs(scenario, qos, pit_size=5, cs_size=5, cache="always", warmup="none"):
    experiment = QosExperiment(ExperimentPlan(warmup=warmup, seeds=SEEDS))
    return [
        run(experiment.build_config(PlanPoint(scenario, qos, cache, pit_size, cs_size, seed)))
        for seed in SEEDS
    ]


def _success_per_rank(logs):
    # seed-averaged success rate per rank bucket
    rates = defaultdict(list)
    for log in logs:
        for rank, rate in success_by_rank(log, "actuator"):
            rates[rank].append(rate)
    return {rank: float(np.mean(values)) for rank, values in rates.items()}


def _mean_success(logs, ranks):
    per_rank = _success_per_rank(logs)
    return float(np.mean([per_rank[rank] for rank in ranks if rank in per_rank]))


def _hit_ratio(qos, cs_size, cache):
    return float(np.mean([cache_hit_ratio(log, "actuator") for log in _logs("s2", qos, cs_size=cs_size, cache=cache)]))


def _mean_gateway_load(logs, minutes):
    sent = [np.mean([out for minute, out, _ in log.gateway_series if minute in minutes]) for log in logs]
    received = [np.mean([got for minute, _, got in log.gateway_series if minute in minutes]) for log in logs]
    return float(np.mean(sent)), float(np.mean(received))


@pytest.mark.slow
def test_far_wing_collapses_without_qos():
    regular = _logs("s1", "regular")
    qos = _logs("s1", "prompt_reliable")
    near, far = range(0, 3), range(6, 13)
    assert _mean_success(regular, far) < 0.5 * _mean_success(regular, near)
    assert _mean_success(qos, far) >= 2 * _mean_success(regular, far)


@pytest.mark.slow
def test_qos_never_trails_regular_at_any_rank():
    regular = _success_per_rank(_logs("s1", "regular"))
    qos = _success_per_rank(_logs("s1", "prompt_reliable"))
    for rank, rate in regular.items():
        assert qos[rank] >= rate, rank


@pytest.mark.slow
def test_actuator_onset_spikes_gateway_requests():
    baseline, late = range(0, 8), range(9, 18)
    regular = _logs("s1", "regular", warmup="staggered")
    base_out, base_in = _mean_gateway_load(regular, baseline)
    late_out, late_in = _mean_gateway_load(regular, late)
    assert late_out >= 2 * base_out
    assert late_in < base_in

    qos_out, qos_in = _mean_gateway_load(_logs("s1", "prompt_reliable", warmup="staggered"), late)
    assert qos_out < late_out
    assert qos_in > late_in


@pytest.mark.slow
def test_prompt_shortens_distant_completion_times():
    regular = [median_ttc(log, "actuator", min_rank=8) for log in _logs("s1", "regular")]
    prompt = [median_ttc(log, "actuator", min_rank=8) for log in _logs("s1", "prompt_only")]
    regular = [value for value in regular if value is not None]
    prompt = [value for value in prompt if value is not None]
    assert np.mean(prompt) <= 0.8 * np.mean(regular)


@pytest.mark.slow
@pytest.mark.parametrize("cs_size", [10, 30])
def test_group_caching_keeps_every_rank_served(cs_size):
    qos = _success_per_rank(_logs("s2", "prompt_reliable", cs_size=cs_size))
    assert min(qos.values()) >= 80.0


@pytest.mark.slow
def test_regular_group_traffic_fails_far_ranks_despite_large_cache():
    regular = _success_per_rank(_logs("s2", "regular", cs_size=30))
    far = {rank: rate for rank, rate in regular.items() if rank >= 8}
    assert far
    assert all(rate < 80.0 for rate in far.values()), far


@pytest.mark.slow
def test_group_caching_raises_hit_ratio():
    for cs_size in (5, 15, 30):
        for cache in ("always", "prob"):
            regular = _hit_ratio("regular", cs_size, cache)
            for qos in ("prompt_reliable", "reliable_only"):
                assert _hit_ratio(qos, cs_size, cache) > regular, (cs_size, cache, qos)
