import pytest

from qosnet.metrics import (
    CACHE_HITS_FIELDS,
    COUNTERS_FIELDS,
    GATEWAY_LOAD_FIELDS,
    SUCCESS_BY_RANK_FIELDS,
    TTC_FIELDS,
    ExportError,
    MetricsLog,
    NodeCounters,
    RequestRecord,
    RequestStatus,
    cache_hit_ratio,
    export_csv,
    goodput_series,
    median_ttc,
    success_by_rank,
    success_summary,
    ttc_cdf,
)
from qosnet.names import DEFAULT_LEVEL, PROMPT_RELIABLE, parse_name


def _record(requester=1, rank=3, traffic="actuator", status="completed", first_sent=0, ttc=100,
            level=DEFAULT_LEVEL, seq=0):
    record = RequestRecord(requester, parse_name(f"/a/{requester}/{seq}"), level, traffic, rank, first_sent)
    if status == "completed":
        record.complete(first_sent + ttc, 32)
    elif status == "failed":
        record.fail()
    elif status == "censored":
        record.censor()
    return record


def _log(records, counters=None, duration_ms=60_000):
    return MetricsLog(
        requests=list(records),
        counters=counters or {},
        config={"duration_ms": duration_ms, "gateway": 0, "pit_size": 5, "cs_size": 10, "strategy": "prob",
                "traffic_prefixes": {"actuator": "a", "gateway": "s"}},
    )


def test_success_rate_per_rank():
    records = [_record(status="completed", seq=i) for i in range(8)]
    records += [_record(status="failed", seq=8 + i) for i in range(2)]
    records += [_record(rank=5, status="censored", seq=20)]
    assert success_by_rank(_log(records), "actuator") == [(3, 80.0)]
    assert success_by_rank(_log(records), "gateway") == []


def test_goodput_per_minute_at_gateway():
    records = [_record(requester=0, traffic="gateway", first_sent=i * 900, ttc=50, seq=i) for i in range(60)]
    series = goodput_series(_log(records), scope="gateway")
    assert series == [(0, pytest.approx(1.875))]


def test_goodput_without_completions_is_zero():
    assert goodput_series(_log([]), scope="gateway") == [(0, 0.0)]
    assert goodput_series(_log([]), scope="rank") == []


def test_goodput_per_rank():
    records = [_record(requester=1, rank=2, seq=i) for i in range(32)]
    records += [_record(requester=2, rank=2, seq=i) for i in range(32)]
    records += [_record(requester=3, rank=4, status="failed")]
    rows = goodput_series(_log(records), scope="rank", traffic="actuator")
    assert rows == [(2, pytest.approx(2.0)), (4, 0.0)]
    per_requester = goodput_series(_log(records), scope="rank", traffic="actuator", per_requester=True)
    assert per_requester[0] == (2, pytest.approx(1.0))
    with pytest.raises(ValueError):
        goodput_series(_log(records), scope="node")


def test_ttc_cdf_plateaus_at_success_fraction():
    records = [
        _record(ttc=1_000, seq=0),
        _record(ttc=3_000, seq=1),
        _record(status="failed", seq=2),
        _record(status="censored", seq=3),
    ]
    cdf = ttc_cdf(_log(records), "actuator")
    assert cdf == [(1.0, pytest.approx(1 / 3)), (3.0, pytest.approx(2 / 3))]
    assert ttc_cdf(_log([]), "actuator") == [(0.0, 0.0)]


def test_ttc_cdf_filters_level_and_rank():
    records = [
        _record(ttc=200, level=PROMPT_RELIABLE, rank=9, seq=0),
        _record(ttc=400, level=DEFAULT_LEVEL, rank=9, seq=1),
        _record(ttc=600, level=PROMPT_RELIABLE, rank=2, seq=2),
    ]
    log = _log(records)
    assert ttc_cdf(log, "actuator", PROMPT_RELIABLE, min_rank=8) == [(0.2, 1.0)]
    assert ttc_cdf(log, "actuator", "regular") == [(0.4, 1.0)]
    assert median_ttc(log, "actuator", min_rank=8) == 300.0
    assert median_ttc(log, "gateway") is None


def _counters(hits, interests):
    counters = NodeCounters()
    counters.bump("interests_in", parse_name("/a/g1/0"), interests)
    counters.bump("cs_hits", parse_name("/a/g1/0"), hits)
    counters.bump("interests_in", parse_name("/s/4/0"), 7)
    return counters


def test_cache_hit_ratio():
    assert cache_hit_ratio(_log([], {1: _counters(0, 10)}), "actuator") == 0.0
    assert cache_hit_ratio(_log([], {1: _counters(10, 10)}), "actuator") == 100.0
    assert cache_hit_ratio(_log([], {1: _counters(1, 4), 2: _counters(2, 4)}), "actuator") == 37.5
    assert cache_hit_ratio(_log([]), "actuator") == 0.0


def test_node_counters_split_by_family():
    counters = _counters(1, 4)
    assert counters["interests_in"] == 11
    assert counters["interests_in/a"] == 4
    assert counters["interests_in/s"] == 7
    assert counters["pit_drops"] == 0


def test_status_conservation():
    statuses = ["completed", "failed", "censored", "completed"]
    log = _log([_record(status=status, seq=i) for i, status in enumerate(statuses)])
    counts = log.status_counts()
    assert sum(counts.values()) == len(log.requests)
    assert counts[RequestStatus.COMPLETED] == 2
    assert success_summary(log) == {"actuator": pytest.approx(200 / 3), "gateway": 0.0}


def test_status_counts_filter_traffic_and_requester():
    log = _log([
        _record(requester=1, status="completed"),
        _record(requester=2, status="failed", seq=1),
        _record(requester=2, traffic="gateway", status="completed", seq=2),
    ])
    assert log.status_counts("actuator") == {RequestStatus.COMPLETED: 1, RequestStatus.FAILED: 1}
    assert log.status_counts("actuator", requester=2) == {RequestStatus.FAILED: 1}
    assert success_summary(log) == {"actuator": pytest.approx(50.0), "gateway": pytest.approx(100.0)}


def test_export_empty_log_writes_headers_only(tmp_path):
    export_csv(MetricsLog(), tmp_path)
    expected = {
        "success_by_rank.csv": SUCCESS_BY_RANK_FIELDS,
        "gateway_load.csv": GATEWAY_LOAD_FIELDS,
        "ttc.csv": TTC_FIELDS,
        "cache_hits.csv": CACHE_HITS_FIELDS,
        "counters.csv": COUNTERS_FIELDS,
    }
    for filename, fields in expected.items():
        assert (tmp_path / filename).read_bytes() == (",".join(fields) + "\n").encode()


def test_export_rows_and_determinism(tmp_path):
    log = _log([_record(ttc=120, seq=0), _record(status="failed", seq=1)], {1: _counters(1, 4)})
    log.gateway_series.append((0, 12, 9))
    export_csv(log, tmp_path / "a")
    export_csv(log, tmp_path / "b")
    for path in (tmp_path / "a").iterdir():
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
    lines = (tmp_path / "a" / "success_by_rank.csv").read_text().splitlines()
    assert lines == ["rank,pit_size,cs_size,traffic,success_rate_pct", "3,5,10,actuator,50.000"]
    assert (tmp_path / "a" / "ttc.csv").read_text().splitlines()[1] == "actuator,3,regular,120"
    assert (tmp_path / "a" / "cache_hits.csv").read_text().splitlines()[1] == "10,prob,25.000"
    assert (tmp_path / "a" / "gateway_load.csv").read_text().splitlines()[1] == "0,12,9"
    assert b"\r" not in (tmp_path / "a" / "counters.csv").read_bytes()


def test_export_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    with pytest.raises(ExportError, match="occupied"):
        export_csv(MetricsLog(), blocker)
