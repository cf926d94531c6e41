import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

MINUTE_MS = 60_000

SUCCESS_BY_RANK_FIELDS = ["rank", "pit_size", "cs_size", "traffic", "success_rate_pct"]
GATEWAY_LOAD_FIELDS = ["minute", "out_requests", "in_responses"]
TTC_FIELDS = ["traffic", "rank", "class", "ttc_ms"]
CACHE_HITS_FIELDS = ["cs_size", "strategy", "hit_ratio_pct"]
COUNTERS_FIELDS = ["node", "counter", "value"]

TRAFFIC_KINDS = ("actuator", "gateway")


class ExportError(OSError):
    pass


class RequestStatus(enum.Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    FAILED = "failed"
    CENSORED = "censored"


@dataclass(slots=True)
class RequestRecord:
    requester: int
    name: object
    level: object
    traffic: str
    rank: int
    first_sent: int
    completed_at: int = None
    status: RequestStatus = RequestStatus.PENDING
    retransmissions: int = 0
    bytes: int = 0

    @property
    def ttc(self):
        if self.completed_at is None:
            return None
        return self.completed_at - self.first_sent

    @property
    def is_open(self):
        return self.status is RequestStatus.PENDING

    def complete(self, now, size):
        self.completed_at = now
        self.bytes = size
        self.status = RequestStatus.COMPLETED

    def fail(self):
        self.status = RequestStatus.FAILED

    def censor(self):
        self.status = RequestStatus.CENSORED


class NodeCounters:
    """
    Monotone per-node event counters.

    Every bump with a name is recorded twice: under the plain counter and under
    "<counter>/<first name component>", so figures can be split by traffic family.
    """

    FIELDS = (
        "interests_in", "interests_out", "data_in", "data_out",
        "pit_drops", "pit_evictions", "cs_hits", "cs_evictions",
        "queue_drops", "pitless_cached",
    )

    def __init__(self):
        self.values = Counter({counter: 0 for counter in self.FIELDS})

    def bump(self, counter, name=None, amount=1):
        self.values[counter] += amount
        if name is not None:
            self.values[f"{counter}/{name.top}"] += amount

    def __getitem__(self, key):
        return self.values[key]

    def items(self):
        return sorted(self.values.items())


@dataclass
class MetricsLog:
    requests: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    # (minute, out_requests, in_responses) observed at the gateway
    gateway_series: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def status_counts(self, traffic=None, requester=None):
        counts = Counter()
        for record in self.requests:
            if traffic is not None and record.traffic != traffic:
                continue
            if requester is None or record.requester == requester:
                counts[record.status] += 1
        return counts


def requests_frame(log):
    """
    Flatten the request records of a run into a DataFrame.
    Args:
        log (MetricsLog): metrics of one run.
    Returns:
        pandas.DataFrame: one row per application request.
    """
    rows = [
        {
            "requester": r.requester,
            "rank": r.rank,
            "traffic": r.traffic,
            "level": r.level.label,
            "status": r.status.value,
            "first_sent": r.first_sent,
            "ttc_ms": r.ttc,
            "bytes": r.bytes,
            "completed_at": r.completed_at,
        }
        for r in log.requests
    ]
    columns = ["requester", "rank", "traffic", "level", "status", "first_sent", "ttc_ms", "bytes", "completed_at"]
    frame = pd.DataFrame(rows, columns=columns)
    for column in ("ttc_ms", "completed_at"):
        frame[column] = pd.to_numeric(frame[column])
    return frame


def _settled(frame, traffic):
    # censored requests never count towards success or TTC
    return frame[(frame["traffic"] == traffic) & frame["status"].isin(["completed", "failed"])]


def success_by_rank(log, traffic):
    """
    Success rate per requester rank, request-weighted.
    Args:
        log (MetricsLog): metrics of one run.
        traffic (str): "actuator" or "gateway".
    Returns:
        list: (rank, success_rate_pct) rows sorted by rank; ranks without settled requests are omitted.
    """
    frame = _settled(requests_frame(log), traffic)
    if frame.empty:
        return []
    completed = frame["status"] == "completed"
    rates = completed.groupby(frame["rank"]).mean() * 100.0
    return [(int(rank), float(rate)) for rank, rate in rates.sort_index().items()]


def goodput_series(log, scope="gateway", traffic="actuator", per_requester=False):
    """
    Goodput in KiB/min, either as a per-minute series of the gateway's own requests
    or per requester rank over the whole run.
    Args:
        log (MetricsLog): metrics of one run.
        scope (str): "gateway" for the minute series, "rank" for the per-rank totals.
        traffic (str): traffic family used for the "rank" scope.
        per_requester (bool): divide each rank's goodput by its number of requesters.
    Returns:
        list: (minute, KiB_per_min) or (rank, KiB_per_min) rows.
    """
    frame = requests_frame(log)
    done = frame[frame["status"] == "completed"]
    if scope == "gateway":
        minutes = int(log.config.get("duration_ms", 0) // MINUTE_MS)
        done = done[done["requester"] == log.config.get("gateway")]
        per_minute = (done["completed_at"] // MINUTE_MS).astype(int)
        totals = done["bytes"].groupby(per_minute).sum()
        last = max([minutes - 1] + list(totals.index))
        return [(minute, float(totals.get(minute, 0)) / 1024.0) for minute in range(last + 1)]
    if scope == "rank":
        window_min = log.config.get("duration_ms", MINUTE_MS) / MINUTE_MS
        requesters = frame[frame["traffic"] == traffic].groupby("rank")["requester"].nunique()
        totals = done[done["traffic"] == traffic].groupby("rank")["bytes"].sum()
        rows = []
        for rank, count in requesters.sort_index().items():
            value = float(totals.get(rank, 0)) / 1024.0 / window_min
            if per_requester:
                value /= count
            rows.append((int(rank), value))
        return rows
    raise ValueError(f"unknown goodput scope {scope!r}")


def _level_mask(frame, level_filter):
    if level_filter is None:
        return frame["level"].notna()
    label = level_filter if isinstance(level_filter, str) else level_filter.label
    return frame["level"] == label


def ttc_cdf(log, traffic, level_filter=None, min_rank=None, max_rank=None):
    """
    Empirical CDF of time to completion. Failed requests stay in the denominator,
    so the curve plateaus at the success fraction.
    Returns:
        list: (t_seconds, cumulative_fraction) rows, [(0.0, 0.0)] without completions.
    """
    frame = _settled(requests_frame(log), traffic)
    frame = frame[_level_mask(frame, level_filter)]
    if min_rank is not None:
        frame = frame[frame["rank"] >= min_rank]
    if max_rank is not None:
        frame = frame[frame["rank"] <= max_rank]
    times = sorted(frame.loc[frame["status"] == "completed", "ttc_ms"].astype(int))
    if not times:
        return [(0.0, 0.0)]
    total = len(frame)
    return [(t / 1000.0, (i + 1) / total) for i, t in enumerate(times)]


def median_ttc(log, traffic, min_rank=None, level_filter=None):
    frame = requests_frame(log)
    frame = frame[(frame["traffic"] == traffic) & (frame["status"] == "completed")]
    frame = frame[_level_mask(frame, level_filter)]
    if min_rank is not None:
        frame = frame[frame["rank"] >= min_rank]
    if frame.empty:
        return None
    return float(frame["ttc_ms"].astype(float).median())


def cache_hit_ratio(log, traffic):
    """
    Share of Interests of one traffic family answered from a Content Store,
    counted network-wide at every node except the requester itself.
    """
    prefix = log.config.get("traffic_prefixes", {}).get(traffic, traffic)
    hits = sum(c[f"cs_hits/{prefix}"] for c in log.counters.values())
    interests = sum(c[f"interests_in/{prefix}"] for c in log.counters.values())
    if interests == 0:
        return 0.0
    return 100.0 * hits / interests


def success_summary(log):
    summary = {}
    for traffic in TRAFFIC_KINDS:
        counts = log.status_counts(traffic)
        settled = counts[RequestStatus.COMPLETED] + counts[RequestStatus.FAILED]
        summary[traffic] = 100.0 * counts[RequestStatus.COMPLETED] / settled if settled else 0.0
    return summary


def _fmt(value):
    return f"{value:.3f}"


def _write_rows(path, fieldnames, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as csvfile:
            writer = csv.writer(csvfile, lineterminator="\n")
            writer.writerow(fieldnames)
            writer.writerows(rows)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def export_csv(log, out_dir):
    """
    Write the per-run CSV files of one MetricsLog.
    Args:
        log (MetricsLog): metrics of one run.
        out_dir (str | Path): target directory, created if missing.
    Returns:
        dict: file stem -> written path.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {out_dir}: {exc}") from exc

    pit_size = log.config.get("pit_size", "")
    cs_size = log.config.get("cs_size", "")
    strategy = log.config.get("strategy", "")

    success_rows = [
        (rank, pit_size, cs_size, traffic, _fmt(rate))
        for traffic in TRAFFIC_KINDS
        for rank, rate in success_by_rank(log, traffic)
    ]
    ttc_rows = [
        (r.traffic, r.rank, r.level.label, r.ttc)
        for r in log.requests
        if r.status is RequestStatus.COMPLETED
    ]
    cache_rows = []
    if log.requests or log.counters:
        cache_rows.append((cs_size, strategy, _fmt(cache_hit_ratio(log, "actuator"))))
    counter_rows = [
        (node, counter, value)
        for node in sorted(log.counters)
        for counter, value in log.counters[node].items()
    ]

    return {
        "success_by_rank": _write_rows(out_dir / "success_by_rank.csv", SUCCESS_BY_RANK_FIELDS, success_rows),
        "gateway_load": _write_rows(out_dir / "gateway_load.csv", GATEWAY_LOAD_FIELDS, log.gateway_series),
        "ttc": _write_rows(out_dir / "ttc.csv", TTC_FIELDS, ttc_rows),
        "cache_hits": _write_rows(out_dir / "cache_hits.csv", CACHE_HITS_FIELDS, cache_rows),
        "counters": _write_rows(out_dir / "counters.csv", COUNTERS_FIELDS, counter_rows),
    }
