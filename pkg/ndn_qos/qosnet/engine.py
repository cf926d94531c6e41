"""
Deterministic discrete-event engine and lossy half-duplex link model.

Events run in (time, sequence) order. All randomness comes from per-node and
per-link streams derived from the run seed, so a SimConfig fully determines
the event trace.
"""
import enum
import heapq
import itertools
import logging
from dataclasses import dataclass, field, replace

from .forwarder import (
    Data,
    EffectKind,
    Interest,
    NodeConfig,
    consumer_deliver,
    consumer_request,
    consumer_retransmit,
    consumer_timeout,
    on_data,
    on_interest,
)
from .metrics import MINUTE_MS, MetricsLog, RequestStatus
from .names import ClassTable
from .scenarios import (
    TRAFFIC_PREFIXES,
    Topology,
    TrafficSpec,
    build_nodes,
    schedule_actuator_requests,
    schedule_sensor_polling,
)
from .utils import RandomStreams

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class CausalityError(RuntimeError):
    pass


class EventKind(enum.Enum):
    APP_REQUEST = "app_request"
    RETRANSMIT = "retransmit"
    REQUEST_TIMEOUT = "request_timeout"
    LINK_DELIVER = "link_deliver"
    MEDIA_FREE = "media_free"
    PIT_EXPIRY = "pit_expiry"
    METRICS_TICK = "metrics_tick"


@dataclass(frozen=True, slots=True)
class Event:
    at: int
    seq: int
    kind: EventKind
    node: int
    payload: object = None


@dataclass(frozen=True, slots=True)
class LinkModel:
    base_delay: int = 5
    delay_jitter: int = 2
    loss_prob: float = 0.04
    busy_backoff: tuple = (1, 8)

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigurationError(f"loss_prob must lie in [0, 1], got {self.loss_prob}")
        if self.delay_jitter < 0 or self.base_delay - self.delay_jitter <= 0:
            raise ConfigurationError("base_delay must exceed delay_jitter")
        low, high = self.busy_backoff
        if low <= 0 or high < low:
            raise ConfigurationError(f"invalid busy_backoff range {self.busy_backoff}")


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    seed: int = 1
    duration_min: float = 18.0
    traffic: TrafficSpec = TrafficSpec()
    node: NodeConfig = NodeConfig()
    gateway_pit: int = 50
    class_table: ClassTable = field(default_factory=ClassTable)
    link: LinkModel = LinkModel()
    # (a, b) -> LinkModel, either orientation
    link_overrides: dict = field(default_factory=dict)
    # free-form labels echoed into the metrics log
    labels: dict = field(default_factory=dict)

    @property
    def duration_ms(self):
        return int(self.duration_min * MINUTE_MS)


def validate_config(config):
    topology = config.topology
    for node in topology.members:
        try:
            topology.path_to_gateway(node)
        except KeyError as exc:
            raise ConfigurationError(f"node {node} is not connected to the gateway") from exc
    for a, b in config.link_overrides:
        if not topology.has_link(a, b):
            raise ConfigurationError(f"link override for ({a}, {b}) names no topology edge")
    if config.gateway_pit <= 0:
        raise ConfigurationError("gateway PIT size must be positive")
    if config.duration_min <= 0:
        raise ConfigurationError("duration must be positive")


class Simulator:
    """
    One simulation run.
    Args:
        config (SimConfig): complete run description.
        trace (file object | None): receives one line per executed event.
        keep_airtime (bool): record (src, dst, start, end) of every transmission.
    """

    def __init__(self, config, trace=None, keep_airtime=False):
        validate_config(config)
        self.config = config
        self.topology = config.topology
        self.now = 0
        self.duration_ms = config.duration_ms
        self.trace = trace
        self.airtime = [] if keep_airtime else None
        self._queue = []
        self._seq = itertools.count()
        self.streams = RandomStreams(config.seed)

        gateway_config = _with_pit(config.node, config.gateway_pit)
        self.nodes = build_nodes(self.topology, config.node, gateway_config, config.class_table, self.streams)
        self._busy_until = {node: 0 for node in self.topology.nodes}
        self._tx_until = {node: 0 for node in self.topology.nodes}
        self._retry_pending = set()
        self._gateway_seen = (0, 0)
        self.contention = 0

        self.log = MetricsLog(
            counters={node_id: node.counters for node_id, node in self.nodes.items()},
            config={
                "seed": config.seed,
                "duration_ms": self.duration_ms,
                "gateway": self.topology.gateway,
                "pit_size": config.node.pit_capacity,
                "gateway_pit": config.gateway_pit,
                "cs_size": config.node.cs_capacity,
                "strategy": config.node.decision.strategy.value,
                "qos_enabled": config.node.qos_enabled,
                "traffic_prefixes": dict(TRAFFIC_PREFIXES),
                "ranks": dict(self.topology.rank),
                **config.labels,
            },
        )

    def schedule(self, at, kind, node, payload=None):
        if at < self.now:
            raise CausalityError(f"event {kind.value} at {at} ms scheduled at {self.now} ms")
        event = Event(at, next(self._seq), kind, node, payload)
        heapq.heappush(self._queue, (event.at, event.seq, event))
        return event

    def link_model(self, a, b):
        return self.config.link_overrides.get((a, b)) or self.config.link_overrides.get((b, a)) or self.config.link

    def _link_rng(self, a, b):
        return self.streams.get("link", min(a, b), max(a, b))

    def _busy(self, node):
        return self._busy_until[node] > self.now

    def transmit(self, src, dst, packet):
        """
        Put one packet on the link src -> dst.

        If either endpoint's medium is busy the sender backs off for a random
        interval and tries again; otherwise both media are held for the
        transmission delay and the packet arrives (or is lost) at its end.
        Returns:
            bool: True if the transmission started.
        """
        link = self.link_model(src, dst)
        if self._busy(src) or self._busy(dst):
            low, high = link.busy_backoff
            backoff = int(self.streams.get("mac", src).integers(low, high + 1))
            self._retry_pending.add(src)
            self.contention += 1
            self.schedule(self.now + backoff, EventKind.MEDIA_FREE, src, "retry")
            return False

        jitter = int(self._link_rng(src, dst).integers(-link.delay_jitter, link.delay_jitter + 1))
        end = self.now + link.base_delay + jitter
        self._busy_until[src] = self._busy_until[dst] = end
        self._tx_until[src] = end
        counter = "interests_out" if isinstance(packet, Interest) else "data_out"
        self.nodes[src].counters.bump(counter, packet.name)
        if self.airtime is not None:
            self.airtime.append((src, dst, self.now, end))
        self.schedule(end, EventKind.LINK_DELIVER, dst, (src, packet))
        self.schedule(end, EventKind.MEDIA_FREE, src, "done")
        return True

    def _service_egress(self, node_id):
        if self._tx_until[node_id] > self.now or node_id in self._retry_pending:
            return
        egress = self.nodes[node_id].egress
        head = egress.peek()
        if head is None:
            return
        if self.transmit(node_id, head.to, head.packet):
            egress.pop()

    def _apply(self, node, effects):
        for effect in effects:
            if effect.kind is EffectKind.DELIVER:
                consumer_deliver(node, effect.data, self.now)
            elif effect.kind is EffectKind.PIT_TIMER:
                self.schedule(effect.at, EventKind.PIT_EXPIRY, node.id, effect.name)
        self._service_egress(node.id)

    def _write_trace(self, event, name, detail):
        self.trace.write(f"{event.at} {event.node} {event.kind.value} {name} {detail}\n")

    def _dispatch(self, event):
        kind = event.kind
        node = self.nodes[event.node]
        name, detail = "-", "-"

        if kind is EventKind.APP_REQUEST:
            request = event.payload
            handle = consumer_request(node, request.name, self.now, request.traffic, self.topology.rank[node.id])
            self.log.requests.append(handle.record)
            for at in handle.retransmit_at:
                self.schedule(at, EventKind.RETRANSMIT, node.id, handle.record)
            self.schedule(handle.timeout_at, EventKind.REQUEST_TIMEOUT, node.id, handle.record)
            self._apply(node, handle.effects)
            name, detail = request.name, request.traffic
        elif kind is EventKind.RETRANSMIT:
            record = event.payload
            if record.is_open:
                self._apply(node, consumer_retransmit(node, record, self.now))
                detail = f"retx={record.retransmissions}"
            else:
                detail = "cancelled"
            name = record.name
        elif kind is EventKind.REQUEST_TIMEOUT:
            record = event.payload
            detail = "failed" if consumer_timeout(node, record) else "closed"
            name = record.name
        elif kind is EventKind.LINK_DELIVER:
            src, packet = event.payload
            name = packet.name
            packet_kind = "interest" if isinstance(packet, Interest) else "data"
            if self._link_rng(src, node.id).random() < self.link_model(src, node.id).loss_prob:
                detail = f"from={src} {packet_kind} lost"
            else:
                detail = f"from={src} {packet_kind}"
                if isinstance(packet, Data):
                    self._apply(node, on_data(node, src, packet, self.now))
                else:
                    self._apply(node, on_interest(node, src, packet, self.now))
        elif kind is EventKind.MEDIA_FREE:
            detail = event.payload
            if event.payload == "retry":
                self._retry_pending.discard(node.id)
            self._service_egress(node.id)
        elif kind is EventKind.PIT_EXPIRY:
            name = event.payload
            if node.pit.expire(name, self.now):
                node.counters.bump("pit_timeouts", name)
                detail = "expired"
            else:
                detail = "kept"
        elif kind is EventKind.METRICS_TICK:
            counters = self.nodes[self.topology.gateway].counters
            seen_out, seen_in = self._gateway_seen
            out_now, in_now = counters["interests_out"], counters["data_in"]
            minute = event.payload
            self.log.gateway_series.append((minute, out_now - seen_out, in_now - seen_in))
            self._gateway_seen = (out_now, in_now)
            detail = f"minute={minute}"

        if self.trace is not None:
            self._write_trace(event, name, detail)

    def _prime(self):
        spec = self.config.traffic
        requests = schedule_sensor_polling(self.topology, spec, self.streams, self.duration_ms)
        requests += schedule_actuator_requests(self.topology, spec, self.streams, self.duration_ms)
        for request in sorted(requests, key=lambda r: (r.at, r.node, str(r.name))):
            self.schedule(request.at, EventKind.APP_REQUEST, request.node, request)
        for minute in range(self.duration_ms // MINUTE_MS):
            self.schedule((minute + 1) * MINUTE_MS, EventKind.METRICS_TICK, self.topology.gateway, minute)

    def drain(self, until):
        """Execute queued events with at <= until; returns the number executed."""
        executed = 0
        while self._queue and self._queue[0][0] <= until:
            at, _, event = heapq.heappop(self._queue)
            self.now = at
            self._dispatch(event)
            executed += 1
        return executed

    def run(self):
        """
        Execute all events up to the configured duration.
        Returns:
            MetricsLog: records and counters of the run; requests still open at
            the cutoff are marked censored.
        """
        self._prime()
        self.drain(self.duration_ms)
        self.now = self.duration_ms
        for record in self.log.requests:
            if record.status is RequestStatus.PENDING:
                record.censor()
        logger.debug("run seed=%s finished: %d requests, %d media contentions",
                     self.config.seed, len(self.log.requests), self.contention)
        return self.log


def _with_pit(node_config, pit_capacity):
    return replace(node_config, pit_capacity=pit_capacity)


def run(config, trace=None):
    return Simulator(config, trace=trace).run()
