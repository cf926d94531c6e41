"""
Per-node NDN forwarding engine with QoS-aware resource management.

Each node owns a FIB, a capacity-bounded PIT and Content Store and a small
egress queue. Service levels are never carried in packets: every node
classifies names against its own ClassTable.
"""
import enum
from collections import OrderedDict, deque
from dataclasses import dataclass

from .metrics import NodeCounters, RequestRecord
from .names import DEFAULT_LEVEL, classify, cs_priority, is_prefix_of, pit_priority

LOCAL = -1

DEFAULT_PIT_LIFETIME_MS = 8_000
DEFAULT_EGRESS_DEPTH = 8
DUPLICATE_MEMORY = 64
RETRANSMIT_INTERVAL_MS = 2_000
MAX_RETRANSMISSIONS = 4
FORCED_CACHE_RANK = 3


@dataclass(frozen=True, slots=True)
class Interest:
    name: object
    nonce: int


@dataclass(frozen=True, slots=True)
class Data:
    name: object
    payload: bytes


@dataclass(frozen=True, slots=True)
class FibEntry:
    prefix: object
    next_hop: int


@dataclass(slots=True)
class PitEntry:
    name: object
    level: object
    downstream_faces: set
    created_at: int
    expires_at: int

    def __post_init__(self):
        if self.expires_at <= self.created_at:
            raise ValueError("PIT entry must expire after its creation")
        if not self.downstream_faces:
            raise ValueError("PIT entry needs at least one downstream face")


class PitStatus(enum.Enum):
    INSERTED = "inserted"
    INSERTED_AFTER_EVICTING = "inserted_after_evicting"
    DROPPED = "dropped"


@dataclass(frozen=True, slots=True)
class PitOutcome:
    status: PitStatus
    evicted: object = None


class PitTable:
    def __init__(self, capacity):
        if capacity <= 0:
            raise ValueError(f"PIT capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.entries

    def get(self, name, now=None):
        entry = self.entries.get(name)
        if entry is not None and now is not None and entry.expires_at <= now:
            del self.entries[name]
            return None
        return entry

    def remove(self, name):
        return self.entries.pop(name, None)

    def purge_expired(self, now):
        expired = [name for name, entry in self.entries.items() if entry.expires_at <= now]
        for name in expired:
            del self.entries[name]
        return expired

    def expire(self, name, now):
        """Timer-driven removal; a refreshed entry survives its old timer."""
        entry = self.entries.get(name)
        if entry is not None and entry.expires_at <= now:
            del self.entries[name]
            return True
        return False


def pit_insert(pit, entry):
    """
    Admit a new PIT entry, evicting a strictly lower-priority entry when saturated.
    Args:
        pit (PitTable): target table.
        entry (PitEntry): entry for a name not yet present.
    Returns:
        PitOutcome: Inserted, InsertedAfterEvicting(victim name) or Dropped.
    """
    pit.purge_expired(entry.created_at)
    if len(pit.entries) < pit.capacity:
        pit.entries[entry.name] = entry
        return PitOutcome(PitStatus.INSERTED)

    victim = None
    victim_key = None
    for candidate in pit.entries.values():
        key = (pit_priority(candidate.level), candidate.created_at)
        if victim_key is None or key < victim_key:
            victim, victim_key = candidate, key

    if pit_priority(victim.level) >= pit_priority(entry.level):
        return PitOutcome(PitStatus.DROPPED)
    del pit.entries[victim.name]
    pit.entries[entry.name] = entry
    return PitOutcome(PitStatus.INSERTED_AFTER_EVICTING, victim.name)


def pit_lookup_consume(pit, name, now):
    pit.purge_expired(now)
    entry = pit.entries.pop(name, None)
    if entry is None:
        return None
    return set(entry.downstream_faces)


class CacheStrategy(enum.Enum):
    ALWAYS = "always"
    PROBABILISTIC = "prob"


@dataclass(frozen=True, slots=True)
class CachingDecision:
    strategy: CacheStrategy = CacheStrategy.ALWAYS
    p_reg: float = 0.30
    p_rel: float = 0.70

    def __post_init__(self):
        if not 0.0 <= self.p_reg <= self.p_rel <= 1.0:
            raise ValueError(f"need 0 <= p_reg <= p_rel <= 1, got p_reg={self.p_reg} p_rel={self.p_rel}")


@dataclass(slots=True)
class CsEntry:
    name: object
    data: Data
    level: object
    last_used: int
    pitless: bool = False
    rank: int = None

    def __post_init__(self):
        if self.rank is None:
            self.rank = cs_priority(self.level)


class CsStatus(enum.Enum):
    STORED = "stored"
    STORED_AFTER_EVICTING = "stored_after_evicting"
    REJECTED = "rejected"


@dataclass(frozen=True, slots=True)
class CsOutcome:
    status: CsStatus
    evicted: object = None


class CsTable:
    """
    Content Store kept in recency order (least recently used first).
    """

    def __init__(self, capacity, decision=None):
        if capacity <= 0:
            raise ValueError(f"CS capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.decision = decision if decision is not None else CachingDecision()
        self.entries = OrderedDict()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.entries


def cs_decide(cs, level, has_pit, rng):
    """
    Caching decision for an incoming Data packet.
    Args:
        cs (CsTable): the store whose decision strategy applies.
        level (ServiceLevel): class of the Data.
        has_pit (bool): whether the Data satisfied a PIT entry.
        rng (numpy.random.Generator): the node's random stream.
    Returns:
        bool: True if the Data should be handed to cs_insert.
    """
    if not has_pit and not level.is_marked:
        return False
    decision = cs.decision
    if decision.strategy is CacheStrategy.ALWAYS:
        return True
    threshold = decision.p_rel if level.is_reliable else decision.p_reg
    return bool(rng.random() < threshold)


def cs_insert(cs, entry):
    """
    Store an entry, replacing only content of equal or lower priority.

    Victims are chosen by lowest rank, then PIT-less entries before regular ones,
    then least recently used.
    """
    if entry.name in cs.entries:
        cs.entries[entry.name] = entry
        cs.entries.move_to_end(entry.name)
        return CsOutcome(CsStatus.STORED)
    if len(cs.entries) < cs.capacity:
        cs.entries[entry.name] = entry
        return CsOutcome(CsStatus.STORED)

    victim = None
    victim_key = None
    for candidate in cs.entries.values():
        if candidate.rank > entry.rank:
            continue
        key = (candidate.rank, 0 if candidate.pitless else 1)
        # strict comparison keeps the least recently used among equals
        if victim_key is None or key < victim_key:
            victim, victim_key = candidate, key
    if victim is None:
        return CsOutcome(CsStatus.REJECTED)
    del cs.entries[victim.name]
    cs.entries[entry.name] = entry
    return CsOutcome(CsStatus.STORED_AFTER_EVICTING, victim.name)


def cs_lookup(cs, name, now):
    entry = cs.entries.get(name)
    if entry is None:
        return None
    entry.last_used = now
    cs.entries.move_to_end(name)
    return entry.data


@dataclass(frozen=True, slots=True)
class QueuedPacket:
    packet: object
    level: object
    to: int


class EnqueueResult(enum.Enum):
    QUEUED = "queued"
    QUEUED_AHEAD_OF_STAGE = "queued_ahead_of_stage"
    DROPPED_FULL = "dropped_full"


class EgressQueue:
    """
    Bounded FIFO with a single-packet reorder stage.

    The stage holds the packet waiting for the medium. A prompt packet may
    overtake a non-prompt staged packet and nothing else.
    """

    def __init__(self, depth=DEFAULT_EGRESS_DEPTH):
        if depth <= 0:
            raise ValueError(f"egress depth must be positive, got {depth}")
        self.depth = depth
        self.stage = None
        self.slots = deque()

    def __len__(self):
        return len(self.slots) + (self.stage is not None)

    def peek(self):
        return self.stage

    def pop(self):
        head = self.stage
        self.stage = self.slots.popleft() if self.slots else None
        return head

    def packets(self):
        staged = [self.stage] if self.stage is not None else []
        return staged + list(self.slots)


def egress_enqueue(q, packet, level, to):
    if len(q) >= q.depth:
        return EnqueueResult.DROPPED_FULL
    queued = QueuedPacket(packet, level, to)
    if q.stage is None:
        q.stage = queued
        return EnqueueResult.QUEUED
    if level.is_prompt and not q.stage.level.is_prompt:
        q.slots.appendleft(q.stage)
        q.stage = queued
        return EnqueueResult.QUEUED_AHEAD_OF_STAGE
    q.slots.append(queued)
    return EnqueueResult.QUEUED


class TokenBucket:
    def __init__(self, rate_per_s=2.0, burst=2):
        self.rate_per_s = rate_per_s
        self.burst = burst
        self.tokens = float(burst)
        self.updated_at = 0

    def admit(self, now):
        elapsed = max(0, now - self.updated_at)
        self.tokens = min(float(self.burst), self.tokens + elapsed * self.rate_per_s / 1000.0)
        self.updated_at = now
        if self.tokens >= 1.0:
            self.tokens -= 1.0
            return True
        return False


@dataclass(frozen=True, slots=True)
class NodeConfig:
    pit_capacity: int = 5
    cs_capacity: int = 5
    decision: CachingDecision = CachingDecision()
    qos_enabled: bool = False
    pit_lifetime_ms: int = DEFAULT_PIT_LIFETIME_MS
    egress_depth: int = DEFAULT_EGRESS_DEPTH
    limiter_rate_per_s: float = 2.0
    limiter_burst: int = 2
    # grant unmarked Data the PIT-less caching privilege as well
    pitless_regular: bool = False
    payload_size: int = 32


class EffectKind(enum.Enum):
    DELIVER = "deliver"
    PIT_TIMER = "pit_timer"


@dataclass(frozen=True, slots=True)
class Effect:
    kind: EffectKind
    data: Data = None
    name: object = None
    at: int = 0


class NodeState:
    def __init__(self, node_id, config, class_table, rng, fib=(), produces=()):
        self.id = node_id
        self.config = config
        self.class_table = class_table
        self.rng = rng
        self.fib = list(fib)
        self.produces = list(produces)
        self.pit = PitTable(config.pit_capacity)
        self.cs = CsTable(config.cs_capacity, config.decision)
        self.egress = EgressQueue(config.egress_depth)
        self.qos_enabled = config.qos_enabled
        self.pitless_limiter = TokenBucket(config.limiter_rate_per_s, config.limiter_burst)
        self.recent = deque(maxlen=DUPLICATE_MEMORY)
        self.counters = NodeCounters()
        # open application requests of this node keyed by name
        self.pending = {}

    def level_of(self, name):
        if not self.qos_enabled:
            return DEFAULT_LEVEL
        return classify(self.class_table, name)

    def add_route(self, prefix, next_hop):
        self.fib = [entry for entry in self.fib if entry.prefix != prefix]
        self.fib.append(FibEntry(prefix, next_hop))

    def route(self, name):
        best = None
        for entry in self.fib:
            if is_prefix_of(entry.prefix, name) and (best is None or len(entry.prefix) > len(best.prefix)):
                best = entry
        return None if best is None else best.next_hop

    def is_producer(self, name):
        return any(is_prefix_of(prefix, name) for prefix in self.produces)

    def next_nonce(self):
        return int(self.rng.integers(0, 2 ** 32))


def _store(node, entry):
    outcome = cs_insert(node.cs, entry)
    if outcome.status is CsStatus.STORED_AFTER_EVICTING:
        node.counters.bump("cs_evictions", entry.name)
    elif outcome.status is CsStatus.REJECTED:
        node.counters.bump("cs_rejected", entry.name)
    return outcome


def _send_data(node, face, data, level, effects):
    if face == LOCAL:
        node.counters.bump("local_deliveries", data.name)
        effects.append(Effect(EffectKind.DELIVER, data=data))
        return EnqueueResult.QUEUED
    result = egress_enqueue(node.egress, data, level, face)
    if result is EnqueueResult.DROPPED_FULL:
        node.counters.bump("queue_drops", data.name)
    return result


def on_interest(node, face, interest, now):
    """
    Interest pipeline: classify, CS, duplicate check, producer, PIT, FIB.
    Args:
        node (NodeState): the receiving node.
        face (int): neighbour id the Interest came from, or LOCAL.
        interest (Interest): the packet.
        now (int): simulation time in ms.
    Returns:
        list: Effects for the engine (local deliveries, PIT timers).
    """
    effects = []
    name = interest.name
    level = node.level_of(name)
    if face == LOCAL:
        node.counters.bump("local_interests", name)
    else:
        node.counters.bump("interests_in", name)

    data = cs_lookup(node.cs, name, now)
    if data is not None:
        node.counters.bump("cs_hits" if face != LOCAL else "local_cs_hits", name)
        _send_data(node, face, data, level, effects)
        return effects

    key = (name, interest.nonce)
    if key in node.recent:
        node.counters.bump("duplicate_drops", name)
        return effects
    node.recent.append(key)

    if node.is_producer(name):
        node.counters.bump("produced", name)
        _send_data(node, face, Data(name, bytes(node.config.payload_size)), level, effects)
        return effects

    expires_at = now + node.config.pit_lifetime_ms
    entry = node.pit.get(name, now)
    if entry is not None:
        entry.expires_at = expires_at
        effects.append(Effect(EffectKind.PIT_TIMER, name=name, at=expires_at))
        if face not in entry.downstream_faces:
            entry.downstream_faces.add(face)
            node.counters.bump("pit_aggregated", name)
            return effects
        # retransmission from a face already waiting: forward again
    else:
        outcome = pit_insert(node.pit, PitEntry(name, level, {face}, now, expires_at))
        if outcome.status is PitStatus.DROPPED:
            node.counters.bump("pit_drops", name)
            return effects
        if outcome.status is PitStatus.INSERTED_AFTER_EVICTING:
            node.counters.bump("pit_evictions", outcome.evicted)
        effects.append(Effect(EffectKind.PIT_TIMER, name=name, at=expires_at))

    next_hop = node.route(name)
    if next_hop is None:
        node.pit.remove(name)
        node.counters.bump("no_route", name)
        return effects
    if egress_enqueue(node.egress, interest, level, next_hop) is EnqueueResult.DROPPED_FULL:
        node.counters.bump("queue_drops", name)
    return effects


def _cache_pitless(node, data, level, now):
    if not node.qos_enabled or not (level.is_marked or node.config.pitless_regular):
        node.counters.bump("pitless_dropped", data.name)
        return
    if not node.pitless_limiter.admit(now):
        node.counters.bump("pitless_dropped", data.name)
        return
    # unmarked Data only gets here with pitless_regular set and is then decided like PIT-backed Data
    if not cs_decide(node.cs, level, not level.is_marked, node.rng):
        node.counters.bump("pitless_dropped", data.name)
        return
    outcome = _store(node, CsEntry(data.name, data, level, now, pitless=True))
    if outcome.status is not CsStatus.REJECTED:
        node.counters.bump("pitless_cached", data.name)


def on_data(node, face, data, now):
    """
    Data pipeline: consume the PIT entry, forward to every waiting face, then cache.
    Data without a PIT entry is only cached for prompt or reliable traffic,
    behind the PIT-less rate limiter.
    """
    effects = []
    name = data.name
    level = node.level_of(name)
    node.counters.bump("data_in", name)

    faces = pit_lookup_consume(node.pit, name, now)
    if faces is None:
        _cache_pitless(node, data, level, now)
        return effects

    queue_exhausted = False
    for downstream in sorted(faces):
        result = _send_data(node, downstream, data, level, effects)
        if result is EnqueueResult.DROPPED_FULL and node.qos_enabled and level.is_prompt:
            queue_exhausted = True

    if queue_exhausted:
        _store(node, CsEntry(name, data, level, now, rank=FORCED_CACHE_RANK))
    elif cs_decide(node.cs, level, True, node.rng):
        _store(node, CsEntry(name, data, level, now))
    return effects


@dataclass(frozen=True, slots=True)
class RequestHandle:
    record: RequestRecord
    retransmit_at: tuple
    timeout_at: int
    effects: list


def consumer_request(node, name, now, traffic="", rank=0):
    """
    Issue an application request from the node's LOCAL face.
    Args:
        node (NodeState): requesting node.
        name (Name): requested content.
        now (int): simulation time in ms.
        traffic (str): traffic family recorded in metrics.
        rank (int): hop distance of the requester from the gateway.
    Returns:
        RequestHandle: the open record, retransmission times, final timeout and
        the effects of the first Interest.
    """
    record = RequestRecord(node.id, name, node.level_of(name), traffic, rank, now)
    node.pending.setdefault(name, []).append(record)
    effects = on_interest(node, LOCAL, Interest(name, node.next_nonce()), now)
    retransmit_at = tuple(now + k * RETRANSMIT_INTERVAL_MS for k in range(1, MAX_RETRANSMISSIONS + 1))
    timeout_at = now + (MAX_RETRANSMISSIONS + 1) * RETRANSMIT_INTERVAL_MS
    return RequestHandle(record, retransmit_at, timeout_at, effects)


def consumer_retransmit(node, record, now):
    if not record.is_open:
        return []
    record.retransmissions += 1
    return on_interest(node, LOCAL, Interest(record.name, node.next_nonce()), now)


def consumer_timeout(node, record):
    if not record.is_open:
        return False
    record.fail()
    waiting = [r for r in node.pending.get(record.name, []) if r is not record]
    if waiting:
        node.pending[record.name] = waiting
    else:
        node.pending.pop(record.name, None)
    return True


def consumer_deliver(node, data, now):
    completed = node.pending.pop(data.name, [])
    for record in completed:
        record.complete(now, len(data.payload))
    return completed
