"""
Topology and traffic of the two IoT scenarios.

Scenario 1: the gateway polls every sensor (/s/<node>/<seq>) and every node
requests a device-specific state from the gateway (/a/<node>/<seq>).
Scenario 2: same sensor polling, but actuators request group commands
(/a/g<group>/<epoch>) that are identical for all members of a group within
one actuator period, so responses become cacheable.
"""
import enum
from dataclasses import dataclass
from pathlib import Path

from .forwarder import NodeState
from .names import ClassTable, Latency, Name, Reliability, ServiceLevel

BUILTIN_TOPOLOGY = Path(__file__).parent / "data" / "grenoble.topo"

ACTUATOR_PREFIX = "a"
SENSOR_PREFIX = "s"
TRAFFIC_PREFIXES = {"actuator": ACTUATOR_PREFIX, "gateway": SENSOR_PREFIX}

MAX_BUILTIN_RANK = 12


class TopologyError(ValueError):
    pass


class Scenario(enum.Enum):
    S1 = "s1"
    S2 = "s2"


class QosMode(enum.Enum):
    REGULAR = "regular"
    PROMPT_RELIABLE = "prompt_reliable"
    RELIABLE_ONLY = "reliable_only"
    PROMPT_ONLY = "prompt_only"

    @property
    def enabled(self):
        return self is not QosMode.REGULAR


class Topology:
    """
    Tree rooted at the gateway; every other node has exactly one parent.
    Args:
        gateway (int): root node id.
        parent (dict): child id -> parent id.
    Raises:
        TopologyError: cycles, unknown parents, or a parent entry for the gateway.
    """

    def __init__(self, gateway, parent):
        self.gateway = gateway
        self.parent = dict(parent)
        if gateway in self.parent:
            raise TopologyError(f"gateway {gateway} cannot have a parent")
        known = set(self.parent) | {gateway}
        for child, up in self.parent.items():
            if up not in known:
                raise TopologyError(f"node {child} has unknown parent {up}")
            if child == up:
                raise TopologyError(f"node {child} is its own parent")

        self.rank = {gateway: 0}
        for node in self.parent:
            self._resolve_rank(node)
        self.nodes = (gateway,) + tuple(sorted(self.parent))
        self.children = {node: [] for node in self.nodes}
        for child, up in sorted(self.parent.items()):
            self.children[up].append(child)

    def _resolve_rank(self, node):
        chain = []
        seen = set()
        while node not in self.rank:
            if node in seen:
                raise TopologyError(f"cycle through node {node}")
            seen.add(node)
            chain.append(node)
            node = self.parent[node]
        base = self.rank[node]
        for offset, member in enumerate(reversed(chain), start=1):
            self.rank[member] = base + offset

    @property
    def members(self):
        return self.nodes[1:]

    @property
    def max_rank(self):
        return max(self.rank.values())

    def edges(self):
        return [(child, up) for child, up in sorted(self.parent.items())]

    def has_link(self, a, b):
        return self.parent.get(a) == b or self.parent.get(b) == a

    def path_to_gateway(self, node):
        path = [node]
        while node != self.gateway:
            node = self.parent[node]
            path.append(node)
        return path


def parse_topology(lines, source="<topology>"):
    gateway = None
    parent = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "gateway" and len(fields) == 2:
                if gateway is not None:
                    raise TopologyError(f"{source}:{lineno}: second gateway line")
                gateway = int(fields[1])
            elif len(fields) == 2:
                child, up = int(fields[0]), int(fields[1])
                if child in parent:
                    raise TopologyError(f"{source}:{lineno}: node {child} has two parents")
                parent[child] = up
            else:
                raise TopologyError(f"{source}:{lineno}: expected '<child> <parent>' or 'gateway <id>'")
        except ValueError as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"{source}:{lineno}: node ids must be integers") from exc
    if gateway is None:
        raise TopologyError(f"{source}: missing 'gateway <id>' line")
    return Topology(gateway, parent)


def load_topology(path):
    try:
        with open(path, encoding="utf-8") as handle:
            return parse_topology(handle.readlines(), source=str(path))
    except OSError as exc:
        raise TopologyError(f"{path}: {exc}") from exc


def build_topology(path=None):
    """
    Load the built-in 31-node tree, or a custom topology file.
    """
    return load_topology(path if path is not None else BUILTIN_TOPOLOGY)


@dataclass(frozen=True, slots=True)
class TrafficSpec:
    scenario: Scenario = Scenario.S1
    sensor_period_ms: int = 10_000
    sensor_jitter_ms: int = 2_000
    actuator_period_ms: int = 5_000
    actuator_jitter_ms: int = 1_000
    group_count: int = 5
    payload_size: int = 32
    sensor_start_ms: int = 0
    actuator_start_ms: int = 8 * 60_000
    # request rounds per actuator in scenario 2
    s2_rounds: int = 240

    def __post_init__(self):
        if self.sensor_jitter_ms >= self.sensor_period_ms or self.actuator_jitter_ms >= self.actuator_period_ms:
            raise ValueError("request jitter must stay below the request period")
        if self.group_count <= 0:
            raise ValueError("group_count must be positive")


@dataclass(frozen=True, slots=True)
class AppRequest:
    at: int
    node: int
    name: Name
    traffic: str


def _periodic_times(rng, start_ms, period_ms, jitter_ms, end_ms, limit=None):
    times = []
    t = start_ms + int(rng.integers(0, period_ms))
    while t < end_ms and (limit is None or len(times) < limit):
        times.append(t)
        t += period_ms + int(rng.integers(-jitter_ms, jitter_ms + 1))
    return times


def schedule_sensor_polling(topology, spec, streams, duration_ms):
    """
    Gateway-initiated requests for every sensor on its jittered period.
    Args:
        topology (Topology): the network.
        spec (TrafficSpec): traffic parameters.
        streams (RandomStreams): run random streams.
        duration_ms (int): run length.
    Returns:
        list: AppRequest items issued by the gateway.
    """
    requests = []
    for sensor in topology.members:
        rng = streams.get("sensor", sensor)
        times = _periodic_times(rng, spec.sensor_start_ms, spec.sensor_period_ms, spec.sensor_jitter_ms, duration_ms)
        base = Name((SENSOR_PREFIX.encode(), str(sensor).encode()))
        for seq, at in enumerate(times):
            requests.append(AppRequest(at, topology.gateway, base.append(str(seq)), "gateway"))
    return requests


def schedule_actuator_requests(topology, spec, streams, duration_ms):
    requests = []
    limit = spec.s2_rounds if spec.scenario is Scenario.S2 else None
    for actuator in topology.members:
        rng = streams.get("actuator", actuator)
        times = _periodic_times(
            rng, spec.actuator_start_ms, spec.actuator_period_ms, spec.actuator_jitter_ms, duration_ms, limit
        )
        for seq, at in enumerate(times):
            if spec.scenario is Scenario.S1:
                name = Name((ACTUATOR_PREFIX.encode(), str(actuator).encode(), str(seq).encode()))
            else:
                group = int(rng.integers(1, spec.group_count + 1))
                epoch = (at - spec.actuator_start_ms) // spec.actuator_period_ms
                name = Name((ACTUATOR_PREFIX.encode(), f"g{group}".encode(), str(epoch).encode()))
            requests.append(AppRequest(at, actuator, name, "actuator"))
    return requests


_ACTUATOR_LEVELS = {
    QosMode.PROMPT_RELIABLE: ServiceLevel(Latency.PROMPT, Reliability.RELIABLE),
    QosMode.RELIABLE_ONLY: ServiceLevel(Latency.REGULAR, Reliability.RELIABLE),
    QosMode.PROMPT_ONLY: ServiceLevel(Latency.PROMPT, Reliability.REGULAR),
}


def default_class_table(mode=QosMode.PROMPT_RELIABLE):
    """
    Class table of a configuration: actuator traffic is marked, sensor traffic is not.
    The REGULAR configuration gets an empty table and runs with QoS disabled.
    """
    level = _ACTUATOR_LEVELS.get(mode)
    if level is None:
        return ClassTable()
    return ClassTable([(Name((ACTUATOR_PREFIX.encode(),)), level)])


def install_routes(topology, nodes):
    """
    FIBs for convergecast: every node sends /a towards its parent, every ancestor
    of a sensor routes /s/<sensor> down the tree. The gateway produces /a and
    each sensor produces its own /s/<sensor>.
    """
    actuator_prefix = Name((ACTUATOR_PREFIX.encode(),))
    nodes[topology.gateway].produces.append(actuator_prefix)
    for node in topology.members:
        nodes[node].add_route(actuator_prefix, topology.parent[node])
        sensor_prefix = Name((SENSOR_PREFIX.encode(), str(node).encode()))
        nodes[node].produces.append(sensor_prefix)
        path = topology.path_to_gateway(node)
        for below, above in zip(path, path[1:]):
            nodes[above].add_route(sensor_prefix, below)


def build_nodes(topology, node_config, gateway_config, class_table, streams):
    nodes = {}
    for node_id in topology.nodes:
        config = gateway_config if node_id == topology.gateway else node_config
        nodes[node_id] = NodeState(node_id, config, class_table, streams.get("node", node_id))
    install_routes(topology, nodes)
    return nodes
