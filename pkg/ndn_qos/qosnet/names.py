import enum
from dataclasses import dataclass
from urllib.parse import quote, unquote_to_bytes


class NameParseError(ValueError):
    pass


class ClassTableError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Name:
    """
    Hierarchical content name: an ordered, nonempty tuple of nonempty byte components.

    The text form percent-escapes every byte outside the URI unreserved set,
    so any component, including one holding '/', survives str() and parse_name.
    """
    components: tuple

    def __post_init__(self):
        if not self.components:
            raise NameParseError("a name needs at least one component")
        for component in self.components:
            if not isinstance(component, bytes) or not component:
                raise NameParseError(f"invalid name component {component!r}")

    def __len__(self):
        return len(self.components)

    def __str__(self):
        return "/" + "/".join(quote(c, safe="") for c in self.components)

    def prefix(self, length):
        return Name(self.components[:length])

    def append(self, component):
        if isinstance(component, str):
            component = component.encode("utf-8")
        return Name(self.components + (component,))

    @property
    def top(self):
        """First component as text, used to bucket counters by traffic family."""
        return self.components[0].decode("utf-8", errors="backslashreplace")


def parse_name(text):
    """
    Parse the '/'-separated textual form of a name.
    Args:
        text (str): e.g. "/HK/ACM/ICN".
    Returns:
        Name: one component per segment, with %XX escapes decoded.
    Raises:
        NameParseError: empty text, missing leading '/', or an empty segment.
    """
    if not text:
        raise NameParseError("empty name")
    if not text.startswith("/"):
        raise NameParseError(f"name must start with '/': {text!r}")
    segments = text[1:].split("/")
    if any(segment == "" for segment in segments):
        raise NameParseError(f"empty segment in name {text!r}")
    return Name(tuple(unquote_to_bytes(segment) for segment in segments))


def is_prefix_of(prefix, name):
    if len(prefix) > len(name):
        return False
    return name.components[:len(prefix)] == prefix.components


class Latency(enum.Enum):
    PROMPT = "prompt"
    REGULAR = "regular"


class Reliability(enum.Enum):
    RELIABLE = "reliable"
    REGULAR = "regular"


@dataclass(frozen=True, slots=True)
class ServiceLevel:
    latency: Latency = Latency.REGULAR
    reliability: Reliability = Reliability.REGULAR

    @property
    def is_prompt(self):
        return self.latency is Latency.PROMPT

    @property
    def is_reliable(self):
        return self.reliability is Reliability.RELIABLE

    @property
    def is_marked(self):
        return self.is_prompt or self.is_reliable

    @property
    def label(self):
        if self.is_prompt and self.is_reliable:
            return "prompt_reliable"
        if self.is_prompt:
            return "prompt"
        if self.is_reliable:
            return "reliable"
        return "regular"


DEFAULT_LEVEL = ServiceLevel()
PROMPT_RELIABLE = ServiceLevel(Latency.PROMPT, Reliability.RELIABLE)
ALL_LEVELS = tuple(ServiceLevel(lat, rel) for lat in Latency for rel in Reliability)


class ClassTable:
    """
    Prefix -> ServiceLevel table matched by longest prefix.

    Prefixes must be distinct, which makes the longest match unique and the
    result independent of the order entries were given in.
    """

    def __init__(self, entries=()):
        self.entries = tuple(entries)
        self._by_prefix = {}
        for prefix, level in self.entries:
            if prefix.components in self._by_prefix:
                raise ClassTableError(f"duplicate prefix {prefix}")
            self._by_prefix[prefix.components] = level

    @classmethod
    def from_pairs(cls, pairs):
        return cls((parse_name(text), level) for text, level in pairs)

    def __len__(self):
        return len(self.entries)

    def lookup(self, name):
        components = name.components
        for length in range(len(components), 0, -1):
            level = self._by_prefix.get(components[:length])
            if level is not None:
                return level
        return DEFAULT_LEVEL


def classify(table, name):
    """
    Map a name onto its service level by longest prefix match.
    Args:
        table (ClassTable): locally configured traffic classes.
        name (Name): Interest or Data name.
    Returns:
        ServiceLevel: level of the longest matching prefix, (Regular, Regular) if none matches.
    """
    return table.lookup(name)


def pit_priority(level):
    # prompt > reliable > regular; the combined class counts as prompt
    if level.is_prompt:
        return 2
    if level.is_reliable:
        return 1
    return 0


def cs_priority(level):
    # reliability dominates latency
    return (2 if level.is_reliable else 0) + (1 if level.is_prompt else 0)
