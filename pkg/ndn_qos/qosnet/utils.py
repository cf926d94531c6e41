import hashlib

import numpy as np


class ConfigFileError(ValueError):
    pass


def stable_hash(*parts, hash_bits=63):
    """
    Hash identifiers independently of the interpreter's hash seed.
    Args:
        parts: identifiers, joined by '/' before hashing.
        hash_bits (int): number of bits kept from the digest.
    Returns:
        int: the hash value.
    """
    digest = hashlib.blake2b("/".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2 ** hash_bits)


class RandomStreams:
    """
    Independent generators derived from one master seed.

    Each stream is keyed by identifiers (e.g. ("node", 17) or ("link", 3, 9)),
    so adding a node or link never shifts the draws of the others.
    """

    def __init__(self, seed):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self._streams = {}

    def get(self, *key):
        rng = self._streams.get(key)
        if rng is None:
            sequence = np.random.SeedSequence(self.seed, spawn_key=(stable_hash(*key),))
            rng = np.random.default_rng(sequence)
            self._streams[key] = rng
        return rng


def read_key_values(path):
    """
    Read a flat 'key = value' file with '#' comments.
    Args:
        path (str | Path): file to read.
    Returns:
        dict: key -> raw string value, keys normalised to use '_'.
    Raises:
        ConfigFileError: malformed or repeated keys, unreadable file.
    """
    values = {}
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigFileError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigFileError(f"{path}:{lineno}: key '{key}' given twice")
        values[key] = value
    return values


def write_key_values(path, mapping):
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        for key, value in mapping.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            handle.write(f"{key} = {value}\n")
