"""Keyed counter-based random streams.

Every stream is a Philox generator whose 128-bit key is a hash of
``(base seed, replica index, purpose)``.  Streams are therefore independent of
the order and the process in which replicas are run.
"""

import hashlib

import numpy as np


def stream_key(base, replica, purpose):
    digest = hashlib.sha256(f"{int(base)}:{int(replica)}:{purpose}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def stream_key_hex(base, replica, purpose):
    return stream_key(base, replica, purpose).tobytes().hex()


def seed_stream(base, replica, purpose="noise"):
    """Return the generator for ``(base, replica, purpose)``."""
    if not 0 <= int(base) < 2 ** 64:
        raise ValueError(f"base seed must fit in 64 bits, got {base}")
    return np.random.Generator(np.random.Philox(key=stream_key(base, replica, purpose)))
