"""Deterministic seed derivation.

Every stochastic step in the package (partition shuffles, per-client
training, shadow sampling, attack-model training) draws its seed from a
single master seed through `derive_seed`, so whole runs are pure
functions of their configuration.
"""

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *parts) -> int:
    """Mix a master seed with context labels into a new 64-bit seed.

    Parts may be ints or short strings (e.g. "round", 3, "client", 0).
    The mixing is a SHA-256 digest, so distinct part tuples give
    independent streams and the mapping is stable across runs.
    """
    h = hashlib.sha256()
    h.update(struct.pack("<Q", int(master_seed) & _MASK64))
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(struct.pack("<I", len(data)))
            h.update(data)
        elif isinstance(part, int) or hasattr(part, "__index__"):
            h.update(b"i")
            h.update(struct.pack("<q", int(part)))
        else:
            raise TypeError(f"seed parts must be int or str, got {type(part)!r}")
    return int.from_bytes(h.digest()[:8], "little")
