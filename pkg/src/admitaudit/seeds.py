"""Deterministic seed fan-out.

Every randomized step in the pipeline derives its seed from one master seed
plus a label path, so results are reproducible regardless of execution order
or worker count.
"""

import hashlib

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *parts: object) -> int:
    """Derive a 64-bit seed from a master seed and a label path.

    Stable across platforms and processes (SHA-256 based, no use of Python's
    salted ``hash``).
    """
    h = hashlib.sha256()
    h.update(str(master & _MASK64).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "big")
