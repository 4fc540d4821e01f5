"""Master-seed fan-out: named substreams so components vary independently."""

from __future__ import annotations

import hashlib


def substream(master_seed: int, name: str) -> int:
    """Derive a stable 63-bit seed for a named stream of the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
