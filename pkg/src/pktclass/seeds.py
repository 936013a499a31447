"""Stable sub-seed derivation.

Every random consumer gets its own seed hashed from (root seed, purpose), so
adding a consumer never perturbs the streams of existing ones.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
