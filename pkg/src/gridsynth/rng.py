"""Keyed, counter-based random streams.

Every random draw in the pipeline comes from a Philox generator whose key is
derived from the global seed plus a tuple of labels (country, bus, year,
replica, ...). Any single column can therefore be regenerated without
replaying the rest of the run, and results do not depend on evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator keyed by ``(seed, *labels)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_word(x) for x in labels))
    return np.random.Generator(np.random.Philox(ss))
