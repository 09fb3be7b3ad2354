"""Named random substreams derived from one root seed.

Every source of randomness in the package draws from a substream named
after its role (corpus, policy-init, rollout, ...), so varying one
component never perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 64-bit key for a substream name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of a root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), stream_key(name)]))
