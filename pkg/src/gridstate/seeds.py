"""Deterministic seed derivation for every random stream in the toolkit.

All randomness flows from one master seed; each consumer derives its own
stream through a (role, index) pair so runs reproduce bit-for-bit and no
two stages share a stream.
"""
from __future__ import annotations

import numpy as np

ROLE_PROFILE = 1
ROLE_NOISE = 2
ROLE_LEARNER = 3
ROLE_SPLIT = 4
ROLE_TEST_NOISE = 5
ROLE_MASK = 6


def derive_seed(master: int, role: int, index: int = 0) -> int:
    """Stable, platform-independent child seed for (master, role, index)."""
    seq = np.random.SeedSequence([int(master), int(role), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])
