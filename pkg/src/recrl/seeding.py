"""Named substream seeding.

One user-facing seed fans out into independent named streams so that changing
e.g. the SFT subset draw cannot perturb world generation. Derivation is
sha256(f"{seed}:{name}") -> 8 bytes -> int, which is stable across platforms
and Python versions (unlike hash()).
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stream names used by the pipeline, in one place so typos fail loudly.
STREAMS = (
    "world",
    "split",
    "policy-init",
    "order",
    "rollout",
    "teacher",
    "sft-subset",
    "sft",
    "eval",
)


def sub_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise ValueError(f"unknown stream name {name!r}")
    return np.random.Generator(np.random.PCG64(sub_seed(seed, name)))


def step_stream(seed: int, name: str, index: int) -> np.random.Generator:
    """Per-step generator, independent of how many draws earlier steps made.

    Keeps resumed runs identical to uninterrupted ones.
    """
    if name not in STREAMS:
        raise ValueError(f"unknown stream name {name!r}")
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((sub_seed(seed, name), index)))
    )
