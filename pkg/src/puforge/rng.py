"""Seed derivation. Every random stream is a pure function of a base seed and a key path."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, float):
        return zlib.crc32(repr(part).encode("utf-8"))
    return int(part)


def derive_seed(seed, *keys):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def derive_rng(seed, *keys):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)
