"""Seeded random streams.

All randomness comes from numpy's Philox bit generator, which is
counter-based and reproducible across platforms. Uniforms are built from
the raw 64-bit stream and Gaussians from Box-Muller on those uniforms, so
a seed pins every draw independently of numpy's distribution code.
"""

import json

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def uniform(rng: np.random.Generator, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    n = int(np.prod(shape, dtype=np.int64))
    raw = rng.bit_generator.random_raw(n) if n else np.zeros(0, dtype=np.uint64)
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return (low + (high - low) * u).reshape(shape)


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    u1 = 1.0 - uniform(rng, (pairs,))  # (0, 1], keeps log finite
    u2 = uniform(rng, (pairs,))
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n].reshape(shape)


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"ndarray": [int(v) for v in obj.ravel()], "dtype": obj.dtype.str, "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "ndarray" in obj:
            return np.array(obj["ndarray"], dtype=obj["dtype"]).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    return obj


def get_state(rng: np.random.Generator) -> str:
    """Bit-generator state as JSON text (integer arrays stored as exact lists)."""
    return json.dumps(_encode(rng.bit_generator.state), sort_keys=True)


def set_state(rng: np.random.Generator, text: str) -> None:
    rng.bit_generator.state = _decode(json.loads(text))
