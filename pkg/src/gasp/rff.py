"""Random Fourier feature encoding ``x -> (cos 2*pi*Bx, sin 2*pi*Bx)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .rng import make_rng, standard_normal


@dataclass(frozen=True)
class FourierEncoding:
    """Fixed frequency matrix ``B`` of shape (m, d)."""

    B: np.ndarray
    sigma: float = 0.0
    seed: int = 0

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def out_dim(self) -> int:
        return 2 * self.m

    def __call__(self, x):
        return encode(self, x)


def sample_encoding(m: int, d: int, sigma: float, seed: int) -> FourierEncoding:
    if m < 1 or d < 1:
        raise ValueError(f"m and d must be positive, got m={m}, d={d}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    B = sigma * standard_normal(make_rng(seed), (m, d))
    B.setflags(write=False)
    return FourierEncoding(B, float(sigma), int(seed))


def from_matrix(B, sigma: float = 0.0) -> FourierEncoding:
    B = np.array(B, dtype=np.float64)
    if B.ndim != 2:
        raise DimensionError("frequency matrix must be 2-D")
    B.setflags(write=False)
    return FourierEncoding(B, float(sigma))


def encode(enc: FourierEncoding, x) -> T.Tensor:
    """Encode coordinates of shape (..., d) to features of shape (..., 2m)."""
    x = T._as_tensor(x)
    if x.shape[-1] != enc.d:
        raise DimensionError(f"encoding expects coordinates of dimension {enc.d}, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    if squeeze:
        x = T.reshape(x, (1, enc.d))
    proj = T.mul(T.rowwise_matmul(x, T.constant(enc.B.T)), 2.0 * np.pi)
    out = T.concat([T.cos(proj), T.sin(proj)], axis=-1)
    if squeeze:
        out = T.reshape(out, (enc.out_dim,))
    return out


def encode_np(enc: FourierEncoding, x: np.ndarray) -> np.ndarray:
    """Graph-free encoding for bulk evaluation."""
    proj = 2.0 * np.pi * np.einsum("...k,mk->...m", x, enc.B)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=-1)
