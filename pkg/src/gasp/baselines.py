"""Baselines: a DeepSets-style set discriminator and an auto-decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .function_rep import MlpArchitecture, apply_theta, init_theta
from .layers import MLP
from .optim import AdamState, adam_step
from .pointcloud import PointCloud
from .pointconv import canonical_order
from .rff import encode, sample_encoding
from .rng import make_rng, standard_normal
from .tensor import Tensor


class SetDiscriminator:
    """D(s) = rho( n^-1/2 * sum_i phi(gamma_x(x_i), gamma_y(y_i)) ) with a sigmoid head.

    phi and rho are leaky-ReLU MLPs; phi's output layer is linear.
    """

    def __init__(self, coord_dim: int, feature_dim: int, m_x: int = 64, m_y: int = 64,
                 sigma_x: float = 1.0, sigma_y: float = 1.0, phi_hidden: Sequence[int] = (128, 128),
                 p: int = 128, rho_hidden: Sequence[int] = (128,), seed: int = 0):
        seeds = make_rng(seed).integers(0, 2**31, size=4)
        self.enc_x = sample_encoding(m_x, coord_dim, sigma_x, int(seeds[0]))
        self.enc_y = sample_encoding(m_y, feature_dim, sigma_y, int(seeds[1]))
        self.phi = MLP([2 * (m_x + m_y), *phi_hidden, p], make_rng(int(seeds[2])))
        self.rho = MLP([p, *rho_hidden, 1], make_rng(int(seeds[3])))

    @property
    def coord_dim(self) -> int:
        return self.enc_x.d

    @property
    def feature_dim(self) -> int:
        return self.enc_y.d

    @property
    def params(self):
        out = {f"phi.{k}": v for k, v in self.phi.params.items()}
        out.update({f"rho.{k}": v for k, v in self.rho.params.items()})
        return out

    def logits(self, coords, feats) -> Tensor:
        """coords (B, n, d), feats (B, n, k) -> (B,) pre-sigmoid scores."""
        coords = np.asarray(coords, dtype=np.float64)
        feats = T._as_tensor(feats)
        if coords.ndim != 3 or feats.ndim != 3 or coords.shape[:2] != feats.shape[:2]:
            raise DimensionError(f"expected (B, n, d) coords and (B, n, k) features, got {coords.shape}, {feats.shape}")
        if coords.shape[2] != self.coord_dim or feats.shape[2] != self.feature_dim:
            raise DimensionError(
                f"set discriminator takes d={self.coord_dim}, k={self.feature_dim}; got d={coords.shape[2]}, k={feats.shape[2]}")
        B, n, _ = coords.shape
        # a fixed row order makes the sum, and hence the output, bitwise order independent
        order = np.stack([canonical_order(c, f) for c, f in zip(coords, feats.data)])
        flat = (order + (np.arange(B) * n)[:, None]).reshape(-1)
        x = T.constant(coords.reshape(B * n, -1)[flat])
        y = T.index(T.reshape(feats, (B * n, -1)), flat)
        h = self.phi(T.concat([encode(self.enc_x, x), encode(self.enc_y, y)], axis=1))
        pooled = T.mul(T.sum(T.reshape(h, (B, n, -1)), axis=1), 1.0 / math.sqrt(n))
        return T.reshape(self.rho(pooled), (B,))

    def probabilities(self, coords, feats) -> Tensor:
        return T.sigmoid(self.logits(coords, feats))


def set_discriminate(sd: SetDiscriminator, pc: PointCloud) -> float:
    with T.no_grad():
        return float(sd.probabilities(pc.coords[None], pc.features[None]).data[0])


class AutoDecoder:
    """Shared decoder MLP plus one learnable latent per training example.

    The latent is concatenated to the encoded coordinate at the input layer.
    """

    def __init__(self, n_examples: int, coord_dim: int, feature_dim: int, latent_dim: int = 64,
                 hidden_dims: Sequence[int] = (128, 128, 128), fourier_m: int = 64, sigma: float = 1.0,
                 prior_weight: float = 1e-4, seed: int = 0):
        if n_examples < 1:
            raise ValueError("the auto-decoder needs at least one example")
        rng = make_rng(seed)
        seeds = rng.integers(0, 2**31, size=3)
        self.encoding = sample_encoding(fourier_m, coord_dim, sigma, int(seeds[0]))
        self.latent_dim = int(latent_dim)
        self.prior_weight = float(prior_weight)
        self.arch = MlpArchitecture(self.encoding.out_dim + self.latent_dim, tuple(hidden_dims), feature_dim)
        self.theta = Tensor(init_theta(self.arch, make_rng(int(seeds[1]))), requires_grad=True)
        self.latents = Tensor(0.01 * standard_normal(make_rng(int(seeds[2])), (n_examples, self.latent_dim)),
                              requires_grad=True)

    @property
    def n_examples(self) -> int:
        return self.latents.shape[0]

    def decode(self, z, coords) -> Tensor:
        """z (B, L) and coords (B, n, d) -> features (B, n, k)."""
        z = T._as_tensor(z)
        coords = np.asarray(coords, dtype=np.float64)
        B, n, _ = coords.shape
        enc = encode(self.encoding, T.constant(coords))
        zb = T.broadcast_to(T.reshape(z, (B, 1, self.latent_dim)), (B, n, self.latent_dim))
        return apply_theta(self.arch, self.theta, T.concat([enc, zb], axis=2))


@dataclass
class AutoDecoderResult:
    model: AutoDecoder
    loss: float
    mse: float
    history: List[float]


def autodecoder_train(dataset: Sequence[PointCloud], steps: int = 2000, lr: float = 1e-3,
                      latent_dim: int = 64, prior_weight: float = 1e-4, seed: int = 0,
                      **model_kw) -> AutoDecoderResult:
    """Jointly fit decoder weights and the latent table on MSE + prior_weight * mean ||z||^2."""
    if not dataset:
        raise ValueError("the dataset is empty")
    sizes = {pc.n for pc in dataset}
    if len(sizes) != 1:
        raise DimensionError("auto-decoder training needs examples of equal size")
    coords = np.stack([pc.coords for pc in dataset])
    targets = T.constant(np.stack([pc.features for pc in dataset]))
    ad = AutoDecoder(len(dataset), dataset[0].d, dataset[0].k, latent_dim, prior_weight=prior_weight,
                     seed=seed, **model_kw)
    params = {"theta": ad.theta, "latents": ad.latents}
    state = AdamState.create(params)
    history = []
    mse = loss = float("nan")
    for _ in range(steps):
        diff = T.sub(ad.decode(ad.latents, coords), targets)
        mse_t = T.mean(T.sum(T.square(diff), axis=2))
        prior = T.mean(T.sum(T.square(ad.latents), axis=1))
        total = T.add(mse_t, T.mul(prior, ad.prior_weight))
        loss, mse = total.item(), mse_t.item()
        if not np.isfinite(loss):
            raise NumericError("auto-decoder training diverged")
        history.append(loss)
        grads = T.backward(total, [ad.theta, ad.latents])
        adam_step(params, {"theta": grads[0].data, "latents": grads[1].data}, state, lr)
    with T.no_grad():
        mse = T.mean(T.sum(T.square(T.sub(ad.decode(ad.latents, coords), targets)), axis=2)).item()
    return AutoDecoderResult(ad, loss, mse, history)


def autodecoder_sample(ad: AutoDecoder, z, coords) -> np.ndarray:
    """Decode an arbitrary latent (L,) at coords (n, d)."""
    z = np.asarray(z, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if z.shape != (ad.latent_dim,):
        raise DimensionError(f"latent must have shape ({ad.latent_dim},), got {z.shape}")
    with T.no_grad():
        return ad.decode(z[None], coords[None]).data[0]


def autodecoder_reconstruct(ad: AutoDecoder, i: int, coords) -> np.ndarray:
    if not 0 <= i < ad.n_examples:
        raise IndexError(f"example {i} out of range for {ad.n_examples} trained latents")
    return autodecoder_sample(ad, ad.latents.data[i], coords)


@dataclass
class LatentPriorCheck:
    """Mean latent norm compared with the band that fresh N(0, I) draws fall in."""

    trained_mean_norm: float
    fresh_mean_norm: float
    band_low: float
    band_high: float

    @property
    def trained_consistent(self) -> bool:
        return self.band_low <= self.trained_mean_norm <= self.band_high

    @property
    def fresh_consistent(self) -> bool:
        return self.band_low <= self.fresh_mean_norm <= self.band_high


def latent_prior_check(latents, seed: int = 0, reference_draws: int = 2000) -> LatentPriorCheck:
    """Does the mean norm of ``latents`` (N, L) look like that of N standard-normal draws?

    The band is the central 99.8% of the mean norm over ``reference_draws``
    simulated tables of the same shape.
    """
    latents = np.asarray(latents, dtype=np.float64)
    N, L = latents.shape
    rng = make_rng(seed)
    sims = np.linalg.norm(standard_normal(rng, (reference_draws, N, L)), axis=2).mean(axis=1)
    low, high = np.quantile(sims, [0.001, 0.999])
    fresh = np.linalg.norm(standard_normal(rng, (N, L)), axis=1).mean()
    return LatentPriorCheck(float(np.linalg.norm(latents, axis=1).mean()), float(fresh), float(low), float(high))
