"""Model and training defaults per data kind, and model construction from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from .function_rep import MlpArchitecture
from .hypernet import Hypernetwork
from .pointconv import DiscriminatorStack
from .rff import sample_encoding
from .rng import make_rng
from .training import TrainingConfig

DATA_KINDS = ("image", "voxel", "sphere", "points")


@dataclass(frozen=True)
class ModelSpec:
    coord_dim: int
    feature_dim: int
    fourier_m: int = 128
    sigma: Optional[float] = 2.0  # None disables the Fourier encoding
    hidden_dims: Tuple[int, ...] = (128, 128, 128)
    latent_dim: int = 64
    hyper_hidden: Tuple[int, ...] = (256, 512)
    output_scale: float = 0.1
    channels: Tuple[int, ...] = (64, 128, 256, 512)
    k_neighbors: Optional[int] = None
    pool_factor: Optional[int] = None
    norm_p: float = 2.0
    weight_hidden: Tuple[int, ...] = (16, 16, 16, 16)
    intrinsic_dim: Optional[int] = None


def defaults(kind: str, coord_dim: int, feature_dim: int, resolution: int = 64) -> Tuple[ModelSpec, TrainingConfig]:
    """Per-kind defaults; ``resolution`` is the largest grid side of the training data."""
    if kind == "image":
        if feature_dim == 1:
            sigma, channels, batch = 1.0, (64, 128, 256), 128
        elif resolution > 64:
            sigma, channels, batch = 3.0, (64, 128, 256, 512, 1024), 22
        else:
            sigma, channels, batch = 2.0, (64, 128, 256, 512), 64
        return (ModelSpec(2, feature_dim, sigma=sigma, channels=channels),
                TrainingConfig(batch_size=batch))
    if kind == "voxel":
        return (ModelSpec(3, feature_dim, sigma=None, channels=(32, 64, 128, 256)),
                TrainingConfig(batch_size=24, lr_generator=2e-5, lr_discriminator=8e-5))
    if kind == "sphere":
        # points live on a 2-D surface embedded in R^3
        return (ModelSpec(3, feature_dim, sigma=2.0, channels=(64, 128, 256, 512), intrinsic_dim=2),
                TrainingConfig(batch_size=64))
    if kind == "points":
        return toy_defaults(coord_dim, feature_dim)
    raise ValueError(f"unknown data kind {kind!r}; expected one of {DATA_KINDS}")


def toy_defaults(coord_dim: int = 1, feature_dim: int = 1) -> Tuple[ModelSpec, TrainingConfig]:
    """Desk-scale models for small synthetic point clouds such as the sinusoid set."""
    spec = ModelSpec(coord_dim, feature_dim, fourier_m=16, sigma=1.0, hidden_dims=(32, 32),
                     latent_dim=16, hyper_hidden=(64, 128), output_scale=0.3, channels=(4, 8, 16))
    return spec, TrainingConfig(batch_size=8)


def build_generator(spec: ModelSpec, seed: int) -> Hypernetwork:
    seeds = make_rng(seed).integers(0, 2**31, size=2)
    enc = None
    input_dim = spec.coord_dim
    if spec.sigma is not None:
        enc = sample_encoding(spec.fourier_m, spec.coord_dim, spec.sigma, int(seeds[0]))
        input_dim = enc.out_dim
    arch = MlpArchitecture(input_dim, spec.hidden_dims, spec.feature_dim)
    return Hypernetwork(arch, enc, spec.latent_dim, spec.hyper_hidden, int(seeds[1]), spec.output_scale)


def build_discriminator(spec: ModelSpec, seed: int) -> DiscriminatorStack:
    return DiscriminatorStack(spec.coord_dim, spec.feature_dim, spec.channels, spec.k_neighbors,
                              spec.pool_factor, spec.norm_p, spec.weight_hidden, spec.intrinsic_dim,
                              seed=seed)


def build_models(spec: ModelSpec, seed: int = 0):
    """Generator and discriminator with independent streams derived from ``seed``."""
    g_seed, d_seed = make_rng(seed).integers(0, 2**31, size=2)
    return build_generator(spec, int(g_seed)), build_discriminator(spec, int(d_seed))
