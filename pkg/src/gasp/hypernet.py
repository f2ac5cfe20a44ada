"""Function generator: latent ``z ~ N(0, I)`` mapped by a hypernetwork to MLP weights."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .function_rep import FunctionRep, MlpArchitecture, apply_theta, encoded_inputs, param_count
from .layers import MLP
from .rff import FourierEncoding
from .rng import make_rng, standard_normal
from .tensor import Tensor


def sample_latent(latent_dim: int, seed=None, *, rng=None, count: Optional[int] = None) -> np.ndarray:
    """Standard-normal latent code(s); shape (latent_dim,) or (count, latent_dim)."""
    if latent_dim < 1:
        raise ValueError(f"latent_dim must be positive, got {latent_dim}")
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    shape = (latent_dim,) if count is None else (count, latent_dim)
    return standard_normal(rng, shape)


class Hypernetwork:
    """Maps latent codes to the flattened weights of a fixed implicit MLP.

    Hidden layers use leaky-ReLU; the output layer is linear with zero bias
    and its fan-in initialization multiplied by ``output_scale``, which sets
    how far from constant the freshly emitted functions are.
    """

    def __init__(self, target_arch: MlpArchitecture, encoding: Optional[FourierEncoding] = None,
                 latent_dim: int = 64, hidden_dims: Sequence[int] = (256, 512), seed: int = 0,
                 output_scale: float = 0.1):
        if encoding is not None and encoding.out_dim != target_arch.input_dim:
            raise DimensionError("encoding width does not match the target architecture input")
        self.target_arch = target_arch
        self.encoding = encoding
        self.latent_dim = int(latent_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.output_scale = float(output_scale)
        self.output_dim = param_count(target_arch)
        self.mlp = MLP([self.latent_dim, *self.hidden_dims, self.output_dim], make_rng(seed),
                       final_scale=self.output_scale, zero_final_bias=True)

    @property
    def params(self):
        return self.mlp.params

    @property
    def coord_dim(self) -> int:
        return self.encoding.d if self.encoding is not None else self.target_arch.input_dim

    def _check_z(self, z) -> Tensor:
        z = T._as_tensor(z)
        if z.shape[-1] != self.latent_dim:
            raise DimensionError(f"latent has dimension {z.shape[-1]}, expected {self.latent_dim}")
        return z

    def generate_weights(self, z) -> Tensor:
        """theta = g(z) for z of shape (latent_dim,) or (B, latent_dim)."""
        z = self._check_z(z)
        single = z.ndim == 1
        if single:
            z = T.reshape(z, (1, self.latent_dim))
        theta = self.mlp(z)
        return T.reshape(theta, (self.output_dim,)) if single else theta

    def generate_features(self, z, coords) -> Tensor:
        """Evaluate the emitted function(s) at ``coords``.

        Shapes: z (latent,) with coords (n, d) gives (n, k); z (B, latent) with
        coords (n, d) or (B, n, d) gives (B, n, k).
        """
        coords = T._as_tensor(coords)
        if coords.shape[-1] != self.coord_dim:
            raise DimensionError(f"coordinates have dimension {coords.shape[-1]}, expected {self.coord_dim}")
        theta = self.generate_weights(z)
        return apply_theta(self.target_arch, theta, encoded_inputs(self.encoding, coords))

    def function(self, z) -> FunctionRep:
        """The sampled function for one latent code, as a standalone representation."""
        with T.no_grad():
            theta = self.generate_weights(np.asarray(z, dtype=np.float64))
        return FunctionRep(self.target_arch, theta.data.copy(), self.encoding)
