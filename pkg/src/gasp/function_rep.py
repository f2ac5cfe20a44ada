"""Implicit MLP representation of one datapoint and single-datapoint fitting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .layers import fan_in_uniform
from .optim import AdamState, adam_step
from .rff import FourierEncoding, encode
from .rng import make_rng
from .tensor import Tensor


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths of the implicit MLP: leaky-ReLU hidden layers, tanh output."""

    input_dim: int
    hidden_dims: Tuple[int, ...] = (128, 128, 128)
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"invalid architecture {self}")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def param_count(arch: MlpArchitecture) -> int:
    return sum(fi * fo + fo for fi, fo in arch.layer_shapes)


def init_theta(arch: MlpArchitecture, rng) -> np.ndarray:
    parts = []
    for fi, fo in arch.layer_shapes:
        parts.append(fan_in_uniform(rng, fi, (fi * fo,)))
        parts.append(fan_in_uniform(rng, fi, (fo,)))
    return np.concatenate(parts)


def apply_theta(arch: MlpArchitecture, theta, inputs) -> Tensor:
    """Run the MLP with flattened weights ``theta``.

    ``theta`` is (P,) or (B, P); ``inputs`` is (n, in) or (B, n, in) with the
    same leading batch. Parameters are laid out W1, b1, W2, b2, ... with each
    W stored row-major as (in, out).
    """
    theta = T._as_tensor(theta)
    inputs = T._as_tensor(inputs)
    if theta.shape[-1] != param_count(arch):
        raise DimensionError(f"theta has {theta.shape[-1]} entries, architecture needs {param_count(arch)}")
    if inputs.shape[-1] != arch.input_dim:
        raise DimensionError(f"inputs have dimension {inputs.shape[-1]}, architecture expects {arch.input_dim}")
    lead = theta.shape[:-1]
    h = inputs
    off = 0
    shapes = arch.layer_shapes
    for i, (fi, fo) in enumerate(shapes):
        W = T.reshape(theta[..., off:off + fi * fo], lead + (fi, fo))
        off += fi * fo
        b = T.reshape(theta[..., off:off + fo], lead + (1, fo))
        off += fo
        h = T.add(T.rowwise_matmul(h, W), b)
        h = T.tanh(h) if i == len(shapes) - 1 else T.leaky_relu(h)
    return h


@dataclass(frozen=True)
class FunctionRep:
    arch: MlpArchitecture
    theta: np.ndarray
    encoding: Optional[FourierEncoding] = None

    def __post_init__(self):
        if self.theta.shape != (param_count(self.arch),):
            raise DimensionError("theta length does not match the architecture")
        if self.encoding is not None and self.encoding.out_dim != self.arch.input_dim:
            raise DimensionError("encoding width does not match the architecture input")

    @property
    def coord_dim(self) -> int:
        return self.encoding.d if self.encoding is not None else self.arch.input_dim

    def __call__(self, coords) -> np.ndarray:
        return evaluate(self, coords)


def encoded_inputs(encoding: Optional[FourierEncoding], coords) -> Tensor:
    coords = T._as_tensor(coords)
    return coords if encoding is None else encode(encoding, coords)


def evaluate(f: FunctionRep, coords, theta: Optional[Tensor] = None) -> np.ndarray:
    """Features at ``coords`` (n, d). Each row depends only on its own coordinate."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != f.coord_dim:
        raise DimensionError(f"expected coordinates of shape (n, {f.coord_dim}), got {coords.shape}")
    with T.no_grad():
        return apply_theta(f.arch, f.theta, encoded_inputs(f.encoding, coords)).data


def mse_objective(arch: MlpArchitecture, theta: Tensor, inputs, targets) -> Tensor:
    """Squared error summed over feature channels and averaged over points."""
    diff = T.sub(apply_theta(arch, theta, inputs), targets)
    return T.mean(T.sum(T.mul(diff, diff), axis=-1))


@dataclass
class FitResult:
    function: FunctionRep
    loss: float
    history: List[float] = field(default_factory=list)


def fit_single(data, arch: MlpArchitecture, encoding: Optional[FourierEncoding] = None,
               steps: int = 1000, lr: float = 1e-3, seed: int = 0,
               beta1: float = 0.9, beta2: float = 0.999) -> FitResult:
    """Fit one point cloud by minimizing the mean squared reconstruction error with Adam.

    Adam at these step sizes keeps producing loss spikes late in training, so
    the returned function is the best iterate seen (its loss is ``loss``).
    """
    coords = np.asarray(data.coords, dtype=np.float64)
    targets = np.asarray(data.features, dtype=np.float64)
    if coords.shape[0] == 0:
        raise ValueError("cannot fit an empty point cloud")
    if targets.shape[1] != arch.output_dim:
        raise DimensionError(f"data has {targets.shape[1]} feature channels, architecture outputs {arch.output_dim}")
    theta = Tensor(init_theta(arch, make_rng(seed)), requires_grad=True)
    with T.no_grad():
        inputs = encoded_inputs(encoding, coords)
    if inputs.shape[1] != arch.input_dim:
        raise DimensionError(f"encoded inputs have {inputs.shape[1]} columns, architecture expects {arch.input_dim}")
    targets_t = T.constant(targets)
    params = {"theta": theta}
    state = AdamState.create(params)
    history = []
    best_loss, best_theta = np.inf, theta.data
    for _ in range(steps):
        loss = mse_objective(arch, theta, inputs, targets_t)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("fitting diverged (non-finite loss)")
        history.append(value)
        if value < best_loss:
            best_loss, best_theta = value, theta.data
        (g,) = T.backward(loss, [theta])
        adam_step(params, {"theta": g.data}, state, lr, beta1, beta2)
    with T.no_grad():
        final = mse_objective(arch, theta, inputs, targets_t).item()
    if not np.isfinite(final):
        raise NumericError("fitting diverged (non-finite loss)")
    if final < best_loss:
        best_loss, best_theta = final, theta.data
    return FitResult(FunctionRep(arch, best_theta.copy(), encoding), best_loss, history)
