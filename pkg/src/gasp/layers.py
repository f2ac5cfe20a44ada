"""Parameter containers shared by every network in the package."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .rng import uniform
from .tensor import BatchNormState, Tensor


def fan_in_uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return uniform(rng, shape, -bound, bound)


class MLP:
    """Affine layers with leaky-ReLU between them.

    Weights are stored as (in, out) so a layer computes ``x @ W + b``.
    ``batch_norm`` inserts a normalization after every hidden affine map.
    ``final`` selects the output activation: None, "tanh" or "sigmoid".
    """

    def __init__(self, sizes: Sequence[int], rng, *, batch_norm: bool = False,
                 final: Optional[str] = None, final_scale: float = 1.0,
                 zero_final_bias: bool = False, slope: float = 0.2):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self.batch_norm = batch_norm
        self.final = final
        self.slope = slope
        self.params: Dict[str, Tensor] = {}
        self.bn_states: List[BatchNormState] = []
        n_layers = len(self.sizes) - 1
        for i, (fi, fo) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == n_layers - 1
            scale = final_scale if last else 1.0
            self.params[f"W{i}"] = Tensor(fan_in_uniform(rng, fi, (fi, fo)) * scale, requires_grad=True)
            if last and zero_final_bias:
                b = np.zeros(fo)
            else:
                b = fan_in_uniform(rng, fi, (fo,)) * scale
            self.params[f"b{i}"] = Tensor(b, requires_grad=True)
            if batch_norm and not last:
                self.params[f"bn{i}.scale"] = Tensor(np.ones(fo), requires_grad=True)
                self.params[f"bn{i}.shift"] = Tensor(np.zeros(fo), requires_grad=True)
                self.bn_states.append(BatchNormState.create(fo))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def weights(self):
        return [(self.params[f"W{i}"], self.params[f"b{i}"]) for i in range(self.n_layers)]

    def __call__(self, x, training: bool = False) -> Tensor:
        h = x
        for i in range(self.n_layers):
            h = T.add(T.matmul(h, self.params[f"W{i}"]), self.params[f"b{i}"])
            if i < self.n_layers - 1:
                if self.batch_norm:
                    h = T.batch_norm(h, self.bn_states[i], training,
                                     self.params[f"bn{i}.scale"], self.params[f"bn{i}.shift"])
                h = T.leaky_relu(h, self.slope)
        if self.final == "tanh":
            h = T.tanh(h)
        elif self.final == "sigmoid":
            h = T.sigmoid(h)
        return h

    # -- serialization helpers ----------------------------------------------------
    def arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.{k}": v.data for k, v in self.params.items()}
        for i, st in enumerate(self.bn_states):
            out[f"{prefix}.bn{i}.running_mean"] = st.running_mean
            out[f"{prefix}.bn{i}.running_var"] = st.running_var
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str) -> None:
        for k, v in self.params.items():
            v.data = np.array(arrays[f"{prefix}.{k}"], dtype=np.float64).reshape(v.shape)
        for i, st in enumerate(self.bn_states):
            st.running_mean = np.array(arrays[f"{prefix}.bn{i}.running_mean"])
            st.running_var = np.array(arrays[f"{prefix}.bn{i}.running_var"])
