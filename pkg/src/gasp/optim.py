"""Adam with bias correction, operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)

    def arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}.m.{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}.v.{k}": a for k, a in self.v.items()})
        out[f"{prefix}.step"] = np.array([float(self.step)])
        return out

    def load_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str) -> None:
        for k in self.m:
            self.m[k] = np.array(arrays[f"{prefix}.m.{k}"]).reshape(self.m[k].shape)
            self.v[k] = np.array(arrays[f"{prefix}.v.{k}"]).reshape(self.v[k].shape)
        self.step = int(arrays[f"{prefix}.step"][0])


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
