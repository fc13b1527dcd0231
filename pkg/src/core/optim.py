# optim.py: Adam with the common default hyperparameters
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .errors import ConfigError, InvalidShapeError
from .tensor import Parameter


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> AdamState:
    """
    One bias-corrected Adam update from each parameter's `.grad`;
    gradients are zeroed afterwards. No clipping, no weight decay.
    """
    for p in params:
        if p.grad is None or p.grad.shape != p.shape:
            raise InvalidShapeError(f"{p.name}: gradient shape does not match parameter {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[p.name], state.v[p.name] = m, v
        m_hat = m / corr1
        v_hat = v / corr2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        p.zero_grad()
    return state


class Adam:
    """Owns one AdamState for a fixed parameter collection."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0) or eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        self.params: List[Parameter] = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("parameter names must be unique within an optimizer")
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {f"{prefix}t": np.array(self.state.t, dtype=np.int64)}
        for name in sorted(self.state.m):
            out[f"{prefix}m.{name}"] = self.state.m[name]
            out[f"{prefix}v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
        key = f"{prefix}t"
        if key not in arrays:
            return
        self.state.t = int(arrays[key])
        self.state.m.clear(); self.state.v.clear()
        shapes = {p.name: p.shape for p in self.params}
        for name, shape in shapes.items():
            mk, vk = f"{prefix}m.{name}", f"{prefix}v.{name}"
            if mk in arrays:
                if arrays[mk].shape != shape:
                    raise InvalidShapeError(f"optimizer moment for {name} has shape {arrays[mk].shape}")
                self.state.m[name] = np.array(arrays[mk])
                self.state.v[name] = np.array(arrays[vk])
