"""Adam and SGD over named parameter dicts, with serializable state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 2e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    def hyper(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step": self.step}

    def arrays(self, prefix: str) -> dict:
        out = {f"{prefix}/m/{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}/v/{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def restore(cls, hyper: dict, arrays: dict, prefix: str) -> "OptimizerState":
        st = cls(**hyper)
        for key, arr in arrays.items():
            for slot in ("m", "v"):
                head = f"{prefix}/{slot}/"
                if key.startswith(head):
                    getattr(st, slot)[key[len(head):]] = arr.copy()
        return st


def _check(grads: dict):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")


def adam_step(state: OptimizerState, params: dict, grads: dict):
    """Bias-corrected Adam, updating ``params`` (name -> Tensor) in place.

    ``grads`` maps names to arrays; parameters without a gradient are left alone.
    """
    _check(grads)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sgd_step(state: OptimizerState, params: dict, grads: dict):
    _check(grads)
    state.step += 1
    for name, g in grads.items():
        params[name].data -= state.lr * g


def step(state: OptimizerState, params: dict, grads: dict):
    (adam_step if state.kind == "adam" else sgd_step)(state, params, grads)
