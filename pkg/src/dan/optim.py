"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ContractError, Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros(p.shape) for p in params],
                   v=[np.zeros(p.shape) for p in params], **kw)


def _grad_array(grads, i, p):
    g = grads[p] if isinstance(grads, Mapping) else grads[i]
    g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
    if g.shape != p.shape:
        raise ContractError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
    return g


def adam_step(params: Sequence[Tensor], grads, state: AdamState,
              clip_norm: float | None = None) -> AdamState:
    """One Adam update of ``params`` in place.

    ``grads`` is either a sequence aligned with ``params`` or a mapping from
    parameter to gradient (as returned by :func:`dan.autodiff.backward`);
    parameters missing from a mapping are treated as having zero gradient.
    With ``clip_norm`` set, the global gradient norm is clipped first.
    """
    if len(state.m) != len(params):
        raise ContractError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    gs = []
    for i, p in enumerate(params):
        if isinstance(grads, Mapping) and p not in grads:
            gs.append(np.zeros(p.shape))
        else:
            gs.append(_grad_array(grads, i, p))
        if state.m[i].shape != p.shape:
            raise ContractError(f"optimizer moment shape {state.m[i].shape} != parameter {p.shape}")
    if clip_norm is not None:
        norm = np.sqrt(sum(float((g * g).sum()) for g in gs))
        if norm > clip_norm:
            gs = [g * (clip_norm / norm) for g in gs]

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, gs)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = None):
        self.params = list(params)
        self.clip_norm = clip_norm
        self.state = AdamState.for_params(self.params, lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @property
    def steps(self) -> int:
        return self.state.t

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.state, clip_norm=self.clip_norm)
