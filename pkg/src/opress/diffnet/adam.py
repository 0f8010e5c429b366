from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NonFiniteGradient


@dataclass
class AdamState:
    """Adam moments and step counter; defaults follow Kingma & Ba."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def for_model(cls, model, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for k, p in model.params.items():
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        return state


def adam_step(model, grads, state: AdamState) -> None:
    """One bias-corrected Adam update of ``model.params`` in place.

    ``grads`` is a mapping (or a GradStore) with the same keys as the params.
    """
    grads = getattr(grads, "params", grads)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    if not state.m:
        for k, p in model.params.items():
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in model.params.items():
        g = np.asarray(grads[k], dtype=p.dtype)
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.lr == 0:
            continue
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
