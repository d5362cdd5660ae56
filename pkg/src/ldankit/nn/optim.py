"""RMSProp and Adadelta over named parameter dicts, plus WGAN weight clipping.

Updates are applied in place; the same dict is returned for convenience.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

RMSPROP_DEFAULTS = {"lr": 5e-5, "rho": 0.9, "eps": 1e-8}
ADADELTA_DEFAULTS = {"lr": 1.0, "rho": 0.95, "eps": 1e-6}


@dataclass
class OptimState:
    kind: str
    hyper: dict
    acc: dict = field(default_factory=dict)  # name -> {slot: array}
    steps: int = 0

    def to_dict(self):
        return {
            "kind": self.kind,
            "hyper": dict(self.hyper),
            "steps": self.steps,
            "acc": {k: {s: a.tolist() for s, a in slots.items()} for k, slots in self.acc.items()},
            "dtypes": {k: {s: str(a.dtype) for s, a in slots.items()} for k, slots in self.acc.items()},
        }

    @classmethod
    def from_dict(cls, d):
        acc = {
            k: {s: np.asarray(a, dtype=d["dtypes"][k][s]) for s, a in slots.items()}
            for k, slots in d["acc"].items()
        }
        return cls(d["kind"], dict(d["hyper"]), acc, int(d["steps"]))

    def arrays(self):
        return {f"{k}/{s}": a for k, slots in self.acc.items() for s, a in slots.items()}


def rmsprop(**overrides) -> OptimState:
    return OptimState("rmsprop", {**RMSPROP_DEFAULTS, **overrides})


def adadelta(**overrides) -> OptimState:
    return OptimState("adadelta", {**ADADELTA_DEFAULTS, **overrides})


def _check(params, grads):
    for k, g in grads.items():
        if k not in params:
            raise InvalidInputError(f"gradient for unknown parameter {k!r}")
        if params[k].shape != np.shape(g):
            raise InvalidInputError(f"{k}: grad shape {np.shape(g)} != param shape {params[k].shape}")


def _slots(state, key, p, names):
    slots = state.acc.get(key)
    if slots is None:
        slots = state.acc[key] = {n: np.zeros_like(p) for n in names}
    elif slots[names[0]].shape != p.shape:
        raise InvalidInputError(f"{key}: optimizer state shape mismatch")
    return slots


def rmsprop_step(state: OptimState, params: dict, grads: dict) -> dict:
    """``acc <- rho*acc + (1-rho)*g^2``; ``p <- p - lr*g/sqrt(acc+eps)``."""
    _check(params, grads)
    lr, rho, eps = (state.hyper[k] for k in ("lr", "rho", "eps"))
    for k, g in grads.items():
        p = params[k]
        g = np.asarray(g, dtype=p.dtype)
        s = _slots(state, k, p, ("sq",))
        s["sq"] *= rho
        s["sq"] += (1.0 - rho) * g * g
        p -= lr * g / np.sqrt(s["sq"] + eps)
    state.steps += 1
    return params


def adadelta_step(state: OptimState, params: dict, grads: dict) -> dict:
    """Zeiler's Adadelta with an optional global multiplier ``lr`` (1.0 is
    the textbook rule)."""
    _check(params, grads)
    lr, rho, eps = (state.hyper[k] for k in ("lr", "rho", "eps"))
    for k, g in grads.items():
        p = params[k]
        g = np.asarray(g, dtype=p.dtype)
        s = _slots(state, k, p, ("sq_grad", "sq_delta"))
        s["sq_grad"] *= rho
        s["sq_grad"] += (1.0 - rho) * g * g
        delta = -np.sqrt(s["sq_delta"] + eps) / np.sqrt(s["sq_grad"] + eps) * g
        s["sq_delta"] *= rho
        s["sq_delta"] += (1.0 - rho) * delta * delta
        p += lr * delta
    state.steps += 1
    return params


def step(state: OptimState, params: dict, grads: dict) -> dict:
    if state.kind == "rmsprop":
        return rmsprop_step(state, params, grads)
    if state.kind == "adadelta":
        return adadelta_step(state, params, grads)
    raise InvalidInputError(f"unknown optimizer {state.kind!r}")


def clip_weights(params: dict, c: float) -> dict:
    if not (c > 0 and math.isfinite(c)):
        raise InvalidInputError(f"clip value must be positive, got {c}")
    for p in params.values():
        np.clip(p, -c, c, out=p)
    return params
