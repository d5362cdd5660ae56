"""Central finite-difference checks for every layer kind and loss head.

All checks run in float64.  The error reported for one tensor is
``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)`` and a
case's error is the maximum over its input and parameter tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .losses import critic_losses, mse_loss
from .network import Network, backward
from .optim import adadelta, adadelta_step, rmsprop, rmsprop_step

FD_STEP = 1e-3
TOLERANCE = 1e-4
DENOM_FLOOR = 1e-6


def rel_error(a, n):
    a = np.ravel(a)
    n = np.ravel(n)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), DENOM_FLOOR))


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def check_network(net: Network, x, mode="train", seed=0, h=FD_STEP):
    """Return ``{tensor_name: rel_error}`` for input and every parameter."""
    net = net.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    out_shape = net.forward(x, mode, np.random.default_rng(seed))[0].shape
    w = np.random.default_rng(seed + 7).standard_normal(out_shape)

    def f():
        y, _ = net.forward(x, mode, np.random.default_rng(seed))
        return float(np.sum(y * w))

    _, tape = net.forward(x, mode, np.random.default_rng(seed))
    gx, grads = backward(tape, w)
    errs = {"input": rel_error(gx, numeric_grad(f, x, h))}
    named = net.named_params()
    for k, g in net.named_grads(grads).items():
        errs[k] = rel_error(g, numeric_grad(f, named[k], h))
    return errs


@dataclass
class LayerCase:
    name: str
    specs: list
    input_shape: tuple
    batch: int = 4
    mode: str = "train"
    away_from_zero: bool = False


LAYER_CASES = [
    LayerCase("conv3x3", [L.conv3x3(4)], (3, 5, 5), batch=2),
    LayerCase("conv3x3/2", [L.conv3x3(4, stride=2)], (3, 6, 6), batch=2),
    LayerCase("batchnorm", [L.batchnorm()], (3, 4, 4)),
    LayerCase("batchnorm(fc)", [L.batchnorm()], (5,), batch=6),
    LayerCase("batchnorm(infer)", [L.batchnorm()], (3, 4, 4), mode="infer"),
    LayerCase("relu", [L.relu()], (3, 4, 4), away_from_zero=True),
    LayerCase("fc", [L.fc(5)], (7,)),
    LayerCase("dropout", [L.dropout(0.5)], (12,)),
    LayerCase("residual_block", [L.residual_block()], (3, 4, 4), batch=3),
    LayerCase("global_flatten", [L.global_flatten()], (2, 3, 3)),
    LayerCase("tanh", [L.tanh()], (9,)),
]


KINK_MARGIN = 5 * FD_STEP


def _case_input(case, seed, attempt=0):
    rng = np.random.default_rng([10_000 + seed, attempt])
    x = rng.standard_normal((case.batch,) + case.input_shape)
    if case.away_from_zero:
        x = np.where(x >= 0, x + 0.1, x - 0.1)
    return x


def check_layer_case(case: LayerCase, seed: int) -> float:
    net = Network(case.specs, case.input_shape, np.float64, seed=seed, name=case.name)
    for b in net.buffers:
        for k, v in b.items():
            if "running_var" in k:
                v[...] = np.random.default_rng(seed).uniform(0.5, 2.0, v.shape)
            elif "running_mean" in k:
                v[...] = np.random.default_rng(seed + 1).standard_normal(v.shape) * 0.1
    for p in net.params:
        for k, v in p.items():
            if "gamma" in k or "beta" in k or k == "b":
                v += np.random.default_rng(seed + 2).standard_normal(v.shape) * 0.3
    # Redraw until no ReLU pre-activation sits within KINK_MARGIN of zero, so
    # central differences never straddle a kink.
    for attempt in range(100):
        x = _case_input(case, seed, attempt)
        probe = net.copy()
        probe.forward(x, case.mode, np.random.default_rng(seed))
        margin = min((getattr(l, "min_abs_preact", np.inf) for l in probe.layers), default=np.inf)
        if margin > KINK_MARGIN:
            break
    return max(check_network(net, x, case.mode, seed).values())


def check_mse(seed: int) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.standard_normal((4, 3))
    target = rng.standard_normal((4, 3))
    _, g = mse_loss(pred, target)
    return rel_error(g, numeric_grad(lambda: mse_loss(pred, target)[0], pred))


def check_critic(seed: int) -> float:
    rng = np.random.default_rng(seed)
    ds = rng.standard_normal((5, 1))
    dr = rng.standard_normal((3, 1))
    cl = critic_losses(ds, dr)
    errs = [
        rel_error(cl.critic_grad_synth, numeric_grad(lambda: -critic_losses(ds, dr).critic_objective, ds)),
        rel_error(cl.critic_grad_real, numeric_grad(lambda: -critic_losses(ds, dr).critic_objective, dr)),
        rel_error(cl.generator_grad_real, numeric_grad(lambda: critic_losses(ds, dr).generator_objective, dr)),
    ]
    return max(errs)


RMSPROP_FIRST_STEP = -5e-5 / np.sqrt(0.1)
ADADELTA_FIRST_STEP = -np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)


def check_optimizers():
    """Single-step deltas from a scalar parameter with gradient 1."""
    p = {"p": np.zeros(1)}
    rmsprop_step(rmsprop(), p, {"p": np.ones(1)})
    r = float(p["p"][0])
    p = {"p": np.zeros(1)}
    adadelta_step(adadelta(), p, {"p": np.ones(1)})
    a = float(p["p"][0])
    return {
        "rmsprop": (r, RMSPROP_FIRST_STEP, abs(r - RMSPROP_FIRST_STEP)),
        "adadelta": (a, ADADELTA_FIRST_STEP, abs(a - ADADELTA_FIRST_STEP)),
    }


def run_suite(seeds=range(10), cases=None):
    """Max error per case over ``seeds``; keys are case names plus loss heads."""
    cases = LAYER_CASES if cases is None else cases
    out = {}
    for case in cases:
        out[case.name] = max(check_layer_case(case, s) for s in seeds)
    out["mse_loss"] = max(check_mse(s) for s in seeds)
    out["critic_losses"] = max(check_critic(s) for s in seeds)
    return out
