"""Sequential networks: parameter ownership, forward with a tape, backward."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, NumericalAbortError
from .layers import LayerSpec, make_layer


@dataclass
class Tape:
    net: "Network"
    mode: str
    caches: list = field(default_factory=list)
    out_shape: tuple = ()


class Network:
    """A sequential stack of layers with its own parameters and buffers.

    ``input_shape`` excludes the batch axis: ``(C, H, W)`` for images or
    ``(D,)`` for vectors.
    """

    def __init__(self, specs, input_shape, dtype=np.float32, seed=0, name="net"):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.input_shape = tuple(int(v) for v in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.name = name
        self.layers = [make_layer(s) for s in self.specs]
        self.params = []
        self.buffers = []
        shape = self._internal(self.input_shape)
        self.shapes = [shape]
        for i, (spec, layer) in enumerate(zip(self.specs, self.layers)):
            init_seed = spec.init_seed if spec.init_seed is not None else self.seed * 1000 + i
            p, b = layer.init(shape, np.random.default_rng(init_seed), self.dtype)
            self.params.append(p)
            self.buffers.append(b)
            shape = layer.out_shape(shape)
            self.shapes.append(tuple(shape))

    @staticmethod
    def _internal(shape):
        return (shape[1], shape[2], shape[0]) if len(shape) == 3 else tuple(shape)

    @property
    def is_image(self):
        return len(self.input_shape) == 3

    @property
    def output_shape(self):
        s = self.shapes[-1]
        return (s[2], s[0], s[1]) if len(s) == 3 else s

    # -- parameter access ---------------------------------------------------

    def named_params(self):
        return {f"{i}.{k}": v for i, p in enumerate(self.params) for k, v in p.items()}

    def named_buffers(self):
        return {f"{i}.{k}": v for i, b in enumerate(self.buffers) for k, v in b.items()}

    def named_grads(self, grads):
        return {f"{i}.{k}": v for i, g in enumerate(grads) for k, v in g.items()}

    def n_params(self):
        return sum(v.size for v in self.named_params().values())

    def state_arrays(self):
        """Parameters then buffers, in declaration order."""
        out = {f"param:{k}": v for k, v in self.named_params().items()}
        out.update({f"buffer:{k}": v for k, v in self.named_buffers().items()})
        return out

    def load_state_arrays(self, arrays):
        for k, v in self.state_arrays().items():
            src = np.asarray(arrays[k])
            if src.shape != v.shape:
                raise InvalidInputError(f"{k}: shape {src.shape} != {v.shape}")
            v[...] = src

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.state_arrays().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def copy(self, name=None):
        other = Network.__new__(Network)
        other.specs = list(self.specs)
        other.input_shape = self.input_shape
        other.dtype = self.dtype
        other.seed = self.seed
        other.name = name or self.name
        other.layers = [make_layer(s) for s in self.specs]
        other.params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        other.buffers = [{k: v.copy() for k, v in b.items()} for b in self.buffers]
        other.shapes = list(self.shapes)
        return other

    def astype(self, dtype):
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = [{k: v.astype(dtype) for k, v in p.items()} for p in other.params]
        other.buffers = [{k: v.astype(dtype) for k, v in b.items()} for b in other.buffers]
        return other

    # -- compute --------------------------------------------------------------

    def forward(self, x, mode="train", rng=None):
        if mode not in ("train", "infer"):
            raise InvalidInputError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise InvalidInputError(
                f"{self.name}: input shape {x.shape[1:]} does not match {self.input_shape}"
            )
        if self.is_image:
            x = np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=self.dtype)
        else:
            x = x.astype(self.dtype, copy=False)
        tape = Tape(self, mode)
        for i, (layer, p, b) in enumerate(zip(self.layers, self.params, self.buffers)):
            x, cache = layer.forward(x, p, b, mode, rng)
            if not np.all(np.isfinite(x)):
                raise NumericalAbortError(
                    f"{self.name}: non-finite activation after layer {i} ({self.specs[i].kind})",
                    {"layer": i, "kind": self.specs[i].kind},
                )
            tape.caches.append(cache)
        if x.ndim == 4:
            x = x.transpose(0, 3, 1, 2)
        tape.out_shape = x.shape
        return x, tape

    def predict(self, x, batch_size=256):
        """Infer-mode forward in chunks, without keeping a tape."""
        x = np.asarray(x)
        outs = [self.forward(x[i:i + batch_size], "infer")[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.empty((0,) + self.output_shape, self.dtype)


def forward(net: Network, x, mode="train", rng=None):
    return net.forward(x, mode, rng)


def backward(tape: Tape, grad_output):
    """Reverse pass over ``tape``; returns ``(grad_input, grads)`` where
    ``grads`` is a per-layer list of dicts aligned with ``net.params``."""
    net = tape.net
    g = np.asarray(grad_output)
    if g.shape != tape.out_shape:
        raise InvalidInputError(f"grad shape {g.shape} does not match output {tape.out_shape}")
    g = g.astype(net.dtype, copy=False)
    if g.ndim == 4:
        g = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        g, grads[i] = net.layers[i].backward(tape.caches[i], net.params[i], g)
    if g.ndim == 4:
        g = g.transpose(0, 3, 1, 2)
    return g, grads
