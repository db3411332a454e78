"""Sequential network assembled from layer specs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    size: tuple = field(default=())

    @classmethod
    def conv(cls, name, kh, kw, c_in, c_out):
        return cls("conv", name, (kh, kw, c_in, c_out))

    @classmethod
    def dense(cls, name, n_in, n_out):
        return cls("dense", name, (n_in, n_out))


_SIMPLE = {
    "maxpool": L.MaxPool2D,
    "relu": L.ReLU,
    "flatten": L.Flatten,
    "softmax": L.Softmax,
    "sigmoid": L.Sigmoid,
}


def make_layer(spec: LayerSpec, index: int) -> L.Layer:
    name = spec.name or f"{spec.kind}{index}"
    if spec.kind == "conv":
        return L.Conv2D(name, *spec.size)
    if spec.kind == "dense":
        return L.Dense(name, *spec.size)
    if spec.kind in _SIMPLE:
        return _SIMPLE[spec.kind](name)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def infer_shapes(specs, input_shape) -> list[tuple]:
    """Output shape after every layer; raises on any inconsistency."""
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        shape = make_layer(spec, i).output_shape(shape)
        shapes.append(shape)
    return shapes


class Network:
    def __init__(self, specs, input_shape, dtype=np.float32):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.layers = [make_layer(s, i) for i, s in enumerate(self.specs)]
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.shapes = infer_shapes(self.specs, self.input_shape)
        self._forward_done = False

    def init_weights(self, seed: int) -> None:
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if "weight" in layer.params:
                limit = np.sqrt(6.0 / layer.fan_in)
                w = rng.uniform(-limit, limit, size=layer.params["weight"].shape)
                layer.params["weight"] = w.astype(self.dtype)
                layer.params["bias"] = np.zeros_like(layer.params["bias"], dtype=self.dtype)

    # weights are exposed as a flat ordered mapping "layer.param" -> array
    def weights(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": l.grads[k] for l in self.layers for k in l.params}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        expected = self.weights()
        if set(weights) != set(expected):
            raise ValueError(f"weight names {sorted(weights)} do not match network {sorted(expected)}")
        for layer in self.layers:
            for k in layer.params:
                w = np.asarray(weights[f"{layer.name}.{k}"])
                if w.shape != layer.params[k].shape:
                    raise ValueError(f"{layer.name}.{k}: shape {w.shape} != {layer.params[k].shape}")
                layer.params[k] = w.astype(self.dtype)

    def forward(self, x, stop: int | None = None):
        """Run layers ``[0, stop)`` (all by default) on a batch."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != network input {self.input_shape}")
        for layer in self.layers[:stop]:
            x = layer.forward(x)
        self._forward_done = True
        return x

    def backward(self, grad, start: int | None = None, need_input_grad: bool = True):
        """Backpropagate ``grad`` from the output of layer ``start - 1``.

        ``start`` defaults to the full depth; pass ``len(layers) - 1`` to feed a
        gradient w.r.t. the input of the final layer (fused softmax + CE).
        Returns the gradient w.r.t. the network input.
        """
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        n = len(self.layers) if start is None else start
        for layer in self.layers[n:]:
            layer.grads = {k: np.zeros_like(v) for k, v in layer.params.items()}
        for i in range(n - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not need_input_grad and isinstance(layer, L.Conv2D):
                layer.backward(grad, need_dx=False)
                return None
            grad = layer.backward(grad)
        return grad

    def predict(self, x, batch_size: int = 64):
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        self.clear()
        return np.concatenate(outs) if outs else np.zeros((0,) + self.shapes[-1], self.dtype)

    def clear(self):
        for layer in self.layers:
            layer.clear()
        self._forward_done = False


def sgd_step(weights: dict, grads: dict, learning_rate: float, inplace: bool = False) -> dict:
    """``w <- w - lr * g`` elementwise for every named parameter."""
    if set(weights) != set(grads):
        raise ValueError("weights and gradients name different parameters")
    out = weights if inplace else {}
    for k, w in weights.items():
        g = grads[k]
        if np.shape(g) != np.shape(w):
            raise ValueError(f"{k}: gradient shape {np.shape(g)} != weight shape {np.shape(w)}")
        if inplace:
            w -= np.asarray(learning_rate * g, dtype=w.dtype)
        else:
            out[k] = w - learning_rate * g
    return out
