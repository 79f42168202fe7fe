"""Parameter containers and the convolutional building blocks shared by both branches."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict[str, Tensor]

# Kaiming gain for the leaky slope.
_GAIN = math.sqrt(2.0 / (1.0 + ad.LEAKY_SLOPE**2))


def add_conv(params: Params, name: str, cin: int, cout: int, k: int, rng, dtype) -> None:
    """Fan-in scaled uniform weights, zero bias."""
    fan_in = cin * k * k
    bound = _GAIN * math.sqrt(3.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
    params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.b")


def conv(x: Tensor, params: Params, name: str, stride: int = 1, act: bool = True) -> Tensor:
    y = ad.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride)
    return ad.leaky_relu(y) if act else y


def add_dense_block(
    params: Params, name: str, cin: int, growth: int, layers: int, cout: int, rng, dtype
) -> None:
    width = cin
    for i in range(layers):
        add_conv(params, f"{name}.l{i}", width, growth, 3, rng, dtype)
        width += growth
    add_conv(params, f"{name}.neck", width, cout, 1, rng, dtype)


def dense_block(x: Tensor, params: Params, name: str, layers: int) -> Tensor:
    """Densely connected 3x3 layers followed by a 1x1 bottleneck (no activation)."""
    feats = [x]
    for i in range(layers):
        key = f"{name}.l{i}.w"
        if key not in params:
            raise ValueError(f"missing dense-block parameter {key}")
        inp = feats[0] if len(feats) == 1 else ad.concat(feats)
        feats.append(conv(inp, params, f"{name}.l{i}"))
    inp = feats[0] if len(feats) == 1 else ad.concat(feats)
    neck = params[f"{name}.neck.w"]
    if neck.shape[1] != inp.shape[1]:
        raise ValueError(
            f"{name}: bottleneck expects {neck.shape[1]} channels, got {inp.shape[1]}"
        )
    return conv(inp, params, f"{name}.neck", act=False)


def zero_params(params: Params) -> None:
    for p in params.values():
        p.data[...] = 0


def count(params: Params) -> int:
    return sum(p.data.size for p in params.values())
