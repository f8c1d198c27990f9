"""Shape accounting, initialization, and forward pass for small MLPs.

Layers are (W, b) pairs with W of shape (fan_in, fan_out). The same forward
is used for the client model, the set encoder, and the head that maps
embeddings to subspace coordinates; parameters may be plain arrays
(inference) or tape leaves (training) since the ops lift constants.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError

LayerShapes = list[tuple[int, int]]


def mlp_shapes(in_dim: int, hidden: tuple[int, ...] | list[int], out_dim: int) -> LayerShapes:
    widths = [in_dim, *hidden, out_dim]
    if any(w < 1 for w in widths):
        raise ShapeError(f"mlp_shapes: non-positive width in {widths}")
    return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


def param_count(shapes: LayerShapes) -> int:
    return sum(fi * fo + fo for fi, fo in shapes)


def init_mlp(shapes: LayerShapes, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    layers = []
    for fan_in, fan_out in shapes:
        lim = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return layers


def mlp_forward(layers, x, final_relu: bool = False) -> T.Tensor:
    """ReLU MLP; the last layer is linear unless final_relu is set."""
    h = T._lift(x)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = T.add(T.matmul(h, w), b)
        if i < last or final_relu:
            h = T.relu(h)
    return h


def flatten_layers(layers) -> np.ndarray:
    parts = []
    for w, b in layers:
        wd = w.data if isinstance(w, T.Tensor) else np.asarray(w)
        bd = b.data if isinstance(b, T.Tensor) else np.asarray(b)
        parts.append(wd.ravel())
        parts.append(bd.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)
