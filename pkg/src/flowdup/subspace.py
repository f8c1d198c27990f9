"""Random low-dimensional reparameterization of the client model.

Client model parameters never move freely: they are always written as
origin + directions @ coords, where the origin is a fixed fan-in-scaled
initialization and the directions matrix is a frozen random d x k matrix.
Training (and the hypernetwork's output) lives entirely in the k coords.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import rngs
from . import tensor as T
from .errors import ShapeError

_NORM_FLOOR = 1e-12  # a zero column cannot be normalized; never hit in practice


@dataclass(frozen=True)
class ExpansionBasis:
    """Frozen map from subspace coords to full model parameters."""

    directions: np.ndarray  # (d, k)
    origin: np.ndarray  # (d,)
    seed: int
    column_normalized: bool
    layer_shapes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.directions.shape[0]

    @property
    def k(self) -> int:
        return self.directions.shape[1]


def build_basis(
    d: int,
    k: int,
    seed: int,
    layer_shapes: nn.LayerShapes,
    column_normalized: bool = True,
) -> ExpansionBasis:
    """Sample the frozen basis for a model with the given layer shapes.

    Direction entries are i.i.d. standard normal; with column_normalized
    (the default) each column is scaled to unit L2 norm so the coords have
    comparable leverage. The origin is drawn per layer from a stream keyed
    by the layer index, so it is stable under changes to k.
    """
    if d != nn.param_count(layer_shapes):
        raise ShapeError(f"build_basis: d={d} but layer shapes account for {nn.param_count(layer_shapes)}")
    if not (1 <= k <= d):
        raise ShapeError(f"build_basis: need 1 <= k <= d, got k={k}, d={d}")
    p = rngs.stream(seed, rngs.BASIS_DIRECTIONS).standard_normal((d, k))
    if column_normalized:
        norms = np.sqrt((p * p).sum(axis=0))
        p = p / np.maximum(norms, _NORM_FLOOR)
    origin_layers = []
    for idx, (fan_in, fan_out) in enumerate(layer_shapes):
        g = rngs.stream(seed, rngs.BASIS_ORIGIN, idx)
        lim = np.sqrt(6.0 / fan_in)
        origin_layers.append((g.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)))
    origin = nn.flatten_layers(origin_layers)
    return ExpansionBasis(p, origin, int(seed), bool(column_normalized), list(layer_shapes))


def expand(basis: ExpansionBasis, coords) -> T.Tensor:
    """Full parameter vector origin + directions @ coords.

    Differentiable in coords; the backward pass is directions.T @ grad.
    """
    c = T._lift(coords)
    if c.data.shape != (basis.k,):
        raise ShapeError(f"expand: coords shape {c.data.shape}, expected ({basis.k},)")
    return T.add(T.matvec(basis.directions, c), basis.origin)


def unflatten(theta, layer_shapes: nn.LayerShapes) -> list[tuple[T.Tensor, T.Tensor]]:
    """Split a flat parameter vector into (W, b) pairs, row-major, W then b."""
    t = T._lift(theta)
    if t.data.ndim != 1:
        raise ShapeError(f"unflatten: expected a vector, got shape {t.data.shape}")
    expected = nn.param_count(layer_shapes)
    if t.data.shape[0] != expected:
        raise ShapeError(f"unflatten: vector of length {t.data.shape[0]} vs layer count {expected}")
    layers = []
    pos = 0
    for fan_in, fan_out in layer_shapes:
        w = T.reshape(T.slice1d(t, pos, pos + fan_in * fan_out), (fan_in, fan_out))
        pos += fan_in * fan_out
        b = T.slice1d(t, pos, pos + fan_out)
        pos += fan_out
        layers.append((w, b))
    return layers
