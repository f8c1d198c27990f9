"""Set-encoding hypernetwork: raw client features in, subspace coords out.

Two stacked MLPs. The encoder maps each row to an e-dimensional feature and
the features are mean-pooled, which makes the whole map permutation
invariant in the rows; the head maps the pooled embedding to the k subspace
coordinates with no output activation, since the coords are unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from . import rngs
from . import tensor as T
from .errors import DataError, ShapeError


@dataclass
class HyperNetParams:
    encoder: list[tuple]  # in_dim -> e, entries np.ndarray or tape leaves
    head: list[tuple]  # e -> k
    encoder_output_relu: bool = False

    @property
    def e(self) -> int:
        w = self.encoder[-1][0]
        return (w.data if isinstance(w, T.Tensor) else w).shape[1]

    @property
    def k(self) -> int:
        w = self.head[-1][0]
        return (w.data if isinstance(w, T.Tensor) else w).shape[1]

    def flatten(self) -> np.ndarray:
        return np.concatenate([nn.flatten_layers(self.encoder), nn.flatten_layers(self.head)])

    def with_flat(self, flat: np.ndarray) -> "HyperNetParams":
        """Rebuild params from a flat vector, preserving this instance's shapes."""
        enc, pos = _read_layers(flat, 0, _shapes_of(self.encoder))
        head, pos = _read_layers(flat, pos, _shapes_of(self.head))
        if pos != flat.size:
            raise ShapeError(f"with_flat: vector length {flat.size}, expected {pos}")
        return replace(self, encoder=enc, head=head)


def _shapes_of(layers) -> nn.LayerShapes:
    out = []
    for w, _ in layers:
        wd = w.data if isinstance(w, T.Tensor) else w
        out.append((wd.shape[0], wd.shape[1]))
    return out


def _read_layers(flat: np.ndarray, pos: int, shapes: nn.LayerShapes):
    layers = []
    for fi, fo in shapes:
        w = flat[pos : pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = flat[pos : pos + fo]
        pos += fo
        layers.append((w, b))
    return layers, pos


def init_hypernet(
    in_dim: int,
    e: int,
    k: int,
    encoder_hidden: tuple[int, ...] = (64, 64),
    head_hidden: tuple[int, ...] = (64,),
    seed: int = 0,
    encoder_output_relu: bool = False,
) -> HyperNetParams:
    if min(in_dim, e, k) < 1:
        raise ShapeError(f"init_hypernet: dims must be >= 1, got in={in_dim}, e={e}, k={k}")
    enc = nn.init_mlp(nn.mlp_shapes(in_dim, encoder_hidden, e), rngs.stream(seed, rngs.STATE_INIT, 0))
    head = nn.init_mlp(nn.mlp_shapes(e, head_hidden, k), rngs.stream(seed, rngs.STATE_INIT, 1))
    return HyperNetParams(enc, head, encoder_output_relu)


def _check_batch(x: T.Tensor) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"expected a (rows, features) batch, got shape {x.data.shape}")
    if x.data.shape[0] < 1:
        raise DataError("empty batch")


def embed(params: HyperNetParams, x) -> T.Tensor:
    """Mean-pooled encoder features of a batch; the client's dataset embedding."""
    xt = T._lift(x)
    _check_batch(xt)
    feats = nn.mlp_forward(params.encoder, xt, final_relu=params.encoder_output_relu)
    return T.mean_rows(feats)


def hyper_forward(params: HyperNetParams, x) -> T.Tensor:
    """Subspace coordinates for a batch: head(embed(batch))."""
    pooled = embed(params, x)
    row = T.reshape(pooled, (1, pooled.data.shape[0]))
    out = nn.mlp_forward(params.head, row)
    return T.reshape(out, (out.data.shape[1],))
