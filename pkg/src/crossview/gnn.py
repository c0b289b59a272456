"""Graph attention and graph convolution layers over a dense self-looped adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError, Tensor
from .graph import Graph


def _activation(name: str):
    if name == "elu":
        return ad.elu
    if name == "identity":
        return ad.identity
    raise ValueError(f"unknown activation {name!r}")


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-lim, lim, size=shape or (fan_in, fan_out)), requires_grad=True)


@dataclass
class GatLayerParams:
    W: list[Tensor]
    a: list[Tensor]  # each (2 * d_out, 1): source half then target half
    leaky_slope: float = 0.2
    activation: str = "elu"

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def d_in(self) -> int:
        return self.W[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.W[0].shape[1]

    def parameters(self) -> list[Tensor]:
        return [*self.W, *self.a]

    @classmethod
    def init(cls, d_in: int, d_out: int, heads: int, rng: np.random.Generator, **kw) -> "GatLayerParams":
        if heads < 1:
            raise ValueError(f"need at least one attention head, got {heads}")
        W = [xavier(rng, d_in, d_out) for _ in range(heads)]
        a = [xavier(rng, 2 * d_out, 1) for _ in range(heads)]
        return cls(W, a, **kw)


@dataclass
class GcnLayerParams:
    W: Tensor
    activation: str = "elu"

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.W]

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, **kw) -> "GcnLayerParams":
        return cls(xavier(rng, d_in, d_out), **kw)


def _require_loops(g: Graph) -> None:
    if not g.self_looped:
        raise ContractError("graph layers need a self-looped adjacency")


def gat_attention(H: Tensor, g: Graph, p: GatLayerParams, head: int) -> Tensor:
    """Attention coefficients of one head; rows sum to one over the graph support."""
    _require_loops(g)
    n = H.shape[0]
    d = p.d_out
    Wh = H @ p.W[head]
    # split a into its two halves with constant selectors: no slicing op needed
    eye = np.eye(d)
    left = Tensor(np.hstack([eye, np.zeros((d, d))])) @ p.a[head]
    right = Tensor(np.hstack([np.zeros((d, d)), eye])) @ p.a[head]
    src = Wh @ left  # N x 1, score of the attending node i
    dst = Wh @ right  # N x 1, score of the neighbour j
    ones_row = Tensor(np.ones((1, n)))
    logits = src @ ones_row + (dst @ ones_row).T
    return ad.masked_softmax_rows(ad.leaky_relu(logits, p.leaky_slope), g.adjacency)


def gat_layer(H: Tensor, g: Graph, p: GatLayerParams) -> Tensor:
    if H.shape[1] != p.d_in:
        raise ShapeError(f"gat_layer: input width {H.shape[1]} does not match W rows {p.d_in}")
    total = None
    for k in range(p.heads):
        msg = gat_attention(H, g, p, k) @ (H @ p.W[k])
        total = msg if total is None else total + msg
    return _activation(p.activation)(total / p.heads)


def normalized_adjacency(g: Graph) -> np.ndarray:
    """D^-1/2 A D^-1/2 of a self-looped adjacency."""
    _require_loops(g)
    inv = 1.0 / np.sqrt(g.degrees())
    return g.adjacency * inv[:, None] * inv[None, :]


def gcn_layer(H: Tensor, g: Graph, p: GcnLayerParams) -> Tensor:
    if H.shape[1] != p.d_in:
        raise ShapeError(f"gcn_layer: input width {H.shape[1]} does not match W rows {p.d_in}")
    A = Tensor(normalized_adjacency(g))
    return _activation(p.activation)(A @ (H @ p.W))


@dataclass
class GnnStack:
    kind: str  # "gat" or "gcn"
    layers: list = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.parameters()]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].d_out

    @classmethod
    def init(
        cls,
        kind: str,
        d_in: int,
        hidden: int,
        out_dim: int,
        n_layers: int = 2,
        heads: int = 2,
        rng: np.random.Generator | None = None,
        leaky_slope: float = 0.2,
        activation: str = "elu",
    ) -> "GnnStack":
        if kind not in ("gat", "gcn"):
            raise ValueError(f"gnn kind must be 'gat' or 'gcn', got {kind!r}")
        if not 1 <= n_layers <= 2:
            raise ValueError(f"stack depth must be 1 or 2, got {n_layers}")
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = [d_in] + [hidden] * (n_layers - 1) + [out_dim]
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            if kind == "gat":
                layers.append(GatLayerParams.init(a, b, heads, rng, leaky_slope=leaky_slope, activation=activation))
            else:
                layers.append(GcnLayerParams.init(a, b, rng, activation=activation))
        return cls(kind, layers)


def gnn_encode(g: Graph, X: Tensor, stack: GnnStack) -> Tensor:
    h = X
    for i, layer in enumerate(stack.layers):
        if h.shape[1] != layer.d_in:
            raise ShapeError(f"layer {i} expects width {layer.d_in}, got {h.shape[1]}")
        h = gat_layer(h, g, layer) if stack.kind == "gat" else gcn_layer(h, g, layer)
    return h
