"""Cross-view fusion, similarity, and the loss terms of the training objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError, Tensor
from .graph import Graph

logger = logging.getLogger(__name__)


class LabelError(ValueError):
    pass


@dataclass
class FusionParams:
    W_m: Tensor
    W_f: Tensor
    head_m: Tensor
    head_f: Tensor
    delta: float = 0.2
    beta: float = 0.5

    def __post_init__(self):
        if self.W_m.shape[1] != self.W_f.shape[1]:
            raise ShapeError(f"view projections disagree on fused width: {self.W_m.shape} vs {self.W_f.shape}")
        check_beta(self.beta)
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")

    def parameters(self) -> list[Tensor]:
        return [self.W_m, self.W_f, self.head_m, self.head_f]


@dataclass
class ContrastiveBatch:
    S: np.ndarray
    D_pos: np.ndarray
    D_neg: np.ndarray
    L_pos: Tensor
    L_neg: Tensor

    @property
    def L_contrastive(self) -> Tensor:
        return self.L_pos + self.L_neg


def check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")


def _adj(g) -> np.ndarray:
    return g.adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)


def check_one_hot(Y: np.ndarray) -> None:
    y = np.asarray(Y)
    if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise LabelError("label matrix rows must be one-hot")


def concat_views(left: Tensor, Z: Tensor) -> Tensor:
    return ad.concat_cols(left, Z)


def fuse_view(C: Tensor, W: Tensor, activation: str = "elu") -> Tensor:
    h = C @ W
    return ad.elu(h) if activation == "elu" else h


def fuse_sum(Z_m: Tensor, Z_f: Tensor) -> Tensor:
    return Z_m + Z_f


def similarity_matrix(Z: Tensor, normalize: bool = True) -> Tensor:
    """Pairwise dot products of fused embeddings, cosine when ``normalize``."""
    if normalize:
        zero = np.flatnonzero(np.linalg.norm(Z.data, axis=1) <= 1e-12)
        if zero.size:
            logger.warning("similarity: %d all-zero embedding rows left unnormalised (first %d)", zero.size, zero[0])
        Z = ad.l2_normalize_rows(Z)
    return Z @ Z.T


def contrastive_loss(
    S: Tensor,
    A_m: Graph,
    A_f: Graph,
    Y: np.ndarray,
    delta: float,
    row_mask: np.ndarray | None = None,
) -> ContrastiveBatch:
    """Positive/negative pair losses over the two self-looped graphs.

    ``row_mask`` restricts which label rows enter the products; rows outside
    it contribute to neither term. ``None`` uses every row.
    """
    for g in (A_m, A_f):
        if isinstance(g, Graph) and not g.self_looped:
            raise ContractError("contrastive loss needs self-looped graphs")
    Y = np.asarray(Y, dtype=np.float64)
    check_one_hot(Y)
    am, af = _adj(A_m), _adj(A_f)
    n = S.shape[0]
    if am.shape != (n, n) or af.shape != (n, n) or Y.shape[0] != n:
        raise ShapeError(f"contrastive loss: S {S.shape}, graphs {am.shape}/{af.shape}, labels {Y.shape}")
    keep = np.ones(n) if row_mask is None else np.asarray(row_mask, dtype=np.float64)
    pos_support = am * af
    neg_support = (1.0 - am) * (1.0 - af)
    y_in = Tensor(Y * keep[:, None])
    y_out = Tensor((1.0 - Y) * keep[:, None])

    D_pos = ad.mul(S, Tensor(pos_support))
    D_neg = ad.mul(1.0 - S, Tensor(neg_support))
    L_pos = -ad.frobenius_norm_sq(D_pos @ y_in)
    L_neg = -ad.frobenius_norm_sq(ad.hinge_max0(D_neg, delta) @ y_out)
    return ContrastiveBatch(S.data, D_pos.data, D_neg.data, L_pos, L_neg)


def logits(Z_view: Tensor, head: Tensor) -> Tensor:
    return Z_view @ head


def classification_loss(Z_view: Tensor, head: Tensor, Y: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Summed (not averaged) cross-entropy over the masked nodes."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ContractError("classification loss needs at least one masked-in node")
    check_one_hot(Y[keep])
    target = Tensor(Y * keep[:, None])
    return -ad.sum(ad.mul(target, ad.log_softmax_rows(logits(Z_view, head))))


def degree_targets(A_ref) -> np.ndarray:
    return _adj(A_ref).sum(axis=1)


def diag_loss(S: Tensor, A_ref) -> Tensor:
    """(1/N) sum_ij (S_ij - deg_i)^2, every entry of row i pulled toward that row's degree."""
    if isinstance(A_ref, Graph) and not A_ref.self_looped:
        raise ContractError("diagonal loss needs a self-looped reference graph")
    n = S.shape[0]
    deg = degree_targets(A_ref)
    target = Tensor(np.repeat(deg[:, None], n, axis=1))
    return ad.sum(ad.square(S - target)) / n


def reference_adjacency(A_m: Graph, A_f: Graph, source: str = "average") -> np.ndarray:
    if source == "image":
        return A_m.adjacency
    if source == "clinical":
        return A_f.adjacency
    if source == "average":
        return 0.5 * (A_m.adjacency + A_f.adjacency)
    raise ValueError(f"diag reference must be image, clinical or average, got {source!r}")


def total_loss(L_m, L_f, L_contrastive, L_diag, beta: float):
    """(1 - beta)(L_m + L_f) + beta * L_contrastive + L_diag.

    Works on Tensors and on plain floats alike.
    """
    check_beta(beta)
    return (L_m + L_f) * (1.0 - beta) + L_contrastive * beta + L_diag
