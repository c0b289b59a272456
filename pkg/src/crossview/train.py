"""End-to-end training of the two-view graph model and cross-validation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import fusion as fl
from .autodiff import AdamState, Tensor, adam_step
from .data import MultimodalDataset, fixed_split, kfold_split
from .encoders import EncoderConfig, EncoderParams, encode, pretrain_autoencoder
from .gnn import GnnStack, gnn_encode, xavier
from .graph import Graph, add_self_loops, knn_graph, standardize
from .metrics import MetricsReport, evaluate

logger = logging.getLogger(__name__)

BACKBONES = {"identity": "identity", "dense": "dense_autoencoder", "conv": "conv_autoencoder"}
LOSS_COLUMNS = ("L_m", "L_f", "L_pos", "L_neg", "L_diag", "total")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, component: str, fold: int | None = None):
        where = f"fold {fold}, " if fold is not None else ""
        super().__init__(f"non-finite loss at {where}epoch {epoch} in component {component}")
        self.epoch = epoch
        self.component = component
        self.fold = fold


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 0.001
    knn_k: int = 5
    metric: str = "euclidean"
    gnn: str = "gat"
    gnn_layers: int = 2
    heads: int = 2
    hidden: int = 16
    out_dim: int = 16
    fuse_dim: int = 16
    leaky_slope: float = 0.2
    delta: float = 0.2
    beta: float = 0.5
    normalize_similarity: bool = True
    mask_contrastive_labels: bool = True
    contrastive_scale: str = "sum"
    diag_reference: str = "average"
    backbone: str = "conv"
    latent_dim: int = 12
    ae_epochs: int = 100
    ae_lr: float = 0.005
    protocol: str = "cv"
    folds: int = 5
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.gnn not in ("gat", "gcn"):
            raise ValueError(f"gnn must be gat or gcn, got {self.gnn!r}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {sorted(BACKBONES)}, got {self.backbone!r}")
        if self.protocol not in ("cv", "fixed"):
            raise ValueError(f"protocol must be cv or fixed, got {self.protocol!r}")
        if self.diag_reference not in ("image", "clinical", "average"):
            raise ValueError(f"diag_reference must be image, clinical or average, got {self.diag_reference!r}")
        if self.contrastive_scale not in ("sum", "pairs"):
            raise ValueError(f"contrastive_scale must be sum or pairs, got {self.contrastive_scale!r}")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"metric must be euclidean or cosine, got {self.metric!r}")
        fl.check_beta(self.beta)
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            kind=BACKBONES[self.backbone],
            latent_dim=self.latent_dim,
            pretrain_epochs=self.ae_epochs,
            pretrain_lr=self.ae_lr,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"int": int, "float": float, "str": str, "bool": bool}
        return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


@dataclass
class ModelState:
    gnn_m: GnnStack
    gnn_f: GnnStack
    fusion: FusionParams
    adam: AdamState
    # frozen preprocessing, kept so a checkpoint can rebuild the graphs
    image_mean: np.ndarray
    image_std: np.ndarray
    clinical_mean: np.ndarray
    clinical_std: np.ndarray

    def parameters(self) -> list[Tensor]:
        return [*self.gnn_m.parameters(), *self.gnn_f.parameters(), *self.fusion.parameters()]


FusionParams = fl.FusionParams


@dataclass
class FoldResult:
    state: ModelState
    report: MetricsReport
    test_index: np.ndarray
    probabilities: np.ndarray


@dataclass
class CVResult:
    pooled: MetricsReport
    folds: list[MetricsReport]
    fold_aucs: list[float]
    test_index: np.ndarray
    probabilities: np.ndarray
    states: list[ModelState] = field(default_factory=list)
    encoder: EncoderParams | None = None
    masks: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_aucs)) if self.fold_aucs else float("nan")

    @property
    def std_auc(self) -> float:
        return float(np.std(self.fold_aucs)) if self.fold_aucs else float("nan")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.folds]))

    def to_dict(self) -> dict:
        return {
            "pooled": self.pooled.to_dict(),
            "fold_auc_mean": self.mean_auc,
            "fold_auc_std": self.std_auc,
            "fold_accuracy_mean": self.mean_accuracy,
            "folds": [r.to_dict() for r in self.folds],
        }


def image_features(data: MultimodalDataset, config: TrainConfig) -> tuple[np.ndarray, EncoderParams | None]:
    """Image feature matrix for every patient, pretraining the autoencoder if needed.

    Pretraining sees images only, never labels, so one encoder serves all folds.
    """
    if data.embeddings is not None:
        return np.asarray(data.embeddings, dtype=np.float64), None
    cfg = config.encoder_config()
    if cfg.kind == "identity":
        return encode(data.images, None, cfg), None
    params, _ = pretrain_autoencoder(data.images, cfg, seed=config.seed)
    return encode(data.images, params), params


def build_graphs(Xm: np.ndarray, Xf: np.ndarray, config: TrainConfig) -> tuple[Graph, Graph]:
    gm = add_self_loops(knn_graph(Xm, config.knn_k, config.metric))
    gf = add_self_loops(knn_graph(Xf, config.knn_k, config.metric))
    return gm, gf


def init_state(d_image: int, d_clinical: int, n_classes: int, config: TrainConfig, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)
    kw = dict(
        hidden=config.hidden,
        out_dim=config.out_dim,
        n_layers=config.gnn_layers,
        heads=config.heads,
        rng=rng,
        leaky_slope=config.leaky_slope,
    )
    gnn_m = GnnStack.init(config.gnn, d_image, **kw)
    gnn_f = GnnStack.init(config.gnn, d_clinical, **kw)
    D = config.fuse_dim
    fusion = FusionParams(
        W_m=xavier(rng, d_image + config.out_dim, D),
        W_f=xavier(rng, d_clinical + config.out_dim, D),
        head_m=xavier(rng, D, n_classes),
        head_f=xavier(rng, D, n_classes),
        delta=config.delta,
        beta=config.beta,
    )
    z = np.zeros(0)
    state = ModelState(gnn_m, gnn_f, fusion, AdamState(), z, z, z, z)
    state.adam = AdamState.for_params(state.parameters())
    return state


@dataclass
class Forward:
    Z_m: Tensor  # graph embedding, image view
    Z_f: Tensor
    Zhat_m: Tensor  # fused projection, image view
    Zhat_f: Tensor
    Zhat: Tensor
    S: Tensor

    def probabilities(self, state: ModelState) -> np.ndarray:
        """Mean of the two heads' softmax outputs."""
        pm = np.exp(ad.log_softmax_rows(fl.logits(self.Zhat_m, state.fusion.head_m)).data)
        pf = np.exp(ad.log_softmax_rows(fl.logits(self.Zhat_f, state.fusion.head_f)).data)
        return 0.5 * (pm + pf)


def forward(state: ModelState, gm: Graph, gf: Graph, Xm: np.ndarray, Xf: np.ndarray, normalize: bool = True) -> Forward:
    xm, xf = Tensor(Xm), Tensor(Xf)
    Z_m = gnn_encode(gm, xm, state.gnn_m)
    Z_f = gnn_encode(gf, xf, state.gnn_f)
    Zhat_m = fl.fuse_view(fl.concat_views(xm, Z_m), state.fusion.W_m)
    Zhat_f = fl.fuse_view(fl.concat_views(xf, Z_f), state.fusion.W_f)
    Zhat = fl.fuse_sum(Zhat_m, Zhat_f)
    S = fl.similarity_matrix(Zhat, normalize=normalize)
    return Forward(Z_m, Z_f, Zhat_m, Zhat_f, Zhat, S)


def objective(
    fw: Forward,
    state: ModelState,
    gm: Graph,
    gf: Graph,
    Y_train: np.ndarray,
    train_mask: np.ndarray,
    config: TrainConfig,
    Y_full: np.ndarray | None = None,
) -> dict[str, Tensor]:
    """Every loss component plus the weighted total, as graph-attached tensors.

    ``Y_train`` must already be restricted to training rows. ``Y_full`` is only
    read when ``mask_contrastive_labels`` is off, which reproduces the
    unmasked loss and therefore lets test labels into the contrastive term.
    """
    p = state.fusion
    L_m = fl.classification_loss(fw.Zhat_m, p.head_m, Y_train, train_mask)
    L_f = fl.classification_loss(fw.Zhat_f, p.head_f, Y_train, train_mask)
    if config.mask_contrastive_labels:
        # test rows carry a placeholder class; the row mask drops them from both products
        Y_c = Y_train.copy()
        Y_c[~train_mask] = np.eye(Y_train.shape[1])[0]
        row_mask = train_mask
    else:
        if Y_full is None:
            raise ValueError("unmasked contrastive labels need the full label matrix")
        Y_c, row_mask = Y_full, None
    cb = fl.contrastive_loss(fw.S, gm, gf, Y_c, p.delta, row_mask)
    if config.contrastive_scale == "pairs":
        # divide by N^2 so the pair terms sit on the cross-entropy's scale
        inv = 1.0 / fw.S.shape[0] ** 2
        cb.L_pos, cb.L_neg = ad.scale(cb.L_pos, inv), ad.scale(cb.L_neg, inv)
    L_diag = fl.diag_loss(fw.S, fl.reference_adjacency(gm, gf, config.diag_reference))
    total = fl.total_loss(L_m, L_f, cb.L_contrastive, L_diag, p.beta)
    return {"L_m": L_m, "L_f": L_f, "L_pos": cb.L_pos, "L_neg": cb.L_neg, "L_diag": L_diag, "total": total}


def prepare_fold(
    Q: np.ndarray, clinical: np.ndarray, train_mask: np.ndarray, config: TrainConfig
) -> tuple[np.ndarray, np.ndarray, Graph, Graph, tuple[np.ndarray, ...]]:
    Xm, mu_m, sd_m = standardize(Q, train_mask)
    Xf, mu_f, sd_f = standardize(clinical, train_mask)
    gm, gf = build_graphs(Xm, Xf, config)
    return Xm, Xf, gm, gf, (mu_m, sd_m, mu_f, sd_f)


def train_one_fold(
    data: MultimodalDataset,
    config: TrainConfig,
    fold_masks: tuple[np.ndarray, np.ndarray],
    fold_index: int = 0,
    Q: np.ndarray | None = None,
) -> FoldResult:
    """Train on the fold's training rows and score its test rows.

    All patients sit in both graphs (transductive); only training labels reach
    the losses. ``Q`` is the image feature matrix; computed if omitted.
    """
    train_mask = np.asarray(fold_masks[0], dtype=bool)
    test_mask = np.asarray(fold_masks[1], dtype=bool)
    if Q is None:
        Q, _ = image_features(data, config)
    Y_train = data.labels * train_mask[:, None]
    Y_full = None if config.mask_contrastive_labels else data.labels

    Xm, Xf, gm, gf, stats = prepare_fold(Q, data.clinical, train_mask, config)
    state = init_state(Xm.shape[1], Xf.shape[1], data.labels.shape[1], config, config.seed + fold_index)
    state.image_mean, state.image_std, state.clinical_mean, state.clinical_std = stats
    params = state.parameters()

    history: list[dict[str, float]] = []
    for epoch in range(config.epochs):
        for prm in params:
            prm.zero_grad()
        fw = forward(state, gm, gf, Xm, Xf, config.normalize_similarity)
        losses = objective(fw, state, gm, gf, Y_train, train_mask, config, Y_full)
        row = {k: v.item() for k, v in losses.items()}
        for name in LOSS_COLUMNS:
            if not np.isfinite(row[name]):
                raise DivergenceError(epoch, name, fold_index)
        history.append(row)
        losses["total"].backward()
        adam_step(params, [p.grad for p in params], state.adam, config.lr)

    fw = forward(state, gm, gf, Xm, Xf, config.normalize_similarity)
    probs = fw.probabilities(state)[test_mask]
    # labels of test rows are read only here, after training is finished
    report = evaluate(probs, data.labels[test_mask])
    report.loss_history = history
    return FoldResult(state, report, np.flatnonzero(test_mask), probs)


def split(data: MultimodalDataset, config: TrainConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    if config.protocol == "fixed":
        return fixed_split(data.labels, config.test_fraction, config.seed)
    return kfold_split(data.labels, config.folds, config.seed)


def run_cv(data: MultimodalDataset, config: TrainConfig, keep_states: bool = False) -> CVResult:
    """Run every fold and aggregate.

    The pooled report scores the concatenated test predictions; per-fold AUCs
    are kept separately for their mean and spread.
    """
    Q, enc = image_features(data, config)
    results = []
    all_masks = split(data, config)
    for f, masks in enumerate(all_masks):
        res = train_one_fold(data, config, masks, fold_index=f, Q=Q)
        logger.info("fold %d: acc=%.3f auc=%s", f, res.report.accuracy, res.report.auc)
        results.append(res)
    idx = np.concatenate([r.test_index for r in results])
    probs = np.concatenate([r.probabilities for r in results])
    order = np.argsort(idx, kind="stable")
    idx, probs = idx[order], probs[order]
    pooled = evaluate(probs, data.labels[idx])
    fold_aucs = [r.report.auc for r in results if r.report.auc is not None]
    return CVResult(
        pooled=pooled,
        folds=[r.report for r in results],
        fold_aucs=fold_aucs,
        test_index=idx,
        probabilities=probs,
        states=[r.state for r in results] if keep_states else [],
        encoder=enc,
        masks=all_masks,
    )


def similarity_gap(S: np.ndarray, class_index: np.ndarray) -> tuple[float, float]:
    """Mean similarity over same-class and cross-class pairs (diagonal excluded)."""
    y = np.asarray(class_index)
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    return float(S[same & off].mean()), float(S[~same].mean())
