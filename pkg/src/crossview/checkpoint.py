"""Saving and restoring a trained fold model as a single .npz file."""

from __future__ import annotations

import io
import json

import numpy as np

from .autodiff import AdamState, Tensor
from .bundle import atomic_write_bytes
from .encoders import EncoderParams
from .fusion import FusionParams
from .gnn import GatLayerParams, GcnLayerParams, GnnStack
from .train import ModelState, TrainConfig


class CheckpointError(ValueError):
    pass


def _stack_arrays(prefix: str, stack: GnnStack) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(stack.layers):
        if isinstance(layer, GatLayerParams):
            for h, (W, a) in enumerate(zip(layer.W, layer.a)):
                out[f"{prefix}.{i}.W{h}"] = W.data
                out[f"{prefix}.{i}.a{h}"] = a.data
        else:
            out[f"{prefix}.{i}.W"] = layer.W.data
    return out


def _load_stack(prefix: str, arrs, cfg: TrainConfig) -> GnnStack:
    layers = []
    for i in range(cfg.gnn_layers):
        if cfg.gnn == "gat":
            W = [Tensor(arrs[f"{prefix}.{i}.W{h}"], requires_grad=True) for h in range(cfg.heads)]
            a = [Tensor(arrs[f"{prefix}.{i}.a{h}"], requires_grad=True) for h in range(cfg.heads)]
            layers.append(GatLayerParams(W, a, leaky_slope=cfg.leaky_slope))
        else:
            layers.append(GcnLayerParams(Tensor(arrs[f"{prefix}.{i}.W"], requires_grad=True)))
    return GnnStack(cfg.gnn, layers)


def save_checkpoint(
    path,
    config: TrainConfig,
    state: ModelState,
    encoder: EncoderParams | None,
    train_mask: np.ndarray,
    fold_index: int = 0,
) -> None:
    arrs: dict[str, np.ndarray] = {
        "config": np.array(json.dumps(config.to_dict(), sort_keys=True)),
        "fold_index": np.array(fold_index),
        "train_mask": np.asarray(train_mask, dtype=bool),
        "image_mean": state.image_mean,
        "image_std": state.image_std,
        "clinical_mean": state.clinical_mean,
        "clinical_std": state.clinical_std,
        "W_m": state.fusion.W_m.data,
        "W_f": state.fusion.W_f.data,
        "head_m": state.fusion.head_m.data,
        "head_f": state.fusion.head_f.data,
    }
    arrs.update(_stack_arrays("gnn_m", state.gnn_m))
    arrs.update(_stack_arrays("gnn_f", state.gnn_f))
    if encoder is not None:
        arrs["enc_input_shape"] = np.array(encoder.input_shape)
        for k, v in encoder.arrays().items():
            arrs[f"enc.{k}"] = v
    buf = io.BytesIO()
    np.savez(buf, **arrs)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[TrainConfig, ModelState, EncoderParams | None, np.ndarray]:
    try:
        arrs = dict(np.load(path, allow_pickle=False))
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    try:
        cfg = TrainConfig(**json.loads(str(arrs["config"])))
        fusion = FusionParams(
            *(Tensor(arrs[k], requires_grad=True) for k in ("W_m", "W_f", "head_m", "head_f")),
            delta=cfg.delta,
            beta=cfg.beta,
        )
        state = ModelState(
            _load_stack("gnn_m", arrs, cfg),
            _load_stack("gnn_f", arrs, cfg),
            fusion,
            AdamState(),
            arrs["image_mean"],
            arrs["image_std"],
            arrs["clinical_mean"],
            arrs["clinical_std"],
        )
        encoder = None
        enc_keys = [k for k in arrs if k.startswith("enc.")]
        if enc_keys:
            tensors = {k[4:]: Tensor(arrs[k]) for k in enc_keys}
            encoder = EncoderParams(cfg.encoder_config(), tuple(int(x) for x in arrs["enc_input_shape"]), tensors)
    except KeyError as e:
        raise CheckpointError(f"checkpoint {path} is missing entry {e}") from e
    return cfg, state, encoder, arrs["train_mask"]

