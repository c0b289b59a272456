"""Image feature extraction: identity passthrough or a pretrained autoencoder.

The autoencoder is trained on images alone (the API never takes labels) and is
frozen afterwards; only its encoder half is used to produce the image feature
matrix that feeds graph construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor


class DataError(ValueError):
    pass


class ConfigError(ValueError):
    pass


KINDS = ("identity", "dense_autoencoder", "conv_autoencoder")


@dataclass
class EncoderConfig:
    kind: str = "conv_autoencoder"
    latent_dim: int = 12
    channels: tuple[int, int] = (4, 8)
    kernel: int = 3
    stride: int = 2
    activation: str = "elu"  # or "linear"
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.005

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"encoder kind must be one of {KINDS}, got {self.kind!r}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.activation not in ("elu", "linear"):
            raise ConfigError(f"activation must be 'elu' or 'linear', got {self.activation!r}")


@dataclass
class EncoderParams:
    config: EncoderConfig
    input_shape: tuple[int, ...]  # per-sample shape seen at pretraining
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


def _act(cfg: EncoderConfig):
    return ad.elu if cfg.activation == "elu" else ad.identity


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-lim, lim, size=shape), requires_grad=True)


def conv_dims(h: int, w: int, cfg: EncoderConfig) -> list[tuple[int, int]]:
    """Spatial sizes after each encoder conv: [(h0, w0), (h1, w1), (h2, w2)]."""
    dims = [(h, w)]
    for _ in range(2):
        ph, pw = dims[-1]
        if ph < cfg.kernel or pw < cfg.kernel:
            raise ConfigError(f"image {h}x{w} too small for two {cfg.kernel}x{cfg.kernel} convs")
        dims.append(((ph - cfg.kernel) // cfg.stride + 1, (pw - cfg.kernel) // cfg.stride + 1))
    return dims


def init_params(cfg: EncoderConfig, input_shape: tuple[int, ...], seed: int) -> EncoderParams:
    rng = np.random.default_rng(seed)
    t: dict[str, Tensor] = {}
    if cfg.kind == "dense_autoencoder":
        d = int(np.prod(input_shape))
        L = cfg.latent_dim
        t["enc_w"] = _xavier(rng, d, L, (d, L))
        t["enc_b"] = Tensor(np.zeros(L), requires_grad=True)
        t["dec_w"] = _xavier(rng, L, d, (L, d))
        t["dec_b"] = Tensor(np.zeros(d), requires_grad=True)
    elif cfg.kind == "conv_autoencoder":
        if len(input_shape) != 3 or input_shape[0] != 1:
            raise ConfigError(f"conv autoencoder expects 1 x H x W images, got {input_shape}")
        _, h, w = input_shape
        if h != w:
            raise ConfigError(f"conv autoencoder expects square images, got {h}x{w}")
        dims = conv_dims(h, w, cfg)
        c1, c2 = cfg.channels
        k = cfg.kernel
        flat = c2 * dims[2][0] * dims[2][1]
        L = cfg.latent_dim
        t["conv1_k"] = _xavier(rng, k * k, c1 * k * k, (c1, 1, k, k))
        t["conv1_b"] = Tensor(np.zeros(c1), requires_grad=True)
        t["conv2_k"] = _xavier(rng, c1 * k * k, c2 * k * k, (c2, c1, k, k))
        t["conv2_b"] = Tensor(np.zeros(c2), requires_grad=True)
        t["lat_w"] = _xavier(rng, flat, L, (flat, L))
        t["lat_b"] = Tensor(np.zeros(L), requires_grad=True)
        t["unlat_w"] = _xavier(rng, L, flat, (L, flat))
        t["unlat_b"] = Tensor(np.zeros(flat), requires_grad=True)
        t["deconv2_k"] = _xavier(rng, c2 * k * k, c1 * k * k, (c2, c1, k, k))
        t["deconv2_b"] = Tensor(np.zeros(c1), requires_grad=True)
        t["deconv1_k"] = _xavier(rng, c1 * k * k, k * k, (c1, 1, k, k))
        t["deconv1_b"] = Tensor(np.zeros(1), requires_grad=True)
    else:
        raise ConfigError("identity encoder has no parameters")
    return EncoderParams(cfg, tuple(input_shape), t)


def _encode_t(x: np.ndarray, p: EncoderParams) -> Tensor:
    cfg, t = p.config, p.tensors
    act = _act(cfg)
    n = x.shape[0]
    if cfg.kind == "dense_autoencoder":
        h = Tensor(x.reshape(n, -1))
        return act(ad.add_row_bias(h @ t["enc_w"], t["enc_b"]))
    h = Tensor(x)
    h = act(ad.conv2d(h, t["conv1_k"], cfg.stride, t["conv1_b"]))
    h = act(ad.conv2d(h, t["conv2_k"], cfg.stride, t["conv2_b"]))
    h = ad.reshape(h, (n, -1))
    return ad.add_row_bias(h @ t["lat_w"], t["lat_b"])


def _decode_t(z: Tensor, p: EncoderParams) -> Tensor:
    cfg, t = p.config, p.tensors
    act = _act(cfg)
    if cfg.kind == "dense_autoencoder":
        return ad.add_row_bias(z @ t["dec_w"], t["dec_b"])
    _, h, w = p.input_shape
    dims = conv_dims(h, w, cfg)
    c1, c2 = cfg.channels
    k, s = cfg.kernel, cfg.stride
    n = z.shape[0]
    y = act(ad.add_row_bias(z @ t["unlat_w"], t["unlat_b"]))
    y = ad.reshape(y, (n, c2, dims[2][0], dims[2][1]))
    pad1 = dims[1][0] - ((dims[2][0] - 1) * s + k)
    y = act(ad.conv_transpose2d(y, t["deconv2_k"], s, pad1, t["deconv2_b"]))
    pad0 = dims[0][0] - ((dims[1][0] - 1) * s + k)
    return ad.conv_transpose2d(y, t["deconv1_k"], s, pad0, t["deconv1_b"])


def _check_input(images: np.ndarray, p: EncoderParams | None = None) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("images contain non-finite values")
    if p is not None and tuple(x.shape[1:]) != p.input_shape:
        raise ConfigError(f"images have per-sample shape {x.shape[1:]}, encoder was built for {p.input_shape}")
    return x


def pretrain_autoencoder(images: np.ndarray, cfg: EncoderConfig, seed: int = 0) -> tuple[EncoderParams, list[float]]:
    """Fit the autoencoder to minimise mean squared reconstruction error.

    The returned history holds the loss evaluated at the start of each epoch,
    before that epoch's Adam step.
    """
    if cfg.kind == "identity":
        raise ConfigError("identity encoder cannot be pretrained")
    x = _check_input(images)
    p = init_params(cfg, x.shape[1:], seed)
    params = list(p.tensors.values())
    opt = Adam(params, lr=cfg.pretrain_lr)
    target = Tensor(x if cfg.kind == "conv_autoencoder" else x.reshape(x.shape[0], -1))
    history: list[float] = []
    for _ in range(cfg.pretrain_epochs):
        opt.zero_grad()
        recon = _decode_t(_encode_t(x, p), p)
        loss = ad.mean(ad.square(recon - target))
        history.append(loss.item())
        loss.backward()
        opt.step()
    for prm in params:
        prm.requires_grad = False
        prm.grad = None
    return p, history


def encode(images: np.ndarray, params: EncoderParams | None, cfg: EncoderConfig | None = None) -> np.ndarray:
    """Image feature matrix, one row per patient.

    ``params=None`` (or an identity config) flattens the images unchanged.
    """
    x = np.asarray(images, dtype=np.float64)
    if params is None:
        if cfg is not None and cfg.kind != "identity":
            raise ConfigError(f"{cfg.kind} encoder needs pretrained parameters")
        return x.reshape(x.shape[0], -1).copy()
    x = _check_input(x, params)
    return _encode_t(x, params).data.copy()


def reconstruct(images: np.ndarray, params: EncoderParams) -> np.ndarray:
    x = _check_input(images, params)
    out = _decode_t(_encode_t(x, params), params).data
    return out.reshape(x.shape)
