"""Convolutional classifiers and the conditional image generator.

The classifier is a small residual network: stem conv, three basic blocks
with channel doubling and stride-2 downsampling, global average pooling and
an affine head. Teacher and student differ only in channel widths (the
student defaults to half width). The generator maps (noise, label) to an
image in [0, 1]: one-hot labels are concatenated to the noise, an affine
layer produces a base-resolution feature map, and two upsample+conv blocks
bring it to 4x the base size with a sigmoid output.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Conv2d, Linear, Network
from .tensor import NumericalError, Tensor


class InputError(ValueError):
    """Caller-supplied data violates an interface precondition."""


def _check_finite(t: Tensor, what: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericalError(f"non-finite values in {what}")
    return t


def softmax_with_temperature(logits, tau: float = 1.0) -> np.ndarray:
    """Row-wise softmax of logits/tau, max-subtracted for stability."""
    if tau <= 0:
        raise InputError(f"temperature must be positive, got {tau}")
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    z = z / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class BasicBlock(Network):
    def __init__(self, in_ch: int, out_ch: int, stride: int, *, rng, dtype):
        super().__init__()
        self.conv1 = self.register("conv1", Conv2d(in_ch, out_ch, stride=stride, rng=rng, dtype=dtype))
        self.bn1 = self.register("bn1", BatchNorm2d(out_ch, dtype=dtype))
        self.conv2 = self.register("conv2", Conv2d(out_ch, out_ch, rng=rng, dtype=dtype))
        self.bn2 = self.register("bn2", BatchNorm2d(out_ch, dtype=dtype))
        self.project = stride != 1 or in_ch != out_ch
        if self.project:
            self.conv_sc = self.register("conv_sc", Conv2d(in_ch, out_ch, kernel=1, stride=stride,
                                                           padding=0, rng=rng, dtype=dtype))
            self.bn_sc = self.register("bn_sc", BatchNorm2d(out_ch, dtype=dtype))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x), training))
        out = self.bn2(self.conv2(out), training)
        shortcut = self.bn_sc(self.conv_sc(x), training) if self.project else x
        return T.relu(T.add(out, shortcut))


class ConvClassifier(Network):
    """Small residual classifier; logits shape (batch, num_classes)."""

    def __init__(self, num_classes: int, in_channels: int = 3,
                 widths: tuple[int, int, int] = (16, 32, 64),
                 stem_stride: int = 1, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.widths = tuple(widths)
        self.stem_stride = stem_stride
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
        w0, w1, w2 = self.widths
        self.stem = self.register("stem", Conv2d(in_channels, w0, stride=stem_stride,
                                                 rng=rng, dtype=dtype))
        self.bn0 = self.register("bn0", BatchNorm2d(w0, dtype=dtype))
        self.block1 = self.register("block1", BasicBlock(w0, w0, 1, rng=rng, dtype=dtype))
        self.block2 = self.register("block2", BasicBlock(w0, w1, 2, rng=rng, dtype=dtype))
        self.block3 = self.register("block3", BasicBlock(w1, w2, 2, rng=rng, dtype=dtype))
        self.head = self.register("head", Linear(w2, num_classes, rng=rng, dtype=dtype))

    def descriptor(self) -> dict:
        return {"kind": "conv_classifier", "num_classes": self.num_classes,
                "in_channels": self.in_channels, "widths": list(self.widths),
                "stem_stride": self.stem_stride}

    def forward(self, x, training: bool = False) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t.data.ndim != 4 or t.data.shape[1] != self.in_channels:
            raise InputError(f"expected images (batch, {self.in_channels}, H, W), "
                             f"got {t.data.shape}")
        h = T.relu(self.bn0(self.stem(t), training))
        h = self.block1.forward(h, training)
        h = self.block2.forward(h, training)
        h = self.block3.forward(h, training)
        pooled = T.tmean(T.tmean(h, axis=3), axis=2)  # global average pool
        logits = self.head(pooled)
        return _check_finite(logits, "classifier logits")

    __call__ = forward


class ConditionalGenerator(Network):
    """g(z, y): noise plus one-hot label to an image batch in [0, 1]."""

    def __init__(self, num_classes: int, latent_dim: int = 1024, base_size: int = 8,
                 base_channels: int = 256, out_channels: int = 3,
                 seed: int = 0, dtype=np.float32):
        super().__init__()
        self.num_classes = num_classes
        self.latent_dim = latent_dim
        self.base_size = base_size
        self.base_channels = base_channels
        self.out_channels = out_channels
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E4]))
        c0 = base_channels
        self.l1 = self.register("l1", Linear(latent_dim + num_classes,
                                             c0 * base_size * base_size, rng=rng, dtype=dtype))
        self.bn0 = self.register("bn0", BatchNorm2d(c0, dtype=dtype))
        self.conv1 = self.register("conv1", Conv2d(c0, c0 // 2, rng=rng, dtype=dtype))
        self.bn1 = self.register("bn1", BatchNorm2d(c0 // 2, dtype=dtype))
        self.conv2 = self.register("conv2", Conv2d(c0 // 2, c0 // 4, rng=rng, dtype=dtype))
        self.bn2 = self.register("bn2", BatchNorm2d(c0 // 4, dtype=dtype))
        self.conv3 = self.register("conv3", Conv2d(c0 // 4, out_channels, bias=True,
                                                   rng=rng, dtype=dtype))

    def descriptor(self) -> dict:
        return {"kind": "conditional_generator", "num_classes": self.num_classes,
                "latent_dim": self.latent_dim, "base_size": self.base_size,
                "base_channels": self.base_channels, "out_channels": self.out_channels}

    @property
    def image_size(self) -> int:
        return self.base_size * 4

    def forward(self, z, labels: np.ndarray) -> Tensor:
        # the generator always runs on batch statistics (training mode)
        zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        if zt.data.ndim != 2 or zt.data.shape[1] != self.latent_dim:
            raise InputError(f"expected noise (batch, {self.latent_dim}), got {zt.data.shape}")
        labels = np.asarray(labels)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InputError(f"label out of range [0, {self.num_classes}): "
                             f"{labels[(labels < 0) | (labels >= self.num_classes)][0]}")
        onehot = np.zeros((labels.shape[0], self.num_classes), dtype=self.dtype)
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        h = self.l1(T.concat([zt, Tensor(onehot)], axis=1))
        h = T.reshape(h, (-1, self.base_channels, self.base_size, self.base_size))
        h = self.bn0(h, True)
        h = T.leaky_relu(self.bn1(self.conv1(T.upsample2x(h)), True), 0.2)
        h = T.leaky_relu(self.bn2(self.conv2(T.upsample2x(h)), True), 0.2)
        images = T.sigmoid(self.conv3(h))
        return _check_finite(images, "generated images")

    __call__ = forward


def build_from_descriptor(desc: dict, seed: int = 0, dtype=np.float32) -> Network:
    kind = desc.get("kind")
    if kind == "conv_classifier":
        return ConvClassifier(desc["num_classes"], desc["in_channels"],
                              tuple(desc["widths"]), desc.get("stem_stride", 1),
                              seed=seed, dtype=dtype)
    if kind == "conditional_generator":
        return ConditionalGenerator(desc["num_classes"], desc["latent_dim"], desc["base_size"],
                                    desc["base_channels"], desc["out_channels"],
                                    seed=seed, dtype=dtype)
    raise ValueError(f"unknown architecture kind: {kind!r}")
