"""Training losses: weighted softmax cross entropy, the blurred-Sobel contour
loss, and their combination used during finetuning.

All losses take logits as a Tensor of shape N x 3 x H x W and integer label
maps of shape N x H x W, and are differentiable w.r.t. the logits. The
contour path uses replicate padding so image borders do not register as
class edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

N_CLASSES = 3

# standard 3x3 Sobel pair: horizontal-gradient kernel and its transpose
SOBEL_H = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_V = SOBEL_H.T.copy()


@dataclass
class LossConfig:
    """Loss weights and filter parameters.

    Hand and object carry a cross-entropy weight of 5 against 1 for the
    background; the combined finetuning loss mixes cross entropy and the
    contour term with weights alpha and beta. `normalize_logits` compares
    softmax class maps against one-hot labels on a shared [0,1] scale;
    switch it off to feed raw logits into the contour term.
    """

    class_weights: tuple = (1.0, 5.0, 5.0)
    alpha: float = 1.0
    beta: float = 0.005
    gaussian_sigma: float = 2.121
    gaussian_size: int = 5
    sobel_epsilon: float = 1e-8
    normalize_logits: bool = True

    def __post_init__(self):
        if any(w <= 0 for w in self.class_weights):
            raise ValueError(f"class weights must be positive: {self.class_weights}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.gaussian_size % 2 == 0:
            raise ValueError(f"gaussian_size must be odd, got {self.gaussian_size}")


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    n, c, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        bad = int(labels.max() if labels.max() >= c else labels.min())
        raise ValueError(f"label value {bad} outside 0..{c - 1}")
    return labels


def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES,
            dtype=np.float64) -> Tensor:
    """Expand an integer label map to per-class binary channel maps."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label value outside 0..{n_classes - 1}")
    n, h, w = labels.shape
    out = np.zeros((n, n_classes, h, w), dtype=dtype)
    np.put_along_axis(out, labels[:, None].astype(np.intp), 1.0, axis=1)
    return Tensor(out)


def weighted_softmax_ce(logits: Tensor, labels: np.ndarray,
                        weights=(1.0, 5.0, 5.0)) -> Tensor:
    """Mean over pixels of weight(y) * (-log softmax(x)[y]).

    Log-probabilities are computed via max-subtraction so arbitrarily large
    logits stay finite.
    """
    labels = _check_labels(logits, labels)
    n, c, h, w = logits.shape
    wts = np.asarray(weights, dtype=logits.dtype)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = np.take_along_axis(logp, labels[:, None].astype(np.intp), axis=1)[:, 0]
    wmap = wts[labels]
    npix = n * h * w
    value = -(wmap * picked).sum(dtype=logits.dtype) / npix

    def bwd(g):
        p = np.exp(logp)
        delta = p.copy()
        idx = labels[:, None].astype(np.intp)
        np.put_along_axis(
            delta, idx, np.take_along_axis(delta, idx, axis=1) - 1.0, axis=1)
        logits.accumulate_grad(delta * wmap[:, None] * (g.reshape(()) / npix))

    return T._make(np.asarray(value, dtype=logits.dtype).reshape(1, 1, 1, 1),
                   (logits,), bwd)


def sobel_contour(class_maps: Tensor, eps: float = 1e-8) -> Tensor:
    """Summed Sobel gradient magnitude over the non-background channels.

    Per channel l in {1, 2}: sqrt((K_h * M_l)^2 + (K_v * M_l)^2 + eps);
    the eps keeps the square root differentiable on flat regions. Output
    is a single-channel map per frame.
    """
    if class_maps.shape[1] != N_CLASSES:
        raise ShapeError(f"expected {N_CLASSES} class channels, got {class_maps.shape}")
    kh = Tensor(SOBEL_H.reshape(1, 1, 3, 3).astype(class_maps.dtype))
    kv = Tensor(SOBEL_V.reshape(1, 1, 3, 3).astype(class_maps.dtype))
    total = None
    for l in range(1, N_CLASSES):
        ch = T.slice_channels(class_maps, l, l + 1)
        gx = T.conv2d(ch, kh, padding="replicate")
        gy = T.conv2d(ch, kv, padding="replicate")
        mag = T.sqrt(T.elementwise_mul(gx, gx) + T.elementwise_mul(gy, gy), eps=eps)
        total = mag if total is None else total + mag
    return total


def gaussian_kernel(sigma: float = 2.121, size: int = 5,
                    dtype=np.float64) -> np.ndarray:
    """size x size kernel with G(i,j) proportional to exp(-(i^2+j^2)/(2 sigma^2)),
    normalized to sum exactly 1."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    half = size // 2
    ii, jj = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1),
                         indexing="ij")
    k = np.exp(-(ii ** 2 + jj ** 2) / (2.0 * sigma ** 2))
    return (k / k.sum()).astype(dtype)


def gaussian_blur(contour: Tensor, sigma: float = 2.121, size: int = 5) -> Tensor:
    """Blur a single-channel contour map; constants pass through unchanged
    because the kernel is normalized."""
    if contour.shape[1] != 1:
        raise ShapeError(f"contour maps are single-channel, got {contour.shape}")
    k = Tensor(gaussian_kernel(sigma, size, dtype=contour.dtype).reshape(1, 1, size, size))
    return T.conv2d(contour, k, padding="replicate")


def contour_loss(logits: Tensor, labels: np.ndarray,
                 cfg: LossConfig = LossConfig()) -> Tensor:
    """L2 distance between blurred contour maps of the predicted class maps
    and the one-hot labels, averaged over batch * H * W pixels."""
    labels = _check_labels(logits, labels)
    pred_maps = T.softmax_channels(logits) if cfg.normalize_logits else logits
    label_maps = one_hot(labels, logits.shape[1], dtype=logits.dtype)

    def blurred(maps):
        return gaussian_blur(sobel_contour(maps, cfg.sobel_epsilon),
                             cfg.gaussian_sigma, cfg.gaussian_size)

    d = blurred(label_maps) - blurred(pred_maps)
    return T.mean_all(T.elementwise_mul(d, d))


def finetune_loss(logits: Tensor, labels: np.ndarray,
                  cfg: LossConfig = LossConfig()) -> Tensor:
    """alpha * cross entropy + beta * contour loss; with beta = 0 this is
    exactly the base loss."""
    base = T.scale(weighted_softmax_ce(logits, labels, cfg.class_weights), cfg.alpha)
    if cfg.beta == 0.0:
        return base
    return base + T.scale(contour_loss(logits, labels, cfg), cfg.beta)
