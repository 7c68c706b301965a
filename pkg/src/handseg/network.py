"""Toy-scale DenseAttentionSeg.

A strided-convolution encoder produces one feature map per level (level 1
finest, level n coarsest, sizes halving per level). Every level feeds a
skip connection that is gated by two attention maps: the fine attention is
the element-wise product of squeezed, downsampled features from all lower
levels, and the coarse attention mirrors that from all upper levels. The
decoder walks from level n back to full resolution with one transposed
convolution per level plus a stride-1 refinement, concatenating the gated
skip at each step, and ends in a 1x1 convolution to 3 class logits.

Squeeze blocks (1x1 then 3x3 convolution, both to k channels, ReLU after
each) are parameterized per (source level, consumer level) pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .tensor import Tensor


@dataclass
class ModelConfig:
    n_levels: int = 4
    squeeze_channels: int = 8
    channels: tuple = (16, 32, 64, 64)
    input_size: int | None = None  # informative; forward validates divisibility

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.n_levels < 2:
            raise ValueError(f"need at least 2 levels, got {self.n_levels}")
        if self.squeeze_channels < 1:
            raise ValueError("squeeze_channels must be >= 1")
        if len(self.channels) != self.n_levels:
            raise ValueError(
                f"channel schedule {self.channels} does not cover {self.n_levels} levels")

    def to_text(self) -> str:
        lines = [
            f"n_levels = {self.n_levels}",
            f"squeeze_channels = {self.squeeze_channels}",
            "channels = " + ",".join(str(c) for c in self.channels),
            f"input_size = {self.input_size if self.input_size else 'none'}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        size = kv.get("input_size", "none")
        return cls(
            n_levels=int(kv["n_levels"]),
            squeeze_channels=int(kv["squeeze_channels"]),
            channels=tuple(int(c) for c in kv["channels"].split(",")),
            input_size=None if size == "none" else int(size),
        )


def normalize_depth(depth: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Per-frame zero-mean/unit-scale over valid pixels; invalid (zero)
    depth becomes a fixed -1 sentinel."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        depth = depth[None, None]
    elif depth.ndim == 3:
        depth = depth[:, None]
    out = np.empty_like(depth)
    for i in range(depth.shape[0]):
        frame = depth[i, 0]
        valid = frame > 0
        if not valid.any():
            out[i, 0] = -1.0
            continue
        mu = frame[valid].mean()
        sd = frame[valid].std()
        if sd < 1e-6:
            sd = 1.0
        norm = (frame - mu) / sd
        norm[~valid] = -1.0
        out[i, 0] = norm
    return out.astype(dtype)


def predict(logits) -> np.ndarray:
    """Per-pixel argmax over channels; ties resolve to the lowest class."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(data, axis=1).astype(np.uint8)


class DenseAttentionNet:
    """Parameters live in `params` (name -> Tensor) and normalization
    running statistics in `stats` (name -> 1-D ndarray)."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, np.ndarray] = {}
        self._build(np.random.default_rng([seed, 0xC0DE]))

    # -- construction -------------------------------------------------

    def _weight(self, rng, name, shape):
        fan_in = shape[1] * shape[2] * shape[3]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        self.params[name] = Tensor(w.astype(self.dtype), requires_grad=True)

    def _bias(self, name, channels):
        self.params[name] = Tensor(np.zeros((1, channels, 1, 1), dtype=self.dtype),
                                   requires_grad=True)

    def _norm(self, name, channels):
        self.params[f"{name}.gamma"] = Tensor(
            np.ones((1, channels, 1, 1), dtype=self.dtype), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(
            np.zeros((1, channels, 1, 1), dtype=self.dtype), requires_grad=True)
        self.stats[f"{name}.mean"] = np.zeros(channels, dtype=np.float64)
        self.stats[f"{name}.var"] = np.ones(channels, dtype=np.float64)

    def _build(self, rng):
        cfg = self.cfg
        k = cfg.squeeze_channels
        chans = cfg.channels
        prev = 1
        for i in range(1, cfg.n_levels + 1):
            c = chans[i - 1]
            self._weight(rng, f"enc{i}.conv1.w", (c, prev, 3, 3))
            self._norm(f"enc{i}.bn1", c)
            self._weight(rng, f"enc{i}.conv2.w", (c, c, 3, 3))
            self._norm(f"enc{i}.bn2", c)
            prev = c
        for i in range(1, cfg.n_levels + 1):  # consumer level
            for j in range(1, cfg.n_levels + 1):  # source level
                name = f"squeeze{j}to{i}"
                self._weight(rng, f"{name}.conv1.w", (k, chans[j - 1], 1, 1))
                self._bias(f"{name}.conv1.b", k)
                self._weight(rng, f"{name}.conv2.w", (k, k, 3, 3))
                self._bias(f"{name}.conv2.b", k)
        dk = 2 * k
        self._weight(rng, f"dec{cfg.n_levels}.deconv.w", (dk, k, 4, 4))
        self._norm(f"dec{cfg.n_levels}.bn", dk)
        for i in range(cfg.n_levels - 1, 1, -1):
            self._weight(rng, f"dec{i}.deconv.w", (dk, 3 * k, 4, 4))
            self._norm(f"dec{i}.bn", dk)
        self._weight(rng, "refine.deconv.w", (dk, 3 * k, 3, 3))
        self._norm("refine.bn", dk)
        self._weight(rng, "head.w", (3, dk, 1, 1))
        self._bias("head.b", 3)

    # -- forward pieces ------------------------------------------------

    def _bn(self, x, name, training, update_stats):
        return T.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                            self.stats[f"{name}.mean"], self.stats[f"{name}.var"],
                            training=training, update_stats=update_stats)

    def _encode(self, x, training, update_stats):
        levels = []
        for i in range(1, self.cfg.n_levels + 1):
            stride = 1 if i == 1 else 2
            x = T.conv2d(x, self.params[f"enc{i}.conv1.w"], stride=stride)
            x = T.relu(self._bn(x, f"enc{i}.bn1", training, update_stats))
            x = T.conv2d(x, self.params[f"enc{i}.conv2.w"])
            x = T.relu(self._bn(x, f"enc{i}.bn2", training, update_stats))
            levels.append(x)
        return levels

    def squeeze_block(self, features: Tensor, source: int, consumer: int) -> Tensor:
        """Unify a level's features to k channels for one consumer level."""
        name = f"squeeze{source}to{consumer}"
        x = T.conv2d(features, self.params[f"{name}.conv1.w"])
        x = T.relu(T.add_channel_bias(x, self.params[f"{name}.conv1.b"]))
        x = T.conv2d(x, self.params[f"{name}.conv2.w"])
        return T.relu(T.add_channel_bias(x, self.params[f"{name}.conv2.b"]))

    def fine_attention(self, levels, i: int) -> Tensor:
        """Product of squeezed, downsampled features from all levels below i;
        level 1 gets the empty product (all ones)."""
        n, _, h, w = levels[i - 1].shape
        out = None
        for j in range(i - 1, 0, -1):
            sq = self.squeeze_block(levels[j - 1], j, i)
            sq = T.bilinear_resample(sq, h, w)
            out = sq if out is None else T.elementwise_mul(out, sq)
        if out is None:
            return T.ones((n, self.cfg.squeeze_channels, h, w), dtype=self.dtype)
        return out

    def coarse_attention(self, levels, i: int) -> Tensor:
        """Mirror of the fine attention over the levels above i."""
        n, _, h, w = levels[i - 1].shape
        out = None
        for j in range(i + 1, self.cfg.n_levels + 1):
            sq = self.squeeze_block(levels[j - 1], j, i)
            sq = T.bilinear_resample(sq, h, w)
            out = sq if out is None else T.elementwise_mul(out, sq)
        if out is None:
            return T.ones((n, self.cfg.squeeze_channels, h, w), dtype=self.dtype)
        return out

    def attend_skip(self, levels, i: int, attention: bool = True) -> Tensor:
        """Squeezed level features gated by both attention maps. With
        attention disabled the gates are ones and this is a plain skip."""
        skip = self.squeeze_block(levels[i - 1], i, i)
        if not attention:
            return skip
        fine = self.fine_attention(levels, i)
        coarse = self.coarse_attention(levels, i)
        if fine.shape != skip.shape or coarse.shape != skip.shape:
            raise T.ShapeError(
                f"attention maps {fine.shape}/{coarse.shape} do not match skip {skip.shape}")
        return T.elementwise_mul(T.elementwise_mul(skip, fine), coarse)

    def forward(self, depth: np.ndarray, training: bool = False,
                attention: bool = True, update_stats: bool = True) -> Tensor:
        """Depth (N,1,H,W) or (N,H,W) in millimeters -> logits N x 3 x H x W."""
        x = Tensor(normalize_depth(depth, self.dtype))
        n_levels = self.cfg.n_levels
        need = 2 ** (n_levels - 1)
        _, _, h, w = x.shape
        if h % need or w % need:
            raise T.ShapeError(
                f"input {h}x{w} must be divisible by {need} for {n_levels} levels")

        upd = update_stats and training
        levels = self._encode(x, training, upd)
        state = self.attend_skip(levels, n_levels, attention)
        for i in range(n_levels, 1, -1):
            y = T.transposed_conv2d(state, self.params[f"dec{i}.deconv.w"], stride=2)
            y = T.relu(self._bn(y, f"dec{i}.bn", training, upd))
            state = T.concat_channels([y, self.attend_skip(levels, i - 1, attention)])
        y = T.transposed_conv2d(state, self.params["refine.deconv.w"], stride=1)
        y = T.relu(self._bn(y, "refine.bn", training, upd))
        logits = T.conv2d(y, self.params["head.w"])
        return T.add_channel_bias(logits, self.params["head.b"])

    # -- parameter plumbing ---------------------------------------------

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict:
        out = {name: p.data for name, p in self.params.items()}
        for name, arr in self.stats.items():
            out[f"stats.{name}"] = arr
        return out

    def load_state(self, arrays: dict):
        for name, p in self.params.items():
            p.data = np.asarray(arrays[name], dtype=self.dtype).reshape(p.shape)
        for name in self.stats:
            self.stats[name] = np.asarray(
                arrays[f"stats.{name}"], dtype=np.float64).reshape(-1).copy()

    def save(self, path):
        """Checkpoint to the binary container; the model configuration goes
        to `<path>.cfg` as a key = value text document."""
        path = Path(path)
        save_tensors(path, self.state_arrays())
        Path(str(path) + ".cfg").write_text(self.cfg.to_text())

    @classmethod
    def load(cls, path) -> "DenseAttentionNet":
        path = Path(path)
        cfg = ModelConfig.from_text(Path(str(path) + ".cfg").read_text())
        net = cls(cfg)
        net.load_state(load_tensors(path))
        return net
