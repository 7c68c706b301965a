"""Two-phase training harness.

Phase 1 minimizes the weighted softmax cross entropy; phase 2 finetunes
with the combined contour loss (alpha = 1.0, beta = 0.005). Both phases
add a small quadratic penalty on the normalization scale/offset
parameters. Optimization is Adam with step-decayed learning rate;
augmentation is random flips, rotation, and depth noise on valid pixels.

Runs are reproducible: the same seed yields byte-identical training logs
and checkpoints. Log lines are space-separated key=value records, one per
epoch, plus one `boundary` record per phase end evaluated at the frozen
phase-end parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .losses import LossConfig, contour_loss, finetune_loss, weighted_softmax_ce
from .metrics import ConfusionMatrix, hand_object_mean_iou, pixel_accuracy
from .network import DenseAttentionNet, ModelConfig, predict
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-size recipe uses decay_every_steps=80000
    and 140 + 10 epochs at the same batch size and learning rate."""

    batch_size: int = 4
    lr0: float = 0.001
    decay_factor: float = 0.8
    decay_every_steps: int = 500
    epochs_base: int = 20
    epochs_finetune: int = 5
    rotation_range_deg: float = 15.0
    depth_noise_sigma_mm: float = 2.0
    norm_penalty_weight: float = 0.001
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs_base < 0 or self.epochs_finetune < 0:
            raise ValueError("batch size and epoch counts must be positive")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError(f"decay_factor must be in (0,1), got {self.decay_factor}")
        if self.lr0 <= 0 or self.decay_every_steps < 1:
            raise ValueError("learning-rate schedule parameters must be positive")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.decay_factor ** (step // cfg.decay_every_steps)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def _rotate(depth: np.ndarray, labels: np.ndarray, angle_deg: float):
    """Rotate both maps about the image center (positive angle turns image
    content counterclockwise); depth is resampled bilinearly, labels with
    nearest-neighbor, out-of-frame becomes invalid/background."""
    h, w = depth.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = math.radians(angle_deg)
    cos, sin = math.cos(rad), math.sin(rad)
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = rr - cy, cc - cx
    src_c = cos * dx + sin * dy + cx
    src_r = -sin * dx + cos * dy + cy

    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr, fc = src_r - r0, src_c - c0

    def sample(arr, ri, ci):
        ok = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.zeros(ri.shape, dtype=np.float64)
        out[ok] = arr[ri[ok], ci[ok]]
        return out

    d = depth.astype(np.float64)
    rot_depth = (sample(d, r0, c0) * (1 - fr) * (1 - fc)
                 + sample(d, r0, c0 + 1) * (1 - fr) * fc
                 + sample(d, r0 + 1, c0) * fr * (1 - fc)
                 + sample(d, r0 + 1, c0 + 1) * fr * fc)

    rn = np.rint(src_r).astype(int)
    cn = np.rint(src_c).astype(int)
    ok = (rn >= 0) & (rn < h) & (cn >= 0) & (cn < w)
    rot_labels = np.zeros_like(labels)
    rot_labels[ok] = labels[rn[ok], cn[ok]]
    return rot_depth, rot_labels


def augment(depth: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
            rotation_range_deg: float = 15.0,
            noise_sigma_mm: float = 2.0) -> tuple:
    """Independent 50% horizontal/vertical flips, uniform rotation in the
    given range, and Gaussian depth noise on valid pixels only. Labels are
    never perturbed by noise."""
    depth = np.asarray(depth, dtype=np.float64)
    labels = np.asarray(labels)
    if rng.random() < 0.5:
        depth, labels = depth[:, ::-1], labels[:, ::-1]
    if rng.random() < 0.5:
        depth, labels = depth[::-1], labels[::-1]
    angle = rng.uniform(-rotation_range_deg, rotation_range_deg)
    if angle != 0.0:
        depth, labels = _rotate(depth, labels, angle)
    else:
        depth, labels = depth.copy(), labels.copy()
    if noise_sigma_mm > 0.0:
        valid = depth > 0
        noise = rng.normal(0.0, noise_sigma_mm, size=depth.shape)
        depth[valid] = np.maximum(depth[valid] + noise[valid], 1.0)
    return depth, labels


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, state: AdamState, lr: float):
    """Standard bias-corrected Adam update, in place. Parameters without a
    gradient are left untouched; a non-finite gradient aborts."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def split_frames(frames) -> tuple:
    """Deterministic 90/10 split by frame index (every tenth frame val)."""
    train = [f for i, f in enumerate(frames) if i % 10 != 9]
    val = [f for i, f in enumerate(frames) if i % 10 == 9]
    return train, val


def _norm_penalty(net: DenseAttentionNet, weight: float) -> Tensor:
    total = None
    for name, p in net.params.items():
        if name.endswith(".gamma") or name.endswith(".beta"):
            term = T.sum_all(T.elementwise_mul(p, p))
            total = term if total is None else total + term
    return T.scale(total, weight)


def _batches(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield range(lo, min(lo + batch_size, n))


def evaluate_frames(net: DenseAttentionNet, frames, loss_cfg: LossConfig,
                    batch_size: int = 4, attention: bool = True) -> dict:
    """Validation metrics at fixed parameters: confusion-matrix scores plus
    pixel-weighted mean base/contour/finetune losses."""
    if not frames:
        return {"miou": math.nan, "pixel_acc": math.nan, "base": math.nan,
                "contour": math.nan, "finetune": math.nan}
    cm = ConfusionMatrix()
    sums = {"base": 0.0, "contour": 0.0, "finetune": 0.0}
    weight = 0
    for batch in _batches(len(frames), batch_size):
        depth = np.stack([frames[i].depth for i in batch])[:, None].astype(np.float64)
        labels = np.stack([frames[i].label for i in batch]).astype(np.int64)
        logits = net.forward(depth, training=False, attention=attention)
        cm.accumulate(predict(logits), labels)
        npix = labels.size
        sums["base"] += weighted_softmax_ce(
            logits, labels, loss_cfg.class_weights).item() * npix
        sums["contour"] += contour_loss(logits, labels, loss_cfg).item() * npix
        sums["finetune"] += finetune_loss(logits, labels, loss_cfg).item() * npix
        weight += npix
    out = {k: v / weight for k, v in sums.items()}
    out["miou"] = hand_object_mean_iou(cm)
    out["pixel_acc"] = pixel_accuracy(cm)
    return out


def _fmt(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else f"{v:.9g}"


@dataclass
class TrainResult:
    net: DenseAttentionNet
    log_lines: list
    log_path: Path
    phase1_checkpoint: Path
    final_checkpoint: Path


def train(frames, model_cfg: ModelConfig, cfg: TrainConfig, out_dir,
          attention: bool = True, loss_cfg: LossConfig | None = None) -> TrainResult:
    """Run both phases over a frame list; writes `train_log.txt`,
    `phase1.ckpt`, and `final.ckpt` into `out_dir`."""
    if not frames:
        raise ValueError("dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loss_cfg = loss_cfg or LossConfig()
    base_only = LossConfig(class_weights=loss_cfg.class_weights,
                           alpha=loss_cfg.alpha, beta=0.0,
                           gaussian_sigma=loss_cfg.gaussian_sigma,
                           gaussian_size=loss_cfg.gaussian_size,
                           sobel_epsilon=loss_cfg.sobel_epsilon,
                           normalize_logits=loss_cfg.normalize_logits)

    train_set, val_set = split_frames(frames)
    net = DenseAttentionNet(model_cfg, seed=cfg.seed, dtype=np.float32)
    state = AdamState.for_params(net.params)
    rng = np.random.default_rng([cfg.seed, 1])

    lines: list[str] = []
    log_path = out_dir / "train_log.txt"
    phase1_path = out_dir / "phase1.ckpt"
    final_path = out_dir / "final.ckpt"
    step = 0
    epoch_global = 0

    def run_phase(phase: int, n_epochs: int, phase_loss_cfg: LossConfig):
        nonlocal step, epoch_global
        for _ in range(n_epochs):
            epoch_global += 1
            order = rng.permutation(len(train_set))
            loss_sum, loss_weight = 0.0, 0
            for batch in _batches(len(train_set), cfg.batch_size):
                idx = order[list(batch)]
                ds, ls = [], []
                for i in idx:
                    f = train_set[i]
                    if cfg.augment:
                        d, l = augment(f.depth, f.label, rng,
                                       cfg.rotation_range_deg,
                                       cfg.depth_noise_sigma_mm)
                    else:
                        d, l = f.depth.astype(np.float64), f.label
                    ds.append(d)
                    ls.append(l)
                depth = np.stack(ds)[:, None]
                labels = np.stack(ls).astype(np.int64)

                lr = lr_schedule(step, cfg)
                logits = net.forward(depth, training=True, attention=attention)
                loss = finetune_loss(logits, labels, phase_loss_cfg)
                if cfg.norm_penalty_weight > 0.0:
                    loss = loss + _norm_penalty(net, cfg.norm_penalty_weight)
                value = loss.item()
                if not math.isfinite(value):
                    net.save(out_dir / "last.ckpt")
                    raise TrainingDiverged(
                        f"loss became non-finite at step {step}; last good "
                        f"checkpoint kept at {out_dir / 'last.ckpt'}")
                net.zero_grad()
                T.backward(loss)
                adam_step(net.params, state, lr)
                step += 1
                loss_sum += value * labels.size
                loss_weight += labels.size

            stats = evaluate_frames(net, val_set, loss_cfg, cfg.batch_size,
                                    attention)
            lines.append(
                f"epoch={epoch_global} phase={phase} step={step} "
                f"lr={_fmt(lr_schedule(step - 1, cfg))} "
                f"train_loss={_fmt(loss_sum / loss_weight)} "
                f"val_base={_fmt(stats['base'])} "
                f"val_contour={_fmt(stats['contour'])} "
                f"val_miou={_fmt(stats['miou'])}")

    def boundary_record(phase: int):
        stats = evaluate_frames(net, val_set, loss_cfg, cfg.batch_size, attention)
        lines.append(
            f"boundary phase={phase} step={step} "
            f"val_base={_fmt(stats['base'])} "
            f"val_contour={_fmt(stats['contour'])} "
            f"val_finetune={_fmt(stats['finetune'])} "
            f"val_miou={_fmt(stats['miou'])}")

    run_phase(1, cfg.epochs_base, base_only)
    boundary_record(1)
    net.save(phase1_path)
    run_phase(2, cfg.epochs_finetune, loss_cfg)
    boundary_record(2)
    net.save(final_path)

    log_path.write_text("\n".join(lines) + "\n")
    return TrainResult(net=net, log_lines=lines, log_path=log_path,
                       phase1_checkpoint=phase1_path, final_checkpoint=final_path)


def parse_log(lines) -> list:
    """Back-parse key=value log lines into dicts (numbers as floats)."""
    out = []
    for line in lines:
        parts = line.split()
        rec = {"kind": "boundary" if parts[0] == "boundary" else "epoch"}
        for part in parts:
            if "=" not in part:
                continue
            key, val = part.split("=", 1)
            try:
                rec[key] = float(val)
            except ValueError:
                rec[key] = val
        out.append(rec)
    return out
