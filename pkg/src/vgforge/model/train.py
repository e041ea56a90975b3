"""Desk-scale training loop exercising the paired objective end to end.

Supports a joint mode (one sequence carrying both modalities, one label) and a
per-modality mode (two forward passes through the shared encoder with separate
image/cloud labels summed into one step), which is what the label-shuffle
diagnostic needs. AdamW with linear warmup into cosine decay; everything is
seeded and single-threaded deterministic.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import builder, formats
from .encoder import classify, classify_backward, encode, encode_backward
from .losses import ce_from_logits, vgc_from_logits
from .params import ModelConfig, init_params, save_checkpoint
from .tokenize import (
    build_sequence,
    embed_clouds,
    embed_clouds_backward,
    embed_images,
    embed_images_backward,
    group_cloud,
    split_sequence_grad,
)

_MASK64 = (1 << 64) - 1
MODES = ("joint", "per_modality")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    epochs: int = 100
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_frac: float = 0.1
    label_smoothing: float = 0.0
    mode: str = "joint"
    use_vgc: bool = False
    vgc_weight: float = 1.0
    seed: int = 0
    dtype: str = "float32"
    target_accuracy: float | None = None
    divergence_window: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.use_vgc and self.mode != "joint":
            raise ValueError("pair-consistency training requires joint mode")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")


@dataclass
class TrainingReport:
    mode: str
    epochs_run: int = 0
    steps: int = 0
    wall_seconds: float = 0.0
    diverged: bool = False
    reached_target: bool = False
    loss: list = field(default_factory=list)  # per-epoch mean training objective
    loss_image: list = field(default_factory=list)
    loss_cloud: list = field(default_factory=list)
    loss_vgc: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)  # full-set, end of epoch
    eval_loss_image: list = field(default_factory=list)
    eval_loss_cloud: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    accuracy_image: list = field(default_factory=list)
    accuracy_cloud: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        formats.atomic_write_bytes(
            path, (json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n").encode()
        )


@dataclass
class TrainingData:
    patches: np.ndarray  # (N, n_image_tokens, patch_dim) uint8 raw intensities
    groups: np.ndarray  # (N, k, m, 3) float32
    centers: np.ndarray  # (N, k, 3) float32
    image_labels: np.ndarray  # (N,) int64
    cloud_labels: np.ndarray  # (N,) int64
    n_classes: int


def load_training_data(dataset_root, model_cfg: ModelConfig) -> TrainingData:
    """Read every pair in the manifest and pre-tokenize to compact arrays."""
    root = Path(dataset_root)
    mpath = root if root.is_file() else root / "manifest.json"
    root = mpath.parent
    manifest = builder.load_manifest(mpath)
    g = model_cfg.image_size // model_cfg.patch_size
    p = model_cfg.patch_size
    patches, groups, centers, img_labels, cld_labels = [], [], [], [], []
    for rec in manifest["records"]:
        img = formats.read_png(root / rec["image"])
        if img.shape != (model_cfg.image_size, model_cfg.image_size, model_cfg.channels):
            raise ValueError(f"image shape {img.shape} does not match the model config")
        patches.append(
            img.reshape(g, p, g, p, model_cfg.channels)
            .transpose(0, 2, 1, 3, 4)
            .reshape(g * g, model_cfg.patch_dim)
        )
        cloud = formats.read_pcb(root / rec["point_cloud"]).astype(np.float64)
        grp, ctr = group_cloud(cloud, model_cfg)
        groups.append(grp.astype(np.float32))
        centers.append(ctr.astype(np.float32))
        img_labels.append(rec["image_label"])
        cld_labels.append(rec["cloud_label"])
    return TrainingData(
        patches=np.stack(patches),
        groups=np.stack(groups),
        centers=np.stack(centers),
        image_labels=np.asarray(img_labels, dtype=np.int64),
        cloud_labels=np.asarray(cld_labels, dtype=np.int64),
        n_classes=manifest["params"]["categories"],
    )


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then cosine decay to zero."""
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params, grads, m_state, v_state, t, lr, tcfg: TrainConfig) -> None:
    """Decoupled weight decay; t is 1-based for bias correction."""
    b1, b2 = tcfg.beta1, tcfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = grads[k]
        m_state[k] = b1 * m_state[k] + (1.0 - b1) * g
        v_state[k] = b2 * v_state[k] + (1.0 - b2) * g * g
        update = (m_state[k] / c1) / (np.sqrt(v_state[k] / c2) + tcfg.adam_eps)
        p -= lr * (update + tcfg.weight_decay * p)


def _zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def _batch_inputs(data: TrainingData, idx: np.ndarray, dtype):
    # Pixels map to {-1, +1} rather than {0, 1}: with near-binary sparse
    # images the symmetric range keeps patch-token magnitudes comparable
    # across patches, which conditions the embedding far better.
    patches = data.patches[idx].astype(dtype) / dtype(127.5) - dtype(1.0)
    groups = data.groups[idx].astype(dtype)
    centers = data.centers[idx].astype(dtype)
    return patches, groups, centers


def _joint_forward(patches, groups, centers, params, mcfg):
    img_tok, c_img = embed_images(patches, params)
    pt_tok, c_pt = embed_clouds(groups, centers, params)
    x = build_sequence(img_tok, pt_tok, params)
    enc, c_enc = encode(x, params, mcfg)
    return enc, (c_img, c_pt, c_enc)


def _joint_backward(dout, caches, params, mcfg, grads):
    c_img, c_pt, c_enc = caches
    dx = encode_backward(dout, c_enc, params, mcfg, grads)
    n_img = c_img["patches"].shape[1]
    n_pt = c_pt["groups"].shape[1]
    dimg, dpt = split_sequence_grad(dx, n_img, n_pt, grads)
    embed_images_backward(dimg, c_img, grads)
    embed_clouds_backward(dpt, c_pt, params, grads)


def _vgc_swap(data: TrainingData, idx, groups, centers, rng) -> np.ndarray:
    """Replace clouds in the back half of the batch with same-category siblings.

    Returns 0/1 consistency labels. A category with a single instance overall
    cannot be made inconsistent and keeps label 1.
    """
    consistency = np.ones(len(idx), dtype=np.int64)
    by_cat: dict[int, np.ndarray] = {}
    for j in range(len(idx) // 2, len(idx)):
        rec = int(idx[j])
        cat = int(data.image_labels[rec])
        if cat not in by_cat:
            by_cat[cat] = np.flatnonzero(data.image_labels == cat)
        pool = by_cat[cat]
        pool = pool[pool != rec]
        if pool.size == 0:
            continue
        donor = int(pool[int(rng.integers(0, pool.size))])
        groups[j] = data.groups[donor].astype(groups.dtype)
        centers[j] = data.centers[donor].astype(centers.dtype)
        consistency[j] = 0
    return consistency


def _evaluate(data: TrainingData, params, tcfg: TrainConfig, dtype) -> dict:
    """Full-set losses and accuracies for joint, image-only, and cloud-only."""
    mcfg = tcfg.model
    n = data.patches.shape[0]
    out = {}
    branches = [
        ("joint", data.image_labels),
        ("image", data.image_labels),
        ("cloud", data.cloud_labels),
    ]
    # Inference-only, so batches larger than the training batch are fine and
    # cut per-batch overhead on the thrice-per-epoch full-set pass.
    ebs = max(tcfg.batch_size, 64)
    for branch, labels in branches:
        total_loss = 0.0
        correct = 0
        for s in range(0, n, ebs):
            idx = np.arange(s, min(s + ebs, n))
            patches, groups, centers = _batch_inputs(data, idx, dtype)
            if branch == "joint":
                enc, _ = _joint_forward(patches, groups, centers, params, mcfg)
            elif branch == "image":
                tok, _ = embed_images(patches, params)
                enc, _ = encode(build_sequence(tok, None, params), params, mcfg)
            else:
                tok, _ = embed_clouds(groups, centers, params)
                enc, _ = encode(build_sequence(None, tok, params), params, mcfg)
            logits = classify(enc, params)
            loss, _ = ce_from_logits(logits, labels[idx], tcfg.label_smoothing)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=-1) == labels[idx]).sum())
        out[branch] = (total_loss / n, correct / n)
    return out


def _diverged(losses: list, window: int) -> bool:
    """True when the objective rose strictly at every step of some window."""
    if len(losses) <= window:
        return False
    for start in range(len(losses) - window):
        seg = losses[start : start + window + 1]
        if all(seg[i + 1] > seg[i] for i in range(window)):
            return True
    return False


def train_toy(
    dataset_root,
    tcfg: TrainConfig,
    checkpoint_path=None,
    report_path=None,
) -> TrainingReport:
    """Train on a built dataset; returns (and optionally saves) the report.

    Early-stops once every evaluated branch reaches target_accuracy. Flags
    divergence when the epoch objective increases monotonically across a
    divergence_window-epoch stretch.
    """
    t0 = time.perf_counter()
    mcfg = tcfg.model
    dtype = np.float32 if tcfg.dtype == "float32" else np.float64
    data = load_training_data(dataset_root, mcfg)
    if data.n_classes > mcfg.num_classes:
        raise ValueError(
            f"dataset has {data.n_classes} categories but the head has {mcfg.num_classes}"
        )
    n = data.patches.shape[0]
    params = {k: v.astype(dtype) for k, v in init_params(mcfg, tcfg.seed).items()}
    m_state = _zero_grads(params)
    v_state = _zero_grads(params)
    rng = np.random.default_rng(tcfg.seed & _MASK64)
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    warmup_steps = max(1, round(tcfg.warmup_frac * total_steps))
    report = TrainingReport(mode=tcfg.mode, config=asdict(tcfg))
    step = 0

    if tcfg.epochs == 0:
        # Baseline evaluation of the untrained model: accuracy near chance.
        evals = _evaluate(data, params, tcfg, dtype)
        report.eval_loss.append(evals["joint"][0])
        report.accuracy.append(evals["joint"][1])
        report.eval_loss_image.append(evals["image"][0])
        report.eval_loss_cloud.append(evals["cloud"][0])
        report.accuracy_image.append(evals["image"][1])
        report.accuracy_cloud.append(evals["cloud"][1])

    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        ep = {"loss": 0.0, "image": 0.0, "cloud": 0.0, "vgc": 0.0}
        for s in range(steps_per_epoch):
            idx = order[s * tcfg.batch_size : (s + 1) * tcfg.batch_size]
            patches, groups, centers = _batch_inputs(data, idx, dtype)
            grads = _zero_grads(params)
            if tcfg.mode == "joint":
                consistency = (
                    _vgc_swap(data, idx, groups, centers, rng) if tcfg.use_vgc else None
                )
                enc, caches = _joint_forward(patches, groups, centers, params, mcfg)
                logits = classify(enc, params)
                loss, dlogits = ce_from_logits(
                    logits, data.image_labels[idx], tcfg.label_smoothing
                )
                dout = classify_backward(dlogits, enc, params, grads)
                objective = loss
                if tcfg.use_vgc:
                    vlogits = classify(enc, params, head="vgc")
                    vloss, dvl = vgc_from_logits(vlogits, consistency)
                    dout = dout + classify_backward(
                        dvl * dtype(tcfg.vgc_weight), enc, params, grads, head="vgc"
                    )
                    objective = loss + tcfg.vgc_weight * vloss
                    ep["vgc"] += vloss
                _joint_backward(dout, caches, params, mcfg, grads)
            else:
                img_tok, c_img = embed_images(patches, params)
                x_img = build_sequence(img_tok, None, params)
                enc_i, c_enc_i = encode(x_img, params, mcfg)
                logits_i = classify(enc_i, params)
                loss_i, dlog_i = ce_from_logits(
                    logits_i, data.image_labels[idx], tcfg.label_smoothing
                )
                dout_i = classify_backward(dlog_i, enc_i, params, grads)
                dx_i = encode_backward(dout_i, c_enc_i, params, mcfg, grads)
                dimg, _ = split_sequence_grad(dx_i, img_tok.shape[1], 0, grads)
                embed_images_backward(dimg, c_img, grads)

                pt_tok, c_pt = embed_clouds(groups, centers, params)
                x_pt = build_sequence(None, pt_tok, params)
                enc_p, c_enc_p = encode(x_pt, params, mcfg)
                logits_p = classify(enc_p, params)
                loss_p, dlog_p = ce_from_logits(
                    logits_p, data.cloud_labels[idx], tcfg.label_smoothing
                )
                dout_p = classify_backward(dlog_p, enc_p, params, grads)
                dx_p = encode_backward(dout_p, c_enc_p, params, mcfg, grads)
                _, dpt = split_sequence_grad(dx_p, 0, pt_tok.shape[1], grads)
                embed_clouds_backward(dpt, c_pt, params, grads)

                objective = loss_i + loss_p
                ep["image"] += loss_i
                ep["cloud"] += loss_p
            ep["loss"] += objective
            adamw_step(
                params, grads, m_state, v_state, step + 1,
                lr_at(step, total_steps, warmup_steps, tcfg.lr), tcfg,
            )
            step += 1

        report.loss.append(ep["loss"] / steps_per_epoch)
        if tcfg.mode == "per_modality":
            report.loss_image.append(ep["image"] / steps_per_epoch)
            report.loss_cloud.append(ep["cloud"] / steps_per_epoch)
        if tcfg.use_vgc:
            report.loss_vgc.append(ep["vgc"] / steps_per_epoch)
        evals = _evaluate(data, params, tcfg, dtype)
        report.eval_loss.append(evals["joint"][0])
        report.accuracy.append(evals["joint"][1])
        report.eval_loss_image.append(evals["image"][0])
        report.eval_loss_cloud.append(evals["cloud"][0])
        report.accuracy_image.append(evals["image"][1])
        report.accuracy_cloud.append(evals["cloud"][1])
        if tcfg.mode == "joint":
            accs = [evals["joint"][1]]
        else:
            accs = [evals["image"][1], evals["cloud"][1]]
        report.epochs_run = epoch + 1
        report.steps = step
        if tcfg.target_accuracy is not None and all(a >= tcfg.target_accuracy for a in accs):
            report.reached_target = True
            break

    report.diverged = _diverged(report.loss, tcfg.divergence_window)
    report.wall_seconds = time.perf_counter() - t0
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, mcfg)
    if report_path is not None:
        report.save(report_path)
    return report
