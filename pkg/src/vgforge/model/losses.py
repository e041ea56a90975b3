"""Classification and pair-consistency losses.

Both take probabilities or logits over a batch and average per sample.
Uniform predictions give exactly ln(n_classes), the chance-level reference
used by the label-shuffle diagnostic.
"""

import numpy as np

_TINY = 1e-300


def _smoothed_targets(labels: np.ndarray, n_classes: int, smoothing: float) -> np.ndarray:
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"label_smoothing must be in [0, 1), got {smoothing}")
    onehot = np.zeros((labels.shape[0], n_classes))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    if smoothing:
        onehot = onehot * (1.0 - smoothing) + smoothing / n_classes
    return onehot


def ce_loss(preds: np.ndarray, labels, label_smoothing: float = 0.0) -> float:
    """Mean cross-entropy of probability rows against integer labels."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if preds.shape[0] != labels.shape[0]:
        raise ValueError(f"{preds.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= preds.shape[1]):
        raise ValueError("label out of range")
    targets = _smoothed_targets(labels, preds.shape[1], label_smoothing)
    logp = np.log(np.maximum(preds, _TINY))
    return float(-(targets * logp).sum() / preds.shape[0])


def ce_from_logits(
    logits: np.ndarray, labels: np.ndarray, label_smoothing: float = 0.0
) -> tuple[float, np.ndarray]:
    """Numerically stable mean cross-entropy plus d(loss)/d(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    targets = _smoothed_targets(labels, logits.shape[-1], label_smoothing).astype(logits.dtype)
    n = logits.shape[0]
    loss = float(-(targets * logp).sum() / n)
    dlogits = (np.exp(logp) - targets) / n
    return loss, dlogits.astype(logits.dtype)


def vgc_loss(pair_logits: np.ndarray, consistency: np.ndarray) -> float:
    """Mean binary cross-entropy of 2-way logits against 0/1 consistency labels."""
    pair_logits = np.atleast_2d(np.asarray(pair_logits, dtype=np.float64))
    if pair_logits.shape[-1] != 2:
        raise ValueError(f"expected 2-way logits, got shape {pair_logits.shape}")
    loss, _ = ce_from_logits(pair_logits, consistency)
    return loss


def vgc_from_logits(pair_logits: np.ndarray, consistency: np.ndarray) -> tuple[float, np.ndarray]:
    if pair_logits.shape[-1] != 2:
        raise ValueError(f"expected 2-way logits, got shape {pair_logits.shape}")
    return ce_from_logits(pair_logits, consistency)
