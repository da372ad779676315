"""Training objectives: symmetric InfoNCE, wavelet reconstruction, order prediction."""
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .model import decode_bands, filter_bank
from .wavelets import WaveletPyramid, iswt_inverse

LOG_EPS = 1e-12


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    smooth_l1_beta: float = 1.0
    weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.temperature > 0:
            raise LossError(f"temperature must be positive, got {self.temperature}")
        if not self.smooth_l1_beta > 0:
            raise LossError(f"smooth_l1_beta must be positive, got {self.smooth_l1_beta}")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise LossError(f"weights must be three non-negative numbers, got {self.weights}")


def l2_normalize(x):
    """Row-normalize (B, D); a zero row is an error, not an epsilon."""
    x = ag.as_tensor(x)
    sq = (x * x).sum(axis=-1, keepdims=True)
    if np.any(sq.data == 0):
        raise LossError("zero-norm embedding: cosine similarity undefined")
    return x * ag.reciprocal(ag.sqrt(sq))


def cosine_matrix(a, b):
    return l2_normalize(a) @ l2_normalize(b).transpose(1, 0)


def info_nce(text, motion, temperature=0.07):
    """Symmetric contrastive loss over the (B, B) text-motion cosine matrix."""
    text, motion = ag.as_tensor(text), ag.as_tensor(motion)
    if text.ndim != 2 or text.shape != motion.shape:
        raise LossError(f"text {text.shape} and motion {motion.shape} batches must match")
    B = text.shape[0]
    if B < 2:
        raise LossError("InfoNCE needs a batch of at least two pairs")
    logits = cosine_matrix(text, motion) * (1.0 / temperature)
    eye = np.eye(B, dtype=logits.dtype)
    t2m = (ag.log_softmax(logits, axis=1) * eye).sum()
    m2t = (ag.log_softmax(logits, axis=0) * eye).sum()
    return (t2m + m2t) * (-1.0 / B)


def smooth_l1(pred, target, beta=1.0):
    pred, target = ag.as_tensor(pred), ag.as_tensor(target)
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    return ag.smooth_l1_elementwise(pred - target, beta).mean()


def reconstruct(P, cfg, feats, bank=None):
    """Decoded bands through the synthesis filters, plus the direct inter decoder.

    Returns ``(intra, inter)`` motions flattened to (B, T, C).
    """
    low, highs, inter = decode_bands(P, cfg, feats)
    bank = bank if bank is not None else filter_bank(P, cfg, low.dtype)
    intra = iswt_inverse(WaveletPyramid(approx=low, details=highs), bank)
    return intra, inter


def reconstruction_loss(P, cfg, feats, target, beta=1.0, bank=None):
    """``smooth_l1(intra, M) + smooth_l1(inter, M)``; target is (B, T, J, 3)."""
    target = ag.as_tensor(target)
    flat = target.reshape(target.shape[0], cfg.frames, cfg.channels)
    intra, inter = reconstruct(P, cfg, feats, bank)
    return smooth_l1(intra, flat, beta) + smooth_l1(inter, flat, beta), intra, inter


def frame_cross_entropy(probs, labels):
    """Mean over frames of ``-log p[label]``; log clamped at 1e-12."""
    probs = ag.as_tensor(probs)
    labels = np.asarray(labels)
    n = probs.shape[-1]
    if labels.shape != probs.shape[:-1]:
        raise LossError(f"labels {labels.shape} do not match predictions {probs.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise LossError(f"labels must lie in [0, {n})")
    if np.any(np.abs(probs.data.sum(axis=-1) - 1.0) > 1e-4):
        raise LossError("probability rows must sum to 1")
    onehot = np.eye(n, dtype=probs.dtype)[labels]
    return -(ag.log_clamped(probs, LOG_EPS) * onehot).sum() * (1.0 / labels.size)


def dmsp_loss(p_ordered, labels_ordered, p_shuffled, labels_shuffled):
    return frame_cross_entropy(p_ordered, labels_ordered) + frame_cross_entropy(p_shuffled, labels_shuffled)


def total_loss(nce, rec, dmsp, weights=(1.0, 1.0, 1.0)):
    w_nce, w_rec, w_dmsp = weights
    if min(weights) < 0:
        raise LossError("loss weights must be non-negative")
    return nce * w_nce + rec * w_rec + dmsp * w_dmsp
