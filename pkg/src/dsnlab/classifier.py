"""Clip classifier with average fusion over the selected clips."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numeric import (
    LOG_EPS,
    Mlp,
    Prng,
    SgdState,
    argmax_low,
    backward,
    cross_entropy,
    forward,
    make_mlp,
    sgd_step,
    softmax,
    softmax_backward,
)


@dataclass
class ClipClassifier:
    net: Mlp  # D -> J

    @property
    def num_classes(self) -> int:
        return self.net.output_dim

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def copy(self) -> "ClipClassifier":
        return ClipClassifier(self.net.copy())


def make_classifier(feature_dim: int, num_classes: int, rng: Prng, hidden: int = 64) -> ClipClassifier:
    sizes = [feature_dim, hidden, num_classes] if hidden else [feature_dim, num_classes]
    return ClipClassifier(make_mlp(sizes, rng))


@dataclass
class VideoPrediction:
    clip_probs: np.ndarray  # (M, J)
    fused: np.ndarray  # (J,)
    predicted: int


def clip_scores(clf: ClipClassifier, clips: np.ndarray) -> np.ndarray:
    """Class distribution per clip; ``clips`` is ``(D,)`` or ``(k, D)``."""
    return softmax(forward(clf.net, clips)[-1])


def fuse(clip_probs: np.ndarray, mode: str = "probs", clip_logits: np.ndarray | None = None) -> np.ndarray:
    if mode == "probs":
        return clip_probs.mean(axis=0)
    if mode == "logits":
        if clip_logits is None:
            raise ContractError("logit fusion needs clip logits")
        return softmax(clip_logits.mean(axis=0))
    raise ContractError(f"unknown fusion mode {mode!r}")


def video_prediction(clf: ClipClassifier, selected: np.ndarray, fusion: str = "probs") -> VideoPrediction:
    selected = np.atleast_2d(np.asarray(selected, dtype=np.float64))
    if selected.shape[0] == 0:
        raise ContractError("video prediction needs at least one clip")
    logits = forward(clf.net, selected)[-1]
    probs = softmax(logits)
    fused = fuse(probs, fusion, logits)
    return VideoPrediction(probs, fused, argmax_low(fused))


def classification_loss(pred: VideoPrediction, label: int, lam: float, params: list[np.ndarray]) -> float:
    """Cross-entropy of the fused prediction plus ``lam * ||Phi||^2``."""
    reg = sum(float(np.sum(p * p)) for p in params)
    return cross_entropy(pred.fused, label) + lam * reg


def classification_grads(
    clf: ClipClassifier, selected: np.ndarray, label: int, lam: float = 0.0
) -> tuple[float, list[np.ndarray]]:
    """Loss and its full gradient w.r.t. Phi (including ``2*lam*Phi``)."""
    loss, grads = _data_loss_grads(clf, selected, label)
    loss += lam * clf.net.squared_norm()
    grads = [g + 2.0 * lam * p for g, p in zip(grads, clf.params())]
    return loss, grads


def _data_loss_grads(clf: ClipClassifier, selected: np.ndarray, label: int):
    selected = np.atleast_2d(np.asarray(selected, dtype=np.float64))
    if selected.shape[0] == 0:
        raise ContractError("video prediction needs at least one clip")
    if not 0 <= label < clf.num_classes:
        raise ContractError(f"label {label} out of range")
    acts = forward(clf.net, selected)
    probs = softmax(acts[-1])
    fused = probs.mean(axis=0)
    loss = cross_entropy(fused, label)
    g_fused = np.zeros_like(fused)
    if fused[label] > LOG_EPS:
        g_fused[label] = -1.0 / fused[label]
    m = selected.shape[0]
    g_probs = np.broadcast_to(g_fused / m, probs.shape)
    g_logits = softmax_backward(probs, g_probs)
    grads, _ = backward(clf.net, acts, g_logits)
    return loss, grads


def train_classifier_step(
    clf: ClipClassifier, selected: np.ndarray, label: int, state: SgdState
) -> float:
    """One SGD step on the fused cross-entropy; decay comes from ``state``.

    Returns the loss before the update (regularizer included).
    """
    loss, grads = _data_loss_grads(clf, selected, label)
    loss += state.weight_decay * clf.net.squared_norm()
    sgd_step(clf.params(), grads, state, "minimize")
    return loss
