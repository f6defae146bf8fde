"""Alternating training of the classifier and the clip-selection policy.

The policy is trained as an N-armed contextual bandit per section: a
sampled action ``A`` is rewarded with the correct-class score of its clip
(or ``-gamma`` if the clip is misclassified), the greedy action ``B`` is
scored the same way and serves as baseline, and Theta ascends
``(R(A) - R(B)) * grad log p_A`` summed over sections.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classifier import ClipClassifier, clip_scores, make_classifier, train_classifier_step
from .errors import ConfigError, ContractError
from .numeric import Prng, SgdState, argmax_low, sgd_step
from .sampler import (
    ObservationNet,
    greedy_action,
    logprob_grads,
    make_observation_net,
    sample_action,
    section_probs,
)
from .synthgen import Dataset, DatasetSpec, SyntheticVideo


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 0.2

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")


@dataclass
class TrainConfig:
    epochs: int = 30
    pretrain_epochs: int = 30
    fix_classifier: bool = False
    policy_lr: float = 0.003
    policy_momentum: float = 0.0
    clf_lr: float = 0.001
    clf_momentum: float = 0.9
    weight_decay: float = 1e-3
    gamma: float = 0.2
    lr_decay_epochs: tuple[int, ...] = ()
    reward_mode: str = "clip"
    embed_dim: int = 4
    encoder_hidden: int = 8
    classifier_hidden: int = 64
    response_epochs: int = 30
    seed: int = 0

    def validate(self) -> None:
        for name in ("epochs", "pretrain_epochs", "response_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.policy_lr > 0:
            raise ConfigError("policy_lr must be > 0")
        if self.clf_lr < 0:
            raise ConfigError("clf_lr must be >= 0")
        if not 0.0 <= self.policy_momentum < 1.0 or not 0.0 <= self.clf_momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.reward_mode not in ("clip", "fused"):
            raise ConfigError(f"reward_mode must be 'clip' or 'fused', got {self.reward_mode!r}")
        RewardConfig(self.gamma)

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(self.gamma)


@dataclass(frozen=True)
class RewardRecord:
    section: int
    action: int
    baseline_action: int
    reward_a: float
    reward_b: float

    @property
    def advantage(self) -> float:
        return self.reward_a - self.reward_b


@dataclass
class EpochLog:
    epoch: int
    classifier_loss: float
    mean_advantage: float
    hit_rate: float
    wall_ms: int


@dataclass
class TrainResult:
    obs: ObservationNet
    clf: ClipClassifier
    log: list[EpochLog] = field(default_factory=list)


def reward(clip_probs: np.ndarray, label: int, cfg: RewardConfig) -> float:
    if not 0 <= label < len(clip_probs):
        raise ContractError(f"label {label} out of range")
    if argmax_low(clip_probs) == label:
        return float(clip_probs[label])
    return -cfg.gamma


def section_rewards(clf: ClipClassifier, clips: np.ndarray, label: int, cfg: RewardConfig) -> np.ndarray:
    """Reward of every candidate clip in a section, ``clips`` ``(N, D)``."""
    return np.array([reward(p, label, cfg) for p in clip_scores(clf, clips)])


def init_models(spec: DatasetSpec, cfg: TrainConfig) -> tuple[ObservationNet, ClipClassifier]:
    rng = Prng(cfg.seed).substream("init")
    obs = make_observation_net(
        spec.feature_dim, spec.clips_per_section, rng.substream("observation"),
        embed_dim=cfg.embed_dim, hidden=cfg.encoder_hidden,
    )
    clf = make_classifier(
        spec.feature_dim, spec.num_classes, rng.substream("classifier"), hidden=cfg.classifier_hidden
    )
    return obs, clf


def _decayed(lr: float, epoch: int, decay_epochs) -> float:
    return lr * 0.1 ** sum(1 for e in decay_epochs if epoch >= e)


def _check_dims(spec: DatasetSpec, obs: ObservationNet | None, clf: ClipClassifier) -> None:
    if clf.net.input_dim != spec.feature_dim or clf.num_classes != spec.num_classes:
        raise ConfigError(
            f"classifier dims (D={clf.net.input_dim}, J={clf.num_classes}) do not match "
            f"dataset (D={spec.feature_dim}, J={spec.num_classes})"
        )
    if obs is not None and (obs.clips != spec.clips_per_section or obs.feature_dim != spec.feature_dim):
        raise ConfigError(
            f"observation net dims (N={obs.clips}, D={obs.feature_dim}) do not match "
            f"dataset (N={spec.clips_per_section}, D={spec.feature_dim})"
        )


def random_clips(video: SyntheticVideo, rng: Prng) -> np.ndarray:
    m, n, _ = video.features.shape
    idx = rng.integers(n, size=m)
    return video.features[np.arange(m), idx]


def train_on_uniform_clips(
    videos: list[SyntheticVideo], clf: ClipClassifier, epochs: int, state: SgdState,
    rng: Prng, decay_epochs=(),
) -> list[float]:
    """Supervised training on one random clip per section; per-epoch mean loss."""
    base_lr = state.learning_rate
    losses = []
    for epoch in range(epochs):
        state.learning_rate = _decayed(base_lr, epoch, decay_epochs)
        total = 0.0
        for i in rng.permutation(len(videos)):
            v = videos[i]
            total += train_classifier_step(clf, random_clips(v, rng), v.label, state)
        losses.append(total / len(videos))
    state.learning_rate = base_lr
    return losses


def pretrain_classifier(
    dataset: Dataset, cfg: TrainConfig, clf: ClipClassifier | None = None
) -> ClipClassifier:
    """Train the classifier alone on uniformly sampled clips (in place when given)."""
    cfg.validate()
    if clf is None:
        clf = init_models(dataset.spec, cfg)[1]
    _check_dims(dataset.spec, None, clf)
    state = SgdState(cfg.clf_lr, cfg.clf_momentum, cfg.weight_decay)
    rng = Prng(cfg.seed).substream("pretrain")
    train_on_uniform_clips(dataset.train, clf, cfg.pretrain_epochs, state, rng, cfg.lr_decay_epochs)
    return clf


def _reward_pair(clf, clips_a, clips_b, label, cfg: TrainConfig):
    """Per-section rewards for the sampled and greedy selections."""
    m = clips_a.shape[0]
    probs = clip_scores(clf, np.concatenate([clips_a, clips_b]))
    if cfg.reward_mode == "clip":
        ra = np.array([reward(p, label, cfg.reward) for p in probs[:m]])
        rb = np.array([reward(p, label, cfg.reward) for p in probs[m:]])
    else:
        ra = np.full(m, reward(probs[:m].mean(axis=0), label, cfg.reward))
        rb = np.full(m, reward(probs[m:].mean(axis=0), label, cfg.reward))
    return ra, rb


def policy_gradient_step(
    video: SyntheticVideo, obs: ObservationNet, clf: ClipClassifier, cfg: TrainConfig,
    rng: Prng, state: SgdState,
) -> list[RewardRecord]:
    """One ascent step on Theta from a single video; Phi is only read."""
    grid = video.features
    m_count = grid.shape[0]
    probs = section_probs(obs, grid)
    a = np.array([sample_action(p, rng).chosen for p in probs])
    b = np.array([greedy_action(p).chosen for p in probs])
    rows = np.arange(m_count)
    ra, rb = _reward_pair(clf, grid[rows, a], grid[rows, b], video.label, cfg)
    adv = ra - rb
    one_hot = np.zeros_like(probs)
    one_hot[rows, a] = 1.0
    logit_grads = adv[:, None] * (one_hot - probs)
    grads = logprob_grads(obs, grid, logit_grads)
    sgd_step(obs.params(), grads, state, "maximize")
    return [
        RewardRecord(k, int(a[k]), int(b[k]), float(ra[k]), float(rb[k])) for k in range(m_count)
    ]


def selection_hit_rate(videos: list[SyntheticVideo], obs: ObservationNet) -> float:
    """Fraction of non-background sections whose greedy pick is the planted clip."""
    if not videos:
        return float("nan")
    grid = np.stack([v.features for v in videos])
    chosen = np.argmax(section_probs(obs, grid), axis=-1)
    planted = np.stack([v.planted for v in videos])
    mask = planted >= 0
    if not mask.any():
        return float("nan")
    return float(np.sum((chosen == planted) & mask) / np.sum(mask))


def train_dsn(
    dataset: Dataset,
    cfg: TrainConfig,
    obs: ObservationNet | None = None,
    clf: ClipClassifier | None = None,
    on_epoch: Callable[[EpochLog, ObservationNet, ClipClassifier], None] | None = None,
) -> TrainResult:
    """Alternating optimization; updates ``obs``/``clf`` in place when given."""
    cfg.validate()
    if obs is None or clf is None:
        init_obs, init_clf = init_models(dataset.spec, cfg)
        obs = obs if obs is not None else init_obs
        clf = clf if clf is not None else init_clf
    _check_dims(dataset.spec, obs, clf)
    root = Prng(cfg.seed)
    order_rng = root.substream("shuffle")
    select_rng = root.substream("select")
    policy_rng = root.substream("policy")
    clf_state = SgdState(cfg.clf_lr, cfg.clf_momentum, cfg.weight_decay)
    pol_state = SgdState(cfg.policy_lr, cfg.policy_momentum, 0.0)
    result = TrainResult(obs, clf)
    videos = dataset.train
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        clf_state.learning_rate = _decayed(cfg.clf_lr, epoch, cfg.lr_decay_epochs)
        pol_state.learning_rate = _decayed(cfg.policy_lr, epoch, cfg.lr_decay_epochs)
        loss_sum, adv_sum, adv_n = 0.0, 0.0, 0
        for i in order_rng.permutation(len(videos)):
            v = videos[i]
            if not cfg.fix_classifier:
                probs = section_probs(obs, v.features)
                chosen = [sample_action(p, select_rng).chosen for p in probs]
                picked = v.features[np.arange(len(chosen)), chosen]
                loss_sum += train_classifier_step(clf, picked, v.label, clf_state)
            records = policy_gradient_step(v, obs, clf, cfg, policy_rng, pol_state)
            adv_sum += sum(r.advantage for r in records)
            adv_n += len(records)
        entry = EpochLog(
            epoch=epoch + 1,
            classifier_loss=loss_sum / len(videos) if not cfg.fix_classifier else 0.0,
            mean_advantage=adv_sum / max(adv_n, 1),
            hit_rate=selection_hit_rate(videos, obs),
            wall_ms=int((time.perf_counter() - t0) * 1000),
        )
        result.log.append(entry)
        if on_epoch is not None:
            on_epoch(entry, obs, clf)
    return result


# -- estimator utilities used by the gradient and variance checks ---------

def score_grads(obs: ObservationNet, clips: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and flattened ``grad log p_a`` for every action ``a``.

    Returns ``(p, G)`` with ``G[a]`` the flattened Theta-gradient of
    ``log p_a`` for the section ``clips`` ``(N, D)``.
    """
    p = section_probs(obs, clips)
    n = len(p)
    rows = []
    for a in range(n):
        g = logprob_grads(obs, clips, np.eye(n)[a] - p)
        rows.append(np.concatenate([x.ravel() for x in g]))
    return p, np.stack(rows)


def exact_policy_gradient(p: np.ndarray, score: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """``grad E_A[R(A)] = sum_a p_a R(a) grad log p_a`` by enumeration."""
    return (p * rewards) @ score
