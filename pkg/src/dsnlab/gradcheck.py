"""Finite-difference, enumeration and Monte Carlo checks of the gradients.

Besides the gradient checks this module holds the estimator experiments
built on the same oracles: the with-baseline Monte Carlo mean against the
enumerated gradient, the covariance-trace comparison of the estimator with
and without the greedy baseline, and the frozen two-arm bandit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .classifier import ClipClassifier, classification_grads, make_classifier
from .numeric import Layer, Mlp, Prng, SgdState
from .sampler import ObservationNet, logprob_grads, make_observation_net, section_probs
from .synthgen import SyntheticVideo
from .trainer import (
    RewardConfig,
    TrainConfig,
    exact_policy_gradient,
    policy_gradient_step,
    score_grads,
    section_rewards,
)

FD_STEP = 1e-6
REL_TOL = 1e-5
ABS_TOL = 1e-10
# Below this magnitude a component is compared on an absolute scale.
REL_FLOOR = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tolerance: float
    kind: str  # "relative" or "absolute"

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}  {self.name:<22} instances={self.instances:<4d} "
            f"max_{self.kind}_error={self.max_error:.3e} tol={self.tolerance:.0e}"
        )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grads(f: Callable[[], float], params: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of ``f`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def _flat(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def random_classifier_case(rng: Prng):
    d = int(rng.integers(5)) + 2
    j = int(rng.integers(4)) + 2
    hidden = int(rng.integers(6)) + 2
    m = int(rng.integers(3)) + 1
    clf = make_classifier(d, j, rng, hidden=hidden)
    for p in clf.params():
        p += rng.normal(0.3, size=p.shape)
    clips = rng.normal(size=(m, d))
    label = int(rng.integers(j))
    lam = float(rng.uniform(0.0, 0.1))
    return clf, clips, label, lam


def random_observation_case(rng: Prng, max_clips: int = 4):
    d = int(rng.integers(4)) + 2
    n = int(rng.integers(max_clips - 1)) + 2
    e = int(rng.integers(3)) + 1
    hidden = int(rng.integers(5)) + 2
    obs = make_observation_net(d, n, rng, embed_dim=e, hidden=hidden)
    for p in obs.params():
        p += rng.normal(0.3, size=p.shape)
    clips = rng.normal(size=(n, d))
    return obs, clips


def check_classifier_grads(count: int = 100, seed: int = 0, corrupt: float = 0.0) -> CheckResult:
    rng = Prng(seed).substream("gradcheck/classifier")
    worst = 0.0
    for _ in range(count):
        clf, clips, label, lam = random_classifier_case(rng)
        _, analytic = classification_grads(clf, clips, label, lam)
        numeric = numeric_grads(lambda: classification_grads(clf, clips, label, lam)[0], clf.params())
        worst = max(worst, relative_error(_flat(analytic) * (1 + corrupt), _flat(numeric)))
    return CheckResult("classification_loss", count, worst, REL_TOL, "relative")


def check_logprob_grads(count: int = 100, seed: int = 0, corrupt: float = 0.0) -> CheckResult:
    rng = Prng(seed).substream("gradcheck/logprob")
    worst = 0.0
    for _ in range(count):
        obs, clips = random_observation_case(rng)
        n = obs.clips
        a = int(rng.integers(n))
        p = section_probs(obs, clips)
        analytic = logprob_grads(obs, clips, np.eye(n)[a] - p)
        numeric = numeric_grads(lambda: float(np.log(section_probs(obs, clips)[a])), obs.params())
        worst = max(worst, relative_error(_flat(analytic) * (1 + corrupt), _flat(numeric)))
    return CheckResult("policy_logprob", count, worst, REL_TOL, "relative")


def baseline_case(rng: Prng):
    """Frozen observation net, classifier and section with N <= 4."""
    obs, clips = random_observation_case(rng, max_clips=4)
    d = obs.feature_dim
    j = int(rng.integers(3)) + 2
    clf = make_classifier(d, j, rng, hidden=int(rng.integers(4)) + 2)
    label = int(rng.integers(j))
    return obs, clf, clips, label


def check_baseline_unbiased(count: int = 20, seed: int = 0, corrupt: float = 0.0) -> CheckResult:
    """``E_A[R(B) grad log pi(A)] = 0`` by exact enumeration over the actions."""
    rng = Prng(seed).substream("gradcheck/baseline")
    worst = 0.0
    cfg = RewardConfig(0.2)
    for _ in range(count):
        obs, clf, clips, label = baseline_case(rng)
        p, score = score_grads(obs, clips)
        rewards = section_rewards(clf, clips, label, cfg)
        r_b = rewards[int(np.argmax(p))]
        expectation = (p * r_b) @ score
        worst = max(worst, float(np.max(np.abs(expectation))) + corrupt)
    return CheckResult("baseline_unbiased", count, worst, ABS_TOL, "absolute")


def check_expected_gradient(count: int = 20, seed: int = 0, corrupt: float = 0.0) -> CheckResult:
    """Enumerated ``grad J`` against central differences of ``J = sum_a p_a R(a)``."""
    rng = Prng(seed).substream("gradcheck/expected")
    worst = 0.0
    cfg = RewardConfig(0.2)
    for _ in range(count):
        obs, clf, clips, label = baseline_case(rng)
        rewards = section_rewards(clf, clips, label, cfg)
        p, score = score_grads(obs, clips)
        analytic = exact_policy_gradient(p, score, rewards)
        numeric = numeric_grads(lambda: float(section_probs(obs, clips) @ rewards), obs.params())
        worst = max(worst, relative_error(analytic * (1 + corrupt), _flat(numeric)))
    return CheckResult("expected_reward_grad", count, worst, REL_TOL, "relative")


def run_all(seed: int = 0, corrupt: float = 0.0) -> list[CheckResult]:
    return [
        check_classifier_grads(seed=seed, corrupt=corrupt),
        check_logprob_grads(seed=seed, corrupt=corrupt),
        check_baseline_unbiased(seed=seed, corrupt=corrupt),
        check_expected_gradient(seed=seed, corrupt=corrupt),
    ]


# -- estimator experiments -------------------------------------------------

@dataclass
class MonteCarloResult:
    instances: int
    draws: int
    max_z: float  # largest |MC mean - exact| / standard error over components
    zero_se_mismatch: float  # largest |diff| among components with zero spread
    components: int

    @property
    def passed(self) -> bool:
        return bool(self.max_z <= 3.0 and self.zero_se_mismatch <= 1e-12)


def check_monte_carlo_gradient(count: int = 20, draws: int = 100_000, seed: int = 0) -> MonteCarloResult:
    """Mean of ``(R(A) - R(B)) grad log p_A`` over ``draws`` samples vs. enumeration.

    Actions are drawn by the same inverse-CDF rule as ``sample_action``; the
    sample mean and standard error per component follow from the action
    counts, since the estimator takes only N distinct values per instance.
    """
    rng = Prng(seed).substream("gradcheck/montecarlo")
    cfg = RewardConfig(0.2)
    worst_z, worst_flat, comps = 0.0, 0.0, 0
    for _ in range(count):
        obs, clf, clips, label = baseline_case(rng)
        rewards = section_rewards(clf, clips, label, cfg)
        p, score = score_grads(obs, clips)
        exact = exact_policy_gradient(p, score, rewards)
        r_b = rewards[int(np.argmax(p))]
        values = (rewards - r_b)[:, None] * score  # estimator value for each action
        cdf = np.cumsum(p)
        actions = np.minimum(np.searchsorted(cdf, rng.random(draws), side="right"), len(p) - 1)
        freq = np.bincount(actions, minlength=len(p)) / draws
        mean = freq @ values
        var = freq @ (values - mean) ** 2 * draws / (draws - 1)
        se = np.sqrt(var / draws)
        diff = np.abs(mean - exact)
        spread = se > 0
        comps += diff.size
        if spread.any():
            worst_z = max(worst_z, float(np.max(diff[spread] / se[spread])))
        if (~spread).any():
            worst_flat = max(worst_flat, float(np.max(diff[~spread])))
    return MonteCarloResult(count, draws, worst_z, worst_flat, comps)


def estimator_samples(
    videos: list[SyntheticVideo], obs: ObservationNet, clf: ClipClassifier,
    samples: int, rng: Prng, gamma: float = 0.2,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-video policy-gradient samples with and without the greedy baseline.

    Each sample draws a video uniformly, one action per section from the
    current policy, and returns the flattened Theta-gradient estimate
    ``sum_m w_m grad log p(A_m)`` with ``w = R(A) - R(B)`` and ``w = R(A)``.
    """
    cfg = RewardConfig(gamma)
    with_b, without_b = [], []
    for _ in range(samples):
        v = videos[int(rng.integers(len(videos)))]
        grid = v.features
        probs = section_probs(obs, grid)
        rows = np.arange(grid.shape[0])
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(grid.shape[0])
        a = np.array([min(int(np.searchsorted(c, x, side="right")), len(c) - 1) for c, x in zip(cdf, u)])
        b = np.argmax(probs, axis=1)
        rew = np.stack([section_rewards(clf, sec, v.label, cfg) for sec in grid])
        ra, rb = rew[rows, a], rew[rows, b]
        one_hot = np.zeros_like(probs)
        one_hot[rows, a] = 1.0
        base = one_hot - probs
        with_b.append(_flat(logprob_grads(obs, grid, (ra - rb)[:, None] * base)))
        without_b.append(_flat(logprob_grads(obs, grid, ra[:, None] * base)))
    return np.array(with_b), np.array(without_b)


def covariance_trace(samples: np.ndarray) -> float:
    return float(np.sum(np.var(samples, axis=0, ddof=1)))


def two_arm_bandit(seed: int, steps: int = 500, alpha: float = 0.1, gamma: float = 0.2) -> np.ndarray:
    """Frozen two-arm problem driven through ``policy_gradient_step``.

    One section with clips ``e_0`` (good) and ``e_1`` (bad), label 0 and a
    fixed classifier with logits ``1000 * x``: the good clip scores exactly
    1.0 and the bad one is misclassified (reward ``-gamma``). Returns
    ``p(good)`` before the first step and after every step.
    """
    video = SyntheticVideo(0, 0, np.eye(2)[None], np.array([0], dtype=np.int32))
    clf = ClipClassifier(Mlp([Layer(1000.0 * np.eye(2), np.zeros(2), "identity")]))
    rng = Prng(seed).substream("bandit")
    obs = make_observation_net(2, 2, rng.substream("init"))
    cfg = TrainConfig(policy_lr=alpha, gamma=gamma)
    state = SgdState(alpha)
    trace = [section_probs(obs, video.features[0])[0]]
    step_rng = rng.substream("steps")
    for _ in range(steps):
        policy_gradient_step(video, obs, clf, cfg, step_rng, state)
        trace.append(section_probs(obs, video.features[0])[0])
    return np.array(trace)
