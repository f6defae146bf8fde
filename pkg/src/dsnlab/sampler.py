"""Section-wise clip selection: observation network plus policy maker.

The observation network encodes every clip of a section with a shared
encoder, concatenates the embeddings in clip order and maps them through a
single linear head to one logit per clip; a softmax gives the section's
selection probabilities. Training draws actions from those probabilities,
testing takes the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numeric import Mlp, Prng, argmax_low, backward, forward, make_mlp, softmax


@dataclass
class ObservationNet:
    encoder: Mlp  # D -> E, applied to each clip with tied weights
    head: Mlp  # N*E -> N, single identity layer

    def __post_init__(self):
        if len(self.head.layers) != 1:
            raise ContractError("observation head must be a single linear layer")
        if self.head.input_dim != self.clips * self.encoder.output_dim:
            raise ContractError(
                f"head input {self.head.input_dim} != N*E = {self.clips}*{self.encoder.output_dim}"
            )

    @property
    def clips(self) -> int:
        return self.head.output_dim

    @property
    def feature_dim(self) -> int:
        return self.encoder.input_dim

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.head.params()

    def copy(self) -> "ObservationNet":
        return ObservationNet(self.encoder.copy(), self.head.copy())


def make_observation_net(
    feature_dim: int, clips: int, rng: Prng, embed_dim: int = 4, hidden: int = 8
) -> ObservationNet:
    sizes = [feature_dim, hidden, embed_dim] if hidden else [feature_dim, embed_dim]
    encoder = make_mlp(sizes, rng)
    head = make_mlp([clips * embed_dim, clips], rng)
    return ObservationNet(encoder, head)


@dataclass(frozen=True)
class SelectionAction:
    chosen: int
    size: int

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.size)
        v[self.chosen] = 1.0
        return v


@dataclass
class Selection:
    clips: np.ndarray  # (M, D) chosen clip per section
    probs: np.ndarray  # (M, N)
    chosen: np.ndarray  # (M,) int


def _check_section(net: ObservationNet, clips: np.ndarray) -> np.ndarray:
    clips = np.asarray(clips, dtype=np.float64)
    if clips.shape[-2:] != (net.clips, net.feature_dim):
        raise ContractError(
            f"section shape {clips.shape} does not match (N, D) = ({net.clips}, {net.feature_dim})"
        )
    return clips


def _logits_trace(net: ObservationNet, clips: np.ndarray):
    """Forward through encoder and head for one section or a stack of them."""
    lead = clips.shape[:-2]
    n, d = clips.shape[-2:]
    enc_acts = forward(net.encoder, clips.reshape(-1, d))
    emb = enc_acts[-1].reshape(*lead, n * net.encoder.output_dim)
    head_acts = forward(net.head, emb.reshape(-1, emb.shape[-1]))
    logits = head_acts[-1].reshape(*lead, n)
    return logits, enc_acts, head_acts


def section_logits(net: ObservationNet, clips: np.ndarray) -> np.ndarray:
    return _logits_trace(net, _check_section(net, clips))[0]


def section_probs(net: ObservationNet, clips: np.ndarray) -> np.ndarray:
    """Selection probabilities for a section ``(N, D)`` or stack ``(..., N, D)``."""
    return softmax(section_logits(net, clips))


def sample_action(probs: np.ndarray, rng: Prng) -> SelectionAction:
    """Inverse-CDF categorical draw over indices in order."""
    u = rng.random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return SelectionAction(min(idx, len(probs) - 1), len(probs))


def greedy_action(probs: np.ndarray) -> SelectionAction:
    return SelectionAction(argmax_low(probs), len(probs))


def select_clips(video_features: np.ndarray, net: ObservationNet, mode: str = "greedy",
                 rng: Prng | None = None) -> Selection:
    """Pick one clip per section of an ``(M, N, D)`` grid."""
    grid = _check_section(net, video_features)
    if grid.ndim != 3:
        raise ContractError("video grid must be (M, N, D)")
    probs = section_probs(net, grid)
    if mode == "greedy":
        chosen = np.array([greedy_action(p).chosen for p in probs], dtype=np.int64)
    elif mode == "stochastic":
        if rng is None:
            raise ContractError("stochastic selection needs an rng")
        chosen = np.array([sample_action(p, rng).chosen for p in probs], dtype=np.int64)
    else:
        raise ContractError(f"unknown selection mode {mode!r}")
    clips = grid[np.arange(grid.shape[0]), chosen]
    return Selection(clips, probs, chosen)


def logprob_grads(net: ObservationNet, clips: np.ndarray, logit_grads: np.ndarray) -> list[np.ndarray]:
    """Backpropagate per-section logit gradients into Theta.

    ``clips`` is ``(N, D)`` or ``(M, N, D)`` with matching ``logit_grads``
    of shape ``(N,)`` or ``(M, N)``; contributions are summed over sections
    and over the tied encoder applications.
    """
    clips = _check_section(net, clips)
    logit_grads = np.asarray(logit_grads, dtype=np.float64).reshape(-1, net.clips)
    _, enc_acts, head_acts = _logits_trace(net, clips)
    head_grads, g_emb = backward(net.head, head_acts, logit_grads)
    g_emb = g_emb.reshape(-1, net.encoder.output_dim)
    enc_grads, _ = backward(net.encoder, enc_acts, g_emb)
    return enc_grads + head_grads


def policy_logprob_grad(net: ObservationNet, clips: np.ndarray, action: SelectionAction) -> list[np.ndarray]:
    """Gradient of ``sum_n a_n log p_n`` (= ``log p_chosen``) w.r.t. Theta."""
    p = section_probs(net, clips)
    return logprob_grads(net, clips, action.one_hot - p)
