"""Policy comparison harness: accuracy metrics, MAC accounting, sweeps, dumps."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import ClipClassifier, fuse, make_classifier
from .errors import ConfigError
from .numeric import Prng, SgdState, forward, softmax
from .sampler import ObservationNet, section_probs
from .synthgen import Dataset, SyntheticVideo
from .trainer import TrainConfig, train_on_uniform_clips

POLICIES = ("dsn", "random", "uniform", "max_response", "dense", "oracle")
METRICS_COLUMNS = ["policy", "M_test", "N", "top1", "top5", "map", "cost_macs", "clips_used", "seed"]
SELECTION_COLUMNS = ["video_id", "section", "clip", "prob", "chosen", "planted"]


@dataclass(frozen=True)
class CostModel:
    encoder: int
    head: int
    classifier: int
    response: int = 0

    @classmethod
    def from_nets(cls, obs: ObservationNet, clf: ClipClassifier, response: ClipClassifier | None = None):
        return cls(
            encoder=obs.encoder.macs,
            head=obs.head.macs,
            classifier=clf.net.macs,
            response=response.net.macs if response is not None else 0,
        )


def cost_of(policy: str, cm: CostModel, M: int, N: int, M_test: int) -> int:
    """MACs per video at inference. ``M`` is the dataset's section count."""
    if policy == "dsn":
        return M_test * N * cm.encoder + M_test * cm.head + M_test * cm.classifier
    if policy == "max_response":
        return M_test * N * cm.response + M_test * cm.classifier
    if policy in ("random", "uniform"):
        return M_test * cm.classifier
    if policy in ("dense", "oracle"):
        return M * N * cm.classifier
    raise ConfigError(f"unknown policy {policy!r}")


def clips_used(policy: str, M: int, N: int, M_test: int) -> int:
    return M * N if policy in ("dense", "oracle") else M_test


@dataclass
class VideoResult:
    video_id: int
    label: int
    predicted: int
    fused: np.ndarray | None


@dataclass
class MetricsReport:
    policy: str
    M_test: int
    N: int
    top1: float
    top5: float | None
    map: float | None
    cost_macs: int
    clips_used: int
    seed: int
    excluded_classes: list[int] = field(default_factory=list)
    videos: list[VideoResult] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in METRICS_COLUMNS}


def resection_index(M: int, N: int, M_test: int) -> np.ndarray:
    """Flat clip positions ``(M_test, N)`` re-dividing a video into ``M_test`` sections.

    The ``M*N`` clips are read in temporal order and ``M_test*N`` positions
    are taken at evenly spaced centers; ``M_test == M`` is the identity.
    """
    if M_test < 1:
        raise ConfigError("M_test must be >= 1")
    total = M * N
    i = np.arange(M_test * N)
    pos = ((2 * i + 1) * total) // (2 * M_test * N)
    return pos.reshape(M_test, N)


def resection(video: SyntheticVideo, M_test: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid ``(M_test, N, D)`` and planted index per new section (-1 if none)."""
    M, N, D = video.features.shape
    pos = resection_index(M, N, M_test)
    flat = video.features.reshape(M * N, D)
    planted_flat = np.zeros(M * N, dtype=bool)
    for m, p in enumerate(video.planted):
        if p >= 0:
            planted_flat[m * N + p] = True
    hits = planted_flat[pos]
    planted = np.where(hits.any(axis=1), hits.argmax(axis=1), -1)
    return flat[pos], planted


def compute_map(scores: np.ndarray, labels: np.ndarray, video_ids: np.ndarray | None = None):
    """Mean average precision over classes with at least one positive.

    Returns ``(map, excluded_classes)``. Videos are ranked per class by score
    descending, ties broken by ascending video id.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n, J = scores.shape
    if video_ids is None:
        video_ids = np.arange(n)
    aps, excluded = [], []
    for j in range(J):
        pos = labels == j
        if not pos.any():
            excluded.append(j)
            continue
        order = np.lexsort((video_ids, -scores[:, j]))
        rel = pos[order]
        ranks = np.flatnonzero(rel) + 1
        precision = np.arange(1, len(ranks) + 1) / ranks
        aps.append(float(precision.mean()))
    value = float(np.mean(aps)) if aps else float("nan")
    return value, excluded


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label is among the ``k`` best scores (stable, low index first on ties)."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return np.any(order == np.asarray(labels)[:, None], axis=1)


def train_max_response(dataset: Dataset, cfg: TrainConfig) -> ClipClassifier:
    """Independent classifier sized like the observation encoder, for max-response selection."""
    spec = dataset.spec
    rng = Prng(cfg.seed).substream("response")
    net = make_classifier(spec.feature_dim, spec.num_classes, rng.substream("init"), hidden=cfg.encoder_hidden)
    state = SgdState(cfg.clf_lr, cfg.clf_momentum, cfg.weight_decay)
    train_on_uniform_clips(dataset.train, net, cfg.response_epochs, state, rng.substream("train"), cfg.lr_decay_epochs)
    return net


def _select(policy, grids, clf_probs, obs, response, rng):
    """Chosen clip index per (video, section) for the single-clip policies."""
    V, Mt, N, _ = grids.shape
    if policy == "dsn":
        return np.argmax(section_probs(obs, grids), axis=-1)
    if policy == "random":
        return rng.integers(N, size=(V, Mt))
    if policy == "uniform":
        return np.full((V, Mt), N // 2)
    if policy == "max_response":
        logits = forward(response.net, grids.reshape(-1, grids.shape[-1]))[-1]
        peak = softmax(logits).max(axis=-1).reshape(V, Mt, N)
        return np.argmax(peak, axis=-1)
    raise ConfigError(f"unknown policy {policy!r}")


def eval_policy(
    videos: list[SyntheticVideo],
    policy: str,
    clf: ClipClassifier,
    obs: ObservationNet | None = None,
    M_test: int | None = None,
    rng: Prng | None = None,
    response: ClipClassifier | None = None,
    fusion: str = "probs",
    oracle_mode: str = "clip",
    cost_model: CostModel | None = None,
    seed: int = 0,
) -> MetricsReport:
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy == "dsn" and obs is None:
        raise ConfigError("policy 'dsn' needs an observation network")
    if policy == "max_response" and response is None:
        raise ConfigError("policy 'max_response' needs a trained response network")
    if oracle_mode not in ("clip", "section"):
        raise ConfigError(f"unknown oracle mode {oracle_mode!r}")
    if not videos:
        raise ConfigError("no videos to evaluate")
    if rng is None:
        rng = Prng(seed).substream("eval")
    videos = sorted(videos, key=lambda v: v.video_id)
    M, N, D = videos[0].features.shape
    J = clf.num_classes
    M_test = M if M_test is None else M_test
    labels = np.array([v.label for v in videos])
    ids = np.array([v.video_id for v in videos])
    V = len(videos)

    all_logits = forward(clf.net, np.stack([v.features for v in videos]).reshape(-1, D))[-1]
    all_logits = all_logits.reshape(V, M * N, J)
    all_probs = softmax(all_logits)

    fused = None
    if policy == "oracle":
        clip_correct = np.argmax(all_probs, axis=-1) == labels[:, None]
        if oracle_mode == "clip":
            correct = clip_correct.any(axis=1)
            predicted = np.where(correct, labels, np.argmax(all_probs.mean(axis=1), axis=-1))
            top5_hit = np.array([
                topk_hits(all_probs[i], np.full(M * N, labels[i]), 5).any() for i in range(V)
            ]) if J >= 10 else None
        else:
            pos = resection_index(M, N, M_test)
            lab_scores = all_probs[np.arange(V), :, labels][:, pos]  # (V, M_test, N)
            pick = pos[np.arange(M_test), np.argmax(lab_scores, axis=-1)]
            sel_probs = np.take_along_axis(all_probs, pick[:, :, None], axis=1)
            sel_logits = np.take_along_axis(all_logits, pick[:, :, None], axis=1)
            fused = np.stack([fuse(p, fusion, l) for p, l in zip(sel_probs, sel_logits)])
            predicted = np.argmax(fused, axis=-1)
            correct = predicted == labels
            top5_hit = topk_hits(fused, labels, 5) if J >= 10 else None
        map_value, excluded = None, []
    else:
        if policy == "dense":
            sel_probs, sel_logits = all_probs, all_logits
        else:
            pos = resection_index(M, N, M_test)
            grids = np.stack([v.features.reshape(M * N, D)[pos] for v in videos])
            chosen = _select(policy, grids, all_probs, obs, response, rng)
            flat = pos[np.arange(M_test), chosen]  # (V, M_test) source positions
            sel_probs = np.take_along_axis(all_probs, flat[:, :, None], axis=1)
            sel_logits = np.take_along_axis(all_logits, flat[:, :, None], axis=1)
        fused = np.stack([fuse(p, fusion, l) for p, l in zip(sel_probs, sel_logits)])
        predicted = np.argmax(fused, axis=-1)
        correct = predicted == labels
        top5_hit = topk_hits(fused, labels, 5) if J >= 10 else None
        map_value, excluded = compute_map(fused, labels, ids)

    if cost_model is None:
        cost_model = CostModel.from_nets(obs, clf, response) if obs is not None else CostModel(0, 0, clf.net.macs, 0 if response is None else response.net.macs)
    results = [
        VideoResult(int(ids[i]), int(labels[i]), int(predicted[i]), None if fused is None else fused[i])
        for i in range(V)
    ]
    return MetricsReport(
        policy=policy,
        M_test=M_test,
        N=N,
        top1=float(np.mean(correct)),
        top5=None if top5_hit is None else float(np.mean(top5_hit)),
        map=map_value,
        cost_macs=cost_of(policy, cost_model, M, N, M_test),
        clips_used=clips_used(policy, M, N, M_test),
        seed=seed,
        excluded_classes=excluded,
        videos=results,
    )


def sweep_M(
    videos: list[SyntheticVideo],
    clf: ClipClassifier,
    obs: ObservationNet | None,
    M_range,
    policies,
    response: ClipClassifier | None = None,
    seed: int = 0,
    fusion: str = "probs",
    baseline_clf: ClipClassifier | None = None,
) -> list[MetricsReport]:
    """Evaluate every policy at every ``M_test``; rows ordered by M_test then policy.

    ``clf`` scores the ``dsn`` policy; the other policies use ``baseline_clf``
    (the pretrained classifier) when it is given.
    """
    rows = []
    for M_test in M_range:
        for policy in policies:
            rng = Prng(seed).substream(f"eval/{policy}/{M_test}")
            scorer = clf if policy == "dsn" or baseline_clf is None else baseline_clf
            rows.append(eval_policy(
                videos, policy, scorer, obs=obs, M_test=M_test, rng=rng,
                response=response, fusion=fusion, seed=seed,
            ))
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in reports:
        w.writerow([_fmt(v) for v in r.row().values()])
    return buf.getvalue()


def selection_rows(videos: list[SyntheticVideo], obs: ObservationNet) -> list[dict]:
    videos = sorted(videos, key=lambda v: v.video_id)
    probs = section_probs(obs, np.stack([v.features for v in videos]))
    rows = []
    for v, p in zip(videos, probs):
        for m, sec in enumerate(p):
            chosen = int(np.argmax(sec))
            for n, value in enumerate(sec):
                rows.append({
                    "video_id": v.video_id,
                    "section": m,
                    "clip": n,
                    "prob": float(value),
                    "chosen": n == chosen,
                    "planted": n == v.planted[m],
                })
    return rows


def selections_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SELECTION_COLUMNS)
    for r in rows:
        w.writerow([
            r["video_id"], r["section"], r["clip"], repr(r["prob"]),
            int(r["chosen"]), int(r["planted"]),
        ])
    return buf.getvalue()


def dump_selections(videos: list[SyntheticVideo], obs: ObservationNet, path) -> list[dict]:
    from .synthgen import atomic_write_bytes

    rows = selection_rows(videos, obs)
    atomic_write_bytes(path, selections_csv(rows).encode("utf-8"))
    return rows


def read_selections(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "video_id": int(r["video_id"]),
                "section": int(r["section"]),
                "clip": int(r["clip"]),
                "prob": float(r["prob"]),
                "chosen": r["chosen"] == "1",
                "planted": r["planted"] == "1",
            }
            for r in csv.DictReader(fh)
        ]


def hit_rate_from_rows(rows: list[dict]) -> float:
    """Fraction of sections with a planted clip whose chosen clip is the planted one."""
    sections: dict[tuple[int, int], list[dict]] = {}
    for r in rows:
        sections.setdefault((r["video_id"], r["section"]), []).append(r)
    hits = total = 0
    for clips in sections.values():
        if any(c["planted"] for c in clips):
            total += 1
            hits += any(c["planted"] and c["chosen"] for c in clips)
    return hits / total if total else float("nan")
