"""Flat ``key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment. Unknown keys, duplicate
keys and missing required keys are errors that name the key (and line).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .bench import POLICIES
from .errors import ConfigError
from .synthgen import DatasetSpec
from .trainer import TrainConfig


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.replace(",", " ").split())


# key -> (parser, default); a default of ``None`` marks the key as required.
KEYS: dict[str, tuple] = {
    # dataset
    "num_classes": (int, None),
    "sections": (int, None),
    "clips_per_section": (int, None),
    "feature_dim": (int, None),
    "signal_strength": (float, 2.0),
    "noise_sigma": (float, 1.0),
    "background_section_prob": (float, 0.0),
    "confuser_prob": (float, 0.2),
    "train_count": (int, None),
    "test_count": (int, None),
    # training
    "epochs": (int, 30),
    "pretrain_epochs": (int, 30),
    "response_epochs": (int, 30),
    "fix_classifier": (_bool, False),
    "policy_lr": (float, 0.003),
    "policy_momentum": (float, 0.0),
    "clf_lr": (float, 0.001),
    "clf_momentum": (float, 0.9),
    "weight_decay": (float, 1e-3),
    "gamma": (float, 0.2),
    "lr_decay_epochs": (_int_list, ()),
    "reward_mode": (str, "clip"),
    "embed_dim": (int, 4),
    "encoder_hidden": (int, 8),
    "classifier_hidden": (int, 64),
    "checkpoint_every": (int, 0),
    # evaluation
    "m_test": (_int_list, (2,)),
    "sweep_m": (_int_list, (1, 2, 3, 4)),
    "policies": (_str_list, POLICIES),
    "fusion": (str, "probs"),
    "oracle_mode": (str, "clip"),
    # run
    "seed": (int, None),
    "out_dir": (str, "out"),
}

_DATASET_KEYS = [
    "num_classes", "sections", "clips_per_section", "feature_dim", "signal_strength",
    "noise_sigma", "background_section_prob", "confuser_prob", "train_count", "test_count",
]


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<config>"

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kw.items():
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            vals[k] = v
        cfg = ExperimentConfig(vals, self.source)
        cfg.validate()
        return cfg

    @property
    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(**{k: self.values[k] for k in _DATASET_KEYS}, seed=self.values["seed"])

    @property
    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["epochs"], pretrain_epochs=v["pretrain_epochs"], fix_classifier=v["fix_classifier"],
            policy_lr=v["policy_lr"], policy_momentum=v["policy_momentum"], clf_lr=v["clf_lr"],
            clf_momentum=v["clf_momentum"], weight_decay=v["weight_decay"], gamma=v["gamma"],
            lr_decay_epochs=v["lr_decay_epochs"], reward_mode=v["reward_mode"], embed_dim=v["embed_dim"],
            encoder_hidden=v["encoder_hidden"], classifier_hidden=v["classifier_hidden"],
            response_epochs=v["response_epochs"], seed=v["seed"],
        )

    def validate(self) -> None:
        self.dataset_spec.validate()
        self.train_config.validate()
        for p in self.values["policies"]:
            if p not in POLICIES:
                raise ConfigError(f"key 'policies': unknown policy {p!r}")
        if self.values["fusion"] not in ("probs", "logits"):
            raise ConfigError("key 'fusion' must be 'probs' or 'logits'")
        if self.values["oracle_mode"] not in ("clip", "section"):
            raise ConfigError("key 'oracle_mode' must be 'clip' or 'section'")
        for key in ("m_test", "sweep_m"):
            if not self.values[key] or min(self.values[key]) < 1:
                raise ConfigError(f"key {key!r} needs positive integers")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = KEYS[key][0]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for key {key!r}: {exc}") from None
    for key, (_, default) in KEYS.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"{source}: missing required key {key!r}")
            values[key] = default
    cfg = ExperimentConfig(values, source)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
