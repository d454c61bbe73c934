"""Experiment configuration stored as flat INI sections of ``key = value`` pairs."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import AugmentConfig
from .errors import ContractError
from .losses import LossConfig
from .model import ModelConfig
from .train import ProbeConfig, TrainConfig


@dataclass
class ExperimentSection:
    name: str = "synthetic"
    out: str = "runs"
    seed: int = 0


@dataclass
class ModelSection:
    encoder_layers: list[int] = field(default_factory=lambda: [64])
    repr_dim: int = 32
    num_subnets: int = 5
    subnet_hidden: int = 32
    embed_dim: int = 16
    subnet_depth: int = 2
    batch_norm: bool = False


@dataclass
class LossSection:
    temperature: float = 0.07
    alpha: float = 0.15
    lam: float = 2.0
    epsilon: float = 1e-4


@dataclass
class TrainSection:
    method: str = "subnets"  # subnets | deep_ensemble
    ensemble_members: int = 10
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    cosine: bool = False


@dataclass
class AugmentSection:
    noise_sigma: float = 0.1
    mask_prob: float = 0.2


@dataclass
class DataSection:
    source: str = "synthetic"  # synthetic | idx | csv
    classes: int = 4
    per_class: int = 350
    dim: int = 16
    spread: float = 0.5
    train_frac: float = 0.7142857142857143
    label_frac: float = 1.0
    images: str = ""
    labels: str = ""
    csv: str = ""


@dataclass
class ProbeSection:
    lr: float = 0.1
    epochs: int = 500
    standardize: bool = True
    l2: float = 0.0


@dataclass
class EvalSection:
    ece_bins: int = 15
    tace_bins: int = 15
    tace_threshold: float = 0.01
    ood_level: int = 5
    ood_scores: list[str] = field(default_factory=lambda: ["subnet_std", "knn"])
    corruption_levels: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])


SECTIONS = {
    "experiment": ExperimentSection,
    "model": ModelSection,
    "loss": LossSection,
    "train": TrainSection,
    "augment": AugmentSection,
    "data": DataSection,
    "probe": ProbeSection,
    "eval": EvalSection,
}


def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_encode(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _decode(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ContractError(f"not a boolean: {raw!r}")
    if isinstance(default, list):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if default and isinstance(default[0], int):
            return [int(s) for s in items]
        if not default and all(s.lstrip("-").isdigit() for s in items):
            return [int(s) for s in items]
        return items
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ContractError(f"cannot parse {raw!r}: {exc}") from None
    return raw


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    data: DataSection = field(default_factory=DataSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return {s: {f.name: getattr(getattr(self, s), f.name) for f in fields(getattr(self, s))}
                for s in SECTIONS}

    def to_ini(self) -> str:
        out = io.StringIO()
        for s, values in self.to_dict().items():
            out.write(f"[{s}]\n")
            for k, v in values.items():
                out.write(f"{k} = {_encode(v)}".rstrip() + "\n")
            out.write("\n")
        return out.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ContractError(f"malformed config: {exc}") from None
        cfg = cls()
        for s in cp.sections():
            for k, v in cp.items(s):
                cfg = cfg.with_override(f"{s}.{k}", v)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))

    def with_override(self, key: str, value: str) -> "ExperimentConfig":
        """Copy with ``section.key`` replaced by the parsed ``value``."""
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ContractError(f"unknown config key {key!r}")
        sec = getattr(self, section)
        names = {f.name for f in fields(sec)}
        if name not in names:
            raise ContractError(f"unknown config key {key!r}")
        new_sec = replace(sec, **{name: _decode(str(value), getattr(sec, name))})
        return replace(self, **{section: new_sec})

    def digest(self) -> str:
        """Short hash of everything except the output directory."""
        return hashlib.sha256(self.with_override("experiment.out", "").to_ini().encode()).hexdigest()[:16]

    # -- builders --------------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def model_config(self, input_dim: int) -> ModelConfig:
        m = self.model
        return ModelConfig(input_dim=input_dim, encoder_layers=list(m.encoder_layers),
                           repr_dim=m.repr_dim, num_subnets=m.num_subnets,
                           subnet_hidden=m.subnet_hidden, embed_dim=m.embed_dim,
                           seed=self.seed, subnet_depth=m.subnet_depth, batch_norm=m.batch_norm)

    def loss_config(self) -> LossConfig:
        lc = self.loss
        return LossConfig(lc.temperature, lc.alpha, lc.lam, lc.epsilon)

    def train_config(self, input_dim: int) -> TrainConfig:
        t = self.train
        if t.method not in ("subnets", "deep_ensemble"):
            raise ContractError(f"unknown training method {t.method!r}")
        return TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, momentum=t.momentum,
            seed=self.seed, cosine=t.cosine, loss=self.loss_config(),
            model=self.model_config(input_dim),
            augment=AugmentConfig(self.augment.noise_sigma, self.augment.mask_prob, self.seed),
        )

    def probe_config(self) -> ProbeConfig:
        p = self.probe
        return ProbeConfig(p.lr, p.epochs, p.standardize, p.l2)
