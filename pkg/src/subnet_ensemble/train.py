"""Pretraining loop, frozen-encoder linear probe and the deep-ensemble baseline."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import model as M
from .autodiff import Graph
from .data import AugmentConfig, Dataset, augment
from .errors import ContractError, DomainError, NonFiniteError, TrainingDivergedError
from .losses import LossBreakdown, LossConfig, total_loss
from .model import ModelConfig, ModelParams
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    cosine: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ContractError("lr must be >= 0 and momentum in [0, 1)")


@dataclass
class StepRecord:
    step: int
    epoch: int
    ssl: float
    div: float
    total: float
    total_std: float | None

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class TrainTrace:
    records: list[StepRecord]
    params: ModelParams
    initial: ModelParams | None = None

    def final_epoch_total_std(self) -> float | None:
        if not self.records:
            return None
        last = self.records[-1].epoch
        vals = [r.total_std for r in self.records if r.epoch == last]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def sgd_step(params: ModelParams, velocity: dict[str, np.ndarray], grads: dict[str, Tensor],
             lr: float, momentum: float) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """``v <- momentum * v + g``, ``w <- w - lr * v`` for every parameter."""
    new_v, updates = {}, {}
    for name, w in params.tensors().items():
        v = momentum * velocity[name] + grads[name].array
        new_v[name] = v
        updates[name] = Tensor(w.array - lr * v)
    return params.replace(updates), new_v


def loss_graph(params: ModelParams, v1, v2, cfg: TrainConfig) -> tuple[Graph, LossBreakdown]:
    g = Graph()
    bn = cfg.model.batch_norm
    eps = cfg.loss.epsilon
    e1 = M.project(params, M.encode(params, Tensor(v1), g), g, eps, bn)
    e2 = M.project(params, M.encode(params, Tensor(v2), g), g, eps, bn)
    return g, total_loss(e1, e2, cfg.loss, g)


def pretrain(d: Dataset, cfg: TrainConfig, on_step: Callable[[StepRecord], None] | None = None,
             params: ModelParams | None = None) -> TrainTrace:
    """Self-supervised pretraining by SGD with momentum on the total loss.

    Each epoch reshuffles and drops the last partial batch.  Shuffling and
    augmentation share one generator seeded by ``cfg.seed``.
    """
    params = M.init(cfg.model) if params is None else params
    initial = params
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    n = len(d)
    steps_per_epoch = n // cfg.batch_size
    total_steps = max(1, steps_per_epoch * cfg.epochs)
    velocity = {k: np.zeros(v.shape) for k, v in params.tensors().items()}
    records: list[StepRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(steps_per_epoch):
            xb = d.x[perm[s * cfg.batch_size:(s + 1) * cfg.batch_size]]
            v1, v2 = augment(xb, cfg.augment, rng)
            try:
                g, br = loss_graph(params, v1, v2, cfg)
                if not math.isfinite(br.total):
                    raise TrainingDivergedError(step, br.as_dict())
                grads = g.param_grads(g.backward(br.root))
                lr = cfg.lr
                if cfg.cosine:
                    lr = 0.5 * cfg.lr * (1 + math.cos(math.pi * step / total_steps))
                params, velocity = sgd_step(params, velocity, grads, lr, cfg.momentum)
            except (NonFiniteError, DomainError) as exc:
                raise TrainingDivergedError(step, records[-1].__dict__ if records else None,
                                            str(exc)) from exc
            rec = StepRecord(step, epoch, br.ssl, br.div, br.total, br.total_std)
            records.append(rec)
            if on_step is not None:
                on_step(rec)
            step += 1
        if records:
            log.debug("epoch %d: total=%.4f", epoch, records[-1].total)
    return TrainTrace(records, params, initial)


# ----------------------------------------------------------------- probing


@dataclass
class ProbeConfig:
    lr: float = 0.1
    epochs: int = 500
    standardize: bool = True
    l2: float = 0.0


@dataclass
class ProbeWeights:
    w: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    scale: np.ndarray

    def probs(self, feats: np.ndarray) -> np.ndarray:
        return softmax(((feats - self.mu) / self.scale) @ self.w + self.b)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_softmax(feats: np.ndarray, y: np.ndarray, num_classes: int,
                cfg: ProbeConfig) -> ProbeWeights:
    """Full-batch gradient descent on mean cross-entropy, zero-initialised."""
    present = np.unique(y)
    if present.size != num_classes:
        missing = sorted(set(range(num_classes)) - set(present.tolist()))
        raise ContractError(f"classes {missing} are absent from the labeled set")
    if cfg.standardize:
        mu = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mu = np.zeros(feats.shape[1])
        scale = np.ones(feats.shape[1])
    xs = (feats - mu) / scale
    n = xs.shape[0]
    onehot = np.eye(num_classes)[y]
    w = np.zeros((xs.shape[1], num_classes))
    b = np.zeros(num_classes)
    for _ in range(cfg.epochs):
        p = softmax(xs @ w + b)
        gz = (p - onehot) / n
        w -= cfg.lr * (xs.T @ gz + cfg.l2 * w)
        b -= cfg.lr * gz.sum(axis=0)
    return ProbeWeights(w, b, mu, scale)


def representations(params: ModelParams | None, x: np.ndarray) -> np.ndarray:
    """Encoder output for ``x``; ``params=None`` returns the raw inputs."""
    if params is None:
        return np.asarray(x, dtype=np.float64)
    return M.encode(params, Tensor(x)).array


def linear_probe(params: ModelParams | None, labeled: Dataset, test: Dataset,
                 probe_cfg: ProbeConfig | None = None) -> tuple[Tensor, ProbeWeights]:
    """Softmax regression on frozen representations; sub-networks are not used."""
    probe_cfg = probe_cfg or ProbeConfig()
    weights = fit_softmax(representations(params, labeled.x), labeled.y,
                          labeled.num_classes, probe_cfg)
    return Tensor(weights.probs(representations(params, test.x))), weights


def ensemble_probe(members: list[ModelParams], labeled: Dataset, test: Dataset,
                   probe_cfg: ProbeConfig | None = None) -> Tensor:
    """One probe per member; the class probabilities are averaged."""
    probs = [linear_probe(p, labeled, test, probe_cfg)[0].array for p in members]
    return Tensor(np.mean(probs, axis=0))


# ---------------------------------------------------------- deep ensemble


def member_config(cfg: TrainConfig, j: int) -> TrainConfig:
    """Single-head, diversity-free copy of ``cfg`` with seeds offset by ``j``."""
    return replace(
        cfg,
        seed=cfg.seed + j,
        loss=replace(cfg.loss, lam=0.0),
        model=replace(cfg.model, num_subnets=1, seed=cfg.model.seed + j),
    )


def train_deep_ensemble(d: Dataset, cfg: TrainConfig, members: int,
                        workers: int = 1) -> list[TrainTrace]:
    if members < 1:
        raise ContractError(f"need at least one member, got {members}")
    cfgs = [member_config(cfg, j) for j in range(members)]
    if workers <= 1:
        return [pretrain(d, c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: pretrain(d, c), cfgs))
