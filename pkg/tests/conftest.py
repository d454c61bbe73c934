import functools

import numpy as np
import pytest

from subnet_ensemble import model as M
from subnet_ensemble.data import AugmentConfig, gen_synthetic, split
from subnet_ensemble.losses import LossConfig
from subnet_ensemble.train import TrainConfig, pretrain


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model_config(**kw):
    base = dict(input_dim=5, encoder_layers=[6], repr_dim=4, num_subnets=3,
                subnet_hidden=6, embed_dim=4, seed=0)
    base.update(kw)
    return M.ModelConfig(**base)


def benchmark_config(seed, **kw):
    """The synthetic benchmark used by the trend tests (C=4, p=16)."""
    model = M.ModelConfig(input_dim=16, encoder_layers=[64], repr_dim=32, num_subnets=5,
                          subnet_hidden=32, embed_dim=16, seed=seed)
    cfg = TrainConfig(epochs=10, batch_size=64, lr=0.05, momentum=0.9, seed=seed,
                      loss=LossConfig(), model=model, augment=AugmentConfig(0.1, 0.2, seed))
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def benchmark_splits(seed):
    d = gen_synthetic(4, 350, 16, 0.5, seed)
    return split(d, 1000 / 1400, 1.0, seed)


@functools.lru_cache(maxsize=None)
def pretrained(seed, lam=2.0, num_subnets=5):
    """Benchmark pretrain run, cached across tests in one session."""
    cfg = benchmark_config(seed)
    cfg.loss = LossConfig(lam=lam)
    cfg.model = M.ModelConfig(**{**cfg.model.__dict__, "num_subnets": num_subnets})
    train, _, _ = benchmark_splits(seed)
    return pretrain(train, cfg)


_CRITERIA: dict[int, str] = {}


def record_criterion(number, passed, detail):
    _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])
