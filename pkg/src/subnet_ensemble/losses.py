"""Contrastive loss on averaged embeddings plus the sub-network diversity hinge.

Both terms are averaged over the batch, so with ``lam`` fixed the total
objective does not scale with batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ops_for, value_of
from .errors import ContractError, DomainError, ShapeError
from .model import EmbeddingSet
from .tensor import Tensor


@dataclass
class LossConfig:
    temperature: float = 0.07
    alpha: float = 0.15
    lam: float = 2.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.temperature <= 0 or self.alpha <= 0 or self.epsilon <= 0:
            raise ContractError(f"temperature, alpha and epsilon must be > 0: {self}")
        if self.lam < 0:
            raise ContractError(f"lam must be >= 0, got {self.lam}")


@dataclass
class LossBreakdown:
    ssl: float
    div: float
    total: float
    total_std: float | None
    root: object = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"ssl": self.ssl, "div": self.div, "total": self.total,
                "total_std": self.total_std}


def _pair_masks(n: int) -> tuple[Tensor, Tensor]:
    """Masks over the 2N x 2N similarity matrix: all-but-self and positive pairs."""
    others = np.ones((2 * n, 2 * n)) - np.eye(2 * n)
    pos = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    pos[idx, idx + n] = 1.0
    pos[idx + n, idx] = 1.0
    return Tensor(others), Tensor(pos)


def ssl_loss(e1: EmbeddingSet, e2: EmbeddingSet, t: float, graph: Graph | None = None):
    """NT-Xent over the 2N mean embeddings, averaged over all 2N anchors.

    For anchor ``i`` the positive is the other view of the same sample and the
    denominator runs over the remaining ``2N - 1`` embeddings.  Logits are
    shifted by ``1/t`` (the largest possible cosine over ``t``) before ``exp``;
    the shift cancels between numerator and denominator.
    """
    if t <= 0:
        raise ContractError(f"temperature must be > 0, got {t}")
    ops = ops_for(graph)
    zs = ops.concat([e1.mean, e2.mean], axis=0)
    zv = value_of(zs).array
    n2 = zv.shape[0]
    if n2 != 2 * value_of(e1.mean).shape[0]:
        raise ShapeError("both views must hold the same number of samples")
    norms_sq = ops.reduce(ops.mul(zs, zs), 1, "sum")
    zero = np.flatnonzero(value_of(norms_sq).array == 0)
    if zero.size:
        raise DomainError(f"mean embedding {int(zero[0])} has zero norm; cosine undefined")
    inv_norm = ops.div(ops.const(Tensor.ones(n2)), ops.map(norms_sq, "sqrt"))
    unit = ops.scale_rows(zs, inv_norm)
    sim = ops.matmul(unit, ops.transpose(unit))
    logits = ops.map(ops.map(sim, "add_scalar", -1.0), "mul_scalar", 1.0 / t)
    expd = ops.map(logits, "exp")
    others, pos = _pair_masks(n2 // 2)
    denom = ops.reduce(ops.mul(expd, ops.const(others)), 1, "sum")
    numer = ops.reduce(ops.mul(expd, ops.const(pos)), 1, "sum")
    per_anchor = ops.sub(ops.map(denom, "log"), ops.map(numer, "log"))
    return ops.reduce(per_anchor, 0, "mean")


def _hinge_sum(ops, std, alpha):
    # per-sample sum over coordinates of max(0, alpha - std)
    return ops.reduce(ops.map(std, "hinge_below", alpha), 1, "sum")


def diversity_loss(e1: EmbeddingSet, e2: EmbeddingSet, alpha: float, graph: Graph | None = None):
    """``(1/N) sum_k sum_o [max(0, a - std[k,o]) + max(0, a - std'[k,o])]``."""
    if e1.std is None or e2.std is None:
        raise ContractError("diversity loss needs at least 2 sub-networks")
    ops = ops_for(graph)
    per_sample = ops.add(_hinge_sum(ops, e1.std, alpha), _hinge_sum(ops, e2.std, alpha))
    return ops.reduce(per_sample, 0, "mean")


def total_std(e1: EmbeddingSet, e2: EmbeddingSet) -> float | None:
    """Sum of every per-coordinate std over both views."""
    if e1.std is None or e2.std is None:
        return None
    return float(value_of(e1.std).array.sum() + value_of(e2.std).array.sum())


def total_loss(e1: EmbeddingSet, e2: EmbeddingSet, cfg: LossConfig,
               graph: Graph | None = None) -> LossBreakdown:
    """``ssl + lam * div``.  With one sub-network only ``lam == 0`` is allowed."""
    ops = ops_for(graph)
    ssl = ssl_loss(e1, e2, cfg.temperature, graph)
    if e1.std is None:
        if cfg.lam != 0:
            raise ContractError("lam > 0 needs at least 2 sub-networks")
        s = value_of(ssl).item()
        return LossBreakdown(s, 0.0, s, None, ssl)
    div = diversity_loss(e1, e2, cfg.alpha, graph)
    total = ops.add(ssl, ops.map(div, "mul_scalar", cfg.lam))
    return LossBreakdown(
        value_of(ssl).item(),
        value_of(div).item(),
        value_of(total).item(),
        total_std(e1, e2),
        total,
    )


def diversity_grad_oracle(z, alpha: float, eps: float) -> Tensor:
    """Closed-form derivative of one sample's diversity term w.r.t. its embeddings.

    For ``z`` of shape [N, M, q] returns ``d l_div(x_k) / d z[k, m, o]``, where
    ``l_div(x_k) = sum_o max(0, alpha - std[k, o])`` for a single view:

        -(z[k,m,o] - mean[k,o]) / ((M - 1) * std[k,o])   where std < alpha
        0                                                 elsewhere

    The batch-averaged :func:`diversity_loss` carries an extra ``1/N``.
    """
    z = np.asarray(value_of(z) if not isinstance(z, np.ndarray) else z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"expected [N, M, q] embeddings, got {z.shape}")
    m = z.shape[1]
    if m < 2:
        raise ContractError("diversity gradient needs at least 2 sub-networks")
    mean = z.mean(axis=1, keepdims=True)
    centred = z - mean
    std = np.sqrt((centred ** 2).sum(axis=1, keepdims=True) / (m - 1) + eps)
    active = std < alpha
    return Tensor(np.where(active, -centred / ((m - 1) * std), 0.0))


def variance_scaled_grad(z, alpha: float) -> Tensor:
    """Alternative closed form that scales by the variance ``A`` instead of ``1/std``.

    ``-A / (M - 1) * (z - mean)`` with ``A`` the unbiased variance and no eps.
    Kept for comparison only: it shares the sign and direction of
    :func:`diversity_grad_oracle` but not its magnitude, and it disagrees with
    finite differences.
    """
    z = np.asarray(value_of(z) if not isinstance(z, np.ndarray) else z, dtype=np.float64)
    m = z.shape[1]
    centred = z - z.mean(axis=1, keepdims=True)
    var = (centred ** 2).sum(axis=1, keepdims=True) / (m - 1)
    active = np.sqrt(var) < alpha
    return Tensor(np.where(active, -var / (m - 1) * centred, 0.0))
