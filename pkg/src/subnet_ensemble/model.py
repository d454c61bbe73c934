"""Shared encoder followed by M independent projection sub-networks."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .autodiff import Graph, Node, ops_for, value_of
from .errors import ContractError, ShapeError
from .tensor import Tensor

INIT_SCHEME = "glorot_uniform"
BN_EPS = 1e-5


@dataclass
class ModelConfig:
    input_dim: int = 16
    encoder_layers: list[int] = field(default_factory=lambda: [64])
    repr_dim: int = 32
    num_subnets: int = 5
    subnet_hidden: int = 32
    embed_dim: int = 16
    seed: int = 0
    subnet_depth: int = 2
    batch_norm: bool = False

    def __post_init__(self):
        self.encoder_layers = [int(w) for w in self.encoder_layers]
        dims = [self.input_dim, self.repr_dim, self.num_subnets, self.subnet_hidden,
                self.embed_dim, *self.encoder_layers]
        if any(int(v) < 1 for v in dims):
            raise ContractError(f"all model dimensions must be >= 1: {asdict(self)}")
        if self.subnet_depth not in (1, 2):
            raise ContractError(f"subnet_depth must be 1 or 2, got {self.subnet_depth}")

    def encoder_dims(self) -> list[int]:
        """Layer widths from input to representation; empty means identity."""
        if not self.encoder_layers and self.input_dim == self.repr_dim:
            return []
        return [self.input_dim, *self.encoder_layers, self.repr_dim]

    def subnet_dims(self) -> list[int]:
        if self.subnet_depth == 1:
            return [self.repr_dim, self.embed_dim]
        return [self.repr_dim, self.subnet_hidden, self.embed_dim]


@dataclass
class ModelParams:
    """Encoder weights ``theta`` and one weight dict per sub-network in ``phi``.

    Weights are stored ``[fan_in, fan_out]`` so a layer computes ``x @ w + b``.
    """

    theta: dict[str, Tensor]
    phi: list[dict[str, Tensor]]

    @property
    def num_subnets(self) -> int:
        return len(self.phi)

    def tensors(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.theta.items()}
        for m, sub in enumerate(self.phi):
            out.update({f"sub.{m}.{k}": v for k, v in sub.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor]) -> "ModelParams":
        theta: dict[str, Tensor] = {}
        phi: dict[int, dict[str, Tensor]] = {}
        for name, t in tensors.items():
            head, _, rest = name.partition(".")
            if head == "enc":
                theta[rest] = t
            elif head == "sub":
                m, _, key = rest.partition(".")
                phi.setdefault(int(m), {})[key] = t
            else:
                raise ContractError(f"unrecognised parameter name {name!r}")
        if sorted(phi) != list(range(len(phi))):
            raise ContractError(f"sub-network indices are not contiguous: {sorted(phi)}")
        return cls(theta, [phi[m] for m in range(len(phi))])

    def replace(self, updates: dict[str, Tensor]) -> "ModelParams":
        tensors = self.tensors()
        unknown = set(updates) - set(tensors)
        if unknown:
            raise ContractError(f"unknown parameters {sorted(unknown)}")
        tensors.update(updates)
        return ModelParams.from_tensors(tensors)

    def theta_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.theta):
            h.update(name.encode())
            h.update(self.theta[name].array.tobytes())
        return h.hexdigest()


@dataclass
class EmbeddingSet:
    """Per-sub-network embeddings ``z`` [N, M, q] with their mean and std over M.

    Fields hold graph nodes when built on a :class:`Graph`, tensors otherwise.
    ``std`` is None for a single sub-network.
    """

    z: Any
    mean: Any
    std: Any | None

    def values(self) -> "EmbeddingSet":
        return EmbeddingSet(value_of(self.z), value_of(self.mean),
                            None if self.std is None else value_of(self.std))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)))


def _mlp_params(rng, dims) -> dict[str, Tensor]:
    out = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{i}.w"] = _glorot(rng, a, b)
        out[f"{i}.b"] = Tensor.zeros(b)
    return out


def init(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    The encoder draws from stream ``(seed, 0)`` and sub-network ``m`` from
    ``(seed, m + 1)`` so every head starts from its own weights.
    """
    theta = _mlp_params(np.random.default_rng([config.seed, 0]), config.encoder_dims())
    phi = [
        _mlp_params(np.random.default_rng([config.seed, m + 1]), config.subnet_dims())
        for m in range(config.num_subnets)
    ]
    return ModelParams(theta, phi)


def _batch_norm(ops, x):
    # normalisation only (no affine), always with batch statistics
    mu = ops.reduce(x, 0, "mean")
    xc = ops.add_row(x, ops.map(mu, "negate"))
    var = ops.reduce(ops.mul(xc, xc), 0, "mean")
    sd = ops.map(ops.map(var, "add_scalar", BN_EPS), "sqrt")
    inv = ops.div(ops.const(Tensor.ones(value_of(sd).shape[0])), sd)
    return ops.scale_cols(xc, inv)


def _mlp(ops, prefix: str, weights: dict[str, Tensor], x, depth: int, batch_norm=False):
    for i in range(depth):
        w = ops.param(f"{prefix}.{i}.w", weights[f"{i}.w"])
        b = ops.param(f"{prefix}.{i}.b", weights[f"{i}.b"])
        x = ops.add_row(ops.matmul(x, w), b)
        if i < depth - 1:
            if batch_norm:
                x = _batch_norm(ops, x)
            x = ops.map(x, "relu")
    return x


def _as_input(ops, x):
    if isinstance(x, Node):
        return x
    return ops.const(x)


def encode(params: ModelParams, x, graph: Graph | None = None):
    """Representation ``b = f_theta(x)``; ReLU between layers, none after the last."""
    ops = ops_for(graph)
    x = _as_input(ops, x)
    xv = value_of(x)
    depth = len(params.theta) // 2
    if xv.rank != 2:
        raise ShapeError(f"encode expects [N, p] input, got {xv.shape}")
    if depth == 0:
        return x
    p = params.theta["0.w"].shape[0]
    if xv.shape[1] != p:
        raise ShapeError(f"encode: input has {xv.shape[1]} features, encoder expects {p}")
    return _mlp(ops, "enc", params.theta, x, depth)


def project(params: ModelParams, b, graph: Graph | None = None, eps: float = 1e-4,
            batch_norm: bool = False) -> EmbeddingSet:
    """Run every sub-network on ``b`` and summarise across them.

    ``std[k, o] = sqrt(var_unbiased_m(z[k, :, o]) + eps)``.
    """
    ops = ops_for(graph)
    b = _as_input(ops, b)
    bv = value_of(b)
    d = params.phi[0]["0.w"].shape[0]
    if bv.rank != 2 or bv.shape[1] != d:
        raise ShapeError(f"project: representation shape {bv.shape}, sub-networks expect [N, {d}]")
    depth = len(params.phi[0]) // 2
    outs = [
        _mlp(ops, f"sub.{m}", weights, b, depth, batch_norm)
        for m, weights in enumerate(params.phi)
    ]
    z = ops.stack(outs, axis=1)
    mean = ops.reduce(z, 1, "mean")
    std = None
    if len(outs) >= 2:
        var = ops.reduce(z, 1, "var_unbiased")
        std = ops.map(ops.map(var, "add_scalar", eps), "sqrt")
    return EmbeddingSet(z, mean, std)
