"""Numerical verification of the loss gradients on small random instances."""

from __future__ import annotations

import numpy as np

from . import model as M
from .autodiff import Graph, gradcheck, rel_error
from .losses import LossConfig, diversity_grad_oracle, diversity_loss, total_loss, variance_scaled_grad
from .model import EmbeddingSet, ModelConfig
from .tensor import Tensor

GRADCHECK_SHAPE = {"batch": 4, "subnets": 5, "embed_dim": 8}


def total_loss_graph(seed: int, n: int = 4, m: int = 5, q: int = 8,
                     loss: LossConfig | None = None, subnet_depth: int = 2,
                     head_scale: float = 0.2):
    """Random small model (weights and biases) and two random views on a fresh graph."""
    rng = np.random.default_rng([seed, 0x6C])
    cfg = ModelConfig(input_dim=5, encoder_layers=[6], repr_dim=4, num_subnets=m,
                      subnet_hidden=6, embed_dim=q, seed=seed, subnet_depth=subnet_depth)
    params = M.init(cfg)
    # random biases too, so no ReLU layer can zero out a whole embedding, and
    # shrunken head outputs so the std straddles alpha and the hinge is active
    last = f"{subnet_depth - 1}.w"
    updates = {}
    for name, t in params.tensors().items():
        head_out = name.startswith("sub.") and name.endswith((last, last[:-1] + "b"))
        scale = head_scale if head_out else 1.0
        if name.endswith(".b"):
            updates[name] = Tensor(rng.uniform(-0.5, 0.5, t.shape) * scale)
        elif head_out:
            updates[name] = Tensor(t.array * scale)
    params = params.replace(updates)
    g = Graph()
    loss = loss or LossConfig()
    views = [Tensor(rng.standard_normal((n, cfg.input_dim))) for _ in range(2)]
    e1, e2 = (M.project(params, M.encode(params, v, g), g, loss.epsilon) for v in views)
    br = total_loss(e1, e2, loss, g)
    return g, br, params


def _embedding_from_leaf(g: Graph, z, eps: float) -> EmbeddingSet:
    zl = g.leaf(z)
    mean = g.reduce(zl, 1, "mean")
    std = g.map(g.map(g.reduce(zl, 1, "var_unbiased"), "add_scalar", eps), "sqrt")
    return EmbeddingSet(zl, mean, std)


def oracle_check(seed: int, n: int = 4, m: int = 5, q: int = 8, alpha: float = 0.15,
                 eps: float = 1e-4, step: float = 1e-5, scale: float = 0.1) -> dict:
    """Closed-form diversity gradient against autodiff and central differences.

    Coordinates whose std lies within ``2 * step`` of ``alpha`` are excluded.
    The variance-scaled alternative form is scored on the same coordinates.
    """
    rng = np.random.default_rng([seed, 0x0A])
    z1 = rng.standard_normal((n, m, q)) * scale
    z2 = rng.standard_normal((n, m, q)) * scale
    g = Graph()
    e1 = _embedding_from_leaf(g, Tensor(z1), eps)
    e2 = _embedding_from_leaf(g, Tensor(z2), eps)
    root = diversity_loss(e1, e2, alpha, g)
    grads = g.backward(root)
    auto = grads[e1.z.id].array * n  # undo the batch mean

    oracle = diversity_grad_oracle(z1, alpha, eps).array
    std = e1.std.value.array
    far = np.abs(std - alpha) >= 2 * step
    mask = np.broadcast_to(far[:, None, :], z1.shape)

    fd = np.zeros_like(z1)
    flat = z1.reshape(-1)
    for j in range(flat.size):
        vals = []
        for sgn in (1.0, -1.0):
            zp = flat.copy()
            zp[j] += sgn * step
            g.set_value(e1.z, Tensor(zp, z1.shape))
            vals.append(g.forward(root))
        fd.reshape(-1)[j] = (vals[0] - vals[1]) / (2 * step) * n
    g.set_value(e1.z, Tensor(z1))
    g.forward(root)

    alt = variance_scaled_grad(z1, alpha).array
    nz = mask & (oracle != 0)
    sums = np.where(far, oracle.sum(axis=1), 0.0)
    return {
        "seed": seed,
        "coordinates": int(mask.sum()),
        "active": int(nz.sum()),
        "oracle_vs_autodiff": float(rel_error(oracle[mask], auto[mask]).max(initial=0.0)),
        "oracle_vs_fd": float(rel_error(oracle[mask], fd[mask]).max(initial=0.0)),
        "subnet_sum_max_abs": float(np.abs(sums).max()),
        "variance_scaled_vs_fd": float(rel_error(alt[mask], fd[mask]).max(initial=0.0)),
        "variance_scaled_sign_agreement": bool(
            np.array_equal(np.sign(alt[nz]), np.sign(oracle[nz]))
        ),
    }


def gradient_report(seed: int, step: float = 1e-5, tol: float = 1e-4) -> dict:
    g, br, _ = total_loss_graph(seed, **{
        "n": GRADCHECK_SHAPE["batch"], "m": GRADCHECK_SHAPE["subnets"],
        "q": GRADCHECK_SHAPE["embed_dim"]})
    rep = gradcheck(g, br.root, step, tol)
    oracle = oracle_check(seed, step=step)
    passed = (rep.passed and oracle["oracle_vs_autodiff"] < 1e-8
              and oracle["oracle_vs_fd"] < tol and oracle["subnet_sum_max_abs"] < 1e-10)
    return {
        "seed": seed,
        "shape": dict(GRADCHECK_SHAPE),
        "loss": br.as_dict(),
        "total_loss_gradcheck": rep.to_dict(),
        "diversity_oracle": oracle,
        "passed": bool(passed),
    }
