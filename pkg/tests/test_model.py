import numpy as np
import pytest

from conftest import small_model_config
from subnet_ensemble import model as M
from subnet_ensemble.autodiff import Graph
from subnet_ensemble.errors import ContractError, ShapeError
from subnet_ensemble.tensor import Tensor


def _relu(a):
    return np.maximum(a, 0.0)


def test_init_is_deterministic():
    cfg = small_model_config(seed=7)
    a, b = M.init(cfg).tensors(), M.init(cfg).tensors()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == b[k]


def test_subnets_start_different():
    p = M.init(small_model_config(num_subnets=2))
    assert np.all(p.phi[0]["0.w"].array != p.phi[1]["0.w"].array)


def test_subnets_do_not_share_storage():
    p = M.init(small_model_config())
    ids = [id(t) for sub in p.phi for t in sub.values()]
    assert len(ids) == len(set(ids))


def test_glorot_bound_for_unit_fans():
    cfg = M.ModelConfig(input_dim=1, encoder_layers=[1], repr_dim=1, num_subnets=2,
                        subnet_hidden=1, embed_dim=1)
    for seed in range(50):
        p = M.init(M.ModelConfig(**{**cfg.__dict__, "seed": seed}))
        for t in p.tensors().values():
            assert np.abs(t.array).max() <= np.sqrt(3.0)


def test_biases_zero():
    p = M.init(small_model_config())
    for name, t in p.tensors().items():
        if name.endswith(".b"):
            assert not t.array.any()


def test_invalid_dims():
    with pytest.raises(ContractError):
        small_model_config(embed_dim=0)
    with pytest.raises(ContractError):
        small_model_config(subnet_depth=3)


def test_identity_encoder():
    cfg = small_model_config(input_dim=4, encoder_layers=[], repr_dim=4)
    p = M.init(cfg)
    x = Tensor(np.arange(8.0).reshape(2, 4))
    assert M.encode(p, x) == x


def test_zero_weights_give_zero_output(rng):
    p = M.init(small_model_config())
    zeros = {k: Tensor.zeros(*v.shape) for k, v in p.tensors().items() if k.startswith("enc")}
    p = p.replace(zeros)
    out = M.encode(p, Tensor(rng.standard_normal((3, 5))))
    assert not out.array.any()


def test_encode_matches_layer_by_layer(rng):
    cfg = small_model_config(encoder_layers=[7, 3])
    p = M.init(cfg)
    x = rng.standard_normal((6, 5))
    h = x
    for i in range(3):
        h = h @ p.theta[f"{i}.w"].array + p.theta[f"{i}.b"].array
        if i < 2:
            h = _relu(h)
    got = M.encode(p, Tensor(x)).array
    assert np.abs(got - h).max() < 1e-12


def test_encode_shape_error(rng):
    p = M.init(small_model_config())
    with pytest.raises(ShapeError):
        M.encode(p, Tensor(rng.standard_normal((3, 4))))


def test_project_shape_error(rng):
    p = M.init(small_model_config())
    with pytest.raises(ShapeError):
        M.project(p, Tensor(rng.standard_normal((3, 5))))


def test_identical_subnets_have_floor_std(rng):
    p = M.init(small_model_config(num_subnets=2))
    p = M.ModelParams(p.theta, [p.phi[0], dict(p.phi[0])])
    e = M.project(p, Tensor(rng.standard_normal((3, 4))), eps=1e-4)
    assert np.abs(e.std.array - 0.01).max() < 1e-15


def test_forced_std_value():
    # depth-1 linear heads with outputs 0 and 2 in coordinate 0
    cfg = M.ModelConfig(input_dim=1, encoder_layers=[], repr_dim=1, num_subnets=2,
                        embed_dim=1, subnet_depth=1)
    p = M.init(cfg)
    p = p.replace({"sub.0.0.w": Tensor([[0.0]]), "sub.1.0.w": Tensor([[2.0]])})
    e = M.project(p, Tensor([[1.0]]), eps=1e-4)
    assert abs(e.std.item() - np.sqrt(2 + 1e-4)) < 1e-15


def test_mean_std_match_recomputation(rng):
    p = M.init(small_model_config(num_subnets=4))
    e = M.project(p, Tensor(rng.standard_normal((5, 4))), eps=1e-4)
    z = e.z.array
    assert np.abs(e.mean.array - z.mean(axis=1)).max() < 1e-12
    assert np.abs(e.std.array - np.sqrt(z.var(axis=1, ddof=1) + 1e-4)).max() < 1e-12
    assert e.std.array.min() >= 0.01
    assert np.abs((z - e.mean.array[:, None, :]).sum(axis=1)).max() < 1e-10


def test_single_subnet_has_no_std(rng):
    p = M.init(small_model_config(num_subnets=1))
    e = M.project(p, Tensor(rng.standard_normal((2, 4))))
    assert e.std is None


def test_permuting_subnets_keeps_mean_and_std(rng):
    p = M.init(small_model_config(num_subnets=4))
    b = Tensor(rng.standard_normal((5, 4)))
    e = M.project(p, b)
    q = M.ModelParams(p.theta, [p.phi[i] for i in (2, 0, 3, 1)])
    f = M.project(q, b)
    assert np.abs(e.mean.array - f.mean.array).max() < 1e-12
    assert np.abs(e.std.array - f.std.array).max() < 1e-12


def test_identical_subnets_receive_equal_gradients(rng):
    p = M.init(small_model_config(num_subnets=3))
    p = M.ModelParams(p.theta, [dict(p.phi[0]) for _ in range(3)])
    g = Graph()
    e = M.project(p, M.encode(p, Tensor(rng.standard_normal((4, 5))), g), g)
    w = g.const(rng.standard_normal((4, 4)))
    root = g.reduce(g.reduce(g.mul(e.mean, w), 1, "sum"), 0, "sum")
    grads = g.param_grads(g.backward(root))
    for key in ("0.w", "0.b", "1.w", "1.b"):
        ref = grads[f"sub.0.{key}"]
        assert np.abs(ref.array).max() > 0
        for m in (1, 2):
            assert grads[f"sub.{m}.{key}"] == ref


def test_graph_and_direct_paths_agree(rng):
    p = M.init(small_model_config(batch_norm=True))
    x = Tensor(rng.standard_normal((6, 5)))
    g = Graph()
    eg = M.project(p, M.encode(p, x, g), g, batch_norm=True).values()
    ed = M.project(p, M.encode(p, x), batch_norm=True)
    assert eg.z == ed.z and eg.std == ed.std


def test_param_round_trip():
    p = M.init(small_model_config())
    q = M.ModelParams.from_tensors(p.tensors())
    assert q.tensors().keys() == p.tensors().keys()
    assert q.theta_digest() == p.theta_digest()
