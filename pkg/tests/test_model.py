import numpy as np
import pytest

from oracles import block_params, linear_params, model_params
from sprmamba.exceptions import ConfigurationError, DataError, DimensionError
from sprmamba.gradcheck import check_gradients
from sprmamba.model import LSTContextBlock, ModelConfig, SPRMamba, build_model, param_count
from sprmamba.nn import Linear
from sprmamba.tensor import Tensor, no_grad

TINY = ModelConfig(input_dim=6, stage1_dim=8, refine_dim=8, layers_per_stage=2, stages=2, num_classes=3, window=4,
                   stride=4, state_dim=3)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(stage1_dim=30)
    with pytest.raises(ConfigurationError):
        ModelConfig(stages=0)
    with pytest.raises(ConfigurationError):
        ModelConfig(conv_mode="wide")
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict({"stages": 2, "depth": 3})
    assert ModelConfig.from_dict(TINY.to_dict()) == TINY


def test_structure_of_default_model():
    model = build_model(ModelConfig())
    assert len(model.stages) == 4
    assert sum(len(s.blocks) for s in model.stages) == 40
    assert all(s.head.out_features == 8 for s in model.stages)
    assert [b.dilation for b in model.stages[0].blocks] == [2**i for i in range(10)]
    assert all([b.dilation for b in s.blocks] == [2**i for i in range(10)] for s in model.stages[1:])
    assert model.stages[0].in_proj.out_features == 64 and model.stages[0].reduce.out_features == 32
    assert model.stages[1].in_proj.in_features == 8


def test_default_forward_shapes():
    model = build_model(ModelConfig()).eval()
    x = np.random.default_rng(0).standard_normal((37, 2048))
    with no_grad():
        outputs = model(x)
    assert len(outputs) == 4
    for out in outputs:
        assert out.probs.shape == (37, 8)
        np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-9)


def test_single_stage():
    model = SPRMamba(TINY.with_(stages=1)).eval()
    assert len(model(np.ones((5, 6)))) == 1


def test_input_errors():
    model = SPRMamba(TINY)
    with pytest.raises(DimensionError):
        model(np.ones((5, 7)))
    bad = np.ones((5, 6))
    bad[2, 3] = np.nan
    with pytest.raises(DataError):
        model(bad)


def test_eval_deterministic_and_rebuild_identical():
    x = np.random.default_rng(1).standard_normal((13, 6))
    a, b = SPRMamba(TINY).eval(), SPRMamba(TINY).eval()
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    with no_grad():
        assert a(x)[-1].probs.data.tobytes() == a(x)[-1].probs.data.tobytes() == b(x)[-1].probs.data.tobytes()


def test_param_count_oracles():
    assert param_count(Linear(64, 32, np.random.default_rng(0))) == 2080
    reduced = param_count(build_model(ModelConfig()))
    full = param_count(build_model(ModelConfig(dim_reduction=False)))
    assert reduced == model_params() == 2_137_456
    assert full == model_params(dim_reduction=False) == 4_376_944
    assert reduced / full <= 0.6
    assert param_count(build_model(ModelConfig())) == reduced


def test_variant_param_counts():
    for kwargs, oracle in [({"conv_mode": "none"}, {"conv": False}), ({"branches": "ssm"}, {"branches": "ssm"}),
                           ({"branches": "attention"}, {"branches": "attention"})]:
        cfg = TINY.with_(**kwargs)
        assert param_count(SPRMamba(cfg)) == model_params(6, 8, 8, 2, 2, 3, 3, **oracle)


@pytest.mark.parametrize("seed", range(20))
def test_causal_prefix_exact(seed):
    rng = np.random.default_rng(seed)
    model = SPRMamba(TINY.with_(causal=True, seed=seed)).eval()
    length = int(rng.integers(5, 30))
    x = rng.standard_normal((length, 6))
    t = int(rng.integers(1, length))
    with no_grad():
        full, prefix = model(x), model(x[:t])
    for f, p in zip(full, prefix):
        assert np.array_equal(f.probs.data[:t], p.probs.data)


def test_bidirectional_mode_sees_the_future():
    model = SPRMamba(TINY).eval()
    x = np.random.default_rng(2).standard_normal((20, 6))
    with no_grad():
        full, prefix = model(x)[-1].probs.data, model(x[:12])[-1].probs.data
    assert not np.allclose(full[:12], prefix)


@pytest.mark.parametrize("layer", range(10))
def test_block_shape(layer):
    cfg = ModelConfig(window=8, stride=8, state_dim=2)
    block = LSTContextBlock(8, layer, cfg, np.random.default_rng(layer)).eval()
    assert block(Tensor(np.random.default_rng(0).standard_normal((21, 8)))).shape == (21, 8)


def test_block_impulse_reach():
    cfg = ModelConfig(window=8, stride=8, state_dim=2)
    layer = 2
    block = LSTContextBlock(8, layer, cfg, np.random.default_rng(3)).eval()
    x = np.random.default_rng(4).standard_normal((64, 8))
    base = block(Tensor(x)).data
    x[30] += 1.0
    changed = np.nonzero(np.any(block(Tensor(x)).data != base, axis=1))[0]
    assert changed.size >= 2 * 2**layer + 1
    assert np.max(np.abs(changed - 30)) >= 8


def test_block_with_zero_output_map_is_identity():
    cfg = ModelConfig(window=4, stride=4, state_dim=2)
    block = LSTContextBlock(8, 1, cfg, np.random.default_rng(5)).eval()
    block.out_proj.weight.data[:] = 0.0
    x = np.random.default_rng(6).standard_normal((10, 8))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_block_rejects_negative_layer():
    with pytest.raises(ConfigurationError):
        LSTContextBlock(8, -1, TINY, np.random.default_rng(0))


def test_block_param_count():
    block = LSTContextBlock(16, 0, ModelConfig(state_dim=4), np.random.default_rng(0))
    assert block.num_parameters() == block_params(16, 4)
    assert linear_params(3, 2) == 8


@pytest.mark.parametrize("seed", range(20))
def test_lstcontext_gradients(seed):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(window=4, stride=3, state_dim=2, dropout=0.0)
    block = LSTContextBlock(8, seed % 3, cfg, rng).eval()
    x = Tensor(rng.standard_normal((10, 8)), requires_grad=True)
    probe = rng.standard_normal((10, 8))
    fn = lambda: (block(x) * probe).sum()  # noqa: E731
    assert check_gradients(fn, [x] + block.parameters(), max_points=4, rng=rng) <= 1e-3


def test_predict_proba_restores_mode():
    model = SPRMamba(TINY).train()
    probs = model.predict_proba(np.ones((4, 6)))
    assert probs.shape == (4, 3) and model.training
