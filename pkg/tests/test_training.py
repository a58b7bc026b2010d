import math
import warnings

import numpy as np
import pytest

from sprmamba import functional as F
from sprmamba.data import FeatureSequence
from sprmamba.exceptions import ConfigurationError, DataError, UsageError
from sprmamba.gradcheck import check_gradients
from sprmamba.model import ModelConfig, SPRMamba, StageOutput
from sprmamba.tensor import Tensor, clamp_max
from sprmamba.training import (AdamState, TrainConfig, TrainHistory, ce_loss, clip_grad_norm, cosine_lr,
                               multi_stage_loss, optimizer_step, smoothing_loss, train)

TINY = ModelConfig(input_dim=4, stage1_dim=8, refine_dim=8, layers_per_stage=1, stages=2, num_classes=3, window=4,
                   stride=4, state_dim=2)


def stage_from_logits(logits):
    logits = Tensor(np.asarray(logits, dtype=np.float64), requires_grad=True)
    return StageOutput(logits, F.softmax(logits, -1), F.log_softmax(logits, -1))


def tiny_dataset(count=2, length=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        labels = np.repeat([0, 1, 2], length // 3)
        out.append(FeatureSequence(f"v{i}", rng.standard_normal((length, 4)) + labels[:, None], labels))
    return out


# -- losses ----------------------------------------------------------------------
def test_ce_perfect_and_uniform():
    perfect = np.log(np.eye(3)[[0, 2, 1]].clip(1e-300))
    assert ce_loss(Tensor(perfect), [0, 2, 1]).data == pytest.approx(0.0, abs=1e-15)
    uniform = np.full((5, 8), -np.log(8.0))
    assert ce_loss(Tensor(uniform), [0, 1, 2, 3, 4]).data == pytest.approx(math.log(8), rel=1e-12)
    assert math.log(8) == pytest.approx(2.0794, abs=1e-4)


def test_ce_clamps_log_floor():
    lp = np.array([[0.0, -1e6]])
    assert ce_loss(Tensor(lp), [1]).data == pytest.approx(-math.log(1e-12))


def test_ce_masked_and_errors():
    lp = Tensor(np.log(np.full((3, 2), 0.5)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert ce_loss(lp, [0, 1, 0], mask=np.zeros(3, dtype=bool)).data == 0.0
    assert any("masked" in str(w.message) for w in caught)
    with pytest.raises(DataError):
        ce_loss(lp, [0, 2, 0])
    with pytest.raises(DataError):
        ce_loss(lp, [0, -1, 0])


def test_smoothing_loss_values():
    assert smoothing_loss(Tensor(np.tile([-1.0, -0.5], (6, 1))), 4.0).data == 0.0
    lp = np.zeros((2, 2))
    lp[1, 0] = -10.0
    # gap 10 clipped to 4 -> 16 for that element; mean over one pair and two classes
    assert smoothing_loss(Tensor(lp), 4.0).data == pytest.approx(16.0 / 2)
    assert smoothing_loss(Tensor(np.zeros((1, 3))), 4.0).data == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert smoothing_loss(Tensor(rng.standard_normal((7, 3)) * 5), 4.0).data >= 0


def test_smoothing_previous_frame_is_constant():
    lp = Tensor(np.array([[0.0], [1.0], [3.0]]), requires_grad=True)
    smoothing_loss(lp, 4.0).backward()
    # d/dx of (x1-x0)^2 + (x2-x1)^2 with x0,x1 frozen as "previous": only current-frame terms
    np.testing.assert_allclose(lp.grad[:, 0], [0.0, 2 * 1.0 / 2, 2 * 2.0 / 2])


def test_multi_stage_loss_hand_case():
    logits = [[[0.0, 1.0], [2.0, 0.0]], [[1.0, 1.0], [0.0, 3.0]]]
    labels = [1, 0]
    outs = [stage_from_logits(l) for l in logits]
    total = 0.0
    for l in logits:
        l = np.array(l)
        lp = l - np.log(np.exp(l).sum(axis=1, keepdims=True))
        ce = -(lp[0, 1] + lp[1, 0]) / 2
        sm = np.minimum((lp[1] - lp[0]) ** 2, 16.0).mean()
        total += ce + 0.15 * sm
    assert multi_stage_loss(outs, labels).data == pytest.approx(total, abs=1e-9)
    single = multi_stage_loss(outs[:1], labels).data
    assert multi_stage_loss([outs[0], outs[0]], labels).data == pytest.approx(2 * single, rel=1e-15)
    with pytest.raises(UsageError):
        multi_stage_loss([], labels)


def test_multi_stage_loss_gradient_on_tiny_model():
    model = SPRMamba(TINY.with_(dropout=0.0)).eval()
    x = np.random.default_rng(1).standard_normal((9, 4))
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    params = model.parameters()
    rng = np.random.default_rng(2)

    # cross-entropy part: the true gradient
    err = check_gradients(lambda: multi_stage_loss(model(x), labels, smoothing_weight=0.0), params,
                          max_points=3, rng=rng)
    assert err <= 1e-3

    # with smoothing, backprop differentiates only the current frame of each pair, so the
    # finite-difference reference is the loss with previous frames frozen at their current values
    frozen = [o.log_probs.data[:-1].copy() for o in model(x)]

    def surrogate():
        total = Tensor(0.0)
        for out, prev in zip(model(x), frozen):
            gap = out.log_probs[1:] - prev
            sm = clamp_max(gap * gap, 16.0).sum() * (1.0 / gap.size)
            total = total + ce_loss(out.log_probs, labels) + 0.15 * sm
        return total

    analytic_loss = multi_stage_loss(model(x), labels)
    assert analytic_loss.data == pytest.approx(surrogate().data, rel=1e-12)
    for p in params:
        p.grad = None
    analytic_loss.backward()
    grads = [p.grad.copy() for p in params]
    err = check_gradients(surrogate, params, max_points=3, rng=rng)
    for p, g in zip(params, grads):
        np.testing.assert_allclose(p.grad, g, rtol=1e-10, atol=1e-14)
    assert err <= 1e-3


# -- optimiser and schedule ------------------------------------------------------------
def test_adamw_zero_grad_no_decay_is_noop():
    p = Tensor(np.array([1.0, -2.0]))
    optimizer_step([p], [np.zeros(2)], AdamState(), 1e-2, 0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_scalar_step_by_hand():
    p = Tensor(np.array(0.5))
    state = AdamState()
    optimizer_step([p], [np.array(0.2)], state, lr=0.1, weight_decay=0.01)
    decayed = 0.5 * (1 - 0.1 * 0.01)
    m_hat = (0.1 * 0.2) / (1 - 0.9)
    v_hat = (0.001 * 0.04) / (1 - 0.999)
    assert p.data == pytest.approx(decayed - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), abs=1e-15)
    optimizer_step([p], [np.array(-0.1)], state, lr=0.1, weight_decay=0.01)
    assert state.step == 2


def test_adamw_decay_shrinks_magnitude():
    p = Tensor(np.array([3.0, -3.0]))
    state = AdamState()
    for _ in range(3):
        before = np.abs(p.data).copy()
        optimizer_step([p], [np.zeros(2)], state, 1e-2, 0.1)
        assert np.all(np.abs(p.data) < before)


def test_adamw_shape_mismatch():
    with pytest.raises(UsageError):
        optimizer_step([Tensor(np.zeros(2))], [np.zeros(3)], AdamState(), 1e-3, 0.0)


def test_clip_grad_norm():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.sqrt((a.grad**2).sum() + (b.grad**2).sum()) == pytest.approx(1.0)


def test_cosine_schedule():
    cfg = TrainConfig()
    assert cosine_lr(0, cfg) == 0.0
    assert cosine_lr(40, cfg) == pytest.approx(5e-4)
    assert cosine_lr(39, cfg) == pytest.approx(5e-4 * 39 / 40)
    step = 0.5 * (cfg.base_lr - cfg.min_lr) * (1 - math.cos(math.pi / 160))
    assert abs(cosine_lr(199, cfg) - cfg.min_lr) <= step
    assert cfg.min_lr == pytest.approx(5e-6)
    lrs = [cosine_lr(e, cfg) for e in range(40, 200)]
    assert all(x >= y for x, y in zip(lrs, lrs[1:]))
    with pytest.raises(UsageError):
        cosine_lr(200, cfg)
    with pytest.raises(UsageError):
        cosine_lr(-1, cfg)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(warmup_epochs=10, total_epochs=5)
    with pytest.raises(ConfigurationError):
        TrainConfig(base_lr=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"lr": 1.0})


# -- loop -------------------------------------------------------------------------
def test_smoke_run(tmp_path):
    model, history = train(tiny_dataset(), TINY, TrainConfig(total_epochs=2, warmup_epochs=1, base_lr=1e-3))
    assert len(history) == 2
    assert all(np.isfinite(r.total_loss) for r in history.records)
    assert not model.training
    path = tmp_path / "h.csv"
    history.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,lr,total_loss,stage1_loss,stage2_loss,train_acc"
    assert len(lines) == 3


def test_same_seed_bit_identical():
    cfg = TrainConfig(total_epochs=2, warmup_epochs=1, base_lr=1e-3, seed=5)
    a, _ = train(tiny_dataset(), TINY, cfg)
    b, _ = train(tiny_dataset(), TINY, cfg)
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_loss_decreases_on_small_fixture():
    cfg = TrainConfig(total_epochs=10, warmup_epochs=2, base_lr=5e-3)
    _, history = train(tiny_dataset(4, 24), TINY, cfg)
    assert history.records[9].total_loss < history.records[0].total_loss


def test_step_budget_and_validation_selection():
    cfg = TrainConfig(total_epochs=5, warmup_epochs=1, base_lr=1e-3, max_steps=3)
    _, history = train(tiny_dataset(), TINY, cfg, validation=tiny_dataset(1, seed=9))
    assert len(history) == 2  # two sequences per epoch, three steps in total
    assert history.records[0].val_acc is not None


def test_empty_dataset_rejected():
    with pytest.raises(UsageError):
        train([], TINY, TrainConfig(total_epochs=1, warmup_epochs=0))


def test_history_roundtrip_empty():
    assert len(TrainHistory()) == 0
