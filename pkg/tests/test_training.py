import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dimpleseg.autodiff import Tensor, backward, gradcheck
from dimpleseg.errors import ConfigError, TrainingIntegrityError, ValidationError
from dimpleseg.models import ModelSpec, build_unet
from dimpleseg.nn import ParamStore
from dimpleseg.training import (
    AdamState,
    TrainConfig,
    adam_step,
    bce_loss,
    dice_metric,
    evaluate,
    fit,
    lr_at_epoch,
    soft_dice_loss,
    total_loss,
)
from dimpleseg.data import SyntheticSpec, generate_synthetic_pair

from conftest import t64

THIN = dict(base_width=4, attn_ratio=2, se_ratio=4, spatial_kernel=3)


def brute_force_dice(a, b):
    inter = size_a = size_b = 0
    for pa, pb in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
        size_a += pa
        size_b += pb
        inter += pa and pb
    return 1.0 if size_a + size_b == 0 else 2.0 * inter / (size_a + size_b)


def small_pairs(n, size=32, seed=0):
    out = []
    for i in range(n):
        img, mask = generate_synthetic_pair(SyntheticSpec(canvas=size, n_dimples=(1, 2), radius=(3.0, 6.0),
                                                          seed=seed + i))
        out.append((img.astype(np.float32) / 255.0, mask.astype(np.float32)))
    return out


# -- dice ------------------------------------------------------------------------------

def test_dice_metric_worked_example():
    a = np.zeros(16, dtype=np.float32)
    b = np.zeros(16, dtype=np.float32)
    a[:6] = 1
    b[3:7] = 1  # |A| = 6, |B| = 4, |A & B| = 3
    assert dice_metric(a, b) == pytest.approx(0.6, abs=0)


def test_dice_metric_edge_cases():
    m = np.array([[1, 0], [1, 1]], dtype=np.float32)
    assert dice_metric(m, m) == 1.0
    assert dice_metric(m, 1 - m) == 0.0
    z = np.zeros((2, 2))
    assert dice_metric(z, z) == 1.0


def test_dice_metric_threshold_is_inclusive():
    assert dice_metric(np.array([0.5]), np.array([1.0])) == 1.0
    assert dice_metric(np.array([0.4999]), np.array([1.0])) == 0.0


def test_dice_metric_matches_brute_force_counts():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.random((16, 16)) < rng.random()
        b = rng.random((16, 16)) < rng.random()
        assert dice_metric(a.astype(np.float32), b.astype(np.float32)) == brute_force_dice(a, b)


binary16 = arrays(np.float32, (16, 16), elements=st.sampled_from([0.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(binary16, binary16, st.integers(0, 2**32 - 1))
def test_dice_metric_permutation_invariant(a, b, seed):
    perm = np.random.default_rng(seed).permutation(a.size)
    pa = a.reshape(-1)[perm].reshape(a.shape)
    pb = b.reshape(-1)[perm].reshape(b.shape)
    assert dice_metric(a, b) == dice_metric(pa, pb)


@settings(max_examples=60, deadline=None)
@given(binary16, binary16)
def test_soft_dice_symmetric_for_binary_pred(a, b):
    ab = soft_dice_loss(Tensor(a), b).item()
    ba = soft_dice_loss(Tensor(b), a).item()
    assert ab == pytest.approx(ba, rel=1e-6)


def test_soft_dice_examples():
    m = (np.random.default_rng(0).random((1, 1, 8, 8)) > 0.5).astype(np.float64)
    assert soft_dice_loss(Tensor(m), m, smooth=0.0).item() == pytest.approx(1.0)
    ones = np.ones((1, 1, 4, 4))
    assert soft_dice_loss(Tensor(np.zeros((1, 1, 4, 4))), ones, smooth=0.0).item() == 0.0
    zeros = np.zeros((1, 1, 4, 4))
    assert soft_dice_loss(Tensor(zeros), zeros, smooth=1.0).item() == 1.0


def test_non_binary_target_rejected():
    p = Tensor(np.full((1, 1, 2, 2), 0.5))
    with pytest.raises(ValidationError):
        soft_dice_loss(p, np.full((1, 1, 2, 2), 0.3))
    with pytest.raises(ValidationError):
        bce_loss(p, np.full((1, 1, 2, 2), 2.0))
    with pytest.raises(ValidationError):
        total_loss(p, np.zeros((1, 1, 2, 3)))


# -- bce and the composite --------------------------------------------------------------

def test_bce_at_half_is_log2():
    p = Tensor(np.full((1, 1, 4, 4), 0.5))
    y = (np.arange(16).reshape(1, 1, 4, 4) % 3 == 0).astype(np.float64)
    assert bce_loss(p, y).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_hand_value():
    assert bce_loss(Tensor(np.array([0.9])), np.array([1.0])).item() == pytest.approx(0.105361, abs=1e-6)


def test_bce_perfect_prediction_is_clamped_small():
    y = (np.random.default_rng(1).random((1, 1, 8, 8)) > 0.5).astype(np.float64)
    assert 0 < bce_loss(Tensor(y), y).item() <= 1e-6


def test_total_loss_plug_in_value():
    pred = Tensor(np.full((1, 1, 8, 8), 0.5))
    target = np.zeros((1, 1, 8, 8))
    # soft dice with smooth=0 and an empty target is 0, bce is log 2
    loss = total_loss(pred, target, smooth=0.0).item()
    assert loss == pytest.approx(1.25 + 0.95 * math.log(2), abs=1e-12)
    assert loss == pytest.approx(1.908490, abs=1e-5)


def test_total_loss_perfect_prediction():
    y = (np.random.default_rng(2).random((1, 1, 8, 8)) > 0.5).astype(np.float64)
    assert 0 <= total_loss(Tensor(y), y).item() <= 2e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (1, 1, 4, 4), elements=st.floats(0.0, 1.0)), binary16)
def test_total_loss_non_negative(p, y):
    assert total_loss(Tensor(p), y[:4, :4].reshape(1, 1, 4, 4).astype(np.float64)).item() >= 0


def test_total_loss_gradcheck(rng):
    p = t64(rng.uniform(0.05, 0.95, (2, 1, 4, 4)))
    y = (rng.random((2, 1, 4, 4)) > 0.5).astype(np.float64)
    assert gradcheck(lambda: total_loss(p, y), [p]).max_rel_error <= 1e-6


# -- adam ---------------------------------------------------------------------------------

def _store(value, grad):
    store = ParamStore()
    store.add("w", np.array([value], dtype=np.float64))
    store["w"].grad = np.array([grad], dtype=np.float64)
    return store


def test_adam_first_step_hand_value():
    store = _store(0.0, 1.0)
    state = AdamState()
    adam_step(store, state, lr=0.1)
    # m_hat = v_hat = 1 after bias correction
    assert store["w"].data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_grad_leaves_params():
    store = _store(0.7, 0.0)
    state = AdamState()
    adam_step(store, state, lr=0.1)
    adam_step(store, state, lr=0.1)
    assert store["w"].data[0] == 0.7
    assert state.t == 2


def test_adam_weight_decay_is_coupled():
    store = _store(2.0, 0.0)
    state = AdamState()
    adam_step(store, state, lr=0.1, weight_decay=0.5)
    # g = 0 + 0.5 * 2 = 1 -> same normalized step as the hand example
    assert store["w"].data[0] == pytest.approx(2.0 - 0.1 / (1.0 + 1e-8), rel=1e-12)


def test_adam_skips_buffers_and_needs_all_grads():
    store = ParamStore()
    store.add("w", np.ones(2))
    store.add("buf", np.ones(2), trainable=False)
    with pytest.raises(TrainingIntegrityError):
        adam_step(store, AdamState(), lr=0.1)
    store["w"].grad = np.ones(2)
    adam_step(store, AdamState(), lr=0.1)
    assert np.array_equal(store["buf"].data, np.ones(2))


def test_adam_deterministic(rng):
    grads = rng.standard_normal((5, 3))
    results = []
    for _ in range(2):
        store = ParamStore()
        store.add("w", np.linspace(0, 1, 3))
        state = AdamState()
        for g in grads:
            store["w"].grad = g.copy()
            adam_step(store, state, lr=1e-2, weight_decay=1e-6)
        results.append(store["w"].data.copy())
    assert np.array_equal(results[0], results[1])


# -- schedule ------------------------------------------------------------------------------

def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert lr_at_epoch(0, cfg) == 1e-4
    assert lr_at_epoch(9, cfg) == 1e-4
    assert lr_at_epoch(10, cfg) == pytest.approx(9e-5, rel=1e-12)
    flat = TrainConfig(lr_gamma=1.0)
    assert {lr_at_epoch(e, flat) for e in range(200)} == {1e-4}
    with pytest.raises(ValueError):
        lr_at_epoch(-1, cfg)


@given(st.floats(0.05, 1.0), st.integers(1, 30))
def test_lr_schedule_non_increasing(gamma, step):
    cfg = TrainConfig(lr_gamma=gamma, lr_step=step)
    lrs = [lr_at_epoch(e, cfg) for e in range(120)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(beta1=0.999, beta2=0.9)
    with pytest.raises(ConfigError):
        TrainConfig(threshold=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_dice=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_gamma=1.5)


# -- fit and evaluate ------------------------------------------------------------------------

def test_fit_one_sample_one_epoch_is_one_step():
    model = build_unet(ModelSpec(**THIN))
    report = fit(model, small_pairs(1), [], TrainConfig(epochs=1))
    assert report.steps == 1 and len(report.events) == 1
    assert model.mode == "eval"


def test_fit_batches_round_up():
    model = build_unet(ModelSpec(**THIN))
    report = fit(model, small_pairs(5), [], TrainConfig(epochs=2, batch_size=2))
    assert report.steps == 6


def test_fit_zero_lr_keeps_trainable_params():
    model = build_unet(ModelSpec(**THIN))
    before = {n: t.data.copy() for n, t in model.params.trainable()}
    running = model.params["enc1/conv0/bn/running_mean"].data.copy()
    fit(model, small_pairs(2), [], TrainConfig(epochs=1, lr0=0.0, weight_decay=0.0))
    for n, t in model.params.trainable():
        assert np.array_equal(t.data, before[n]), n
    assert not np.array_equal(model.params["enc1/conv0/bn/running_mean"].data, running)


def test_fit_loss_trajectory_reproducible():
    runs = []
    for _ in range(2):
        model = build_unet(ModelSpec(**THIN), seed=5)
        report = fit(model, small_pairs(3), small_pairs(1, seed=10), TrainConfig(epochs=3, lr0=1e-3, seed=9))
        runs.append([(e.train_loss, e.val_dsc) for e in report.events])
    assert runs[0] == runs[1]


def test_fit_keeps_best_val_epoch():
    model = build_unet(ModelSpec(**THIN))
    val = small_pairs(2, seed=20)
    report = fit(model, small_pairs(3), val, TrainConfig(epochs=4, lr0=1e-3))
    best = max(e.val_dsc for e in report.events)
    assert report.best_val_dsc == best
    assert report.best_epoch == next(e.epoch for e in report.events if e.val_dsc == best)
    assert evaluate(model, val).mean_dsc == best


def test_fit_sink_can_stop():
    model = build_unet(ModelSpec(**THIN))
    seen = []
    report = fit(model, small_pairs(1), [], TrainConfig(epochs=10), sink=lambda e: seen.append(e) or len(seen) == 2)
    assert report.stopped_early and len(report.events) == 2


def test_fit_aborts_on_nan_naming_batch():
    model = build_unet(ModelSpec(**THIN))
    model.params.set_data("head/bias", np.array([np.nan]))
    with pytest.raises(TrainingIntegrityError, match="batch 0"):
        fit(model, small_pairs(2), [], TrainConfig(epochs=1))


def test_fit_and_evaluate_reject_empty():
    model = build_unet(ModelSpec(**THIN))
    with pytest.raises(ValidationError):
        fit(model, [], [], TrainConfig(epochs=1))
    with pytest.raises(ValidationError):
        evaluate(model, [])


def test_evaluate_with_oracle_model(oracle_unet):
    pairs = small_pairs(3)
    result = evaluate(oracle_unet, pairs)
    assert result.per_image == [1.0, 1.0, 1.0]
    assert result.mean_dsc == 1.0


def test_evaluate_mean_matches_per_image(rng):
    model = build_unet(ModelSpec(**THIN))
    result = evaluate(model, small_pairs(4))
    assert result.mean_dsc == pytest.approx(sum(result.per_image) / 4, rel=0, abs=4e-16)
    for (img, mask), score in zip(small_pairs(4), result.per_image):
        prob = model.predict(img[None, None])[0, 0]
        assert score == brute_force_dice(prob >= 0.5, mask > 0.5)


def test_gradients_flow_through_fit_step():
    model = build_unet(ModelSpec(**THIN)).train()
    x, y = small_pairs(1)[0]
    backward(total_loss(model(x[None, None]), y[None, None]))
    assert all(t.grad is not None for _, t in model.params.trainable())
