import csv
import math

import numpy as np
import pytest

from contrasbi.embednet import NetworkSpec, RatioModel
from contrasbi.losses import LossConfig
from contrasbi.simulators import Dataset, PriorSpec, SyntheticModel, generate_dataset
from contrasbi.training import (
    LOG_COLUMNS,
    AdamW,
    TrainConfig,
    TrainingError,
    _batches,
    init_model,
    lr_schedule,
    train,
    validation_score,
    validation_values,
)
from oracles import constant_head, oracle_model

SIM = SyntheticModel.build(2.0)
SPEC_Y = NetworkSpec(2, 16, 1, 2)
SPEC_PHI = NetworkSpec(2, 16, 1, 2)


@pytest.fixture(scope="module")
def data():
    return generate_dataset(SIM, SIM.prior, 64, 0), generate_dataset(SIM, SIM.prior, 16, 1)


def _config(**kw):
    base = dict(epochs=3, batch_size=16, lr=1e-3, loss=LossConfig(tau=0.5), seed=0, val_interval=1, n_norm_val=200)
    base.update(kw)
    return TrainConfig(**base)


def _weights(model):
    return {h + k: v.copy() for h, net in (("e", model.encoder), ("g", model.emulator)) for k, v in net.params.items()}


def test_schedule_endpoints():
    assert lr_schedule(0, 100, 1e-3) == 1e-3
    assert lr_schedule(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-19)
    assert lr_schedule(50, 100, 1e-3) == pytest.approx(5e-4, rel=1e-12)


def test_schedule_is_monotone():
    values = [lr_schedule(s, 37, 2.0) for s in range(38)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


def test_adamw_decay_is_decoupled():
    opt = AdamW(weight_decay=0.1)
    params = {"w": np.array([[2.0, -4.0]])}
    opt.step(params, {"w": np.zeros((1, 2))}, lr=0.5)
    # zero gradient: only the direct decay acts and the moments stay zero
    np.testing.assert_allclose(params["w"], [[2.0 * 0.95, -4.0 * 0.95]], rtol=1e-15)
    assert not opt.m["w"].any() and not opt.v["w"].any()


def test_adamw_first_step_by_hand():
    opt = AdamW(weight_decay=0.01, eps=1e-8)
    w0, g = np.array([[1.0]]), np.array([[0.3]])
    params = {"w": w0.copy()}
    opt.step(params, {"w": g}, lr=0.1)
    # bias-corrected moments equal g and g^2 on the first step
    expected = 1.0 - 0.1 * 0.01 * 1.0 - 0.1 * 0.3 / (0.3 + 1e-8)
    assert params["w"][0, 0] == pytest.approx(expected, rel=1e-14)


def test_batches_cover_and_merge_singletons():
    rng = np.random.default_rng(0)
    out = _batches(9, 4, rng)
    assert [len(b) for b in out] == [4, 5]
    assert sorted(np.concatenate(out)) == list(range(9))


def test_zero_learning_rate_keeps_weights(data):
    train_set, val = data
    cfg = _config(epochs=1, batch_size=64, lr=0.0)
    model = init_model(train_set, SPEC_Y, SPEC_PHI, 0.5, 0)
    before = _weights(model)
    result = train(train_set, val, SPEC_Y, SPEC_PHI, cfg, SIM.prior, model=model)
    after = _weights(result.final_model)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_is_deterministic(data):
    train_set, val = data
    a = train(train_set, val, SPEC_Y, SPEC_PHI, _config(), SIM.prior)
    b = train(train_set, val, SPEC_Y, SPEC_PHI, _config(), SIM.prior)
    strip = [(r.epoch, r.train_loss, r.val_score, r.lr) for r in a.log]
    assert strip == [(r.epoch, r.train_loss, r.val_score, r.lr) for r in b.log]
    wa, wb = _weights(a.final_model), _weights(b.final_model)
    assert all(np.array_equal(wa[k], wb[k]) for k in wa)


def test_zero_intra_weight_matches_plain_training(data):
    train_set, val = data

    def never_called(*args, **kwargs):
        raise AssertionError("augmenter used with zero intra weight")

    plain = train(train_set, val, SPEC_Y, SPEC_PHI, _config(), SIM.prior)
    with_aug = train(train_set, val, SPEC_Y, SPEC_PHI, _config(loss=LossConfig(tau=0.5, intra_weight=0.0)),
                     SIM.prior, augmenter=never_called)
    wa, wb = _weights(plain.final_model), _weights(with_aug.final_model)
    assert all(np.array_equal(wa[k], wb[k]) for k in wa)


def test_intra_weight_changes_updates(data):
    train_set, val = data

    def jitter(idx, rng, distinct=True):
        return train_set.observations[idx] + 0.01 * rng.normal(size=(len(idx), 2))

    plain = train(train_set, val, SPEC_Y, SPEC_PHI, _config(epochs=1), SIM.prior)
    reg = train(train_set, val, SPEC_Y, SPEC_PHI, _config(epochs=1, loss=LossConfig(tau=0.5, intra_weight=1.0)),
                SIM.prior, augmenter=jitter)
    assert not np.array_equal(plain.final_model.encoder.params["W_in"], reg.final_model.encoder.params["W_in"])
    # the emulator only sees the inter-domain loss, but its optimizer shares the step count
    assert reg.log[0].train_loss > plain.log[0].train_loss


def test_intra_loss_needs_augmentation(data):
    train_set, val = data
    with pytest.raises(TrainingError):
        train(train_set, val, SPEC_Y, SPEC_PHI, _config(loss=LossConfig(intra_weight=0.5)), SIM.prior)
    with pytest.raises(TrainingError):
        train(train_set, val, SPEC_Y, SPEC_PHI, _config(recrop=True), SIM.prior)


def test_empty_training_set(data):
    _, val = data
    empty = Dataset(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(TrainingError):
        train(empty, val, SPEC_Y, SPEC_PHI, _config(), SIM.prior)


def test_non_finite_loss_reports_context(data):
    train_set, val = data
    obs = train_set.observations.copy()
    obs[3] = np.nan
    broken = Dataset(train_set.params, obs, train_set.seeds)
    with pytest.raises(TrainingError, match=r"epoch 1, batch \d"):
        train(broken, val, SPEC_Y, SPEC_PHI, _config(), SIM.prior)


def test_log_file_and_checkpoint_choice(data, tmp_path):
    train_set, val = data
    path = tmp_path / "log.csv"
    result = train(train_set, val, SPEC_Y, SPEC_PHI, _config(epochs=4, val_interval=2), SIM.prior, log_path=path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert rows[1][2] == "" and rows[2][2] != ""
    assert result.best_epoch in (0, 2, 4)
    assert result.model.metadata["best_epoch"] == result.best_epoch
    assert result.model.metadata["memory_bank_side"].startswith("parameter")


def test_validation_score_of_constant_model_is_prior_sum():
    prior = PriorSpec.box([0.0, 0.0], [2.0, 4.0])
    model = RatioModel(constant_head([1.0, 0.0]), constant_head([1.0, 0.0]), 0.3)
    params = prior.sample(10, np.random.default_rng(0))
    score = validation_score(model, params, np.zeros((10, 3)), prior, 500, 0)
    assert score == pytest.approx(10 * prior.density(params)[0], rel=1e-12)


def test_paired_validation_beats_shuffled():
    sim = SyntheticModel.build(50.0)
    val = generate_dataset(sim, sim.prior, 200, 3)
    model = oracle_model(sim)
    paired = validation_score(model, val.params, val.observations, sim.prior, 2000, 0)
    shuffled = validation_score(model, val.params[::-1], val.observations, sim.prior, 2000, 0)
    assert paired > shuffled


def test_validation_values_are_finite_and_nonnegative(data):
    train_set, val = data
    model = init_model(train_set, SPEC_Y, SPEC_PHI, 0.05, 0)
    values = validation_values(model, val.params, val.observations, SIM.prior, 300, 0)
    assert np.all(np.isfinite(values)) and np.all(values >= 0)
    with pytest.raises(ValueError):
        validation_values(model, np.zeros((0, 2)), np.zeros((0, 2)), SIM.prior, 10, 0)


def test_default_run_improves_on_untrained(synthetic_run):
    run = synthetic_run(2.0, False)
    assert run.result.best_median > run.result.initial_median
    scores = [r.val_score for r in run.result.log if r.val_score is not None]
    assert scores[-1] > run.untrained_score


def test_default_run_loss_decreases(synthetic_run):
    log = synthetic_run(2.0, False).result.log
    k = max(1, len(log) // 10)
    first = np.median([r.train_loss for r in log[:k]])
    last = np.median([r.train_loss for r in log[-k:]])
    assert last < first
    assert math.isfinite(last)
