import numpy as np
import pytest

from facetraj import ftdn, synthgen, training
from facetraj.errors import InputError
from facetraj.training import TrainConfig


@pytest.fixture(scope="module")
def tiny():
    return synthgen.make_dataset(2, 2, seed=21, base=synthgen.SynthConfig(T=114))


def test_zero_lr_epoch_keeps_params(tiny):
    res = training.train(tiny, TrainConfig(epochs=1, batch_size=4, lr=0.0, seed=1))
    init = ftdn.init_params(1)
    assert all(np.array_equal(res.params[k], init[k]) for k in init)
    assert len(res.history) == 1 and res.best_epoch == 1


def test_rerun_is_bit_identical(tiny):
    cfg = TrainConfig(epochs=2, batch_size=5, seed=2)
    a = training.train(tiny, cfg, val_set=tiny)
    b = training.train(tiny, cfg, val_set=tiny)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert all(np.array_equal(a.best_params[k], b.best_params[k]) for k in a.params)


def test_epoch_loss_is_sample_weighted_mean(tiny):
    cfg = TrainConfig(epochs=1, batch_size=5, lr=0.0, seed=3)
    res = training.train(tiny, cfg)
    # with lr=0 every batch sees the same parameters, so the epoch mean is the full-set loss
    (total, bce, mse), _ = ftdn.loss_and_grad(ftdn.init_params(3), tiny.x, tiny.labels)
    log = res.history[0]
    assert abs(log.loss - total) <= 1e-12 and abs(log.bce - bce) <= 1e-12 and abs(log.mse - mse) <= 1e-12


def test_best_checkpoint_follows_validation(tiny):
    seen = []
    res = training.train(tiny, TrainConfig(epochs=3, batch_size=4, seed=4), val_set=tiny, on_epoch=seen.append)
    accs = [log.val_accuracy for log in seen]
    assert res.best_epoch == 1 + int(np.argmax(accs))
    assert training.sample_accuracy(res.best_params, tiny, ftdn.Flags()) == max(accs)


def test_epoch_order_is_a_seeded_permutation():
    a = training.epoch_order(50, 7, 1)
    assert sorted(a.tolist()) == list(range(50))
    assert np.array_equal(a, training.epoch_order(50, 7, 1))
    assert not np.array_equal(a, training.epoch_order(50, 7, 2))


def test_eval_only_and_unlabeled_samples_are_skipped(tiny):
    s = tiny.subset(np.arange(len(tiny)))
    s.eval_only[:3] = True
    s.labels[3] = -1
    assert len(training.trainable(s)) == len(tiny) - 4


def test_config_validation_and_hash():
    with pytest.raises(InputError):
        TrainConfig(batch_size=0)
    with pytest.raises(InputError):
        TrainConfig(lr=float("nan"))
    assert training.config_hash(TrainConfig()) == training.config_hash({**TrainConfig().__dict__})
    assert training.config_hash(TrainConfig()) != training.config_hash(TrainConfig(seed=8))
    assert TrainConfig(use_gru=False).flags == ftdn.Flags(use_gru=False)


def test_no_labeled_data(tiny):
    s = tiny.subset(np.arange(len(tiny)))
    s.labels[:] = -1
    with pytest.raises(InputError):
        training.train(s, TrainConfig(epochs=1))
