import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from semdyn.estimators import (
    DisocclusionInpainter,
    SemanticDynamicsPredictor,
    VideoPredictor,
    step_lr,
    teacher_forced_inputs,
)

TINY = dict(hidden_channels=4, mlp_hidden=8, context_channels=4, fusion_channels=4, batch_size=4)


def test_lr_schedule_exact():
    assert step_lr(0) == 0.001 and step_lr(19) == 0.001
    assert step_lr(20) == 0.0008
    assert step_lr(40) == 0.00064
    assert SemanticDynamicsPredictor().lr_at(20) == 0.0008


def test_params_and_clone():
    est = SemanticDynamicsPredictor(hidden_channels=7, seed=3)
    params = est.get_params()
    assert params["hidden_channels"] == 7 and params["learning_rate"] == 0.001
    assert clone(est).get_params() == params
    with pytest.raises(NotFittedError):
        est.predict(np.ones((1, 5, 8, 8), int), np.zeros((1, 5, 8, 8, 2)))


def test_input_validation(small_splits):
    train, _ = small_splits
    est = SemanticDynamicsPredictor(epochs=1, **TINY)
    with pytest.raises(ValueError):
        est.fit(train.maps[:, :6], train.flows[:, :6])
    with pytest.raises(ValueError):
        SemanticDynamicsPredictor(num_classes=2, epochs=1, **TINY).fit(train.maps, train.flows)
    with pytest.raises(ValueError):
        est.fit(train.maps, train.flows[..., :1])


def test_training_reduces_loss(small_splits):
    train, _ = small_splits
    est = SemanticDynamicsPredictor(epochs=0, **TINY).fit(train.maps, train.flows)
    before = est.evaluate_loss(train.maps, train.flows)
    est.set_params(epochs=3, warm_start=True).fit(train.maps, train.flows)
    assert est.evaluate_loss(train.maps, train.flows) < before
    assert [h["epoch"] for h in est.history_] == [0, 1, 2]


def test_warm_start_resume_is_bitwise(small_splits):
    train, _ = small_splits
    a = SemanticDynamicsPredictor(epochs=2, stochastic=True, **TINY).fit(train.maps, train.flows)
    b = SemanticDynamicsPredictor(epochs=1, stochastic=True, **TINY).fit(train.maps, train.flows)
    b.set_params(epochs=2, warm_start=True).fit(train.maps, train.flows)
    assert a.history_ == b.history_
    for pa, pb in zip(a.model_.parameters(), b.model_.parameters()):
        assert torch.equal(pa, pb)


def test_predict_shapes_and_identity_swap(small_splits):
    train, test = small_splits
    est = SemanticDynamicsPredictor(epochs=1, **TINY).fit(train.maps, train.flows)
    probs, flows = est.predict(test.maps, test.flows)
    assert probs.shape == (4, 5, 64, 64, 3) and flows.shape == (4, 5, 64, 64, 2)
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)
    p2, f2 = est.predict(test.maps, test.flows, class_order=[1, 2, 3])
    assert np.array_equal(probs, p2) and np.array_equal(flows, f2)
    p3, _ = est.predict(test.maps, test.flows, class_order=[1, 3, 2])
    assert not np.array_equal(probs, p3)
    with pytest.raises(ValueError):
        est.predict(test.maps, test.flows, class_order=[1, 1, 2])
    assert est.predict_labels(test.maps, test.flows).max() <= 3


def test_stochastic_predict_seeded(small_splits):
    train, test = small_splits
    est = SemanticDynamicsPredictor(epochs=1, stochastic=True, **TINY).fit(train.maps, train.flows)
    a, _ = est.predict(test.maps, test.flows, seed=1)
    b, _ = est.predict(test.maps, test.flows, seed=1)
    c, _ = est.predict(test.maps, test.flows, seed=2)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_pipeline_fit_predict(small_splits):
    train, test = small_splits
    model = VideoPredictor(SemanticDynamicsPredictor(epochs=1, **TINY),
                           DisocclusionInpainter(epochs=1, channels=(4, 4, 4, 4), disc_channels=4, batch_size=4))
    model.fit(train.frames, train.maps, train.flows)
    out = model.predict(test.frames, test.maps, test.flows)
    assert out["frames"].shape == (4, 5, 64, 64, 3)
    assert out["frames"].min() >= 0 and out["frames"].max() <= 1
    assert out["disocclusion"].dtype == bool
    np.testing.assert_array_equal(out["disocclusion"], out["provenance"] > 0)
    hist = model.inpainter.history_[0]
    assert {"reconstruction", "perceptual", "generator", "discriminator"} <= set(hist)


def test_teacher_forced_inputs_use_true_previous_frames(small_splits):
    train, _ = small_splits
    est = SemanticDynamicsPredictor(epochs=1, **TINY).fit(train.maps, train.flows)
    anchors, masks, conds, targets = teacher_forced_inputs(est, train.frames, train.maps, train.flows)
    assert anchors.shape == targets.shape == (8, 5, 64, 64, 3)
    assert masks.shape == (8, 5, 64, 64) and conds.shape == (8, 5, 64, 64, 3)
    np.testing.assert_array_equal(targets, train.frames[:, 5:])


def test_one_epoch_on_default_world_reduces_loss():
    from semdyn import synthworld as sw

    train = sw.build_dataset(sw.sample_specs(32, seed=11))
    est = SemanticDynamicsPredictor(epochs=0, batch_size=4).fit(train.maps, train.flows)
    before = est.evaluate_loss(train.maps, train.flows)
    est.set_params(epochs=1, warm_start=True).fit(train.maps, train.flows)
    assert est.evaluate_loss(train.maps, train.flows) < before


def test_inpainter_alternating_steps_reduce_content_loss():
    rng = np.random.default_rng(0)
    frames = rng.random((4, 2, 16, 16, 3)).astype(np.float32)
    anchors = frames.copy()
    disocc = np.zeros((4, 2, 16, 16), np.float32)
    disocc[:, :, 4:10, 4:10] = 1.0
    anchors[disocc.astype(bool)] = 0.0
    conds = np.eye(3, dtype=np.float32)[rng.integers(0, 3, (4, 2, 16, 16))]
    inpainter = DisocclusionInpainter(epochs=50, batch_size=4, channels=(8, 8, 8, 8), disc_channels=4)
    inpainter.fit(anchors, disocc, conds, frames)
    content = [h["reconstruction"] + 2.0 * h["perceptual"] for h in inpainter.history_]
    assert content[-1] < content[0]
