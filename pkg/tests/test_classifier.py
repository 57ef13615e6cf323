import numpy as np
import pytest

from ssmdet import checkpoint as ckpt
from ssmdet import tensor as T
from ssmdet.classifier import (ClassifierConfig, ClassifierModel, load_weights,
                               predict)
from ssmdet.gradcheck import model_gradient_check
from ssmdet.tensor import Tensor

TOY = ClassifierConfig(in_channels=1, num_classes=2, base_width=2, blocks_per_stage=(1, 1))


def test_zero_residual_zero_head_gives_uniform_logits():
    model = ClassifierModel(TOY, rng=0)
    x = Tensor(np.zeros((3, 1, 8, 8)))
    logits = model(x)
    assert np.array_equal(logits.data, np.zeros((3, 2)))
    assert np.array_equal(predict(model, x), [0, 0, 0])  # ties -> lowest index


def test_logits_shape():
    model = ClassifierModel(ClassifierConfig(num_classes=5, base_width=4,
                                             blocks_per_stage=(1, 1)), rng=1)
    logits = model(Tensor(np.random.default_rng(1).random((4, 1, 16, 16))))
    assert logits.shape == (4, 5)


def test_channel_mismatch_errors():
    model = ClassifierModel(TOY, rng=2)
    with pytest.raises(ValueError, match="channel"):
        model(Tensor(np.zeros((1, 3, 8, 8))))


def test_cross_entropy_examples():
    assert np.isclose(T.cross_entropy(Tensor([[0.0, 0.0]]), [0]).item(), np.log(2))
    assert T.cross_entropy(Tensor([[20.0, -20.0]]), [0]).item() < 1e-10
    with pytest.raises(ValueError, match="range"):
        T.cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_cross_entropy_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(10):
        logits = rng.standard_normal((6, 4))
        labels = rng.integers(0, 4, size=6)
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        ref = -np.mean(np.log(p[np.arange(6), labels]))
        assert np.isclose(T.cross_entropy(Tensor(logits), labels).item(), ref, rtol=1e-12)


def test_cross_entropy_gradcheck_through_toy_model():
    model = ClassifierModel(TOY, rng=4)
    # knock the zero-init conv2 off zero so its gradient path is exercised
    rng = np.random.default_rng(5)
    for name, p in model.named_params().items():
        if p.data.std() == 0 and p.data.ndim > 1:
            p.data += 0.1 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.random((2, 1, 8, 8)))
    labels = np.array([0, 1])

    def loss_fn():
        return T.cross_entropy(model(x), labels)

    params = model.named_params()
    subset = {k: params[k] for k in ("stem.w", "block0.conv1.w", "block0.conv2.w",
                                     "block1.proj.w", "head.w", "head.b")}
    report = model_gradient_check(loss_fn, subset)
    assert max(report.values()) <= 1e-4, report


def test_softmax_of_logits_is_probability_vector():
    model = ClassifierModel(TOY, rng=6)
    logits = model(Tensor(np.random.default_rng(7).random((5, 1, 8, 8))))
    probs = T.softmax_lastaxis(logits).data
    assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9


def test_argmax_invariant_to_constant_logit_shift():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((10, 4))
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(logits + 3.7, axis=1))


def test_save_load_round_trip_bit_exact(tmp_path):
    model = ClassifierModel(TOY, rng=9)
    path = tmp_path / "clf.ckpt"
    tensors = {k: p.data for k, p in model.named_params().items()}
    ckpt.save(path, tensors)
    fresh = ClassifierModel(TOY, rng=10)
    load_weights(fresh, path)
    for k, p in fresh.named_params().items():
        assert np.array_equal(p.data, tensors[k]), k


def test_mismatched_head_is_reinitialized(tmp_path, caplog):
    donor = ClassifierModel(ClassifierConfig(num_classes=10, base_width=2,
                                             blocks_per_stage=(1, 1)), rng=11)
    path = tmp_path / "donor.ckpt"
    ckpt.save(path, {k: p.data for k, p in donor.named_params().items()})
    target = ClassifierModel(TOY, rng=12)
    head_before = target.head_w.data.copy()
    load_weights(target, path)
    assert np.array_equal(target.head_w.data, head_before)  # head kept fresh
    assert np.array_equal(target.stem.w.data, donor.stem.w.data)  # body restored


def test_non_head_mismatch_errors(tmp_path):
    donor = ClassifierModel(ClassifierConfig(num_classes=2, base_width=4,
                                             blocks_per_stage=(1, 1)), rng=13)
    path = tmp_path / "donor.ckpt"
    ckpt.save(path, {k: p.data for k, p in donor.named_params().items()})
    with pytest.raises(ValueError, match="stem.w"):
        load_weights(ClassifierModel(TOY, rng=14), path)


def test_corrupted_magic_errors(tmp_path):
    path = tmp_path / "bad.ckpt"
    model = ClassifierModel(TOY, rng=15)
    ckpt.save(path, {k: p.data for k, p in model.named_params().items()})
    blob = bytearray(path.read_bytes())
    blob[:5] = b"WRONG"
    path.write_bytes(bytes(blob))
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        load_weights(model, path)


def test_deterministic_training_trajectory():
    from ssmdet.optim import AdamState, adam_step
    from ssmdet.tensor import backward

    def run():
        model = ClassifierModel(TOY, rng=16)
        rng = np.random.default_rng(17)
        xs = rng.random((8, 1, 8, 8))
        ys = rng.integers(0, 2, size=8)
        params = model.named_params()
        state = AdamState(lr=1e-3)
        losses = []
        for _ in range(5):
            loss = T.cross_entropy(model(Tensor(xs)), ys)
            for p in params.values():
                p.zero_grad()
            backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, state)
            losses.append(loss.item())
        return losses

    assert run() == run()  # bit-identical in f64
