import math
import zipfile

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gtea import numerics as nm
from gtea import training
from gtea.errors import CheckpointError, ConfigError, DataError, DivergenceError, NumericError
from gtea.gnn import ModelConfig, build_model
from gtea.graph import SyntheticSpec, generate_synthetic
from gtea.numerics import Tape, Tensor
from gtea.training import (
    AdamState,
    Metrics,
    TrainConfig,
    adam_step,
    compute_metrics,
    cross_entropy_loss,
    evaluate,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    train,
)
from oracles import macro_f1_by_hand

# ---------------------------------------------------------------- loss


@pytest.mark.parametrize("C", [2, 3, 7])
def test_uniform_logits_give_log_c(C):
    loss = cross_entropy_loss(Tensor(np.zeros((4, C))), [0, 1, 1, 0])
    assert_allclose(loss.item(), math.log(C), rtol=1e-15)


def test_two_class_closed_form():
    loss = cross_entropy_loss(Tensor(np.array([[math.log(2), 0.0]])), [0])
    assert_allclose(loss.item(), math.log(1.5), rtol=1e-15)


def test_confident_logit_loss_vanishes():
    assert cross_entropy_loss(Tensor(np.array([[20.0, 0.0]])), [0]).item() < 1e-8
    assert np.isfinite(cross_entropy_loss(Tensor(np.array([[1000.0, -1000.0]])), [1]).item())


def test_loss_is_mean_over_labeled_rows_only():
    z = np.random.default_rng(0).normal(size=(3, 2))
    full = cross_entropy_loss(Tensor(z), [0, -1, 1]).item()
    assert_allclose(full, cross_entropy_loss(Tensor(z[[0, 2]]), [0, 1]).item())


def test_loss_errors():
    with pytest.raises(DataError, match="no labeled"):
        cross_entropy_loss(Tensor(np.zeros((2, 2))), [-1, -1])
    with pytest.raises(DataError):
        cross_entropy_loss(Tensor(np.zeros((2, 2))), [0, 2])


def test_loss_gradient():
    z = np.random.default_rng(1).normal(size=(5, 3))
    assert nm.gradient_check(lambda t: cross_entropy_loss(t, [0, 2, 1, -1, 2]), z) < 1e-8


# ---------------------------------------------------------------- Adam


def test_zero_gradient_is_a_fixed_point():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    new, state = adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    assert_array_equal(new["w"].data, p["w"].data)
    assert state.step == 1


def test_first_step_moves_by_lr_times_sign():
    g = np.array([0.5, -3.0, 1e-3])
    p = {"w": Tensor(np.zeros(3))}
    new, _ = adam_step(p, {"w": g}, AdamState(lr=0.01))
    assert_allclose(new["w"].data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(2)
    grads = rng.normal(size=(5, 3))
    p = {"w": Tensor(np.zeros(3))}
    state = AdamState(lr=0.05)
    m = v = np.zeros(3)
    w = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p, state = adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert_allclose(p["w"].data, w, rtol=1e-13)


def test_non_finite_gradient_aborts_step():
    with pytest.raises(NumericError, match="b"):
        adam_step({"a": Tensor(np.zeros(1)), "b": Tensor(np.zeros(1))},
                  {"a": np.zeros(1), "b": np.array([np.nan])}, AdamState())


def test_adam_decreases_convex_loss_monotonically():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 4))
    y = (X @ np.array([1.0, -2.0, 0.5, 0.0]) > 0).astype(int)
    params = {"W": Tensor(np.zeros((4, 2)), requires_grad=True)}
    state = AdamState(lr=0.01)
    losses = []
    for _ in range(10):
        with Tape() as tape:
            loss = cross_entropy_loss(nm.matmul(Tensor(X), params["W"]), y)
        grads = nm.backward(tape, loss, params)
        params, state = adam_step(params, grads, state)
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


# ---------------------------------------------------------------- metrics


def test_perfect_predictions():
    m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0


def test_all_predicted_zero_binary():
    m = compute_metrics([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert m.accuracy == 0.5
    assert m.f1 == [2 / 3, 0.0]
    assert m.macro_f1 == 1 / 3
    assert m.confusion == [[2, 0], [2, 0]]


def test_absent_class_counts_as_zero_f1():
    m = compute_metrics([0, 1, 0], [0, 1, 0], 3)
    assert m.f1 == [1.0, 1.0, 0.0]
    assert m.macro_f1 == 2 / 3


def test_macro_f1_invariant_to_relabeling():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 3, 50)
    p = rng.integers(0, 3, 50)
    perm = np.array([2, 0, 1])
    a = compute_metrics(y, p, 3)
    b = compute_metrics(perm[y], perm[p], 3)
    assert_allclose(a.macro_f1, b.macro_f1, rtol=1e-15)
    assert_allclose(sorted(a.f1), sorted(b.f1), rtol=1e-15)


def test_metrics_match_hand_computation():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 4, 200)
    p = np.where(rng.random(200) < 0.6, y, rng.integers(0, 4, 200))
    m = compute_metrics(y, p, 4)
    acc, macro = macro_f1_by_hand(m.confusion)
    assert_allclose([m.accuracy, m.macro_f1], [acc, macro], rtol=1e-14)
    assert m.accuracy == np.trace(m.confusion) / 200


def test_metric_errors():
    with pytest.raises(DataError):
        compute_metrics([], [], 2)
    with pytest.raises(DataError):
        compute_metrics([0, 3], [0, 1], 2)


def test_argmax_ties_go_to_lowest_class():
    assert_array_equal(training.predict(np.array([[1.0, 1.0], [0.0, 2.0], [3.0, 3.0]])), [0, 1, 0])


# ---------------------------------------------------------------- training loop


@pytest.fixture(scope="module")
def synth64():
    return generate_synthetic(SyntheticSpec(), np.random.default_rng(0))


def quick_config(**kw):
    base = dict(epochs=3, patience=5, lr=0.01, batch_size=32, fanouts=(5,), seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_train_is_deterministic(synth64):
    a = train(synth64, quick_config())
    b = train(synth64, quick_config())
    assert a.history == b.history
    for k, t in a.model.parameters().items():
        assert_array_equal(t.data, b.model.parameters()[k].data)


def test_early_stopping_on_flat_validation(synth64, monkeypatch):
    flat = Metrics(0.5, 0.5, [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [[1, 1], [1, 1]])
    monkeypatch.setattr(training, "validation_scores", lambda *a, **k: (flat, 0.7))
    r = train(synth64, quick_config(epochs=100, patience=10))
    assert r.best_epoch == 1
    assert len(r.history) <= r.best_epoch + 10


def test_train_returns_best_epoch_model(synth64):
    r = train(synth64, quick_config(epochs=6))
    best = max(r.history, key=lambda e: (e["val_macro_f1"], -e["val_loss"]))
    assert r.best_epoch == best["epoch"]
    metrics, loss = training.validation_scores(r.model, synth64, r.splits[1])
    assert metrics.macro_f1 == best["val_macro_f1"] and loss == best["val_loss"]


def test_equal_macro_f1_prefers_lower_validation_loss(synth64, monkeypatch):
    flat = Metrics(1.0, 1.0, [1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [[2, 0], [0, 2]])
    losses = iter([0.5, 0.3, 0.3, 0.4, 0.2, 0.6])
    monkeypatch.setattr(training, "validation_scores", lambda *a, **k: (flat, next(losses)))
    r = train(synth64, quick_config(epochs=6, patience=6))
    assert r.best_epoch == 5


def test_divergence_keeps_last_good_model(synth64, monkeypatch):
    real = training.cross_entropy_loss
    calls = {"n": 0}

    def flaky(logits, labels):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericError("loss is NaN")
        return real(logits, labels)

    monkeypatch.setattr(training, "cross_entropy_loss", flaky)
    with pytest.raises(DivergenceError) as info:
        train(synth64, quick_config())
    assert info.value.model is not None


def test_evaluate_partitions_labeled_nodes(synth64):
    r = train(synth64, quick_config(epochs=1))
    parts = [evaluate(r.model, synth64, s) for s in r.splits]
    total = evaluate(r.model, synth64, np.concatenate(r.splits))
    assert sum(int(np.sum(m.confusion)) for m in parts) == int(np.sum(total.confusion)) == 64
    assert_array_equal(sum(np.array(m.confusion) for m in parts), total.confusion)
    with pytest.raises(DataError):
        evaluate(r.model, synth64, [])


def test_config_grid_and_variants():
    with pytest.raises(ConfigError, match="lstm, lstm\\+t2v"):
        TrainConfig(variant="gru").validate()
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig(batch_size=50).validate()
    TrainConfig(batch_size=50, off_grid=True).validate()
    cfg = TrainConfig(variant="transformer+t2v")
    assert cfg.encoder == "transformer" and cfg.t2v


# ---------------------------------------------------------------- checkpoints


def make_model(**kw):
    base = dict(node_dim=8, edge_dim=2, num_classes=2)
    base.update(kw)
    return build_model(ModelConfig(**base), np.random.default_rng(6))


def test_checkpoint_round_trip_is_bit_exact(tmp_path, synth64):
    model = make_model(t2v=True)
    cfg = TrainConfig(variant="lstm+t2v")
    history = [{"epoch": 1, "train_loss": 0.123456789}]
    save_checkpoint(model, tmp_path / "m.npz", cfg, history)
    ck = read_checkpoint(tmp_path / "m.npz")
    for k, t in model.parameters().items():
        loaded = ck.model.parameters()[k].data
        assert loaded.dtype == np.float32
        assert loaded.tobytes() == t.data.tobytes()
    assert ck.history == history
    assert ck.train_config["variant"] == "lstm+t2v"
    nodes = np.arange(20)
    assert evaluate(model, synth64, nodes) == evaluate(ck.model, synth64, nodes)


def test_checkpoint_config_mismatch_names_field(tmp_path):
    save_checkpoint(make_model(width=32), tmp_path / "m.npz")
    with pytest.raises(CheckpointError, match="width"):
        load_checkpoint(tmp_path / "m.npz", ModelConfig(node_dim=8, edge_dim=2, num_classes=2, width=64))


def test_t2v_checkpoint_refused_as_plain(tmp_path):
    save_checkpoint(make_model(t2v=True), tmp_path / "m.npz")
    with pytest.raises(CheckpointError, match="variant"):
        load_checkpoint(tmp_path / "m.npz", ModelConfig(node_dim=8, edge_dim=2, num_classes=2))


def test_corrupt_and_wrong_version_checkpoints(tmp_path):
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(tmp_path / "junk.npz")
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.npz")
    model = make_model()
    save_checkpoint(model, tmp_path / "m.npz")
    with np.load(tmp_path / "m.npz") as z:
        arrays = {k: z[k] for k in z.files}
    meta = arrays["__meta__"].tobytes().replace(b'"format_version": 1', b'"format_version": 99')
    arrays["__meta__"] = np.frombuffer(meta, dtype=np.uint8)
    np.savez(tmp_path / "v99.npz", **arrays)
    with pytest.raises(CheckpointError, match="format_version 99"):
        load_checkpoint(tmp_path / "v99.npz")
    assert zipfile.is_zipfile(tmp_path / "m.npz")
