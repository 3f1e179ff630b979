import json
import struct

import numpy as np
import pytest

from conftest import tiny_config
from pcanet import instrument
from pcanet import tensor as T
from pcanet.config import RunConfig, TrainConfig
from pcanet.data import PairBatch, generate_synthetic, pair_batches
from pcanet.errors import CheckpointError
from pcanet.head import cross_entropy, total_loss
from pcanet.tensor import DimensionError, Tensor
from pcanet.trainer import (evaluate, fit, forward_streams, init_state, load_checkpoint, lr_at,
                            save_checkpoint, sgd_step, train_epoch, train_step)

OFF = {"enable_ca": False, "enable_ae": False, "enable_center": False}


def tiny_run(**overrides):
    cfg = tiny_config(**overrides)
    train, test = generate_synthetic(cfg.data, 0)
    return cfg, train, test, init_state(cfg, train.num_classes, train.class_names)


def first_batch(train, size=4):
    return next(pair_batches(train, size, 0, augment=False))


# ----------------------------------------------------------------------
# schedule and optimiser
# ----------------------------------------------------------------------

def test_lr_schedule_examples():
    cfg = TrainConfig()
    assert [lr_at(e, cfg) for e in (0, 1, 2, 3, 4)] == [0.01, 0.01, 0.009, 0.009, 0.0081]
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_sgd_zero_grad_zero_decay_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    sgd_step(p, {"w": np.zeros(2)}, {}, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p["w"].data.tolist() == [1.0, -2.0]


def test_sgd_weight_decay_hand_computed(f64):
    p = {"w": Tensor(np.array([1.0]))}
    sgd_step(p, {"w": np.zeros(1)}, {}, lr=1.0, momentum=0.0, weight_decay=0.1)
    assert p["w"].data[0] == pytest.approx(0.9, abs=1e-15)


def test_sgd_momentum_recurrence(f64):
    p = {"w": Tensor(np.array([0.5]))}
    buffers = {}
    grads = [0.3, -0.2]
    lr, mom, wd = 0.1, 0.9, 0.01
    ref_p, ref_buf = 0.5, None
    for g in grads:
        sgd_step(p, {"w": np.array([g])}, buffers, lr, mom, wd)
        gp = g + wd * ref_p
        ref_buf = gp if ref_buf is None else mom * ref_buf + gp
        ref_p = ref_p - lr * ref_buf
    assert p["w"].data[0] == pytest.approx(ref_p, abs=1e-7)
    assert buffers["w"][0] == pytest.approx(ref_buf, abs=1e-7)


def test_weight_decay_contracts_by_constant_factor(f64, rng):
    p = {"w": Tensor(rng.standard_normal(5))}
    start = p["w"].data.copy()
    for step in range(1, 4):
        sgd_step(p, {}, {}, lr=0.05, momentum=0.0, weight_decay=0.2)
        np.testing.assert_allclose(p["w"].data, start * (1 - 0.05 * 0.2) ** step, rtol=1e-14)


def test_sgd_shape_mismatch():
    with pytest.raises(DimensionError):
        sgd_step({"w": Tensor(np.zeros(2))}, {"w": np.zeros(3)}, {}, 0.1, 0.9, 0.0)


# ----------------------------------------------------------------------
# train_step composition
# ----------------------------------------------------------------------

def test_all_flags_off_is_single_stream_cross_entropy():
    cfg, train, _, state = tiny_run(**OFF)
    batch = first_batch(train)
    with T.no_grad():
        _, logits = state.model.head(state.model.features(batch.images), "o")
        expected = cross_entropy(logits, batch.labels).item()
    instrument.reset()
    metrics = train_step(batch, state)
    assert metrics["streams"] == 1
    assert metrics["loss_total"] == pytest.approx(expected, rel=1e-6)
    assert metrics["loss_ce_w"] == metrics["loss_ce_e"] == metrics["loss_center"] == 0.0
    for name in ("pairing", "coattend", "attention_map", "erase", "update_centers"):
        assert instrument.counters[name] == 0
    assert instrument.counters["classify"] == 1


def test_ca_only_without_center_is_two_cross_entropies():
    _, train, _, state = tiny_run(enable_ca=True, enable_ae=False, enable_center=False)
    m = train_step(first_batch(train), state)
    assert m["streams"] == 2
    assert m["loss_total"] == pytest.approx(m["loss_ce_o"] + m["loss_ce_w"], rel=1e-6)
    assert instrument.counters["coattend"] == 1 and instrument.counters["erase"] == 0


def test_full_step_runs_three_streams_and_updates_centers():
    _, train, _, state = tiny_run()
    before = state.centers.centers.copy()
    m = train_step(first_batch(train), state)
    assert m["streams"] == 3
    assert instrument.counters["erase"] == 4 and instrument.counters["update_centers"] == 1
    assert not np.array_equal(before, state.centers.centers)
    lam = state.cfg.train.lam
    parts = m["loss_ce_o"] + m["loss_ce_w"] + m["loss_ce_e"] + lam * m["loss_center"]
    assert m["loss_total"] == pytest.approx(parts, rel=1e-5)


def test_ae_without_ca_erases_from_original_features():
    _, train, _, state = tiny_run(enable_ca=False, enable_ae=True, enable_center=False)
    out = forward_streams(state, first_batch(train))
    assert out.logits_w is None and out.logits_e is not None
    assert instrument.counters["coattend"] == 0 and instrument.counters["erase"] == 4


def test_erased_stream_has_no_edge_into_attention_pathway():
    _, train, _, state = tiny_run()
    out = forward_streams(state, first_batch(train))
    loss_e = cross_entropy(out.logits_e, first_batch(train).labels)
    erased = out.extras["erased"]
    assert erased.node is None and not erased.requires_grad
    for upstream in (out.extras["f_w"], out.extras["weights"].w, out.extras["weights"].similarity, out.extras["f_o"]):
        assert not T.depends_on(loss_e, upstream)
    assert T.depends_on(loss_e, state.model.backbone["stage0.weight"])
    assert not any(n.op_name in ("softmax_rows", "concat") for n in T.ancestors(loss_e))
    # the weighted stream itself does reach the co-attention weights
    loss_w = cross_entropy(out.logits_w, first_batch(train).labels)
    assert T.depends_on(loss_w, out.extras["weights"].w)


def test_per_stream_classifiers_and_transposed_weights():
    _, train, _, state = tiny_run(shared_classifier=False, transpose_w_second=True)
    assert {"classifier_o.weight", "classifier_w.weight", "classifier_e.weight"} <= set(state.model.parameters())
    before = state.model.classifier["classifier_e.weight"].data.copy()
    train_step(first_batch(train), state)
    assert not np.array_equal(before, state.model.classifier["classifier_e.weight"].data)


def test_overfit_one_batch():
    # unit-norm bilinear features make the logit scale grow slowly, so this sanity run uses a large step
    cfg = RunConfig().updated({"images_per_class": 4, "test_images_per_class": 1, "base_lr": 1.0, **OFF})
    train, _ = generate_synthetic(cfg.data, 0)
    state = init_state(cfg, train.num_classes, train.class_names)
    batch = next(pair_batches(train, 8, 0, augment=False))
    losses = [train_step(batch, state)["loss_total"] for _ in range(50)]
    assert losses[1] < losses[0]
    assert min(losses) < 0.1


def test_total_loss_grad_check_through_tiny_model(rng):
    cfg = RunConfig().updated({"input_size": 8, "stage_channels": [3, 4], "theta": 0.5})
    with T.precision(64):
        state = init_state(cfg, 2)
        state.centers.centers = rng.standard_normal(state.centers.centers.shape) * 0.1
        # erased pixels are exactly zero; with zero biases the erased stream would sit on relu's kink
        for name, p in state.model.backbone.items():
            if name.endswith("bias"):
                p.data = rng.uniform(-0.3, 0.3, p.shape)
        images = Tensor(rng.uniform(size=(4, 3, 8, 8)))
    labels = np.array([0, 1, 0, 1])
    batch = PairBatch(images, labels, ["a", "b", "c", "d"])
    params = state.model.parameters()
    names = list(params)

    def f(*leaves):
        for name, leaf in zip(names, leaves):
            (state.model.backbone if name.startswith("stage") else state.model.classifier)[name] = leaf
        return total_loss(forward_streams(state, batch), labels, state.centers)
    assert T.grad_check(f, [params[n] for n in names]) < 1e-4


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------

def test_untrained_accuracy_is_near_chance():
    cfg = RunConfig()
    _, test = generate_synthetic(cfg.data, 0)
    state = init_state(cfg, test.num_classes)
    acc = evaluate(test, state)
    sigma = np.sqrt(1 / 8 * 7 / 8 / len(test))
    assert abs(acc - 1 / 8) <= 3 * sigma
    assert evaluate(test, state) == acc


def test_evaluation_touches_no_training_stage():
    _, train, test, state = tiny_run()
    train_step(first_batch(train), state)
    instrument.reset()
    evaluate(test, state)
    for name in ("pair_batches", "pairing", "coattend", "attention_map", "erase", "update_centers"):
        assert instrument.counters[name] == 0, name
    assert instrument.counters["classify"] >= 1


# ----------------------------------------------------------------------
# runs, determinism, checkpoints
# ----------------------------------------------------------------------

def test_fit_writes_metrics_and_checkpoint(tmp_path):
    _, train, test, state = tiny_run()
    history = fit(state, train, test, out_dir=tmp_path)
    assert len(history) == 2
    records = [json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    keys = {"epoch", "step", "lr", "loss_total", "loss_ce_o", "loss_ce_w", "loss_ce_e", "loss_center",
            "acc_train", "acc_test"}
    assert all(keys <= set(r) for r in records)
    assert [r["kind"] for r in records].count("epoch") == 2
    assert sum(r["kind"] == "step" for r in records) == 2 * len(train) // 2
    assert (tmp_path / "checkpoint.pcan").read_bytes()[:4] == b"PCAN"


def test_identical_seeds_give_identical_metrics_in_64_bit(tmp_path):
    for name in ("a", "b"):
        _, train, test, state = tiny_run(precision="float64")
        fit(state, train, test, out_dir=tmp_path / name)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    _, train, test, state = tiny_run(precision="float64", seed=1)
    fit(state, train, test, out_dir=tmp_path / "c")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() != (tmp_path / "c" / "metrics.jsonl").read_bytes()


def test_identical_seeds_in_32_bit_agree():
    runs = []
    for _ in range(2):
        _, train, test, state = tiny_run()
        runs.append([r["loss_total"] for r in fit(state, train, test)])
    np.testing.assert_allclose(runs[0], runs[1], rtol=1e-5)


def _tensors(state):
    table = {k: p.data for k, p in state.model.parameters().items()}
    table["centers"] = state.centers.centers
    table.update({f"m/{k}": v for k, v in state.buffers.items()})
    return table


@pytest.mark.parametrize("precision", ["float32", "float64"])
def test_checkpoint_round_trip_is_bitwise(tmp_path, precision):
    _, train, test, state = tiny_run(precision=precision, epochs=1)
    fit(state, train, test)
    save_checkpoint(state, tmp_path / "a.pcan")
    loaded = load_checkpoint(tmp_path / "a.pcan")
    a, b = _tensors(state), _tensors(loaded)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes(), k
    assert (loaded.epoch, loaded.step, loaded.class_names) == (state.epoch, state.step, state.class_names)
    save_checkpoint(loaded, tmp_path / "b.pcan")
    assert (tmp_path / "a.pcan").read_bytes() == (tmp_path / "b.pcan").read_bytes()


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg, train, test, state = tiny_run(precision="float64", epochs=4)
    straight = fit(state, train, test)

    _, _, _, state = tiny_run(precision="float64", epochs=4)
    for _ in range(3):
        train_epoch(state, train)
    save_checkpoint(state, tmp_path / "mid.pcan")
    resumed = fit(load_checkpoint(tmp_path / "mid.pcan"), train, test)
    assert len(resumed) == 1
    drop = {"seconds"}
    assert {k: v for k, v in resumed[0].items() if k not in drop} == \
        {k: v for k, v in straight[3].items() if k not in drop}


def test_checkpoint_format_errors(tmp_path):
    _, train, _, state = tiny_run()
    path = tmp_path / "c.pcan"
    save_checkpoint(state, path)
    raw = path.read_bytes()
    header_len = struct.unpack("<I", raw[8:12])[0]
    header = json.loads(raw[12:12 + header_len])
    assert header["format_version"] == 1 and header["tensors"][0]["dtype"] == "<f4"

    (tmp_path / "magic.pcan").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.pcan")
    (tmp_path / "version.pcan").write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "version.pcan")
    (tmp_path / "short.pcan").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.pcan")
    (tmp_path / "tiny.pcan").write_bytes(raw[:20])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "tiny.pcan")
