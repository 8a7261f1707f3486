import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from notegate.deform import PatchExample
from notegate.io import FormatError
from notegate.nn import (DETECTOR_MAPS, Adam, Checkpoint, Network, PatchSource, TrainConfig,
                         backprop, bce_loss, block_output_shapes, build_error_detector,
                         build_pitch_classifier, grad_check, predict_batch, train)
from notegate.nn.layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, same_padding
from notegate.nn.model import bce_from_logits, softmax_ce
from oracles import conv2d_loop


@pytest.fixture(scope="module")
def detector():
    return build_error_detector(seed=0)


def test_feature_map_chain(detector):
    assert block_output_shapes(detector) == DETECTOR_MAPS
    trace = []
    out = detector.forward(np.random.default_rng(0).random((2, 72, 81, 3)), "eval", trace=trace)
    maps = [tuple(a.shape[1:]) for name, a in trace if name.startswith("block")
            and name.endswith(".act")]
    assert tuple(maps) == DETECTOR_MAPS
    assert out.shape == (2, 1)


@pytest.mark.parametrize("size,stride,expected", [(72, 2, (36, 0, 1)), (81, 1, (81, 1, 1)),
                                                  (81, 3, (27, 0, 0)), (2, 2, (1, 0, 1)),
                                                  (3, 3, (1, 0, 0))])
def test_same_padding(size, stride, expected):
    assert same_padding(size, stride) == expected


@given(st.integers(0, 1000), st.sampled_from([(1, 1), (2, 1), (2, 3), (3, 3)]),
       st.integers(3, 9), st.integers(3, 9))
def test_conv_matches_loop_oracle(seed, stride, H, W):
    rng = np.random.default_rng(seed)
    layer = Conv2D("c", 2, 3, stride, bias=True)
    params = {"c.W": rng.standard_normal((3, 3, 2, 3)), "c.b": rng.standard_normal(3)}
    x = rng.standard_normal((1, H, W, 2))
    got = layer.forward(x, params, {}, "eval", None)[0]
    np.testing.assert_allclose(got, conv2d_loop(x[0], params["c.W"], params["c.b"], stride),
                               atol=1e-12)


def test_zero_final_layer_gives_half(detector):
    net = detector.astype(np.float64)
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 0
    p = predict_batch(net, np.random.default_rng(1).random((3, 72, 81, 3)))
    np.testing.assert_array_equal(p, 0.5)


def test_eval_is_deterministic(detector):
    x = np.random.default_rng(2).random((4, 72, 81, 3))
    np.testing.assert_array_equal(detector.forward(x, "eval"), detector.forward(x, "eval"))


def test_predict_batch_is_map_of_forward(detector):
    x = np.random.default_rng(3).random((5, 72, 81, 3)).astype(np.float32)
    batch = predict_batch(detector, x, batch_size=2)
    single = np.concatenate([predict_batch(detector, x[i:i + 1]) for i in range(5)])
    np.testing.assert_allclose(batch, single, rtol=1e-6)


class TestBCE:
    def test_half(self):
        assert bce_loss(0.5, 0) == pytest.approx(math.log(2))
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2))

    def test_perfect(self):
        assert bce_loss(1.0, 1) == pytest.approx(0, abs=1e-6)
        assert bce_loss(0.0, 0) == pytest.approx(0, abs=1e-6)

    def test_direct(self):
        assert bce_loss(0.9, 0) == pytest.approx(-math.log(0.1))

    @given(st.floats(-15, 15), st.integers(0, 1))
    def test_logit_form_matches_probability_form(self, x, z):
        loss, _, p = bce_from_logits(np.array([x]), np.array([z]))
        assert loss == pytest.approx(bce_loss(p[0], z), rel=1e-9, abs=1e-12)

    def test_clamp_bounds_loss(self):
        loss, _, _ = bce_from_logits(np.array([1e4]), np.array([0]))
        assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_softmax_ce_gradient():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 5))
    cls = np.array([0, 3, 4, 1])
    _, g, _ = softmax_ce(logits, cls)
    h = 1e-6
    for i in range(4):
        for j in range(5):
            d = np.zeros_like(logits)
            d[i, j] = h
            num = (softmax_ce(logits + d, cls)[0] - softmax_ce(logits - d, cls)[0]) / (2 * h)
            assert g[i, j] == pytest.approx(num, abs=1e-8)


def test_zero_learning_signal(detector):
    net = detector.astype(np.float64)
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 40.0
    x = np.random.default_rng(4).random((3, 72, 81, 3))
    _, grads = backprop(net, x, np.ones(3), mode="eval")
    assert math.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values())) < 1e-6


def test_duplicated_batch_keeps_mean_gradient(detector):
    net = detector.astype(np.float64)
    x = np.random.default_rng(5).random((3, 72, 81, 3))
    z = np.array([0.0, 1.0, 1.0])
    _, g1 = backprop(net, x, z, mode="check")
    _, g2 = backprop(net, np.concatenate([x, x]), np.concatenate([z, z]), mode="check")
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], atol=1e-6, rtol=1e-6)


def test_grad_check_eval_mode(detector):
    x = np.random.default_rng(6).random((1, 72, 81, 3))
    res = grad_check(detector, x, [1], n_per_kind=40, seed=1)
    assert set(res.per_kind) == {"conv", "batchnorm", "dense"}
    assert res.max_rel_error < 1e-4


def test_grad_check_batch_statistics(detector):
    x = np.random.default_rng(7).random((3, 72, 81, 3))
    res = grad_check(detector, x, [1, 0, 1], n_per_kind=25, seed=2, mode="check")
    assert res.max_rel_error < 1e-4


def test_grad_check_linear_toy_is_exact():
    net = Network([Flatten("flat"), Dense("out", 20, 1)], (4, 5, 1), seed=3, dtype=np.float64)
    x = np.random.default_rng(8).random((2, 4, 5, 1))
    res = grad_check(net, x, [0, 1], n_per_kind=21)
    assert res.n_checked == 21
    assert res.max_rel_error < 1e-8


def test_grad_check_absurd_step_is_reported_not_raised(detector):
    x = np.random.default_rng(9).random((1, 72, 81, 3))
    res = grad_check(detector, x, [1], step=1.0, n_per_kind=10, seed=0)
    assert np.isfinite(res.max_rel_error) or math.isnan(res.max_rel_error)
    assert res.n_checked + res.n_kink_skipped > 0


def test_batchnorm_train_mode_normalizes():
    bn = BatchNorm("bn", 4)
    params = {"bn.gamma": np.ones(4), "bn.beta": np.zeros(4)}
    buffers = {"bn.running_mean": np.zeros(4), "bn.running_var": np.ones(4)}
    x = np.random.default_rng(10).normal(3.0, 5.0, (16, 6, 6, 4))
    out = bn.forward(x, params, buffers, "train", None)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-3)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1, atol=1e-3)
    assert np.all(buffers["bn.running_mean"] != 0)


def test_dropout_statistics():
    d = Dropout("d", 0.3)
    x = np.ones((200, 500))
    out = d.forward(x, {}, {}, "train", np.random.default_rng(11))
    dropped = np.mean(out == 0)
    assert abs(dropped - 0.3) < 0.05
    np.testing.assert_allclose(out[out != 0], 1 / 0.7)
    np.testing.assert_array_equal(d.forward(x, {}, {}, "eval", None), x)
    with pytest.raises(ValueError):
        d.forward(x, {}, {}, "train", None)


def test_adam_first_step_matches_formula():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -4.0])}
    Adam(p, lr=0.1).step(p, g)
    # bias-corrected first step moves each weight by lr * sign(g) (up to eps)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-7)


def toy_examples(n, seed, separable=True):
    """Random audio; a dense random label channel iff z = 1, empty otherwise.

    The mean of the label channel separates the classes linearly.
    """
    rng = np.random.default_rng(seed)
    spectra, out = {}, []
    for k in range(n):
        tid = f"toy{k}"
        spectra[tid] = rng.random((81, 72, 2)).astype(np.float32)
        z = int(rng.integers(2))
        labels = np.zeros((81, 72), dtype=np.uint8)
        if (z if separable else rng.integers(2)):
            labels = (rng.random((81, 72)) < 0.5).astype(np.uint8)
        out.append(PatchExample(tid, 40, z, labels))
    return spectra, out


def test_training_separable_task():
    spectra, ex = toy_examples(320, seed=0)
    src = PatchSource(spectra, 40)
    ck, hist = train(ex[:240], ex[240:], src, TrainConfig(epochs=20, patience=5))
    assert hist.epochs[hist.best_epoch]["holdout_accuracy"] > 0.95
    assert ck.metadata["epoch"] == hist.best_epoch


def test_training_on_noise_stays_at_chance():
    spectra, ex = toy_examples(440, seed=1, separable=False)
    src = PatchSource(spectra, 40)
    _, hist = train(ex[:240], ex[240:], src, TrainConfig(epochs=6, patience=6))
    for row in hist.epochs:
        assert 0.4 <= row["holdout_accuracy"] <= 0.6


def test_training_is_deterministic():
    spectra, ex = toy_examples(96, seed=2)
    src = PatchSource(spectra, 40)
    cfg = TrainConfig(epochs=2, batch_size=32, seed=5)
    a = train(ex[:64], ex[64:], src, cfg)
    b = train(ex[:64], ex[64:], src, cfg)
    assert a[1].to_dict() == b[1].to_dict()
    assert a[0].dumps() == b[0].dumps()


class TestCheckpoint:
    def test_round_trip(self, detector, tmp_path):
        ck = Checkpoint.from_network(detector, {"note": "x"})
        ck.save(tmp_path / "d.ngck")
        back = Checkpoint.load(tmp_path / "d.ngck")
        assert back.dumps() == ck.dumps()
        assert back.metadata == {"note": "x"}
        x = np.random.default_rng(12).random((2, 72, 81, 3))
        np.testing.assert_array_equal(back.to_network().forward(x), detector.forward(x))

    def test_buffers_survive(self, detector):
        net = detector.astype(np.float32)
        net.buffers["block2.bn.running_mean"][:] = 0.25
        back = Checkpoint.loads(Checkpoint.from_network(net).dumps()).to_network()
        np.testing.assert_array_equal(back.buffers["block2.bn.running_mean"], 0.25)

    def test_version_mismatch(self, detector):
        buf = bytearray(Checkpoint.from_network(detector).dumps())
        buf[4:6] = (2).to_bytes(2, "little")
        with pytest.raises(FormatError, match="version"):
            Checkpoint.loads(bytes(buf))

    def test_corrupt(self, detector):
        buf = Checkpoint.from_network(detector).dumps()
        with pytest.raises(FormatError):
            Checkpoint.loads(b"XXXX" + buf[4:])
        with pytest.raises(FormatError):
            Checkpoint.loads(buf[:-7])

    def test_pitch_classifier_round_trip(self):
        net = build_pitch_classifier(seed=1)
        back = Checkpoint.loads(Checkpoint.from_network(net).dumps()).to_network()
        x = np.random.default_rng(0).random((2, 72, 9, 2))
        np.testing.assert_array_equal(back.forward(x), net.forward(x))


def test_nonfinite_input_is_named(detector):
    x = np.full((2, 72, 81, 3), np.nan)
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="block1"):
        backprop(detector, x, np.ones(2), rng=np.random.default_rng(0))
