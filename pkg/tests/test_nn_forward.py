import numpy as np
import pytest

from naive_ops import naive_avgpool, naive_conv2d, naive_fc, naive_maxpool
from uapcraft.nn import (Model, NetworkSpec, avg_pool, concat, conv2d,
                         expected_weight_shapes, flatten, forward,
                         fully_connected, infer_shapes, input_norm, max_pool,
                         relu, softmax)
from uapcraft.tensorops import Rng
from uapcraft.train import init_weights


def chain_spec(*mids, input_shape=(1, 8, 8), classes=3):
    """Wrap feature layers with Flatten/FC/Softmax into a valid spec."""
    layers = list(mids)
    prev = layers[-1].id
    layers += [flatten("fl", prev),
               fully_connected("fc", "fl", classes),
               softmax("sm", "fc")]
    return NetworkSpec(layers, input_shape, classes)


def make_model(spec, seed=0):
    return Model(spec=spec, weights=init_weights(spec, Rng(seed)))


class TestInferShapes:
    def test_same_padding_conv(self):
        spec = chain_spec(conv2d("c", (), 4, 3, 3, stride=1, pad=1))
        assert infer_shapes(spec)["c"] == (4, 8, 8)

    def test_pool_halves(self):
        spec = chain_spec(conv2d("c", (), 2, 3, 3, pad=1),
                          max_pool("p", "c", window=2, stride=2))
        assert infer_shapes(spec)["p"] == (2, 4, 4)

    def test_kernel_too_large_rejected(self):
        with pytest.raises(ValueError, match="non-positive"):
            chain_spec(conv2d("c", (), 2, 5, 5, pad=0), input_shape=(1, 3, 3))

    def test_dangling_reference_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            NetworkSpec([conv2d("c", "nope", 2, 3, 3),
                         flatten("fl", "c"),
                         fully_connected("fc", "fl", 2),
                         softmax("sm", "fc")], (1, 5, 5), 2)

    def test_concat_extent_mismatch_rejected(self):
        with pytest.raises(ValueError, match="agree"):
            NetworkSpec([
                conv2d("a", (), 2, 3, 3, pad=1),
                conv2d("b", (), 2, 3, 3, pad=0),
                concat("cat", ["a", "b"]),
                flatten("fl", "cat"),
                fully_connected("fc", "fl", 2),
                softmax("sm", "fc"),
            ], (1, 6, 6), 2)

    def test_unconsumed_layer_rejected(self):
        with pytest.raises(ValueError, match="never consumed"):
            NetworkSpec([
                conv2d("a", (), 2, 3, 3, pad=1),
                conv2d("orphan", (), 2, 3, 3, pad=1),
                flatten("fl", "a"),
                fully_connected("fc", "fl", 2),
                softmax("sm", "fc"),
            ], (1, 6, 6), 2)


class TestForward:
    def test_one_hot_center_kernel_is_identity(self):
        spec = chain_spec(conv2d("c", (), 1, 3, 3, pad=1), input_shape=(1, 6, 6))
        model = make_model(spec)
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        model.weights["c"]["kernel"] = k
        model.weights["c"]["bias"] = np.zeros(1)
        x = Rng(1).uniform(-1, 1, (2, 1, 6, 6))
        trace = forward(model, x)
        assert np.array_equal(trace.activations["c"], x)

    def test_1x1_all_ones_kernel_sums_channels(self):
        spec = chain_spec(conv2d("c", (), 1, 1, 1), input_shape=(3, 4, 4))
        model = make_model(spec)
        model.weights["c"]["kernel"] = np.ones((1, 3, 1, 1))
        model.weights["c"]["bias"] = np.zeros(1)
        x = Rng(2).uniform(-1, 1, (2, 3, 4, 4))
        trace = forward(model, x)
        assert np.allclose(trace.activations["c"][:, 0], x.sum(axis=1),
                           atol=1e-14)

    def test_matches_naive_conv_oracle(self):
        rng = Rng(3)
        spec = chain_spec(conv2d("c1", (), 3, 3, 3, stride=2, pad=1),
                          relu("r1", "c1"),
                          conv2d("c2", "r1", 2, 2, 2, stride=1, pad=0),
                          input_shape=(2, 7, 7))
        model = make_model(spec, seed=3)
        x = rng.uniform(-2, 2, (3, 2, 7, 7))
        trace = forward(model, x)
        ref1 = naive_conv2d(x, model.weights["c1"]["kernel"],
                            model.weights["c1"]["bias"], 2, 1)
        assert np.abs(trace.activations["c1"] - ref1).max() < 1e-12
        ref2 = naive_conv2d(np.maximum(ref1, 0),
                            model.weights["c2"]["kernel"],
                            model.weights["c2"]["bias"], 1, 0)
        assert np.abs(trace.activations["c2"] - ref2).max() < 1e-12

    def test_pools_match_naive_oracles(self):
        rng = Rng(4)
        spec = chain_spec(conv2d("c", (), 2, 3, 3, pad=1),
                          max_pool("mp", "c", window=3, stride=2),
                          avg_pool("ap", "mp", window=2, stride=1),
                          input_shape=(1, 9, 9))
        model = make_model(spec, seed=4)
        x = rng.uniform(-1, 1, (2, 1, 9, 9))
        trace = forward(model, x)
        mp_ref = naive_maxpool(trace.activations["c"], 3, 2)
        assert np.array_equal(trace.activations["mp"], mp_ref)
        ap_ref = naive_avgpool(mp_ref, 2, 1)
        assert np.abs(trace.activations["ap"] - ap_ref).max() < 1e-12

    def test_fc_matches_naive_oracle(self):
        spec = chain_spec(conv2d("c", (), 1, 1, 1), input_shape=(1, 3, 3))
        model = make_model(spec, seed=5)
        x = Rng(5).uniform(-1, 1, (4, 1, 3, 3))
        trace = forward(model, x)
        ref = naive_fc(trace.activations["fl"], model.weights["fc"]["weight"],
                       model.weights["fc"]["bias"])
        assert np.abs(trace.activations["fc"] - ref).max() < 1e-12

    def test_input_norm(self):
        spec = chain_spec(input_norm("n", mean=[10.0, 20.0], scale=0.5),
                          conv2d("c", "n", 2, 1, 1), input_shape=(2, 3, 3))
        model = make_model(spec, seed=6)
        x = np.full((1, 2, 3, 3), 30.0)
        trace = forward(model, x)
        assert np.allclose(trace.activations["n"][0, 0], 10.0)
        assert np.allclose(trace.activations["n"][0, 1], 5.0)

    def test_relu_nonnegative_and_softmax_normalized(self):
        spec = chain_spec(conv2d("c", (), 4, 3, 3, pad=1), relu("r", "c"))
        model = make_model(spec, seed=7)
        x = Rng(7).uniform(-50, 50, (5, 1, 8, 8))
        trace = forward(model, x)
        assert trace.activations["r"].min() >= 0.0
        probs = trace.activations["sm"]
        assert probs.min() > 0.0
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-12

    def test_concat_channel_count_is_sum(self):
        spec = chain_spec(conv2d("a", (), 2, 3, 3, pad=1),
                          relu("ra", "a"),
                          conv2d("b", (), 3, 1, 1),
                          relu("rb", "b"),
                          concat("cat", ["ra", "rb"]))
        model = make_model(spec, seed=8)
        x = Rng(8).uniform(-1, 1, (2, 1, 8, 8))
        trace = forward(model, x)
        cat = trace.activations["cat"]
        assert cat.shape[1] == 5
        assert np.array_equal(cat[:, :2], trace.activations["ra"])
        assert np.array_equal(cat[:, 2:], trace.activations["rb"])

    def test_deterministic(self):
        spec = chain_spec(conv2d("c", (), 4, 3, 3, pad=1),
                          max_pool("p", "c", 2, 2))
        model = make_model(spec, seed=9)
        x = Rng(9).uniform(-1, 1, (3, 1, 8, 8))
        a = forward(model, x)
        b = forward(model, x)
        assert np.array_equal(a.logits, b.logits)
        for lid in a.activations:
            assert np.array_equal(a.activations[lid], b.activations[lid])

    def test_shape_mismatch_rejected(self):
        spec = chain_spec(conv2d("c", (), 2, 3, 3, pad=1))
        model = make_model(spec)
        with pytest.raises(ValueError, match="shape"):
            forward(model, np.zeros((1, 1, 9, 9)))

    def test_nan_input_rejected(self):
        spec = chain_spec(conv2d("c", (), 2, 3, 3, pad=1))
        model = make_model(spec)
        x = np.zeros((1, 1, 8, 8))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            forward(model, x)

    def test_argmax_tie_breaks_to_lowest_class(self):
        spec = chain_spec(conv2d("c", (), 1, 1, 1), input_shape=(1, 2, 2),
                          classes=3)
        model = make_model(spec)
        model.weights["c"]["kernel"] = np.zeros((1, 1, 1, 1))
        model.weights["c"]["bias"] = np.zeros(1)
        model.weights["fc"]["weight"] = np.zeros((4, 3))
        model.weights["fc"]["bias"] = np.zeros(3)  # all logits equal
        trace = forward(model, np.ones((2, 1, 2, 2)))
        assert np.array_equal(trace.predicted_labels, [0, 0])

    def test_expected_weight_shapes(self):
        spec = chain_spec(conv2d("c", (), 4, 5, 3, pad=1),
                          input_shape=(2, 8, 8), classes=4)
        shapes = expected_weight_shapes(spec)
        assert shapes["c"]["kernel"] == (4, 2, 5, 3)
        assert shapes["c"]["bias"] == (4,)
        assert shapes["fc"]["weight"][1] == 4


class TestCriterion2Style:
    def test_fifty_random_cases_match_naive_oracles(self):
        rng = Rng(42)
        for case in range(50):
            kind = case % 3
            if kind == 0:
                kh = int(rng.integers(1, 4))
                kw = int(rng.integers(1, 4))
                stride = int(rng.integers(1, 3))
                pad = int(rng.integers(0, 2))
                cin = int(rng.integers(1, 3))
                co = int(rng.integers(1, 4))
                h = int(rng.integers(kh + 2, 8))
                x = rng.uniform(-2, 2, (2, cin, h, h))
                k = rng.uniform(-1, 1, (co, cin, kh, kw))
                b = rng.uniform(-1, 1, (co,))
                spec = chain_spec(conv2d("c", (), co, kh, kw, stride, pad),
                                  input_shape=(cin, h, h))
                model = make_model(spec)
                model.weights["c"]["kernel"] = k
                model.weights["c"]["bias"] = b
                got = forward(model, x).activations["c"]
                ref = naive_conv2d(x, k, b, stride, pad)
            else:
                win = int(rng.integers(1, 4))
                stride = int(rng.integers(1, 3))
                h = int(rng.integers(win + 2, 9))
                cin = int(rng.integers(1, 3))
                x = rng.uniform(-2, 2, (2, cin, h, h))
                pool = max_pool if kind == 1 else avg_pool
                oracle = naive_maxpool if kind == 1 else naive_avgpool
                spec = chain_spec(conv2d("c", (), cin, 1, 1),
                                  pool("p", "c", win, stride),
                                  input_shape=(cin, h, h))
                model = make_model(spec)
                model.weights["c"]["kernel"] = \
                    np.eye(cin).reshape(cin, cin, 1, 1)
                model.weights["c"]["bias"] = np.zeros(cin)
                got = forward(model, x).activations["p"]
                ref = oracle(x, win, stride)
            assert np.abs(got - ref).max() < 1e-12
