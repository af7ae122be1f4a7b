import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from uapcraft.errors import NumericError
from uapcraft.fff import (CraftConfig, LayerSelection, craft, fff_loss,
                          rescale, select_layers)
from uapcraft.modelio import perturbation_bytes
from uapcraft.nn import (Model, NetworkSpec, avg_pool, concat, conv2d, flatten,
                         fully_connected, input_norm, max_pool, relu, softmax)
from uapcraft.data import save_idx, synth_dataset
from uapcraft.tensorops import Rng, linf_norm
from uapcraft.train import init_weights


def plain_chain_spec():
    return NetworkSpec([
        conv2d("c1", (), 2, 3, 3, pad=1),
        relu("r1", "c1"),
        max_pool("p1", "r1", 2, 2),
        conv2d("c2", "p1", 3, 3, 3, pad=1),
        relu("r2", "c2"),
        flatten("fl", "r2"),
        fully_connected("fc", "fl", 3),
        softmax("sm", "fc"),
    ], (1, 8, 8), 3)


def branchy_spec():
    return NetworkSpec([
        conv2d("stem", (), 2, 3, 3, pad=1),
        relu("stem_r", "stem"),
        conv2d("b1", "stem_r", 2, 3, 3, pad=1),
        relu("b1_r", "b1"),
        conv2d("b2", "stem_r", 2, 1, 1),
        relu("b2_r", "b2"),
        concat("cat", ["b1_r", "b2_r"]),
        flatten("fl", "cat"),
        fully_connected("fc", "fl", 2),
        softmax("sm", "fc"),
    ], (1, 6, 6), 2)


def constant_activation_model(means):
    """Two conv/ReLU stages whose outputs are constants: zero kernels, the
    requested mean as bias."""
    spec = plain_chain_spec()
    weights = init_weights(spec, Rng(0))
    weights["c1"]["kernel"] = np.zeros_like(weights["c1"]["kernel"])
    weights["c1"]["bias"] = np.full(2, means[0])
    weights["c2"]["kernel"] = np.zeros_like(weights["c2"]["kernel"])
    weights["c2"]["bias"] = np.full(3, means[1])
    return Model(spec=spec, weights=weights)


class TestSelectLayers:
    def test_plain_chain_selects_both_relus(self):
        sel = select_layers(plain_chain_spec(), "all_post_relu_convs")
        assert sel.selected_ids == ("r1", "r2")
        assert sel.k == 2

    def test_branchy_selects_stem_relu_and_concat(self):
        sel = select_layers(branchy_spec(), "concat_plus_outer_convs")
        assert sel.selected_ids == ("stem_r", "cat")
        assert sel.k == 2

    def test_auto_picks_concat_policy_for_branchy_graphs(self):
        assert select_layers(branchy_spec(), "auto").selected_ids == \
            select_layers(branchy_spec(), "concat_plus_outer_convs").selected_ids
        assert select_layers(plain_chain_spec(), "auto").selected_ids == \
            ("r1", "r2")

    def test_fc_only_network_rejected(self):
        spec = NetworkSpec([
            flatten("fl", ()),
            fully_connected("fc", "fl", 2),
            softmax("sm", "fc"),
        ], (1, 3, 3), 2)
        with pytest.raises(ValueError, match="eligible"):
            select_layers(spec, "all_post_relu_convs")

    def test_conv_after_concat_is_outer(self):
        # a conv downstream of the block is not part of it and stays selected
        spec = NetworkSpec([
            conv2d("stem", (), 2, 3, 3, pad=1),
            relu("stem_r", "stem"),
            conv2d("b1", "stem_r", 2, 3, 3, pad=1),
            relu("b1_r", "b1"),
            conv2d("b2", "stem_r", 2, 1, 1),
            relu("b2_r", "b2"),
            concat("cat", ["b1_r", "b2_r"]),
            conv2d("post", "cat", 2, 3, 3, pad=1),
            relu("post_r", "post"),
            flatten("fl", "post_r"),
            fully_connected("fc", "fl", 2),
            softmax("sm", "fc"),
        ], (1, 6, 6), 2)
        sel = select_layers(spec, "concat_plus_outer_convs")
        assert sel.selected_ids == ("stem_r", "cat", "post_r")

    def test_explicit_selection_validated(self):
        spec = plain_chain_spec()
        sel = select_layers(spec, ["r2"])
        assert sel.selected_ids == ("r2",)
        with pytest.raises(ValueError, match="exist"):
            select_layers(spec, ["nope"])
        with pytest.raises(ValueError, match="feature"):
            select_layers(spec, ["fc"])


class TestLoss:
    def test_unit_means_give_zero_loss(self):
        model = constant_activation_model((1.0, 1.0))
        sel = select_layers(model.spec, "auto")
        value, _ = fff_loss(model, np.zeros((1, 8, 8)), sel)
        assert abs(value) < 1e-9

    def test_half_means_give_log4(self):
        model = constant_activation_model((0.5, 0.5))
        sel = select_layers(model.spec, "auto")
        value, _ = fff_loss(model, np.zeros((1, 8, 8)), sel)
        assert abs(value - 1.3862943611198906) < 1e-10

    def test_dead_layer_contributes_floor_log_but_stays_finite(self):
        model = constant_activation_model((1.0, -1.0))  # second layer silent
        sel = select_layers(model.spec, "auto")
        value, grad = fff_loss(model, np.zeros((1, 8, 8)), sel, 1e-12)
        assert abs(value - (-math.log(1e-12))) < 1e-6
        assert np.isfinite(value) and np.isfinite(grad).all()

    def test_selection_order_does_not_matter(self):
        spec = plain_chain_spec()
        model = Model(spec=spec, weights=init_weights(spec, Rng(1)))
        delta = Rng(2).uniform(-1, 1, (1, 8, 8))
        forward_sel = LayerSelection(("r1", "r2"), "explicit")
        reverse_sel = LayerSelection(("r2", "r1"), "explicit")
        v1, g1 = fff_loss(model, delta, forward_sel)
        v2, g2 = fff_loss(model, delta, reverse_sel)
        assert abs(v1 - v2) < 1e-12
        assert np.abs(g1 - g2).max() < 1e-12

    def test_sum_of_logs_gradient_equals_log_product_gradient(self):
        # d/dx of -log(prod m_i) assembled from per-layer mean gradients,
        # compared against the implemented summed form
        from uapcraft.nn import forward, input_gradient
        spec = plain_chain_spec()
        model = Model(spec=spec, weights=init_weights(spec, Rng(14)))
        delta = np.abs(Rng(15).uniform(0.5, 3, (1, 8, 8)))  # positive means
        sel = select_layers(spec, "auto")
        trace = forward(model, delta[None])
        means = {lid: float(trace.activations[lid].mean())
                 for lid in sel.selected_ids}
        assert all(m > 0 for m in means.values())

        def mean_grad(lid):
            def obj(tr):
                act = tr.activations[lid]
                return float(act.mean()), {lid: np.full(act.shape,
                                                        1.0 / act.size)}
            return input_gradient(model, delta[None], obj)[0]

        product_form = -sum(mean_grad(lid) / means[lid]
                            for lid in sel.selected_ids)
        _, summed_form = fff_loss(model, delta, sel, eps_floor=1e-300)
        assert np.abs(product_form - summed_form).max() < 1e-10

    @given(hnp.arrays(np.float64, (1, 8, 8),
                      elements=st.floats(-10, 10, allow_nan=False)))
    @settings(max_examples=25, deadline=None)
    def test_loss_finite_everywhere_in_budget_ball(self, delta):
        model = Model(spec=plain_chain_spec(),
                      weights=init_weights(plain_chain_spec(), Rng(3)))
        sel = select_layers(model.spec, "auto")
        value, grad = fff_loss(model, delta, sel)
        assert np.isfinite(value)
        assert np.isfinite(grad).all()

    def test_wrong_delta_shape_rejected(self):
        model = constant_activation_model((1.0, 1.0))
        sel = select_layers(model.spec, "auto")
        with pytest.raises(ValueError, match="shape"):
            fff_loss(model, np.zeros((1, 5, 5)), sel)


class TestRescale:
    def test_halves_values(self):
        out = rescale(np.array([8.0, -3.0]), 0.5)
        assert np.array_equal(out, [4.0, -1.5])

    def test_zero_stays_zero(self):
        assert np.array_equal(rescale(np.zeros(4), 0.5), np.zeros(4))

    def test_argmax_of_magnitude_preserved(self):
        rng = Rng(4)
        for _ in range(20):
            t = rng.uniform(-10, 10, (3, 4))
            assert np.argmax(np.abs(t)) == np.argmax(np.abs(rescale(t, 0.25)))

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            rescale(np.zeros(2), 1.5)


def small_craft_model(seed=5):
    spec = plain_chain_spec()
    return Model(spec=spec, weights=init_weights(spec, Rng(seed)))


class TestCraft:
    def test_budget_invariant_at_every_iteration(self):
        model = small_craft_model()
        seen = []

        def hook(t, delta):
            seen.append(t)
            assert linf_norm(delta) <= 10.0

        pert, trace = craft(model, CraftConfig(xi=10.0, seed=0, max_iters=130,
                                               rescale_every=40), hook)
        assert seen == list(range(1, trace.iterations + 1))
        assert linf_norm(pert.data) <= 10.0
        assert trace.rescale_iters == [40, 80, 120]

    def test_identical_configs_are_byte_identical(self):
        model = small_craft_model()
        cfg = dict(xi=10.0, seed=9, max_iters=90)
        p1, _ = craft(model, CraftConfig(**cfg))
        p2, _ = craft(model, CraftConfig(**cfg))
        assert perturbation_bytes(p1) == perturbation_bytes(p2)

    def test_loss_drops_first_to_last_on_trained_models(self, lab):
        for arch in ("convA", "convB"):
            for seed in (0, 1, 2):
                _, trace, _ = lab.fff(arch, 10.0, seed)
                assert trace.losses[-1] < trace.losses[0]

    def test_warm_start_shape_mismatch_rejected(self):
        model = small_craft_model()
        with pytest.raises(ValueError, match="warm-start"):
            craft(model, CraftConfig(init_delta=np.zeros((1, 5, 5)),
                                     max_iters=5))

    def test_warm_start_outside_budget_is_clipped(self):
        model = small_craft_model()
        init = np.full((1, 8, 8), 40.0)
        pert, _ = craft(model, CraftConfig(xi=10.0, init_delta=init,
                                           max_iters=3))
        assert linf_norm(pert.data) <= 10.0

    def test_metadata_provenance(self):
        model = small_craft_model()
        pert, trace = craft(model, CraftConfig(xi=10.0, seed=3, max_iters=25))
        assert pert.metadata["method"] == "fff"
        assert pert.metadata["seed"] == 3
        assert pert.metadata["iterations"] == trace.iterations == 25
        assert pert.metadata["target_digest"] == f"{model.digest:016x}"
        assert pert.metadata["loss"] == trace.losses[-1]
        assert all(np.isfinite(v) for v in trace.losses)

    def test_convergence_rule_stops_before_max_iters(self):
        # constant activations make the loss flat from iteration one
        model = constant_activation_model((1.0, 1.0))
        cfg = CraftConfig(xi=10.0, seed=0, max_iters=5000, window=30)
        pert, trace = craft(model, cfg)
        assert trace.iterations == 60  # exactly two windows of flat loss

    def test_optimization_is_blind_to_datasets_on_disk(self, tmp_path,
                                                       monkeypatch):
        model = small_craft_model()
        cfg = dict(xi=10.0, seed=1, max_iters=40)
        monkeypatch.chdir(tmp_path)
        p_clean, _ = craft(model, CraftConfig(**cfg))
        decoy = synth_dataset(Rng(0), 2, 10, (1, 8, 8), noise_std=1.0)
        save_idx(decoy, tmp_path / "i.idx", tmp_path / "l.idx")
        p_decoy, _ = craft(model, CraftConfig(**cfg))
        assert perturbation_bytes(p_clean) == perturbation_bytes(p_decoy)

    def test_holdout_checkpoint_selection(self, lab):
        model, _, _, _ = lab.model("convA")
        _, te, _ = lab.corpus("c1")
        cfg = CraftConfig(xi=10.0, seed=0, max_iters=650, val_data=te,
                          val_count=200)
        pert, trace = craft(model, cfg)
        assert trace.holdout_rates, "validation events recorded"
        iters = [i for i, _ in trace.holdout_rates]
        rates = [r for _, r in trace.holdout_rates]
        assert trace.best_checkpoint == iters[int(np.argmax(rates))]
        assert linf_norm(pert.data) <= 10.0
