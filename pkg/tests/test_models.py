import numpy as np
import pytest
import torch

from luxhar.exceptions import ConfigError, InputError, ShapeError
from luxhar.models import (BiLstm, EncoderSpec, ModelSpec, WindowEncoder,
                           build_model, default_model_spec, init_parameters,
                           new_model, spec_hash)
from luxhar.profiling import state_hash, trace_touched_modules

from conftest import TINY_ARCH


def variant_inputs(variant, batch=5, window=60, seed=0):
    g = torch.Generator().manual_seed(seed)
    als = torch.randn(batch, window, 1, generator=g)
    imu = torch.randn(batch, window, 3, generator=g)
    if variant == "light":
        return (als,)
    if variant in ("inertial", "contralight"):
        return (imu,)
    return (als, imu)


class TestSpecs:
    def test_default_spec_shapes(self):
        spec = default_model_spec("contralight")
        assert spec.als_encoder.in_channels == 1
        assert spec.imu_encoder.in_channels == 3
        assert spec.als_encoder.conv_channels == 64
        assert spec.als_encoder.lstm_hidden == 128
        assert spec.embed_dim == 256
        assert spec.classifier_in == 256
        assert spec.num_classes == 10

    def test_fusion_head_width_doubles(self):
        spec = default_model_spec("multilight")
        assert spec.classifier_in == 512
        assert default_model_spec("inertial").classifier_in == 256

    def test_encoder_consistency_enforced(self):
        enc = EncoderSpec(in_channels=3)
        with pytest.raises(ConfigError):
            ModelSpec(variant="light", imu_encoder=enc)
        with pytest.raises(ConfigError):
            ModelSpec(variant="inertial")
        with pytest.raises(ConfigError):
            ModelSpec(variant="contralight", imu_encoder=enc)

    def test_mismatched_embeddings_rejected(self):
        als = EncoderSpec(in_channels=1, embed_dim=128)
        imu = EncoderSpec(in_channels=3, embed_dim=256)
        with pytest.raises(ConfigError):
            ModelSpec(variant="multilight", als_encoder=als, imu_encoder=imu)

    def test_encoder_spec_validation(self):
        with pytest.raises(ConfigError):
            EncoderSpec(in_channels=1, conv_kernel=4)   # even kernel
        with pytest.raises(ConfigError):
            EncoderSpec(in_channels=1, n_conv_blocks=2)
        with pytest.raises(ConfigError):
            EncoderSpec(in_channels=1, dropout=1.0)
        with pytest.raises(ConfigError):
            EncoderSpec(in_channels=0)

    def test_margin_validation(self):
        with pytest.raises(ConfigError):
            default_model_spec("contralight", margin=0.0)

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError):
            default_model_spec("light", hidden_size=9)

    def test_dict_round_trip(self, tiny_specs):
        for spec in tiny_specs.values():
            back = ModelSpec.from_dict(spec.to_dict())
            assert back == spec
            assert spec_hash(back) == spec_hash(spec)

    def test_hash_sensitive_to_contents(self, tiny_specs):
        a = spec_hash(tiny_specs["light"])
        b = spec_hash(default_model_spec("light"))
        assert a != b


class TestBiLstmAgainstStock:
    """The stock nn.LSTM with its second bias zeroed is an independent
    implementation of the same recurrence."""

    @pytest.mark.parametrize("batch,steps,feat,hidden",
                             [(3, 10, 4, 6), (1, 25, 8, 5), (7, 60, 16, 12)])
    def test_final_states_match(self, batch, steps, feat, hidden):
        torch.manual_seed(42)
        ours = BiLstm(feat, hidden).double()
        for p in ours.parameters():
            with torch.no_grad():
                p.uniform_(-0.4, 0.4)
        stock = torch.nn.LSTM(feat, hidden, batch_first=True,
                              bidirectional=True).double()
        with torch.no_grad():
            stock.weight_ih_l0.copy_(ours.weight_ih_fw)
            stock.weight_hh_l0.copy_(ours.weight_hh_fw)
            stock.bias_ih_l0.copy_(ours.bias_fw)
            stock.bias_hh_l0.zero_()
            stock.weight_ih_l0_reverse.copy_(ours.weight_ih_bw)
            stock.weight_hh_l0_reverse.copy_(ours.weight_hh_bw)
            stock.bias_ih_l0_reverse.copy_(ours.bias_bw)
            stock.bias_hh_l0_reverse.zero_()
        x = torch.randn(batch, steps, feat, dtype=torch.float64)
        got = ours(x)
        _, (h_n, _) = stock(x)
        want = torch.cat([h_n[0], h_n[1]], dim=1)
        assert torch.allclose(got, want, atol=1e-12, rtol=1e-12)

    def test_gradients_match_plain_loop(self):
        """The fused recurrence must agree with op-by-op autograd."""
        torch.manual_seed(7)
        m = BiLstm(5, 4).double()
        for p in m.parameters():
            with torch.no_grad():
                p.uniform_(-0.5, 0.5)

        def reference(x):
            def run(xx, w_ih, w_hh, bias):
                b, steps, _ = xx.shape
                xp = (xx.reshape(b * steps, -1) @ w_ih.t() + bias)
                xp = xp.reshape(b, steps, -1)
                h = xx.new_zeros(b, m.hidden)
                c = xx.new_zeros(b, m.hidden)
                for t in range(steps):
                    gates = xp[:, t] + h @ w_hh.t()
                    i, f, g, o = gates.chunk(4, 1)
                    c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
                    h = torch.sigmoid(o) * torch.tanh(c)
                return h
            fw = run(x, m.weight_ih_fw, m.weight_hh_fw, m.bias_fw)
            bw = run(torch.flip(x, [1]), m.weight_ih_bw, m.weight_hh_bw,
                     m.bias_bw)
            return torch.cat([fw, bw], 1)

        x = torch.randn(3, 9, 5, dtype=torch.float64, requires_grad=True)
        w = torch.randn(8, 7, dtype=torch.float64)
        out = (m(x) @ w).square().sum()
        grads = torch.autograd.grad(out, [x] + list(m.parameters()))
        x2 = x.detach().clone().requires_grad_(True)
        ref = (reference(x2) @ w).square().sum()
        ref_grads = torch.autograd.grad(ref, [x2] + list(m.parameters()))
        assert float(out.detach()) == pytest.approx(float(ref.detach()),
                                                    rel=1e-12)
        for got, want in zip(grads, ref_grads):
            assert torch.allclose(got, want, atol=1e-10, rtol=1e-10)

    def test_input_shape_checked(self):
        m = BiLstm(4, 3)
        with pytest.raises(ShapeError):
            m(torch.randn(2, 10, 5))
        with pytest.raises(ShapeError):
            m(torch.randn(2, 4))


class TestForwardContracts:
    @pytest.mark.parametrize("variant",
                             ["light", "inertial", "multilight", "contralight"])
    def test_outputs_are_probability_rows(self, tiny_models, variant):
        model = tiny_models[variant]
        model.eval()
        with torch.no_grad():
            probs = model(*variant_inputs(variant))
        assert probs.shape == (5, 10)
        assert (probs >= 0).all()
        assert torch.allclose(probs.sum(dim=1), torch.ones(5), atol=1e-5)

    def test_contralight_train_forward(self, tiny_models):
        model = tiny_models["contralight"]
        model.eval()
        als, = variant_inputs("light")
        imu, = variant_inputs("inertial")
        with torch.no_grad():
            z_als, z_imu, p_als, p_imu = model.forward_train(als, imu)
        assert z_als.shape == z_imu.shape == (5, 16)
        for p in (p_als, p_imu):
            assert torch.allclose(p.sum(dim=1), torch.ones(5), atol=1e-5)

    @pytest.mark.parametrize("variant",
                             ["light", "inertial", "multilight", "contralight"])
    def test_eval_forward_deterministic(self, tiny_models, variant):
        model = tiny_models[variant]
        model.eval()
        inputs = variant_inputs(variant)
        with torch.no_grad():
            a = model(*inputs)
            b = model(*inputs)
        assert torch.equal(a, b)

    def test_batch_permutation_equivariance(self, tiny_models):
        model = tiny_models["inertial"]
        model.eval()
        x, = variant_inputs("inertial", batch=8)
        perm = torch.tensor([3, 1, 7, 0, 5, 2, 6, 4])
        with torch.no_grad():
            assert torch.equal(model(x)[perm], model(x[perm]))

    def test_dropout_active_only_in_train_mode(self, tiny_specs):
        model = new_model(tiny_specs["inertial"], seed=0)
        x, = variant_inputs("inertial")
        model.train()
        torch.manual_seed(0)
        a = model(x)
        b = model(x)
        assert not torch.equal(a, b)
        model.eval()
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_input_validation(self, tiny_models):
        model = tiny_models["inertial"]
        with pytest.raises(ShapeError):
            model(torch.randn(2, 59, 3))
        with pytest.raises(ShapeError):
            model(torch.randn(2, 60, 1))
        with pytest.raises(InputError):
            bad = torch.full((2, 60, 3), float("nan"))
            model(bad)
        with pytest.raises(ShapeError):
            model(torch.randn(0, 60, 3))


class TestContralightInference:
    def test_als_branch_untouched_at_inference(self, tiny_specs):
        model = new_model(tiny_specs["contralight"], seed=3)
        model.eval()
        imu, = variant_inputs("contralight")
        with torch.no_grad():
            clean = model(imu)
        # poison the light branch; inference must not notice
        with torch.no_grad():
            for p in model.als_encoder.parameters():
                p.fill_(float("nan"))
        with torch.no_grad():
            poisoned = model(imu)
        assert torch.equal(clean, poisoned)

    def test_traced_modules_exclude_als_branch(self, tiny_models):
        model = tiny_models["contralight"]
        model.eval()
        imu, = variant_inputs("contralight")
        with torch.no_grad():
            touched = trace_touched_modules(model, lambda: model(imu))
        assert not any(name.startswith("als_encoder") for name in touched)
        assert any(name.startswith("imu_encoder") for name in touched)

    def test_train_forward_touches_both(self, tiny_models):
        model = tiny_models["contralight"]
        model.eval()
        als, = variant_inputs("light")
        imu, = variant_inputs("inertial")
        with torch.no_grad():
            touched = trace_touched_modules(
                model, lambda: model.forward_train(als, imu))
        assert any(name.startswith("als_encoder") for name in touched)
        assert any(name.startswith("imu_encoder") for name in touched)

    def test_multilight_zero_input_still_runs_als_encoder(self, tiny_models):
        """Zero placeholder keeps the branch alive; that is the difference
        from discarding it."""
        model = tiny_models["multilight"]
        model.eval()
        als, imu = variant_inputs("multilight")
        with torch.no_grad():
            touched = trace_touched_modules(
                model, lambda: model(torch.zeros_like(als), imu))
        assert any(name.startswith("als_encoder") for name in touched)


class TestInit:
    def test_same_seed_same_weights(self, tiny_specs):
        a = new_model(tiny_specs["multilight"], seed=11)
        b = new_model(tiny_specs["multilight"], seed=11)
        assert state_hash(a) == state_hash(b)

    def test_different_seed_differs(self, tiny_specs):
        a = new_model(tiny_specs["light"], seed=1)
        b = new_model(tiny_specs["light"], seed=2)
        assert state_hash(a) != state_hash(b)

    def test_bias_zero_and_norm_identity(self, tiny_specs):
        model = new_model(tiny_specs["inertial"], seed=5)
        state = dict(model.named_parameters())
        for name, value in state.items():
            if "bias" in name:
                assert torch.equal(value, torch.zeros_like(value)), name
            if ".norm." in name and name.endswith("weight"):
                assert torch.equal(value, torch.ones_like(value)), name

    def test_uniform_fan_in_bound(self, tiny_specs):
        model = new_model(tiny_specs["inertial"], seed=5)
        w = model.imu_encoder.blocks[0].conv.weight   # fan_in = 3 * 5
        bound = 1.0 / np.sqrt(15.0)
        assert w.abs().max() <= bound
        assert w.abs().max() > 0.5 * bound

    def test_reinit_resets_running_stats(self, tiny_specs):
        model = new_model(tiny_specs["inertial"], seed=5)
        x, = variant_inputs("inertial")
        model.train()
        model(x)
        bn = model.imu_encoder.blocks[0].norm
        assert int(bn.num_batches_tracked) == 1
        init_parameters(model, seed=5)
        assert int(bn.num_batches_tracked) == 0
        assert torch.equal(bn.running_mean, torch.zeros_like(bn.running_mean))

    def test_build_model_types(self, tiny_specs):
        from luxhar.models import (ContrastiveNet, FusionNet, UnimodalNet)
        assert isinstance(build_model(tiny_specs["light"]), UnimodalNet)
        assert isinstance(build_model(tiny_specs["inertial"]), UnimodalNet)
        assert isinstance(build_model(tiny_specs["multilight"]), FusionNet)
        assert isinstance(build_model(tiny_specs["contralight"]),
                          ContrastiveNet)

    def test_unimodal_encoder_naming(self, tiny_specs):
        light = build_model(tiny_specs["light"])
        inertial = build_model(tiny_specs["inertial"])
        assert hasattr(light, "als_encoder")
        assert not hasattr(light, "imu_encoder")
        assert hasattr(inertial, "imu_encoder")
        assert not hasattr(inertial, "als_encoder")


class TestEncoderShapes:
    def test_conv_features_shape(self):
        enc = WindowEncoder(EncoderSpec(in_channels=3, **{
            k: v for k, v in TINY_ARCH.items() if k != "classifier_hidden"}))
        x = torch.randn(4, 60, 3)
        feats = enc.conv_features(x)
        assert feats.shape == (4, TINY_ARCH["conv_channels"], 60)
        out = enc(x)
        assert out.shape == (4, TINY_ARCH["embed_dim"])
