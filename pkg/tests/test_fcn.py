"""Network construction, shape homomorphism, determinism, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcseg.errors import ArgumentError, ConfigError, StateError
from mcseg.fcn import (
    NetworkConfig,
    PRESETS,
    build_fcn,
    config_from_preset,
    load_checkpoint,
    save_checkpoint,
)


def tiny_net(seed=0, channels=3, dtype=np.float32):
    return build_fcn(config_from_preset("tiny", input_channels=channels, seed=seed),
                     dtype=dtype)


class TestBuild:
    def test_full_preset_has_fifteen_convs(self):
        cfg = config_from_preset("vgg16")
        assert cfg.conv_layer_count == 15
        assert cfg.stage_widths == (64, 128, 256, 512, 512)
        assert cfg.upsample_strides == (2, 2, 8)

    def test_full_preset_output_shape(self, rng):
        net = build_fcn(config_from_preset("vgg16", input_channels=3, n_classes=6))
        x = rng.uniform(0, 255, size=(3, 256, 154)).astype(np.float32)
        scores, _ = net.forward(x)
        assert scores.shape == (6, 256, 154)

    def test_tiny_preset_output_shape(self, rng):
        net = tiny_net()
        scores, _ = net.forward(rng.uniform(0, 255, size=(3, 32, 32)).astype(np.float32))
        assert scores.shape == (6, 32, 32)

    def test_too_small_input_names_stage(self, rng):
        net = tiny_net()
        with pytest.raises(ConfigError, match="stage"):
            net.forward(rng.uniform(0, 255, size=(3, 4, 4)).astype(np.float32))

    def test_fewer_than_three_stages_rejected(self):
        with pytest.raises(ConfigError):
            NetworkConfig(stage_widths=(4, 8), convs_per_stage=(1, 1))

    def test_zero_heads_give_uniform_scores(self, rng):
        net = tiny_net()
        scores, _ = net.forward(rng.uniform(0, 255, size=(3, 16, 16)).astype(np.float32))
        assert np.allclose(scores, 1.0 / 6.0)

    def test_parameter_count_positive(self):
        net = tiny_net()
        assert net.parameter_count == sum(p.size for p in net.params.values())
        assert net.parameter_count > 0


class TestForward:
    @given(h=st.integers(8, 40), w=st.integers(8, 40), seed=st.integers(0, 2**31))
    def test_shape_homomorphism(self, h, w, seed):
        net = tiny_net(seed=1)
        gen = np.random.default_rng(seed)
        scores, _ = net.forward(gen.uniform(0, 255, size=(3, h, w)).astype(np.float32))
        assert scores.shape == (6, h, w)
        assert np.allclose(scores.sum(axis=0), 1.0, atol=1e-6)

    def test_deterministic_across_runs(self, rng):
        x = rng.uniform(0, 255, size=(3, 24, 20)).astype(np.float32)
        s1, _ = tiny_net(seed=3).forward(x)
        s2, _ = tiny_net(seed=3).forward(x)
        assert s1.tobytes() == s2.tobytes()

    def test_seed_changes_weights(self):
        n1, n2 = tiny_net(seed=1), tiny_net(seed=2)
        assert n1.params["stage0.conv0.w"].tobytes() != n2.params["stage0.conv0.w"].tobytes()

    def test_non_finite_input_rejected(self):
        net = tiny_net()
        x = np.zeros((3, 16, 16), dtype=np.float32)
        x[0, 0, 0] = np.inf
        with pytest.raises(ArgumentError):
            net.forward(x)

    def test_channel_mismatch_rejected(self, rng):
        net = tiny_net()
        with pytest.raises(ArgumentError):
            net.forward(rng.uniform(0, 255, size=(5, 16, 16)).astype(np.float32))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        net = tiny_net()
        scores, cache = net.forward(rng.uniform(0, 255, size=(3, 16, 16)).astype(np.float32))
        grads, g_in = net.backward(cache, np.zeros_like(scores))
        assert all(not g.any() for g in grads.values())
        assert not g_in.any()

    def test_stale_cache_detected(self, rng):
        net = tiny_net()
        scores, cache = net.forward(rng.uniform(0, 255, size=(3, 16, 16)).astype(np.float32))
        net.params = {k: v.copy() for k, v in net.params.items()}
        with pytest.raises(StateError):
            net.backward(cache, np.zeros_like(scores))

    def test_grad_shapes_match_params(self, rng):
        net = tiny_net()
        scores, cache = net.forward(rng.uniform(0, 255, size=(3, 16, 16)).astype(np.float32))
        grads, _ = net.backward(cache, rng.normal(size=scores.shape).astype(np.float32))
        assert set(grads) == set(net.params)
        for k in grads:
            assert grads[k].shape == net.params[k].shape


class TestCheckpoints:
    def test_round_trip(self, tmp_path, rng):
        net = tiny_net(seed=9)
        x = rng.uniform(0, 255, size=(3, 16, 16)).astype(np.float32)
        # make head weights non-trivial so the round trip is meaningful
        net.params["head0.w"] = rng.normal(size=net.params["head0.w"].shape).astype(np.float32)
        before, _ = net.forward(x)
        save_checkpoint(tmp_path / "ckpt", net, iteration=42, preset="tiny")
        loaded, manifest = load_checkpoint(tmp_path / "ckpt")
        after, _ = loaded.forward(x)
        assert manifest["iteration"] == 42
        assert manifest["preset"] == "tiny"
        assert after.tobytes() == before.tobytes()
        for k in net.params:
            assert loaded.params[k].tobytes() == net.params[k].tobytes()

    def test_manifest_lists_layers(self, tmp_path):
        net = tiny_net()
        save_checkpoint(tmp_path / "c", net)
        _, manifest = load_checkpoint(tmp_path / "c")
        kinds = {layer["kind"] for layer in manifest["layers"]}
        assert {"conv+relu", "maxpool", "predict-conv", "deconv", "softmax"} <= kinds
        assert manifest["parameter_count"] == net.parameter_count

    def test_corrupt_tensor_file_rejected(self, tmp_path):
        from mcseg.errors import FormatError

        net = tiny_net()
        save_checkpoint(tmp_path / "c", net)
        victim = tmp_path / "c" / "stage0_conv0_w.mcv"
        victim.write_bytes(victim.read_bytes()[:-8])  # drop two floats
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "c")


def test_preset_table_is_consistent():
    for name, preset in PRESETS.items():
        cfg = config_from_preset(name)
        assert cfg.conv_layer_count == sum(preset.convs_per_stage)
        assert len(preset.checkpoint_fractions) == 3


def test_unknown_preset():
    with pytest.raises(ConfigError):
        config_from_preset("giant")
