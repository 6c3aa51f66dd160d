import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mistnet.diffcore import Tensor, check_gradients, ops
from mistnet.unets import EncoderDecoderConfig, build_encoder_decoder, ed_forward

from conftest import gradient_errors, record_outputs

TINY = EncoderDecoderConfig(base_channels=2, depth=1)


def _count_oracle(base, depth, cin=1, cout=1):
    """Closed-form per-layer count: 3x3 convs with bias, BN (gamma, beta), 1x1 head."""
    conv = lambda a, b, k=3: a * b * k * k + b
    bn = lambda c: 2 * c
    ch = [base * 2 ** k for k in range(depth + 1)]
    total = 0
    for k in range(depth + 1):
        first_in = cin if k == 0 else ch[k - 1]
        total += conv(first_in, ch[k]) + bn(ch[k]) + conv(ch[k], ch[k]) + bn(ch[k])
    for k in range(depth):
        total += conv(ch[k + 1], ch[k]) + bn(ch[k])
        total += conv(2 * ch[k], ch[k]) + bn(ch[k]) + conv(ch[k], ch[k]) + bn(ch[k])
    return total + conv(ch[0], cout, 1)


class TestStructure:
    def test_full_scale_channel_trace(self):
        net = build_encoder_decoder(EncoderDecoderConfig.paper())
        blocks = net.named_blocks()
        log = record_outputs(blocks)
        net(Tensor(np.zeros((1, 1, 16, 16))))
        assert [c for _, c in log] == [32, 64, 128, 256, 512, 256, 128, 64, 32, 1]
        assert [label for label, _ in log] == ["A0", "A1", "A2", "A3", "A4",
                                               "B0", "B1", "B2", "B3", "B4"]

    def test_full_scale_parameter_count(self):
        net = build_encoder_decoder(EncoderDecoderConfig.paper())
        assert _count_oracle(32, 4) == 8_636_769
        assert net.num_parameters() == 8_636_769

    @pytest.mark.parametrize("base,depth", [(2, 1), (4, 2), (16, 3)])
    def test_parameter_count_other_sizes(self, base, depth):
        cfg = EncoderDecoderConfig(base_channels=base, depth=depth)
        assert build_encoder_decoder(cfg).num_parameters() == _count_oracle(base, depth)

    def test_channel_ladder(self):
        cfg = EncoderDecoderConfig.paper()
        assert [cfg.channels(k) for k in range(5)] == [32, 64, 128, 256, 512]

    def test_residual_needs_matching_channels(self):
        with pytest.raises(ValueError):
            EncoderDecoderConfig(in_channels=2, out_channels=1)


class TestForward:
    def test_zero_head_is_identity(self, rng):
        net = build_encoder_decoder(EncoderDecoderConfig(zero_head=True), seed=3)
        x = rng.normal(size=(1, 1, 16, 24))
        assert np.array_equal(net(Tensor(x)).data, x)

    def test_zero_head_doubling(self, rng):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=4, depth=2, zero_head=True))
        x = rng.normal(size=(1, 1, 8, 8))
        assert np.array_equal(net(Tensor(2 * x)).data, 2 * net(Tensor(x)).data)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4))
    def test_shape_preserved(self, hb, wb):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=2, depth=2))
        x = Tensor(np.random.default_rng(hb * 7 + wb).normal(size=(1, 1, 4 * hb, 4 * wb)))
        assert net(x).shape == x.shape

    def test_indivisible_extent_raises(self):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=2, depth=2))
        with pytest.raises(ValueError, match="divisible"):
            net(Tensor(np.zeros((1, 1, 10, 8))))

    def test_wrong_channel_count(self):
        net = build_encoder_decoder(TINY)
        with pytest.raises(ValueError, match="channels"):
            net(Tensor(np.zeros((1, 2, 8, 8))))

    def test_ed_forward_pads_and_crops(self, rng):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=2, depth=3))
        x = Tensor(rng.normal(size=(1, 1, 90, 96)))
        assert ed_forward(net, x).shape == (1, 1, 90, 96)

    def test_ed_forward_zero_head_identity_after_crop(self, rng):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=2, depth=3, zero_head=True))
        x = rng.normal(size=(1, 1, 30, 20))
        assert np.array_equal(ed_forward(net, Tensor(x)).data, x)

    def test_deterministic(self, rng):
        x = rng.normal(size=(1, 1, 16, 16))
        a = build_encoder_decoder(EncoderDecoderConfig(base_channels=4), seed=5)(Tensor(x)).data
        b = build_encoder_decoder(EncoderDecoderConfig(base_channels=4), seed=5)(Tensor(x)).data
        c = build_encoder_decoder(EncoderDecoderConfig(base_channels=4), seed=6)(Tensor(x)).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_skip_ablation_changes_output(self, rng, level):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=4, depth=3), seed=2).eval()
        x = Tensor(rng.normal(size=(1, 1, 16, 16)))
        full = net(x).data
        net.dropped_skip = level
        assert np.abs(net(x).data - full).max() > 1e-6

    def test_no_skipless_construction(self):
        net = build_encoder_decoder(EncoderDecoderConfig(base_channels=4, depth=3))
        for level in net.decoder:
            assert level.conv1.conv.weight.shape[1] == 2 * level.conv2.conv.weight.shape[0]


class TestGradients:
    def test_input_and_parameter_gradients(self, rng):
        net = build_encoder_decoder(TINY, seed=1)
        x = Tensor(rng.normal(size=(1, 1, 8, 8)), requires_grad=True)
        target = rng.normal(size=(1, 1, 8, 8))
        loss = lambda: ops.mse(net(x), Tensor(target))
        errors = gradient_errors(loss, [("x", x)] + list(net.named_parameters()))
        assert max(errors.values()) <= 1e-5, errors

    def test_ed_forward_gradient_through_padding(self, rng):
        net = build_encoder_decoder(TINY, seed=4)
        x = Tensor(rng.normal(size=(1, 1, 7, 6)), requires_grad=True)
        loss = lambda: ops.mse(ed_forward(net, x), Tensor(np.zeros((1, 1, 7, 6))))
        assert check_gradients(loss, [x], h=1e-6) <= 1e-5
