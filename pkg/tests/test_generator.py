"""Generator internals: encoder strides, region normalization, prior
transfer, bottleneck composition, and the full forward contract."""

import numpy as np
import pytest
import torch

from conftest import assert_gradients_close, check_module_gradients, finite_difference_gradient
from mfn.errors import UsageError
from mfn.nets import (
    BottleneckStack,
    Encoder,
    Generator,
    LptBlock,
    attention_scores,
    composite_output,
    region_normalize,
)
from mfn.nets.blocks import SpadeModulation


class TestEncoder:
    def test_64_input_bottleneck_4x4(self):
        enc = Encoder(channels=(4, 8, 8, 8))
        feats = enc(torch.randn(1, 3, 64, 64), torch.zeros(1, 1, 64, 64))
        assert [tuple(f.shape[-2:]) for f in feats] == [(32, 32), (16, 16), (8, 8), (4, 4)]

    def test_zero_mask_encodes_full_image(self):
        torch.manual_seed(0)
        enc = Encoder(channels=(4, 8, 8, 8))
        img = torch.randn(1, 3, 32, 32)
        zero = torch.zeros(1, 1, 32, 32)
        a = enc(img * (1 - zero), zero)
        b = enc(img, zero)
        for fa, fb in zip(a, b):
            assert torch.equal(fa, fb)

    def test_indivisible_size_is_an_error(self):
        enc = Encoder(channels=(4, 8, 8, 8))
        with pytest.raises(UsageError):
            enc(torch.randn(1, 3, 40, 40), torch.zeros(1, 1, 40, 40))


class TestRegionNormalize:
    def test_constant_regions_normalize_to_zero(self):
        x = torch.zeros(1, 2, 4, 4)
        x[:, :, :, :2] = 3.0
        x[:, :, :, 2:] = -1.5
        mask = torch.zeros(1, 1, 4, 4)
        mask[:, :, :, :2] = 1.0
        out = region_normalize(x, mask)
        assert out.abs().max() < 1e-3

    def test_full_mask_equals_whole_map_standardization(self):
        torch.manual_seed(0)
        x = torch.randn(1, 3, 6, 6, dtype=torch.float64)
        mask = torch.ones(1, 1, 6, 6, dtype=torch.float64)
        out = region_normalize(x, mask, eps=0.0)
        mean = x.mean(dim=(2, 3), keepdim=True)
        std = x.std(dim=(2, 3), keepdim=True, unbiased=False)
        assert torch.allclose(out, (x - mean) / std, atol=1e-10)

    def test_hand_computed_two_by_two_case(self):
        # hole column {2, 4}: mean 3, std 1 -> [-1, +1]
        # known column {4, 8}: mean 6, std 2 -> [-1, +1]
        x = torch.tensor([[2.0, 4.0], [4.0, 8.0]], dtype=torch.float64).reshape(1, 1, 2, 2)
        mask = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64).reshape(1, 1, 2, 2)
        out = region_normalize(x, mask, eps=0.0)
        expected = torch.tensor([[-1.0, -1.0], [1.0, 1.0]],
                                dtype=torch.float64).reshape(1, 1, 2, 2)
        assert torch.allclose(out, expected, atol=1e-12)

    def test_per_region_statistics_standardized(self):
        torch.manual_seed(1)
        x = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        mask = (torch.rand(2, 1, 8, 8) > 0.4).double()
        out = region_normalize(x, mask, eps=1e-12)
        for region_value in (1.0, 0.0):
            sel = (mask == region_value).expand_as(out)
            for b in range(2):
                for c in range(4):
                    vals = out[b, c][sel[b, c]]
                    if vals.numel() >= 2:
                        assert abs(float(vals.mean())) < 1e-4
                        assert abs(float(vals.var(unbiased=False)) - 1.0) < 1e-3

    def test_empty_region_falls_back_to_whole_map(self):
        torch.manual_seed(2)
        x = torch.randn(1, 2, 4, 4)
        out_all_known = region_normalize(x, torch.zeros(1, 1, 4, 4))
        out_all_hole = region_normalize(x, torch.ones(1, 1, 4, 4))
        assert torch.isfinite(out_all_known).all()
        assert torch.isfinite(out_all_hole).all()
        assert torch.allclose(out_all_known, out_all_hole, atol=1e-6)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(3)
        x = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()

        def forward():
            return (region_normalize(x, mask) * weights).sum()

        weights = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        loss = forward()
        (grad,) = torch.autograd.grad(loss, x)
        with torch.no_grad():
            numeric = finite_difference_gradient(forward, x)
        assert_gradients_close(grad, numeric, rtol=1e-3, label="region_normalize")


class TestLptBlock:
    def test_fresh_block_reduces_to_region_normalization(self):
        torch.manual_seed(0)
        block = LptBlock(4, 3, hidden=5)
        x = torch.randn(1, 4, 8, 8)
        prior = torch.randn(1, 3, 4, 4)
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        out = block(x, prior, mask)
        assert torch.allclose(out, region_normalize(x, mask, block.eps), atol=1e-6)

    def test_shape_preserved_at_all_levels(self):
        block = LptBlock(6, 3, hidden=4)
        mask = torch.zeros(1, 1, 16, 16)
        for size in (4, 8, 16):
            x = torch.randn(1, 6, size, size)
            prior = torch.randn(1, 3, 8, 8)
            assert block(x, prior, mask).shape == x.shape

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(4)
        block = LptBlock(2, 2, hidden=3).double()
        # move heads off the zero-init so parameter gradients are generic
        with torch.no_grad():
            for p in block.parameters():
                p.add_(torch.randn_like(p) * 0.1)
        x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        prior = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()
        weights = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        check_module_gradients(
            block, [x, prior],
            lambda: (block(x, prior, mask) * weights).sum(),
            label="lpt_block")

    def test_modulation_head_init_emits_identity(self):
        mod = SpadeModulation(3, 4, hidden=5)
        cond = torch.randn(2, 3, 6, 6)
        scale, shift = mod(cond)
        assert torch.allclose(scale, torch.ones_like(scale))
        assert torch.allclose(shift, torch.zeros_like(shift))


class TestBottleneckStack:
    def test_default_block_count_is_eight(self):
        stack = BottleneckStack(8, 4, hidden=4)
        assert len(stack) == 8
        assert len(stack.convs) == 8

    def test_identity_lpt_initialization_equals_plain_conv_stack(self):
        torch.manual_seed(0)
        stack = BottleneckStack(4, 4, num_blocks=3, hidden=4)
        x = torch.randn(1, 4, 8, 8)
        prior = torch.randn(1, 4, 8, 8)
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        out = stack(x, prior, mask)
        # fresh LPT blocks emit region normalization only, so the stack is
        # act(conv(RN(...))) composed block by block
        manual = x
        for conv in stack.convs:
            manual = stack.act(conv(region_normalize(manual, mask, stack.blocks[0].eps)))
        assert torch.allclose(out, manual, atol=1e-6)

    def test_outputs_finite_over_100_random_trials(self):
        torch.manual_seed(1)
        stack = BottleneckStack(4, 4, num_blocks=8, hidden=4)
        mask = (torch.rand(1, 1, 4, 4) > 0.5).float()
        for _ in range(100):
            x = torch.randn(1, 4, 4, 4) * 5.0
            prior = torch.randn(1, 4, 8, 8) * 5.0
            assert torch.isfinite(stack(x, prior, mask)).all()

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(5)
        stack = BottleneckStack(2, 2, num_blocks=2, hidden=2).double()
        with torch.no_grad():
            for p in stack.parameters():
                p.add_(torch.randn_like(p) * 0.05)
        x = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        prior = torch.randn(1, 2, 4, 4, dtype=torch.float64)
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()
        check_module_gradients(
            stack, [x, prior],
            lambda: stack(x, prior, mask).mean(),
            label="bottleneck")


def tiny_generator(**kw):
    base = dict(channels=(4, 4, 8, 8), prior_channels=4, bottleneck_blocks=2,
                lpt_hidden=4)
    base.update(kw)
    return Generator(**base)


class TestGeneratorForward:
    def test_output_shape_and_range(self):
        torch.manual_seed(0)
        gen = tiny_generator()
        img = torch.randn(2, 3, 32, 32)
        mask = (torch.rand(2, 1, 32, 32) > 0.6).float()
        priors = [torch.randn(2, 4, 4, 4), torch.randn(2, 4, 8, 8),
                  torch.randn(2, 4, 16, 16)]
        with torch.no_grad():
            out = gen(img * (1 - mask), mask, priors)
        assert out.image.shape == (2, 3, 32, 32)
        assert float(out.image.min()) >= -1.0
        assert float(out.image.max()) <= 1.0

    def test_prior_level_mismatch_is_an_error(self):
        gen = tiny_generator()
        img = torch.randn(1, 3, 32, 32)
        mask = torch.zeros(1, 1, 32, 32)
        with pytest.raises(UsageError):
            gen(img, mask, [torch.randn(1, 4, 4, 4)])

    def test_end_to_end_gradient_on_probe_weight(self):
        torch.manual_seed(1)
        gen = tiny_generator().double()
        img = torch.randn(1, 3, 32, 32, dtype=torch.float64)
        mask = (torch.rand(1, 1, 32, 32) > 0.5).double()
        priors = [torch.randn(1, 4, 4, 4, dtype=torch.float64),
                  torch.randn(1, 4, 8, 8, dtype=torch.float64),
                  torch.randn(1, 4, 16, 16, dtype=torch.float64)]

        def forward():
            return gen(img * (1 - mask), mask, priors).image.mean()

        probe = gen.to_rgb.weight
        loss = forward()
        (grad,) = torch.autograd.grad(loss, probe)
        eps = 1e-6
        idx = (0, 0, 1, 1)
        with torch.no_grad():
            orig = probe[idx].item()
            probe[idx] = orig + eps
            f_plus = float(forward())
            probe[idx] = orig - eps
            f_minus = float(forward())
            probe[idx] = orig
        numeric = (f_plus - f_minus) / (2 * eps)
        assert abs(float(grad[idx]) - numeric) <= 1e-3 * max(abs(numeric), 1e-6)

    def test_single_prior_variant_accepts_one_level(self):
        torch.manual_seed(2)
        gen = tiny_generator(prior_levels=1)
        img = torch.randn(1, 3, 32, 32)
        mask = torch.zeros(1, 1, 32, 32)
        out = gen(img, mask, [torch.randn(1, 4, 4, 4)])
        assert out.image.shape == (1, 3, 32, 32)

    def test_skip_variant_runs_without_attention(self):
        torch.manual_seed(3)
        gen = tiny_generator(use_attention=False)
        img = torch.randn(1, 3, 32, 32)
        mask = (torch.rand(1, 1, 32, 32) > 0.5).float()
        priors = [torch.randn(1, 4, 4, 4), torch.randn(1, 4, 8, 8),
                  torch.randn(1, 4, 16, 16)]
        out = gen(img * (1 - mask), mask, priors)
        assert out.scores is None
        assert out.image.shape == (1, 3, 32, 32)


class TestCompositeOutput:
    def test_zero_mask_returns_gt(self):
        i_p = torch.randn(1, 3, 8, 8)
        i_gt = torch.randn(1, 3, 8, 8)
        mask = torch.zeros(1, 1, 8, 8)
        assert torch.equal(composite_output(i_p, i_gt, mask), i_gt)

    def test_full_mask_returns_prediction(self):
        i_p = torch.randn(1, 3, 8, 8)
        i_gt = torch.randn(1, 3, 8, 8)
        mask = torch.ones(1, 1, 8, 8)
        assert torch.equal(composite_output(i_p, i_gt, mask), i_p)

    def test_known_pixels_preserved_exactly(self):
        torch.manual_seed(0)
        i_p = torch.randn(1, 3, 8, 8)
        i_gt = torch.randn(1, 3, 8, 8)
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        comp = composite_output(i_p, i_gt, mask)
        known = (mask == 0).expand_as(comp)
        assert torch.equal(comp[known], i_gt[known])

    def test_shape_mismatch_is_an_error(self):
        with pytest.raises(UsageError):
            composite_output(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 8, 8),
                             torch.zeros(1, 1, 4, 4))


def test_attention_scores_from_generator_are_row_stochastic():
    torch.manual_seed(4)
    feats = torch.randn(2, 8, 4, 4)
    scores = attention_scores(feats)
    assert torch.allclose(scores.sum(-1), torch.ones(2, 16), atol=1e-5)
