"""Schedule, step mechanics, checkpointing, resume, and ablations."""

import copy
import json

import numpy as np
import pytest
import torch

from mfn.config import Config, LossWeights, TrainConfig, toy_model_config
from mfn.errors import DataError, NumericError, UsageError
from mfn.losses import perceptual_loss, rec_loss, style_loss
from mfn.nets.prompter import prior_loss
from mfn.training import (
    ArrayDataset,
    ModelBundle,
    apply_ablation,
    batch_indices,
    build_models,
    load_checkpoint,
    lr_schedule,
    make_optimizers,
    restore_bundle,
    save_checkpoint,
    train_loop,
    train_step,
)


def paper_train_cfg(**kw):
    return TrainConfig(**kw)


def toy_dataset(n=4, size=32, seed=0):
    rng = np.random.default_rng(seed)
    images = [rng.random((size, size, 3)).astype(np.float32) for _ in range(n)]
    masks = [(rng.random((size, size)) > 0.7).astype(np.float32) for _ in range(n)]
    return ArrayDataset(images, masks)


def snapshot(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def param_snapshot(module):
    return {k: v.detach().clone() for k, v in module.named_parameters()}


def states_equal(a, b):
    return all(torch.equal(a[k], b[k]) for k in a) and a.keys() == b.keys()


class TestLrSchedule:
    def test_paper_endpoints(self):
        cfg = paper_train_cfg()
        assert lr_schedule(0, cfg) == 1e-4
        assert lr_schedule(cfg.max_iters, cfg) == 1e-5

    def test_linear_midpoint(self):
        cfg = paper_train_cfg()
        mid = cfg.max_iters - cfg.decay_window // 2
        assert lr_schedule(mid, cfg) == pytest.approx(5.5e-5)

    def test_constant_before_decay_window(self):
        cfg = paper_train_cfg()
        start = cfg.max_iters - cfg.decay_window
        assert lr_schedule(start - 1, cfg) == 1e-4
        assert lr_schedule(start, cfg) == 1e-4
        assert lr_schedule(start + 1, cfg) < 1e-4

    def test_non_increasing_and_continuous(self):
        cfg = TrainConfig(max_iters=1000, decay_window=200)
        values = [lr_schedule(i, cfg) for i in range(0, 1001, 10)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        boundary = cfg.max_iters - cfg.decay_window
        gap = abs(lr_schedule(boundary, cfg) - lr_schedule(boundary + 1, cfg))
        assert gap <= (cfg.lr_init - cfg.lr_final) / cfg.decay_window + 1e-12

    def test_out_of_range_is_an_error(self):
        cfg = paper_train_cfg()
        with pytest.raises(UsageError):
            lr_schedule(-1, cfg)
        with pytest.raises(UsageError):
            lr_schedule(cfg.max_iters + 1, cfg)


class TestStep:
    def make(self, seed=0, ablation=()):
        torch.manual_seed(seed)
        bundle = build_models(toy_model_config(), ablation)
        cfg = TrainConfig(batch_size=2, max_iters=10, decay_window=2, seed=seed)
        opt_g, opt_d = make_optimizers(bundle, cfg)
        return bundle, opt_g, opt_d

    def batch(self, seed=3, size=32):
        ds = toy_dataset(n=3, size=size, seed=seed)
        return ds.batch([0, 1])

    def test_identical_seed_and_state_identical_report(self):
        weights = LossWeights()
        b1, g1, d1 = self.make(seed=7)
        b2, g2, d2 = self.make(seed=7)
        r1 = train_step(b1, g1, d1, self.batch(), weights)
        r2 = train_step(b2, g2, d2, self.batch(), weights)
        assert r1.to_dict() == r2.to_dict()

    def test_frozen_discriminator_is_untouched(self):
        # parameters stay fixed; only the spectral-norm power-iteration
        # buffers may advance when the generator phase queries D
        weights = LossWeights()
        bundle, opt_g, opt_d = self.make(seed=1)
        before = param_snapshot(bundle.discriminator)
        train_step(bundle, opt_g, opt_d, self.batch(), weights,
                   update_discriminator=False)
        assert states_equal(before, param_snapshot(bundle.discriminator))

    def test_generator_phase_does_not_depend_on_adversarial_weight_for_d(self):
        # discriminator parameters after the step must be identical whether
        # or not the generator-phase losses are weighted
        b1, g1, d1 = self.make(seed=2)
        b2, g2, d2 = self.make(seed=2)
        train_step(b1, g1, d1, self.batch(), LossWeights())
        train_step(b2, g2, d2, self.batch(),
                   LossWeights(lambda_rec=0.0, lambda_perc=0.0,
                               lambda_style=0.0, lambda_adv=0.0))
        assert states_equal(snapshot(b1.discriminator), snapshot(b2.discriminator))

    def test_zero_adv_frozen_d_equals_supervised_update(self):
        weights = LossWeights(lambda_adv=0.0)
        b1, g1, d1 = self.make(seed=3)
        b2, g2, _ = self.make(seed=3)
        gt, mask = self.batch()
        train_step(b1, g1, d1, (gt, mask), weights, update_discriminator=False)

        # manual supervised update on the twin
        masked = gt * (1.0 - mask)
        pyramid = b2.prompter(masked, mask)
        out = b2.generator(masked, mask, pyramid)
        loss = (weights.lambda_rec * rec_loss(out.image, gt, mask, weights.alpha)
                + weights.lambda_perc * perceptual_loss(out.image, gt, b2.pretext)
                + weights.lambda_style * style_loss(out.image, gt, b2.pretext)
                + prior_loss(pyramid, b2.pretext(gt), b2.projection))
        g2.zero_grad()
        loss.backward()
        # the real step also runs the (zero-weighted) adversarial forward,
        # which only matters for D's spectral-norm buffers, not G params
        g2.step()
        assert states_equal(snapshot(b1.prompter), snapshot(b2.prompter))
        assert states_equal(snapshot(b1.generator), snapshot(b2.generator))

    def test_non_finite_loss_is_reported_by_name(self):
        bundle, opt_g, opt_d = self.make(seed=4)
        gt, mask = self.batch()
        with torch.no_grad():
            for p in bundle.generator.parameters():
                p.mul_(float("nan"))
        with pytest.raises(NumericError):
            train_step(bundle, opt_g, opt_d, (gt, mask), LossWeights())

    def test_warmup_trains_prior_only(self):
        bundle, opt_g, opt_d = self.make(seed=5)
        d_before = snapshot(bundle.discriminator)
        g_before = snapshot(bundle.generator)
        report = train_step(bundle, opt_g, opt_d, self.batch(), LossWeights(),
                            warmup=True)
        assert report.rec == 0.0 and report.adv_d == 0.0
        assert report.prior > 0.0
        assert states_equal(d_before, snapshot(bundle.discriminator))
        # generator untouched (prior loss does not reach it)
        assert states_equal(g_before, snapshot(bundle.generator))


class TestBatchSampling:
    def test_keyed_on_seed_and_iteration(self):
        a = batch_indices(1, 5, 100, 8)
        b = batch_indices(1, 5, 100, 8)
        c = batch_indices(1, 6, 100, 8)
        d = batch_indices(2, 5, 100, 8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)


class TestCheckpoint:
    def test_roundtrip_is_bit_exact(self, tmp_path, toy_config):
        torch.manual_seed(0)
        bundle = build_models(toy_config.model)
        opt_g, opt_d = make_optimizers(bundle, toy_config.train)
        # take one step so optimizer state is non-empty
        ds = toy_dataset()
        train_step(bundle, opt_g, opt_d, ds.batch([0, 1]), toy_config.loss)
        # same basename: the archive embeds it, and only content may differ
        (tmp_path / "first").mkdir()
        (tmp_path / "second").mkdir()
        p1 = tmp_path / "first" / "ckpt.pt"
        p2 = tmp_path / "second" / "ckpt.pt"
        save_checkpoint(p1, 1, toy_config, bundle, opt_g, opt_d)
        payload = load_checkpoint(p1)
        cfg2, bundle2 = restore_bundle(payload)
        opt_g2, opt_d2 = make_optimizers(bundle2, cfg2.train)
        opt_g2.load_state_dict(payload["opt_g"])
        opt_d2.load_state_dict(payload["opt_d"])
        save_checkpoint(p2, 1, cfg2, bundle2, opt_g2, opt_d2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_checkpoint_is_a_data_error(self, tmp_path):
        with pytest.raises(DataError, match="nowhere.pt"):
            load_checkpoint(tmp_path / "nowhere.pt")

    def test_restored_bundle_reproduces_outputs(self, tmp_path, toy_config):
        torch.manual_seed(1)
        bundle = build_models(toy_config.model)
        opt_g, opt_d = make_optimizers(bundle, toy_config.train)
        path = tmp_path / "c.pt"
        save_checkpoint(path, 0, toy_config, bundle, opt_g, opt_d)
        _, bundle2 = restore_bundle(load_checkpoint(path))
        img = torch.randn(1, 3, 32, 32)
        mask = (torch.rand(1, 1, 32, 32) > 0.5).float()
        with torch.no_grad():
            out1 = bundle.generator(img, mask, bundle.prompter(img, mask)).image
            out2 = bundle2.generator(img, mask, bundle2.prompter(img, mask)).image
        assert torch.equal(out1, out2)


class TestTrainLoop:
    def test_smoke_run_writes_loadable_checkpoint(self, tmp_path, toy_config):
        ds = toy_dataset()
        final = train_loop(toy_config, ds, tmp_path / "run")
        payload = load_checkpoint(final)
        assert payload["iteration"] == toy_config.train.max_iters
        log = (tmp_path / "run" / "loss_log.jsonl").read_text().splitlines()
        assert len(log) == toy_config.train.max_iters

    def test_empty_dataset_fails_before_any_step(self, tmp_path, toy_config):
        with pytest.raises(DataError):
            train_loop(toy_config, ArrayDataset([], []), tmp_path / "runx")
        assert not (tmp_path / "runx" / "loss_log.jsonl").exists()

    def test_resume_matches_uninterrupted_loss_log(self, tmp_path, toy_config):
        ds = toy_dataset()
        train_loop(toy_config, ds, tmp_path / "full")
        full_log = (tmp_path / "full" / "loss_log.jsonl").read_text()

        ckpt = train_loop(toy_config, ds, tmp_path / "part", stop_after=5)
        assert load_checkpoint(ckpt)["iteration"] == 5
        train_loop(toy_config, ds, tmp_path / "part", resume_from=ckpt)
        part_log = (tmp_path / "part" / "loss_log.jsonl").read_text()
        assert part_log == full_log

    def test_config_hash_mismatch_refused(self, tmp_path, toy_config):
        ds = toy_dataset()
        ckpt = train_loop(toy_config, ds, tmp_path / "r1", stop_after=2)
        other = copy.deepcopy(toy_config)
        other.loss.lambda_style = 123.0
        with pytest.raises(UsageError, match="hash"):
            train_loop(other, ds, tmp_path / "r2", resume_from=ckpt)


class TestAblations:
    def forward_ok(self, bundle):
        gt = torch.rand(1, 3, 64, 64) * 2 - 1
        mask = (torch.rand(1, 1, 64, 64) > 0.6).float()
        masked = gt * (1 - mask)
        pyramid = bundle.prompter(masked, mask)
        out = bundle.generator(masked, mask, pyramid)
        assert out.image.shape == (1, 3, 64, 64)
        return out

    def test_no_flags_is_full_model(self):
        torch.manual_seed(0)
        bundle = build_models(toy_model_config())
        assert bundle.ablation == ()
        assert bundle.semantic_supervision
        self.forward_ok(bundle)

    @pytest.mark.parametrize("flag", [
        "no_semantic_supervision", "no_lpt", "no_multiscale",
        "no_attention_transfer", "no_spa",
    ])
    def test_each_variant_constructs_and_runs(self, flag):
        torch.manual_seed(0)
        full = build_models(toy_model_config())
        variant = build_models(toy_model_config(), (flag,))
        self.forward_ok(variant)
        # parameter inventory always differs; the plain residual stack of
        # no_spa happens to match the dilation pyramid's count, so that
        # variant is distinguished by its checkpoint keys
        assert variant.state_dict_keys() != full.state_dict_keys(), flag
        if flag != "no_spa":
            assert variant.parameter_count() != full.parameter_count(), flag

    def test_no_spa_removes_spa_parameters_from_checkpoint(self, tmp_path, toy_config):
        torch.manual_seed(0)
        cfg = copy.deepcopy(toy_config)
        cfg.train.ablation = ("no_spa",)
        bundle = apply_ablation(cfg)
        opt_g, opt_d = make_optimizers(bundle, cfg.train)
        path = tmp_path / "ns.pt"
        save_checkpoint(path, 0, cfg, bundle, opt_g, opt_d)
        payload = load_checkpoint(path)
        assert not any("spa_stack" in k for k in payload["prompter"])
        assert any("res_stack" in k for k in payload["prompter"])

        full = build_models(toy_config.model)
        assert any("spa_stack" in k for k in full.prompter.state_dict())

    def test_no_semantic_supervision_drops_prior_term(self):
        torch.manual_seed(0)
        bundle = build_models(toy_model_config(), ("no_semantic_supervision",))
        assert bundle.projection is None
        cfg = TrainConfig(batch_size=2, max_iters=4, decay_window=1, seed=0)
        opt_g, opt_d = make_optimizers(bundle, cfg)
        report = train_step(bundle, opt_g, opt_d, toy_dataset().batch([0, 1]),
                            LossWeights())
        assert report.prior == 0.0

    def test_no_multiscale_uses_single_level(self):
        torch.manual_seed(0)
        bundle = build_models(toy_model_config(), ("no_multiscale",))
        gt = torch.rand(1, 3, 64, 64)
        mask = torch.zeros(1, 1, 64, 64)
        pyramid = bundle.prompter(gt, mask)
        assert len(pyramid) == 1
        assert tuple(pyramid[0].shape[-2:]) == (8, 8)
        self.forward_ok(bundle)

    def test_unknown_flag_is_an_error(self):
        with pytest.raises(UsageError):
            build_models(toy_model_config(), ("no_everything",))

    def test_multiple_flags_rejected(self):
        with pytest.raises(UsageError):
            build_models(toy_model_config(), ("no_spa", "no_lpt"))


class TestConfigDefaults:
    def test_paper_configuration_snapshot(self):
        cfg = Config()
        assert cfg.data.overlap_threshold == 0.5
        assert cfg.data.moving_ratio_max == 0.05
        assert cfg.data.train_crop == (512, 512)
        assert cfg.data.test_size == (1024, 512)
        assert cfg.loss.alpha == 1.0
        assert (cfg.loss.lambda_rec, cfg.loss.lambda_perc,
                cfg.loss.lambda_style, cfg.loss.lambda_adv) == (1.0, 0.5, 250.0, 0.01)
        assert (cfg.train.adam_beta1, cfg.train.adam_beta2) == (0.0, 0.99)
        assert cfg.train.batch_size == 8
        assert cfg.train.max_iters == 200_000
        assert cfg.train.decay_window == 20_000
        assert (cfg.train.lr_init, cfg.train.lr_final) == (1e-4, 1e-5)
        assert cfg.model.bottleneck_blocks == 8

    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            "[data]\nseed = 9\n\n[loss]\nlambda_style = 100.0\n\n"
            "[train]\nmax_iters = 50\ndecay_window = 10\n")
        cfg = Config.from_toml(path)
        assert cfg.data.seed == 9
        assert cfg.loss.lambda_style == 100.0
        assert cfg.train.max_iters == 50
        assert cfg.loss.lambda_rec == 1.0  # untouched default

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(UsageError):
            Config.from_toml(path)

    def test_hash_stable_and_sensitive(self):
        a, b = Config(), Config()
        assert a.config_hash() == b.config_hash()
        b.loss.lambda_adv = 0.5
        assert a.config_hash() != b.config_hash()
