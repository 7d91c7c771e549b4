"""Training orchestration: model assembly (including ablation
variants), Adam optimizers with a linearly decayed learning-rate tail,
alternating discriminator/generator updates, JSONL loss logging, and
checkpointing with exact resume.

Determinism contract: model construction is seeded, batch indices for
iteration i are drawn from a generator keyed on (seed, i), and no other
randomness is consumed during a step, so an interrupted-and-resumed run
reproduces the uninterrupted loss log bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from itertools import chain
from pathlib import Path

import numpy as np
import torch

from .config import Config, ModelConfig, TrainConfig
from .errors import DataError, NumericError, UsageError
from .losses import (
    LossReport,
    LossWeights,
    adv_d_loss,
    adv_g_loss,
    perceptual_loss,
    rec_loss,
    style_loss,
    total_loss,
)
from .nets.discriminator import PatchDiscriminator
from .nets.generator import Generator
from .nets.prompter import FrozenPyramidExtractor, PriorProjection, Prompter, prior_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

STRUCTURAL_FLAGS = {
    "no_semantic_supervision", "no_lpt", "no_multiscale",
    "no_attention_transfer", "no_spa",
}


@dataclass
class ModelBundle:
    """All trainable and frozen parts of one model variant."""

    prompter: Prompter
    generator: Generator
    discriminator: PatchDiscriminator
    projection: PriorProjection | None
    pretext: FrozenPyramidExtractor
    ablation: tuple[str, ...] = ()

    @property
    def semantic_supervision(self) -> bool:
        return "no_semantic_supervision" not in self.ablation

    def generator_parameters(self):
        parts = [self.prompter.parameters(), self.generator.parameters()]
        if self.projection is not None:
            parts.append(self.projection.parameters())
        return chain(*parts)

    def parameter_count(self) -> int:
        params = chain(self.generator_parameters(), self.discriminator.parameters())
        return sum(p.numel() for p in params if p.requires_grad)

    def state_dict_keys(self) -> set[str]:
        keys = {f"prompter.{k}" for k in self.prompter.state_dict()}
        keys |= {f"generator.{k}" for k in self.generator.state_dict()}
        keys |= {f"discriminator.{k}" for k in self.discriminator.state_dict()}
        if self.projection is not None:
            keys |= {f"projection.{k}" for k in self.projection.state_dict()}
        return keys

    def to_double(self) -> "ModelBundle":
        for module in (self.prompter, self.generator, self.discriminator,
                       self.projection, self.pretext):
            if module is not None:
                module.double()
        return self


def build_models(model_cfg: ModelConfig, ablation: tuple[str, ...] = ()) -> ModelBundle:
    """Construct a model variant.  No flags gives the full model; each
    single flag matches one ablation row:

    - no_semantic_supervision: prior loss dropped, priors fused by plain
      concatenation + convolution (no projection parameters).
    - no_lpt: prior-transfer blocks replaced by concatenation + conv.
    - no_multiscale: prompter emits only the deepest prior, reused
      (resized) at every generator level.
    - no_attention_transfer: attention fusion replaced by additive skip
      connections from the encoder (fuse convolutions absent).
    - no_spa: dilation-pyramid blocks replaced by plain residual blocks.
    """
    ablation = tuple(ablation)
    unknown = [f for f in ablation if f not in STRUCTURAL_FLAGS]
    if unknown:
        raise UsageError(f"unknown ablation flag(s): {unknown}")
    if len(ablation) > 1:
        raise UsageError(f"at most one ablation flag per variant, got {ablation}")

    no_supervision = "no_semantic_supervision" in ablation
    fusion = "concat" if (no_supervision or "no_lpt" in ablation) else "lpt"
    use_attention = "no_attention_transfer" not in ablation
    multiscale = "no_multiscale" not in ablation
    block_type = "residual" if "no_spa" in ablation else "spa"

    pretext = FrozenPyramidExtractor(
        in_channels=3, channels=model_cfg.pretext.channels, seed=model_cfg.pretext.seed)
    prompter = Prompter(
        in_channels=4, channels=model_cfg.prompter_channels,
        prior_channels=model_cfg.prior_channels,
        blocks_per_scale=model_cfg.spa_blocks_per_scale,
        rates=model_cfg.spa_rates, block_type=block_type, multiscale=multiscale)
    generator = Generator(
        in_channels=4, channels=model_cfg.encoder_channels,
        prior_channels=model_cfg.prior_channels,
        bottleneck_blocks=model_cfg.bottleneck_blocks,
        lpt_hidden=model_cfg.lpt_hidden, fusion=fusion,
        use_attention=use_attention, prior_levels=3 if multiscale else 1)
    discriminator = PatchDiscriminator(3, model_cfg.disc_channels)

    projection = None
    if not no_supervision:
        # pretext levels come smallest scale first; match the pyramid's depth
        targets = tuple(reversed(model_cfg.pretext.channels))
        levels = 3 if multiscale else 1
        projection = PriorProjection(model_cfg.prior_channels, targets[:levels])

    return ModelBundle(prompter, generator, discriminator, projection, pretext, ablation)


def apply_ablation(cfg: Config) -> ModelBundle:
    """Model variant selected by cfg.train.ablation."""
    return build_models(cfg.model, cfg.train.ablation)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Constant lr_init, then linear decay to lr_final across the final
    decay_window iterations."""
    if iteration < 0 or iteration > cfg.max_iters:
        raise UsageError(f"iteration {iteration} outside [0, {cfg.max_iters}]")
    start = cfg.max_iters - cfg.decay_window
    if iteration <= start or cfg.decay_window == 0:
        return cfg.lr_init
    t = (iteration - start) / cfg.decay_window
    return cfg.lr_init * (1.0 - t) + cfg.lr_final * t


class ArrayDataset:
    """In-memory (gt, mask) pairs: images float32 (H, W, 3) in [0, 1],
    masks (H, W) in {0, 1}."""

    def __init__(self, images: list[np.ndarray], masks: list[np.ndarray]):
        if len(images) != len(masks):
            raise DataError(f"{len(images)} images vs {len(masks)} masks")
        for img, msk in zip(images, masks):
            if img.shape[:2] != msk.shape:
                raise DataError(f"image {img.shape} does not match mask {msk.shape}")
        self.images = [np.asarray(i, dtype=np.float32) for i in images]
        self.masks = [np.asarray(m, dtype=np.float32) for m in masks]

    @classmethod
    def from_pairs(cls, pairs) -> "ArrayDataset":
        images, masks = [], []
        for p in pairs:
            images.append(p.load_gt())
            masks.append(p.load_mask().data)
        return cls(images, masks)

    def __len__(self) -> int:
        return len(self.images)

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        """Tensors for the networks: images mapped to [-1, 1]."""
        imgs = np.stack([self.images[i] for i in indices])
        msks = np.stack([self.masks[i] for i in indices])
        gt = torch.from_numpy(imgs).permute(0, 3, 1, 2) * 2.0 - 1.0
        mask = torch.from_numpy(msks).unsqueeze(1)
        return gt, mask


def batch_indices(seed: int, iteration: int, n: int, batch_size: int) -> np.ndarray:
    """Uniform with-replacement draw keyed on (seed, iteration)."""
    rng = np.random.default_rng([seed, iteration])
    return rng.integers(0, n, size=batch_size)


def train_step(
    bundle: ModelBundle,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    batch: tuple[torch.Tensor, torch.Tensor],
    weights: LossWeights,
    update_discriminator: bool = True,
    warmup: bool = False,
) -> LossReport:
    """One alternating update: discriminator first, then generator plus
    prompter.  During warmup only the prior supervision trains."""
    gt, mask = batch
    masked = gt * (1.0 - mask)
    pyramid = bundle.prompter(masked, mask)

    if warmup:
        if not bundle.semantic_supervision:
            raise UsageError("prompter warmup needs semantic supervision")
        targets = bundle.pretext(gt)
        pr = prior_loss(pyramid, targets, bundle.projection)
        opt_g.zero_grad()
        pr.backward()
        opt_g.step()
        value = float(pr.detach())
        report = LossReport(prior=value, total=value)
        _assert_finite(report)
        return report

    out = bundle.generator(masked, mask, pyramid)
    i_p = out.image

    loss_d = torch.zeros((), dtype=gt.dtype)
    if update_discriminator:
        opt_d.zero_grad()
        d_fake = bundle.discriminator(i_p.detach())
        d_real = bundle.discriminator(gt)
        loss_d = adv_d_loss(d_fake, d_real, mask=mask,
                            kernel_size=weights.sm_kernel_size, sigma=weights.sm_sigma)
        loss_d.backward()
        opt_d.step()

    opt_g.zero_grad()
    rec = rec_loss(i_p, gt, mask, weights.alpha)
    perc = perceptual_loss(i_p, gt, bundle.pretext)
    sty = style_loss(i_p, gt, bundle.pretext)
    adv = adv_g_loss(bundle.discriminator(i_p), mask)
    if bundle.semantic_supervision:
        pr = prior_loss(pyramid, bundle.pretext(gt), bundle.projection)
    else:
        pr = torch.zeros((), dtype=gt.dtype)
    total = total_loss({"rec": rec, "perc": perc, "style": sty, "adv": adv},
                       weights, pr)
    total.backward()
    opt_g.step()

    def scalar(t):
        return float(t.detach()) if torch.is_tensor(t) else float(t)

    report = LossReport(
        rec=scalar(rec), perc=scalar(perc), style=scalar(sty),
        adv_g=scalar(adv), adv_d=scalar(loss_d), prior=scalar(pr), total=scalar(total))
    _assert_finite(report)
    return report


def _assert_finite(report: LossReport) -> None:
    for name, value in report.to_dict().items():
        if not np.isfinite(value):
            raise NumericError(f"loss term '{name}' became non-finite: {value}")


def make_optimizers(bundle: ModelBundle, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(bundle.generator_parameters(), lr=cfg.lr_init, betas=betas)
    opt_d = torch.optim.Adam(bundle.discriminator.parameters(), lr=cfg.lr_init, betas=betas)
    return opt_g, opt_d


def save_checkpoint(path: str | Path, iteration: int, cfg: Config,
                    bundle: ModelBundle, opt_g, opt_d) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "ablation": list(bundle.ablation),
        "prompter": bundle.prompter.state_dict(),
        "generator": bundle.generator.state_dict(),
        "discriminator": bundle.discriminator.state_dict(),
        "projection": bundle.projection.state_dict() if bundle.projection else None,
        "opt_g": opt_g.state_dict() if opt_g is not None else None,
        "opt_d": opt_d.state_dict() if opt_d is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    return payload


def restore_bundle(payload: dict) -> tuple[Config, ModelBundle]:
    """Rebuild models from a checkpoint payload and load their weights.
    Leaves the global RNG untouched."""
    cfg = Config.from_dict(payload["config"])
    with torch.random.fork_rng(devices=[]):
        bundle = build_models(cfg.model, tuple(payload.get("ablation", ())))
    bundle.prompter.load_state_dict(payload["prompter"])
    bundle.generator.load_state_dict(payload["generator"])
    bundle.discriminator.load_state_dict(payload["discriminator"])
    if bundle.projection is not None:
        if payload.get("projection") is None:
            raise DataError("checkpoint lacks projection weights for this variant")
        bundle.projection.load_state_dict(payload["projection"])
    return cfg, bundle


def train_loop(cfg: Config, dataset: ArrayDataset, out_dir: str | Path,
               resume_from: str | Path | None = None,
               stop_after: int | None = None) -> Path:
    """Run (or resume) training; returns the last checkpoint path.

    Writes loss_log.jsonl (one record per step) and checkpoint files
    under out_dir.  Resuming requires the checkpoint's config hash to
    match the supplied config.  stop_after simulates an interruption:
    the loop checkpoints and returns after that iteration.
    """
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = cfg.train

    torch.manual_seed(tc.seed)
    bundle = build_models(cfg.model, tc.ablation)
    opt_g, opt_d = make_optimizers(bundle, tc)

    start_iter = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        if payload["config_hash"] != cfg.config_hash():
            raise UsageError(
                f"checkpoint config hash {payload['config_hash'][:12]} does not match "
                f"the supplied config {cfg.config_hash()[:12]}; refusing to resume")
        bundle.prompter.load_state_dict(payload["prompter"])
        bundle.generator.load_state_dict(payload["generator"])
        bundle.discriminator.load_state_dict(payload["discriminator"])
        if bundle.projection is not None and payload.get("projection") is not None:
            bundle.projection.load_state_dict(payload["projection"])
        if payload.get("opt_g"):
            opt_g.load_state_dict(payload["opt_g"])
        if payload.get("opt_d"):
            opt_d.load_state_dict(payload["opt_d"])
        if payload.get("torch_rng") is not None:
            torch.set_rng_state(payload["torch_rng"])
        start_iter = int(payload["iteration"])

    log_path = out_dir / "loss_log.jsonl"
    log_mode = "a" if resume_from is not None else "w"
    last_path = None
    last_saved = -1

    with open(log_path, log_mode) as log:
        last_it = start_iter
        for it in range(start_iter + 1, tc.max_iters + 1):
            lr = lr_schedule(it, tc)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = lr
            idx = batch_indices(tc.seed, it, len(dataset), tc.batch_size)
            batch = dataset.batch(idx)
            warmup = it <= tc.prompter_warmup_iters
            report = train_step(bundle, opt_g, opt_d, batch, cfg.loss, warmup=warmup)
            log.write(json.dumps({"iteration": it, "lr": lr, **report.to_dict()}) + "\n")
            last_it = it
            if it % tc.checkpoint_interval == 0:
                last_path = out_dir / f"checkpoint_{it:08d}.pt"
                save_checkpoint(last_path, it, cfg, bundle, opt_g, opt_d)
                last_saved = it
            if stop_after is not None and it >= stop_after:
                break
    if last_it >= tc.max_iters:
        last_path = out_dir / "checkpoint_final.pt"
        save_checkpoint(last_path, last_it, cfg, bundle, opt_g, opt_d)
    elif last_saved != last_it:
        last_path = out_dir / f"checkpoint_{last_it:08d}.pt"
        save_checkpoint(last_path, last_it, cfg, bundle, opt_g, opt_d)
    return last_path
