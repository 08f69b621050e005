"""Per-image optimization loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import torch

from . import losses as L
from .config import LossRecord, Mode, TextCondition, TrainRunConfig, validate_config
from .encoders import (FeatureExtractor, ImageEncoder, TextEncoder, encode_image_differentiable,
                       extract_content_features, load_templates, text_direction)
from .sampler import crop_patches, make_rng, sample_patches
from .segmentation import Segmenter, apply_mask, build_portrait_mask
from .stylenet import StyleNet, init_stylenet

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: LossRecord):
        super().__init__(message)
        self.record = record


@dataclass
class Encoders:
    text: TextEncoder
    image: ImageEncoder
    features: FeatureExtractor

    def identifiers(self) -> dict[str, str]:
        return {k: getattr(getattr(self, k), "name", type(getattr(self, k)).__name__)
                for k in ("text", "image", "features")}


@dataclass
class TrainResult:
    final_image: torch.Tensor
    loss_log: list[LossRecord]
    wall_time: float
    mask: torch.Tensor
    net: StyleNet
    checkpoint_path: Path | None = None
    info: dict[str, Any] = field(default_factory=dict)


def lr_at(iteration: int, initial_lr: float, halving_period: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return initial_lr * 0.5 ** (iteration // halving_period)


class LossLogWriter:
    """Appends one CSV row per iteration and flushes, so partial runs stay readable."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=LossRecord.COLUMNS)
        self._writer.writeheader()

    def write(self, rec: LossRecord):
        self._writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.as_row().items()})
        self._fh.flush()

    def close(self):
        self._fh.close()


def train(content: torch.Tensor, cond: TextCondition, cfg: TrainRunConfig, encoders: Encoders,
          segmenter: Segmenter | None = None, *, templates=None, log_path=None,
          checkpoint_path=None, mask: torch.Tensor | None = None, device="cpu") -> TrainResult:
    """Optimize a fresh StyleNet on one content image.

    ``content`` is ``(1, 3, H, W)`` in [0, 1]. The portrait mask is computed
    once from ``content`` unless given; baseline mode ignores it. The returned
    image is the raw network output (no contrast enhancement).
    """
    validate_config(cfg)
    started = time.perf_counter()
    if content.dim() == 3:
        content = content.unsqueeze(0)
    content = content.to(device=device, dtype=torch.float32)
    _, _, h, w = content.shape
    semantic = cfg.mode is Mode.SEMANTIC
    templates = load_templates() if templates is None else templates

    if mask is None:
        if semantic:
            if segmenter is None:
                raise ValueError("semantic mode needs a segmenter or a precomputed mask")
            mask = build_portrait_mask(segmenter, content)
        else:
            mask = torch.ones(h, w)
    mask = mask.float()
    sampler_cfg = cfg.sampler if semantic else replace(cfg.sampler, portrait_quota=cfg.sampler.n_patches)

    d_text = text_direction(encoders.text, cond, templates).to(device=device, dtype=torch.float32)
    with torch.no_grad():
        content_emb = encode_image_differentiable(encoders.image, content)
        masked_content_emb = encode_image_differentiable(encoders.image, apply_mask(content, mask.to(device)))
        content_feats = extract_content_features(encoders.features, content)

    net = init_stylenet(cfg.seed).to(device)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.initial_lr)
    rng = make_rng(cfg.seed)
    weights = cfg.loss_weights
    writer = LossLogWriter(log_path) if log_path is not None else None
    records: list[LossRecord] = []
    try:
        for it in range(cfg.iterations):
            lr = lr_at(it, cfg.initial_lr, cfg.lr_halving_period)
            for group in opt.param_groups:
                group["lr"] = lr
            out = net(content)
            patches = sample_patches(h, w, mask, sampler_cfg, rng)
            crops = crop_patches(out, patches)
            if semantic:
                l_dir = L.background_global_clip_loss(content, out, mask, d_text, encoders.image,
                                                      masked_content_emb)
                l_patch = L.semantic_patchwise_clip_loss(
                    crops, [p.label for p in patches], content, d_text, encoders.image,
                    cfg.thresholds, cfg.penalties, rng, cfg.distortion_degree, content_emb)
            else:
                l_dir = L.directional_clip_loss(content, out, d_text, encoders.image, content_emb)
                l_patch = L.patchwise_clip_loss(crops, content, d_text, encoders.image,
                                                cfg.thresholds.tau_baseline, rng,
                                                cfg.distortion_degree, content_emb)
            l_content = L.content_loss(content, out, encoders.features, content_feats)
            l_tv = L.tv_loss(out)
            total = L.combine(l_dir, l_patch, l_content, l_tv, weights)

            rec = LossRecord(it, l_dir.item(), l_patch.item(), l_content.item(), l_tv.item(),
                             total.item(), lr)
            records.append(rec)
            if writer:
                writer.write(rec)
            if not math.isfinite(rec.l_total):
                raise TrainingAborted(f"non-finite loss at iteration {it}: {rec}", rec)
            if it % 50 == 0:
                log.info("iter %d total %.4f dir %.4f patch %.4f content %.5f tv %.5f",
                         it, rec.l_total, rec.l_dir, rec.l_patch, rec.l_content, rec.l_tv)

            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
    finally:
        if writer:
            writer.close()

    with torch.no_grad():
        final = net(content)
    if checkpoint_path is not None:
        checkpoint_path = Path(checkpoint_path)
        torch.save(net.state_dict(), checkpoint_path)
    return TrainResult(
        final_image=final.cpu(),
        loss_log=records,
        wall_time=time.perf_counter() - started,
        mask=mask.cpu(),
        net=net,
        checkpoint_path=checkpoint_path,
        info={"encoders": encoders.identifiers(), "image_size": [h, w],
              "optimizer": {"name": "Adam", **{k: v for k, v in opt.defaults.items()
                                               if k in ("betas", "eps", "weight_decay")}}},
    )
