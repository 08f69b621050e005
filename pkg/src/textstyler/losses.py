"""Objective terms.

Cosine losses are ``1 - cos(dI, dT)`` and lie in [0, 2]. When the image
direction ``dI`` is (numerically) zero the loss is defined as exactly 1 with
zero gradient, which is what happens at the start of training when the
stylized image still equals the content image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossWeights, PatchLabel, ThresholdConfig, WeightPenaltyConfig
from .encoders import (EPS, FeatureExtractor, ImageEncoder, ZeroDirectionError,
                       encode_image_differentiable, extract_content_features)
from .sampler import augment_patches
from .segmentation import apply_mask


@dataclass(frozen=True)
class LossBreakdown:
    dir: float
    patch: float
    content: float
    tv: float
    total: float


def _safe_norm(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    sq = (x * x).sum(dim=-1)
    degenerate = sq < EPS * EPS
    return torch.sqrt(torch.where(degenerate, torch.ones_like(sq), sq)), degenerate


def cosine_direction_loss(d_image: torch.Tensor, d_text: torch.Tensor) -> torch.Tensor:
    """``1 - cos`` between image direction(s) and the text direction.

    ``d_image`` may be ``(D,)`` or ``(N, D)``; the result has the leading shape.
    """
    t_norm = d_text.norm()
    if t_norm < EPS:
        raise ZeroDirectionError("text direction is zero")
    d_text = d_text.to(d_image)
    i_norm, degenerate = _safe_norm(d_image)
    cos = (d_image * d_text).sum(dim=-1) / (i_norm * t_norm.to(i_norm))
    # rounding can push |cos| a hair past 1
    cos = torch.where(degenerate, torch.zeros_like(cos), cos.clamp(-1.0, 1.0))
    return 1.0 - cos


def directional_clip_loss(content, stylized, d_text, enc: ImageEncoder, content_emb=None):
    if content.shape != stylized.shape:
        raise ValueError(f"content {tuple(content.shape)} and stylized {tuple(stylized.shape)} differ")
    if content_emb is None:
        with torch.no_grad():
            content_emb = encode_image_differentiable(enc, content)
    d_image = encode_image_differentiable(enc, stylized) - content_emb
    return cosine_direction_loss(d_image.squeeze(0), d_text)


def background_global_clip_loss(content, stylized, mask, d_text, enc: ImageEncoder, masked_content_emb=None):
    """Directional loss on images whose portrait pixels are zeroed."""
    if masked_content_emb is None:
        with torch.no_grad():
            masked_content_emb = encode_image_differentiable(enc, apply_mask(content, mask))
    d_image = encode_image_differentiable(enc, apply_mask(stylized, mask)) - masked_content_emb
    return cosine_direction_loss(d_image.squeeze(0), d_text)


def threshold_reject(s, tau):
    """0 where ``s <= tau``, ``s`` elsewhere. Works on floats and tensors."""
    if isinstance(s, torch.Tensor):
        tau = torch.as_tensor(tau, dtype=s.dtype, device=s.device)
        return torch.where(s <= tau, torch.zeros_like(s), s)
    return 0.0 if s <= tau else s


def weight_penalty(label: PatchLabel, cfg: WeightPenaltyConfig) -> float:
    return cfg.alpha_portrait if label is PatchLabel.PORTRAIT else cfg.alpha_back


def patch_direction_losses(crops, content_emb, d_text, enc: ImageEncoder, distortion: float,
                           rng: np.random.Generator):
    """Per-patch ``l_i`` for augmented crops against the whole-content embedding."""
    if crops.shape[0] == 0:
        raise ValueError("empty patch list")
    views = augment_patches(crops, distortion, rng)
    d_image = encode_image_differentiable(enc, views) - content_emb
    return cosine_direction_loss(d_image, d_text)


def _content_emb(content, enc, content_emb):
    if content_emb is not None:
        return content_emb
    with torch.no_grad():
        return encode_image_differentiable(enc, content)


def patchwise_clip_loss(crops, content, d_text, enc: ImageEncoder, tau: float,
                        rng: np.random.Generator, distortion: float = 0.5, content_emb=None):
    l = patch_direction_losses(crops, _content_emb(content, enc, content_emb), d_text, enc, distortion, rng)
    return threshold_reject(l, tau).mean()


def semantic_patchwise_clip_loss(crops, labels: Sequence[PatchLabel], content, d_text, enc: ImageEncoder,
                                 thresholds: ThresholdConfig, penalties: WeightPenaltyConfig,
                                 rng: np.random.Generator, distortion: float = 0.5, content_emb=None):
    """Mean over patches of ``W(label) * R(l_i, tau(label))``."""
    if len(labels) != crops.shape[0]:
        raise ValueError(f"{len(labels)} labels for {crops.shape[0]} patches")
    l = patch_direction_losses(crops, _content_emb(content, enc, content_emb), d_text, enc, distortion, rng)
    portrait = [lab is PatchLabel.PORTRAIT for lab in labels]
    tau = torch.tensor([thresholds.tau_portrait if p else thresholds.tau_back for p in portrait],
                       dtype=l.dtype, device=l.device)
    w = torch.tensor([penalties.alpha_portrait if p else penalties.alpha_back for p in portrait],
                     dtype=l.dtype, device=l.device)
    return (w * threshold_reject(l, tau)).mean()


def content_loss(content, stylized, fx: FeatureExtractor, content_features=None):
    """Sum over the extractor's two layers of the feature MSE."""
    if content.shape != stylized.shape:
        raise ValueError(f"content {tuple(content.shape)} and stylized {tuple(stylized.shape)} differ")
    if content_features is None:
        content_features = extract_content_features(fx, content)
    feats = extract_content_features(fx, stylized)
    return sum(F.mse_loss(feats[k], content_features[k]) for k in fx.layers)


def tv_loss(image):
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise ValueError(f"tv_loss needs an image of at least 2x2, got {tuple(image.shape[-2:])}")
    dh = image[..., :, 1:] - image[..., :, :-1]
    dv = image[..., 1:, :] - image[..., :-1, :]
    return (dh ** 2).mean() + (dv ** 2).mean()


def combine(l_dir, l_patch, l_content, l_tv, weights: LossWeights):
    return (weights.lambda_d * l_dir + weights.lambda_p * l_patch
            + weights.lambda_c * l_content + weights.lambda_tv * l_tv)


def total_loss(components, weights: LossWeights) -> LossBreakdown:
    """``components`` is a mapping with keys dir, patch, content, tv."""
    vals = {k: float(components[k]) for k in ("dir", "patch", "content", "tv")}
    bad = [k for k, v in vals.items() if not math.isfinite(v)]
    if bad:
        raise ValueError(f"non-finite loss component(s): {', '.join(bad)}")
    total = combine(vals["dir"], vals["patch"], vals["content"], vals["tv"], weights)
    return LossBreakdown(total=total, **vals)
