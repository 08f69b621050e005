"""Portrait masks: 0 on person pixels, 1 on background pixels."""
from __future__ import annotations

from typing import Protocol

import numpy as np
import torch
from PIL import Image

from .config import PatchLabel, SamplerConfig
from .encoders import WeightsUnavailableError, weights_dir

# index of "person" in the 21 Pascal VOC classes
VOC_PERSON = 15


class Segmenter(Protocol):
    person_class_index: int

    def segment(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> class scores (B, C, H, W)."""
        ...


class MockSegmenter:
    """Rule-based segmenter.

    rules: ``background`` (no person anywhere), ``left-half`` (columns
    ``< W // 2`` are person), ``center`` (the middle half in both axes is
    person).
    """

    person_class_index = VOC_PERSON
    num_classes = 21
    rules = ("background", "left-half", "center")

    def __init__(self, rule: str = "left-half"):
        if rule not in self.rules:
            raise ValueError(f"unknown mock segmenter rule {rule!r}; choose from {self.rules}")
        self.rule = rule
        self.name = f"mock-segmenter-{rule}"

    def segment(self, images):
        b, _, h, w = images.shape
        person = torch.zeros(h, w, dtype=torch.bool)
        if self.rule == "left-half":
            person[:, : w // 2] = True
        elif self.rule == "center":
            person[h // 4: h - h // 4, w // 4: w - w // 4] = True
        scores = torch.zeros(b, self.num_classes, h, w)
        scores[:, 0] = 1.0
        scores[:, self.person_class_index] = person.float() * 2.0
        return scores


class FCNSegmenter:
    """FCN with a ResNet-101 backbone trained on the VOC label set."""

    person_class_index = VOC_PERSON
    name = "fcn_resnet101-coco-voc"

    def __init__(self, device="cpu"):
        from torchvision.models.segmentation import FCN_ResNet101_Weights, fcn_resnet101

        cache = weights_dir() / "torch"
        try:
            weights = FCN_ResNet101_Weights.COCO_WITH_VOC_LABELS_V1
            state = torch.hub.load_state_dict_from_url(weights.url, model_dir=str(cache), progress=False)
        except Exception as e:
            raise WeightsUnavailableError(f"could not load FCN-ResNet101 weights into {cache}: {e}") from e
        net = fcn_resnet101(weights=None, weights_backbone=None, aux_loss=True)
        net.load_state_dict(state)
        self.net = net.to(device).eval()
        self.device = device
        self.mean = torch.tensor([0.485, 0.456, 0.406], device=device).view(1, 3, 1, 1)
        self.std = torch.tensor([0.229, 0.224, 0.225], device=device).view(1, 3, 1, 1)

    def segment(self, images):
        x = (images.to(self.device).float() - self.mean) / self.std
        return self.net(x)["out"]


def build_portrait_mask(segmenter: Segmenter, image: torch.Tensor) -> torch.Tensor:
    """Return an ``(H, W)`` float mask, frozen (no gradient)."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.numel() == 0:
        raise ValueError("empty image")
    with torch.no_grad():
        scores = segmenter.segment(image)
    if scores.shape[-2:] != image.shape[-2:]:
        raise RuntimeError(f"segmenter returned {tuple(scores.shape[-2:])} scores "
                           f"for a {tuple(image.shape[-2:])} image")
    person = scores[0].argmax(dim=0) == segmenter.person_class_index
    return (~person).float().cpu()


def apply_mask(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if image.shape[-2:] != mask.shape[-2:]:
        raise ValueError(f"mask {tuple(mask.shape[-2:])} does not match image {tuple(image.shape[-2:])}")
    return image * mask.to(device=image.device, dtype=image.dtype)


def label_patch(x: int, y: int, size: int, mask, sampler: SamplerConfig) -> tuple[PatchLabel, float]:
    """Label a patch by the portrait fraction of its centered sub-window.

    Ties at the membership threshold go to Portrait.
    """
    m = mask.numpy() if isinstance(mask, torch.Tensor) else np.asarray(mask)
    h, w = m.shape[-2:]
    region = sampler.region
    if region > size:
        raise ValueError(f"membership region {region} exceeds patch size {size}")
    if x < 0 or y < 0 or x + size > w or y + size > h:
        raise ValueError(f"patch ({x}, {y}, size {size}) out of bounds for {h}x{w} mask")
    off = (size - region) // 2
    window = m[..., y + off: y + off + region, x + off: x + off + region]
    fraction = float((window == 0).mean())
    label = PatchLabel.PORTRAIT if fraction >= sampler.membership_threshold else PatchLabel.BACKGROUND
    return label, fraction


def mask_statistics(mask) -> dict[str, float]:
    m = mask.numpy() if isinstance(mask, torch.Tensor) else np.asarray(mask)
    portrait = float((m == 0).mean())
    return {"portrait_fraction": portrait, "background_fraction": 1.0 - portrait}


def save_mask(mask, path) -> None:
    m = mask.numpy() if isinstance(mask, torch.Tensor) else np.asarray(mask)
    Image.fromarray((m > 0).astype(np.uint8) * 255, mode="L").save(path)
