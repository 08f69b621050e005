"""Text/image embedding adapters, the perceptual feature extractor, and
prompt ensembling.

Images are ``(B, 3, H, W)`` tensors with values in [0, 1]. Every encoder
resizes internally to its own input resolution with bilinear interpolation,
so callers can pass patches and full images alike.

Two families live here:

* ``Mock*`` classes, cheap deterministic stand-ins used by the tests and by
  ``--mock-encoders``. The mock image encoder is
  ``W @ flatten(resize_bilinear(x, 16x16))`` with ``W`` drawn from
  ``torch.randn(dim, 768, generator=manual_seed(seed), dtype=float64) / sqrt(768)``;
  the mock text encoder draws ``randn(dim)`` from a generator seeded with the
  first 8 bytes of the string's SHA-256.
* ``ClipEncoders`` / ``VGGFeatureExtractor`` wrapping pretrained weights.
  Weights are fetched lazily into ``$TEXTSTYLER_WEIGHTS`` (default
  ``~/.cache/textstyler``); a failed fetch raises ``WeightsUnavailableError``.
"""
from __future__ import annotations

import hashlib
import math
import os
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import torch
import torch.nn.functional as F

from .config import TextCondition

WEIGHTS_ENV = "TEXTSTYLER_WEIGHTS"
EPS = 1e-8


class WeightsUnavailableError(RuntimeError):
    pass


class DegenerateEnsembleError(ValueError):
    pass


class ZeroDirectionError(ValueError):
    pass


def weights_dir() -> Path:
    return Path(os.environ.get(WEIGHTS_ENV, Path.home() / ".cache" / "textstyler"))


class TextEncoder(Protocol):
    dim: int

    def encode(self, texts: Sequence[str]) -> torch.Tensor: ...


class ImageEncoder(Protocol):
    dim: int
    input_resolution: int

    def encode(self, images: torch.Tensor) -> torch.Tensor: ...


class FeatureExtractor(Protocol):
    layers: tuple[str, str]
    min_size: int

    def extract(self, images: torch.Tensor) -> dict[str, torch.Tensor]: ...


# ------------------------------------------------------------------ templates


def load_templates(path=None) -> list[str]:
    """Prompt templates, one per line, each with a single ``{}`` slot."""
    if path is None:
        text = resources.files("textstyler").joinpath("data/templates.txt").read_text()
    else:
        text = Path(path).read_text()
    templates = [line.strip() for line in text.splitlines() if line.strip()]
    for t in templates:
        if t.count("{}") != 1:
            raise ValueError(f"template must contain exactly one '{{}}' slot: {t!r}")
    return templates


def encode_text_ensembled(encoder: TextEncoder, text: str, templates: Sequence[str]) -> torch.Tensor:
    """Normalize each filled template's embedding, average, renormalize."""
    if not text:
        raise ValueError("text must be nonempty")
    if len(templates) == 0:
        raise ValueError("template set is empty")
    with torch.no_grad():
        emb = encoder.encode([t.format(text) for t in templates])
    emb = emb / emb.norm(dim=-1, keepdim=True)
    mean = emb.mean(dim=0)
    norm = mean.norm()
    if norm < EPS:
        raise DegenerateEnsembleError(f"degenerate ensemble for {text!r}: mean embedding is zero")
    return mean / norm


def text_direction(encoder: TextEncoder, cond: TextCondition,
                   templates: Sequence[str]) -> torch.Tensor:
    d = (encode_text_ensembled(encoder, cond.style_text, templates)
         - encode_text_ensembled(encoder, cond.source_text, templates))
    if d.norm() < EPS:
        raise ZeroDirectionError(f"style text {cond.style_text!r} and source text "
                                 f"{cond.source_text!r} give a zero text direction")
    return d


def encode_image_differentiable(encoder: ImageEncoder, image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.numel() == 0:
        raise ValueError("empty image")
    if not torch.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    return encoder.encode(image)


def extract_content_features(fx: FeatureExtractor, image: torch.Tensor) -> dict[str, torch.Tensor]:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    h, w = image.shape[-2:]
    if min(h, w) < fx.min_size:
        raise ValueError(f"image {h}x{w} is smaller than the extractor minimum {fx.min_size}")
    return fx.extract(image)


# ---------------------------------------------------------------------- mocks


class MockTextEncoder:
    def __init__(self, dim: int = 64):
        self.dim = dim
        self.name = f"mock-text-{dim}"

    def _one(self, text: str) -> torch.Tensor:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        g = torch.Generator().manual_seed(seed)
        return torch.randn(self.dim, generator=g, dtype=torch.float64)

    def encode(self, texts: Sequence[str]) -> torch.Tensor:
        return torch.stack([self._one(t) for t in texts])


class MockImageEncoder:
    input_resolution = 16

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.name = f"mock-image-{dim}-s{seed}"
        g = torch.Generator().manual_seed(seed)
        n = 3 * self.input_resolution ** 2
        self.weight = torch.randn(dim, n, generator=g, dtype=torch.float64) / math.sqrt(n)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        r = self.input_resolution
        if images.shape[-2:] != (r, r):
            images = F.interpolate(images, size=(r, r), mode="bilinear", align_corners=False)
        return images.flatten(1) @ self.weight.to(images.dtype).T


class MockFeatureExtractor:
    """Two 'layers': the image itself and a 2x average-pooled copy."""

    layers = ("conv4_2", "conv5_2")
    min_size = 2
    name = "mock-features"

    def extract(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        return {"conv4_2": images, "conv5_2": F.avg_pool2d(images, 2)}


def mock_encoders(dim: int = 64, seed: int = 0):
    return MockTextEncoder(dim), MockImageEncoder(dim, seed), MockFeatureExtractor()


# ------------------------------------------------------------ pretrained ones

_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class ClipEncoders:
    """Text and image towers of a pretrained CLIP model (ViT-B/32 by default)."""

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32", device="cpu"):
        try:
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as e:  # pragma: no cover - optional extra
            raise WeightsUnavailableError("the 'transformers' package is required for CLIP") from e
        cache = weights_dir() / "clip"
        try:
            self.model = CLIPModel.from_pretrained(model_name, cache_dir=cache).to(device).eval()
            self.tokenizer = CLIPTokenizer.from_pretrained(model_name, cache_dir=cache)
        except Exception as e:
            raise WeightsUnavailableError(f"could not load CLIP weights {model_name!r} "
                                          f"into {cache}: {e}") from e
        self.model.requires_grad_(False)
        self.name = model_name
        self.device = device
        self.dim = self.model.config.projection_dim
        self.input_resolution = self.model.config.vision_config.image_size
        self.text = _ClipText(self)
        self.image = _ClipImage(self)


class _ClipText:
    def __init__(self, clip: ClipEncoders):
        self.clip = clip
        self.dim = clip.dim
        self.name = clip.name

    def encode(self, texts):
        tok = self.clip.tokenizer(list(texts), padding=True, return_tensors="pt").to(self.clip.device)
        return self.clip.model.get_text_features(**tok)


class _ClipImage:
    def __init__(self, clip: ClipEncoders):
        self.clip = clip
        self.dim = clip.dim
        self.input_resolution = clip.input_resolution
        self.name = clip.name
        self.mean = torch.tensor(_CLIP_MEAN).view(1, 3, 1, 1)
        self.std = torch.tensor(_CLIP_STD).view(1, 3, 1, 1)

    def encode(self, images):
        r = self.input_resolution
        x = F.interpolate(images, size=(r, r), mode="bilinear", align_corners=False)
        x = (x - self.mean.to(x)) / self.std.to(x)
        return self.clip.model.get_image_features(pixel_values=x.float()).to(images.dtype)


class VGGFeatureExtractor:
    """conv4_2 / conv5_2 activations of an ImageNet VGG-19."""

    layers = ("conv4_2", "conv5_2")
    min_size = 16
    name = "vgg19-imagenet"
    _indices = {21: "conv4_2", 30: "conv5_2"}

    def __init__(self, device="cpu"):
        from torchvision.models import VGG19_Weights, vgg19

        cache = weights_dir() / "torch"
        try:
            weights = VGG19_Weights.IMAGENET1K_V1
            state = torch.hub.load_state_dict_from_url(weights.url, model_dir=str(cache), progress=False)
        except Exception as e:
            raise WeightsUnavailableError(f"could not load VGG-19 weights into {cache}: {e}") from e
        net = vgg19()
        net.load_state_dict(state)
        self.features = net.features[:31].to(device).eval().requires_grad_(False)
        self.mean = torch.tensor([0.485, 0.456, 0.406], device=device).view(1, 3, 1, 1)
        self.std = torch.tensor([0.229, 0.224, 0.225], device=device).view(1, 3, 1, 1)

    def extract(self, images):
        x = (images - self.mean) / self.std
        out = {}
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self._indices:
                out[self._indices[i]] = x
        return out
