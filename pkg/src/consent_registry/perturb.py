"""Image perturbations used to exercise fingerprint robustness."""

import enum
import io
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image, ImageEnhance

from consent_registry.config import PerturbationSettings
from consent_registry.constants import MIN_IMAGE_SIDE
from consent_registry.errors import InvalidInputError
from consent_registry.imaging import ImageAsset, decode_image


class PerturbationKind(enum.Enum):
    """Supported perturbations."""

    ADDITIVE_NOISE = "additive-noise"
    RESIZE = "resize"
    QUALITY_RECOMPRESS = "quality-recompress"
    FORMAT_CHANGE = "format-change"
    COLOR_JITTER = "color-jitter"
    CROP = "crop"


@dataclass(frozen=True)
class Perturbation:
    """A perturbation kind with its magnitudes."""

    kind: PerturbationKind
    params: Dict[str, Any] = field(default_factory=dict)

    def describe(self) -> str:
        """
        Short human-readable label.

        :return: kind and parameters.
        """
        args = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind.value}({args})"


def _reencode(image: ImageAsset, fmt: str, **save_args) -> ImageAsset:
    buffer = io.BytesIO()
    image.to_pil().save(buffer, format=fmt, **save_args)
    return decode_image(image.asset_id, buffer.getvalue())


def _noise(image: ImageAsset, rng: np.random.Generator, sigma: float) -> ImageAsset:
    if sigma < 0:
        raise InvalidInputError("Noise sigma must be non-negative.")
    if sigma == 0:
        return image
    pixels = image.to_array().astype(np.float64)
    pixels += rng.normal(0.0, sigma * 255.0, size=pixels.shape)
    return ImageAsset.from_array(image.asset_id, pixels)


def _resize(image: ImageAsset, factor: float, restore: bool = True) -> ImageAsset:
    if factor <= 0:
        raise InvalidInputError("Resize factor must be positive.")
    width = max(MIN_IMAGE_SIDE, round(image.width * factor))
    height = max(MIN_IMAGE_SIDE, round(image.height * factor))
    resized = image.to_pil().resize((width, height), Image.Resampling.BILINEAR)
    if restore:
        resized = resized.resize(
            (image.width, image.height), Image.Resampling.BILINEAR
        )
    return ImageAsset.from_pil(image.asset_id, resized)


def _jitter(image: ImageAsset, rng: np.random.Generator, amount: float) -> ImageAsset:
    if not 0 <= amount < 1:
        raise InvalidInputError("Colour jitter must lie in [0, 1).")
    pil = image.to_pil()
    for enhancer in (
        ImageEnhance.Brightness,
        ImageEnhance.Contrast,
        ImageEnhance.Color,
    ):
        pil = enhancer(pil).enhance(1.0 + rng.uniform(-amount, amount))
    return ImageAsset.from_pil(image.asset_id, pil)


def _crop(
    image: ImageAsset,
    rng: np.random.Generator,
    fraction: Optional[float] = None,
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> ImageAsset:
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise InvalidInputError("Crop fraction must lie in (0, 1].")
        width = round(image.width * fraction)
        height = round(image.height * fraction)
    width = width or image.width
    height = height or image.height
    if width > image.width or height > image.height:
        raise InvalidInputError(
            f"Crop {width}x{height} exceeds image {image.width}x{image.height}."
        )
    if width < MIN_IMAGE_SIDE or height < MIN_IMAGE_SIDE:
        raise InvalidInputError(f"Crop {width}x{height} is below the minimum size.")
    left = int(rng.integers(0, image.width - width + 1))
    top = int(rng.integers(0, image.height - height + 1))
    pixels = image.to_array()[top : top + height, left : left + width]
    return ImageAsset.from_array(image.asset_id, pixels)


def apply_perturbation(
    image: ImageAsset, p: Perturbation, seed: int = 0
) -> ImageAsset:
    """
    Apply one perturbation.

    :param image: the source image.
    :param p: the perturbation.
    :param seed: seed for the random parts (noise, jitter factors, crop offset).

    :return: the perturbed image under the same identifier.

    :raises InvalidInputError: for invalid magnitudes or a crop larger than
        the image.
    """
    rng = np.random.default_rng(seed)
    params = p.params
    if p.kind is PerturbationKind.ADDITIVE_NOISE:
        return _noise(image, rng, float(params.get("sigma", 0.0)))
    if p.kind is PerturbationKind.RESIZE:
        return _resize(
            image, float(params.get("factor", 1.0)), bool(params.get("restore", True))
        )
    if p.kind is PerturbationKind.QUALITY_RECOMPRESS:
        quality = int(params.get("quality", 80))
        if not 1 <= quality <= 100:
            raise InvalidInputError("JPEG quality must lie in [1, 100].")
        return _reencode(image, "JPEG", quality=quality)
    if p.kind is PerturbationKind.FORMAT_CHANGE:
        return _reencode(image, str(params.get("format", "GIF")))
    if p.kind is PerturbationKind.COLOR_JITTER:
        return _jitter(image, rng, float(params.get("amount", 0.0)))
    return _crop(
        image,
        rng,
        fraction=params.get("fraction"),
        width=params.get("width"),
        height=params.get("height"),
    )


def mild_suite(settings: Optional[PerturbationSettings] = None) -> List[Perturbation]:
    """
    The default mild perturbation suite.

    :param settings: magnitudes; defaults apply when omitted.

    :return: noise, resize, recompress and colour jitter perturbations.
    """
    settings = settings or PerturbationSettings()
    return [
        Perturbation(PerturbationKind.ADDITIVE_NOISE, {"sigma": settings.noise_sigma}),
        Perturbation(PerturbationKind.RESIZE, {"factor": settings.resize_factor}),
        Perturbation(
            PerturbationKind.QUALITY_RECOMPRESS, {"quality": settings.jpeg_quality}
        ),
        Perturbation(PerturbationKind.COLOR_JITTER, {"amount": settings.color_jitter}),
    ]


def full_suite(settings: Optional[PerturbationSettings] = None) -> List[Perturbation]:
    """
    Every perturbation kind at its configured magnitude.

    :param settings: magnitudes; defaults apply when omitted.

    :return: the mild suite plus format change and crop.
    """
    settings = settings or PerturbationSettings()
    return mild_suite(settings) + [
        Perturbation(PerturbationKind.FORMAT_CHANGE, {"format": settings.format}),
        Perturbation(PerturbationKind.CROP, {"fraction": settings.crop_fraction}),
    ]


def perturb_query(
    image: ImageAsset,
    suite: Sequence[Perturbation],
    seed: int,
    max_chain: int = 2,
) -> ImageAsset:
    """
    Apply a random chain of perturbations drawn from a suite.

    Between one and ``max_chain`` distinct perturbations are chosen, in a
    random order, all from ``seed``.

    :param image: the source image.
    :param suite: candidate perturbations.
    :param seed: seed for the choice and for each perturbation.
    :param max_chain: longest chain.

    :return: the perturbed image.
    """
    if not suite:
        return image
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, min(max_chain, len(suite)) + 1))
    chosen = rng.choice(len(suite), size=count, replace=False)
    for index in chosen:
        image = apply_perturbation(
            image, suite[int(index)], seed=int(rng.integers(0, 2**31))
        )
    return image
