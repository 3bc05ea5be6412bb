"""Image assets and raster I/O."""

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from consent_registry.constants import MIN_IMAGE_SIDE
from consent_registry.errors import InvalidInputError


@dataclass(frozen=True)
class ImageAsset:
    """An 8-bit RGB image held as a row-major byte buffer."""

    asset_id: str
    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if self.width < MIN_IMAGE_SIDE or self.height < MIN_IMAGE_SIDE:
            raise InvalidInputError(
                f"Image {self.asset_id} is {self.width}x{self.height}; "
                f"both sides must be at least {MIN_IMAGE_SIDE}."
            )
        if len(self.pixels) != self.width * self.height * 3:
            raise InvalidInputError(
                f"Image {self.asset_id} buffer holds {len(self.pixels)} bytes, "
                f"expected {self.width * self.height * 3}."
            )

    @classmethod
    def from_array(cls, asset_id: str, array: np.ndarray) -> "ImageAsset":
        """
        Build an asset from an (H, W, 3) array.

        :param asset_id: identifier of the asset.
        :param array: pixel values; clipped and rounded to 8 bits.

        :return: the asset.

        :raises InvalidInputError: if the array is not (H, W, 3).
        """
        array = np.asarray(array)
        if array.ndim != 3 or array.shape[2] != 3:
            raise InvalidInputError(f"Expected an (H, W, 3) array, got {array.shape}.")
        if array.dtype != np.uint8:
            array = np.clip(np.rint(array), 0, 255).astype(np.uint8)
        height, width, _ = array.shape
        return cls(asset_id, width, height, np.ascontiguousarray(array).tobytes())

    @classmethod
    def from_pil(cls, asset_id: str, image: Image.Image) -> "ImageAsset":
        """
        Build an asset from a Pillow image.

        :param asset_id: identifier of the asset.
        :param image: any Pillow image; converted to RGB.

        :return: the asset.
        """
        return cls.from_array(asset_id, np.asarray(image.convert("RGB")))

    def to_array(self) -> np.ndarray:
        """
        View the pixels as a read-only (H, W, 3) uint8 array.

        :return: the pixel array.
        """
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )

    def to_pil(self) -> Image.Image:
        """
        Convert to a Pillow RGB image.

        :return: the Pillow image.
        """
        return Image.fromarray(self.to_array())

    def with_id(self, asset_id: str) -> "ImageAsset":
        """
        Copy the asset under another identifier.

        :param asset_id: the new identifier.

        :return: the renamed asset.
        """
        return ImageAsset(asset_id, self.width, self.height, self.pixels)


def encode_png(image: ImageAsset) -> bytes:
    """
    Encode an asset losslessly as PNG.

    :param image: the asset.

    :return: PNG bytes.
    """
    buffer = io.BytesIO()
    image.to_pil().save(buffer, format="PNG", optimize=False)
    return buffer.getvalue()


def decode_image(asset_id: str, data: bytes) -> ImageAsset:
    """
    Decode raster bytes in any Pillow-supported format.

    :param asset_id: identifier to give the asset.
    :param data: encoded image bytes.

    :return: the asset.

    :raises InvalidInputError: if the bytes are not a decodable image.
    """
    try:
        with Image.open(io.BytesIO(data)) as image:
            return ImageAsset.from_pil(asset_id, image)
    except (OSError, SyntaxError) as e:
        raise InvalidInputError(f"Cannot decode image {asset_id}: {e}") from e


def load_image(
    path: Union[str, Path], asset_id: Optional[str] = None
) -> ImageAsset:
    """
    Load an image file.

    :param path: path to a raster file.
    :param asset_id: identifier; defaults to the file stem.

    :return: the asset.
    """
    path = Path(path)
    return decode_image(asset_id or path.stem, path.read_bytes())


def save_image(image: ImageAsset, path: Union[str, Path]) -> None:
    """
    Save an asset as PNG.

    :param image: the asset.
    :param path: destination file.
    """
    Path(path).write_bytes(encode_png(image))
