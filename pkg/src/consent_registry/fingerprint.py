"""Content fingerprints.

A fingerprint is a unit-norm embedding of an image. The shipped encoder is a
deterministic surrogate built from colour layout and multi-scale edge energy;
any object with the :class:`FingerprintEncoder` shape can replace it.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from consent_registry.constants import FINGERPRINT_DIM
from consent_registry.errors import InvalidInputError
from consent_registry.imaging import ImageAsset

logger = logging.getLogger(__name__)

WORKING_SIDE = 64
GRID = 8
GRADIENT_SCALES = (64, 32, 16)
GROUP_NORM_FLOOR = 0.1
GROUP_BIAS = 0.05
UNIT_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """A real-valued embedding, unit norm when produced by an encoder."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise InvalidInputError("A fingerprint must be a non-empty vector.")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Fingerprint components must be finite.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Fingerprint) and np.array_equal(
            self.values, other.values
        )

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    @property
    def dim(self) -> int:
        """
        Number of components.

        :return: the dimension.
        """
        return int(self.values.size)

    @property
    def norm(self) -> float:
        """
        Euclidean norm.

        :return: the norm.
        """
        return float(np.linalg.norm(self.values))

    def is_unit(self, tolerance: float = UNIT_TOLERANCE) -> bool:
        """
        Whether the norm is one within ``tolerance``.

        :param tolerance: allowed deviation.

        :return: True for a unit vector.
        """
        return abs(self.norm - 1.0) <= tolerance

    def cosine(self, other: "Fingerprint") -> float:
        """
        Cosine similarity in double precision.

        :param other: the other fingerprint.

        :return: the cosine of the angle between the two.
        """
        denominator = self.norm * other.norm
        if denominator == 0.0:
            return 0.0
        return float(np.dot(self.values, other.values) / denominator)


def normalize(values: np.ndarray) -> Fingerprint:
    """
    Scale a vector to unit norm.

    :param values: the raw vector.

    :return: the unit fingerprint.

    :raises InvalidInputError: if the vector has zero norm.
    """
    values = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(values)
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidInputError("Cannot normalise a zero or non-finite vector.")
    return Fingerprint(values / norm)


class FingerprintEncoder(Protocol):
    """Anything that turns an image into a fingerprint."""

    dim: int

    def encode(self, image: ImageAsset) -> Fingerprint:
        """Encode an image."""


def _block_mean(plane: np.ndarray, cells: int) -> np.ndarray:
    side = plane.shape[0] // cells
    return plane.reshape(cells, side, cells, side).mean(axis=(1, 3))


def _gradient_energy(plane: np.ndarray, axis: int) -> np.ndarray:
    edge = plane[:, -1:] if axis == 1 else plane[-1:, :]
    gradient = np.diff(plane, axis=axis, append=edge)
    return np.sqrt(_block_mean(gradient**2, GRID))


def _group(values: np.ndarray) -> np.ndarray:
    values = values.ravel() - values.mean()
    values = values / max(float(np.linalg.norm(values)), GROUP_NORM_FLOOR)
    return np.append(values, GROUP_BIAS)


class SurrogateEncoder:
    """
    Deterministic fingerprinter.

    The image is resampled to 64x64 and split into luma and two chroma
    differences. Features are the 8x8 block means of each plane and the RMS
    horizontal and vertical gradient energy of luma at three scales. Every
    feature group is centred and scaled on its own, and the concatenation is
    projected through a seeded orthonormal matrix and normalised.
    """

    def __init__(self, seed: int, dim: int = FINGERPRINT_DIM):
        self.seed = seed
        self.dim = dim
        n_features = (3 + 2 * len(GRADIENT_SCALES)) * (GRID * GRID + 1)
        if dim > n_features:
            raise InvalidInputError(
                f"Cannot project {n_features} features onto {dim} dimensions."
            )
        rng = np.random.default_rng(seed)
        basis, _ = np.linalg.qr(rng.standard_normal((n_features, dim)))
        self._projection = basis

    def features(self, image: ImageAsset) -> np.ndarray:
        """
        Raw feature vector before projection.

        :param image: the image.

        :return: the concatenated feature groups.
        """
        resized = image.to_pil().resize(
            (WORKING_SIDE, WORKING_SIDE), Image.Resampling.BILINEAR
        )
        rgb = np.asarray(resized, dtype=np.float64) / 255.0
        r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
        luma = 0.299 * r + 0.587 * g + 0.114 * b
        groups = [
            _group(_block_mean(plane, GRID)) for plane in (luma, b - luma, r - luma)
        ]
        for scale in GRADIENT_SCALES:
            plane = _block_mean(luma, scale) if scale != WORKING_SIDE else luma
            groups.append(_group(_gradient_energy(plane, axis=1)))
            groups.append(_group(_gradient_energy(plane, axis=0)))
        return np.concatenate(groups)

    def encode(self, image: ImageAsset) -> Fingerprint:
        """
        Fingerprint an image.

        :param image: the image.

        :return: the unit-norm fingerprint.
        """
        return normalize(self.features(image) @ self._projection)


@functools.lru_cache(maxsize=8)
def default_encoder(seed: int) -> SurrogateEncoder:
    """
    Shared surrogate encoder for a seed.

    :param seed: projection seed.

    :return: the encoder.
    """
    return SurrogateEncoder(seed)


def compute_fingerprint(
    image: ImageAsset,
    encoder: Optional[FingerprintEncoder] = None,
    seed: int = 20230917,
) -> Fingerprint:
    """
    Compute the fingerprint of an image.

    :param image: the image; both sides at least 8 pixels.
    :param encoder: alternative encoder; defaults to the surrogate.
    :param seed: projection seed of the default encoder.

    :return: the unit-norm fingerprint.
    """
    encoder = encoder or default_encoder(seed)
    return encoder.encode(image)


@dataclass(frozen=True, eq=False)
class PcaProjection:
    """Linear dimension reduction fitted on a set of fingerprints."""

    mean: np.ndarray
    components: np.ndarray

    @property
    def dim(self) -> int:
        """
        Output dimension.

        :return: number of retained components.
        """
        return int(self.components.shape[0])

    def project(self, fp: Fingerprint) -> Fingerprint:
        """
        Project and renormalise a fingerprint.

        :param fp: a fingerprint of the fitted dimension.

        :return: the reduced unit fingerprint.
        """
        return normalize((fp.values - self.mean) @ self.components.T)


def fit_pca(fingerprints: Sequence[Fingerprint], dims: int) -> PcaProjection:
    """
    Fit a PCA projection.

    Component signs are fixed so that the largest-magnitude entry of each
    component is positive.

    :param fingerprints: training fingerprints.
    :param dims: number of components to keep.

    :return: the projection.

    :raises InvalidInputError: if there are too few fingerprints.
    """
    if not fingerprints:
        raise InvalidInputError("Cannot fit a projection on no fingerprints.")
    data = np.vstack([fp.values for fp in fingerprints])
    if dims < 1 or dims > data.shape[1]:
        raise InvalidInputError(f"Cannot keep {dims} of {data.shape[1]} dimensions.")
    if dims > data.shape[0]:
        raise InvalidInputError(
            f"Need at least {dims} fingerprints to keep {dims} components."
        )
    mean = data.mean(axis=0)
    _, _, vt = np.linalg.svd(data - mean, full_matrices=False)
    components = vt[:dims]
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(dims), pivots])
    components = components * signs[:, np.newaxis]
    logger.debug("Fitted PCA projection to %d dimensions", dims)
    return PcaProjection(mean=mean, components=components)
