"""Pair-wise match verification and credit weights.

Two images are compared through window-pooled descriptors of their spatial
feature maps. Every window of one image is correlated with every window of
the other and an MLP reads the flattened correlation matrix in both
directions, which makes the score symmetric.
"""

import hashlib
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from consent_registry.constants import FEATURE_DEPTH, FEATURE_GRID, WINDOW_COUNT
from consent_registry.errors import ConfigurationError, InvalidInputError
from consent_registry.imaging import ImageAsset

logger = logging.getLogger(__name__)

WORKING_SIDE = 64
RAW_CELL_FEATURES = 17
LOGIT_CLIP = 30.0
BCE_EPSILON = 1e-9
# Weights are multiples of 2^-53, so any partial sum of them is exact.
WEIGHT_UNITS = 1 << 53
WEIGHTS_MAGIC = b"CRMW"
WEIGHTS_VERSION = 1

# Window side as a fraction of the grid, with positions per axis (rows, cols).
WINDOW_SCALES = (
    (1.0, 1, 1),
    (0.5, 3, 3),
    (0.375, 4, 5),
    (0.25, 5, 5),
)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """An H x W grid of D-channel descriptors."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise InvalidInputError(f"Feature map must be 3-D, got {values.shape}.")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("Feature map values must be finite.")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        """
        Grid rows.

        :return: H.
        """
        return self.values.shape[0]

    @property
    def width(self) -> int:
        """
        Grid columns.

        :return: W.
        """
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        """
        Channels.

        :return: D.
        """
        return self.values.shape[2]


@dataclass(frozen=True, order=True)
class Window:
    """A rectangle of grid cells."""

    scale: int
    row: int
    col: int
    height: int
    width: int


@dataclass(frozen=True, eq=False)
class PooledMatrix:
    """One unit-norm descriptor per window, in window order."""

    rows: np.ndarray
    degenerate: Tuple[bool, ...] = ()


# Feature maps


def _cell_means(plane: np.ndarray, cells: int) -> np.ndarray:
    side = plane.shape[0] // cells
    return plane.reshape(cells, side, cells, side).mean(axis=(1, 3))


def _sub_offsets(plane: np.ndarray) -> np.ndarray:
    """Offsets of each cell's 2x2 sub-blocks from the cell mean, (8, 8, 4)."""
    subs = _cell_means(plane, 2 * FEATURE_GRID)
    subs = subs.reshape(FEATURE_GRID, 2, FEATURE_GRID, 2).transpose(0, 2, 1, 3)
    subs = subs.reshape(FEATURE_GRID, FEATURE_GRID, 4)
    return subs - subs.mean(axis=2, keepdims=True)


def _cell_projection(seed: int, depth: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((RAW_CELL_FEATURES, depth)) / math.sqrt(
        RAW_CELL_FEATURES
    )


def extract_feature_map(
    image: ImageAsset, seed: int = 11, depth: int = FEATURE_DEPTH
) -> FeatureMap:
    """
    Compute the reference 8x8 spatial feature map of an image.

    Each cell is described by its colour relative to the whole image, the
    luma and chroma layout of its four sub-blocks and its mean edge strength.
    The 17 raw values are lifted to ``depth`` channels by a seeded random
    projection followed by a ReLU.

    :param image: the image.
    :param seed: projection seed.
    :param depth: number of channels.

    :return: the feature map.
    """
    resized = image.to_pil().resize(
        (WORKING_SIDE, WORKING_SIDE), Image.Resampling.BILINEAR
    )
    rgb = np.asarray(resized, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    luma = 0.299 * r + 0.587 * g + 0.114 * b
    planes = (luma, b - luma, r - luma)

    colour = np.stack(
        [_cell_means(p, FEATURE_GRID) - p.mean() for p in planes], axis=-1
    )
    gx = np.abs(np.diff(luma, axis=1, append=luma[:, -1:]))
    gy = np.abs(np.diff(luma, axis=0, append=luma[-1:, :]))
    edges = np.stack(
        [_cell_means(e, FEATURE_GRID) - e.mean() for e in (gx, gy)], axis=-1
    )
    raw = np.concatenate(
        [
            2.0 * colour,
            4.0 * _sub_offsets(luma),
            edges,
            _sub_offsets(planes[1]),
            _sub_offsets(planes[2]),
        ],
        axis=-1,
    )
    return FeatureMap(np.maximum(raw @ _cell_projection(seed, depth), 0.0))


# Windows and pooling


def _positions(extent: int, size: int, count: int) -> List[int]:
    return sorted({int(p) for p in np.rint(np.linspace(0, extent - size, count))})


def enumerate_windows(height: int, width: int) -> List[Window]:
    """
    Enumerate the pooling windows of a grid.

    Four scales: the full grid, a 3x3 grid of half-size windows, 4x5
    positions of 3/8-size windows and 5x5 positions of quarter-size windows.
    Positions are evenly spaced and rounded half to even. An 8x8 grid yields
    55 windows.

    :param height: grid rows.
    :param width: grid columns.

    :return: windows sorted by (scale, row, col); the full grid is first.

    :raises InvalidInputError: if either side is below 1.
    """
    if height < 1 or width < 1:
        raise InvalidInputError(f"Grid {height}x{width} has no cells.")
    windows = set()
    for scale, (fraction, n_rows, n_cols) in enumerate(WINDOW_SCALES):
        h = max(1, round(height * fraction))
        w = max(1, round(width * fraction))
        for row in _positions(height, h, n_rows):
            for col in _positions(width, w, n_cols):
                windows.add(Window(scale, row, col, h, w))
    return sorted(windows)


def gem_pool(values: np.ndarray, window: Window, p: float) -> np.ndarray:
    """
    Generalised-mean pool a window of a feature grid.

    Values are clamped to be non-negative first.

    :param values: (H, W, D) grid.
    :param window: the window.
    :param p: pooling power; 1 is the mean, large values approach the max.

    :return: the D-channel descriptor.

    :raises InvalidInputError: for p <= 0 or an empty or out-of-bounds window.
    """
    if not p > 0:
        raise InvalidInputError("GeM power must be positive.")
    if (
        window.height < 1
        or window.width < 1
        or window.row < 0
        or window.col < 0
        or window.row + window.height > values.shape[0]
        or window.col + window.width > values.shape[1]
    ):
        raise InvalidInputError(f"Window {window} is empty or out of bounds.")
    region = np.maximum(
        values[
            window.row : window.row + window.height,
            window.col : window.col + window.width,
        ],
        0.0,
    ).reshape(-1, values.shape[2])
    peak = region.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    pooled = safe * np.mean((region / safe) ** p, axis=0) ** (1.0 / p)
    return np.where(peak > 0, pooled, 0.0)


# Weights


@dataclass(frozen=True, eq=False)
class ScorerWeights:
    """Projection, MLP layers and pooling power of the verifier."""

    projection: np.ndarray
    layers: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    gem_power: float = 3.0
    feature_seed: int = 11

    def __post_init__(self):
        if not self.gem_power > 0:
            raise ConfigurationError("GeM power must be positive.")
        if self.projection.ndim != 2:
            raise ConfigurationError("Projection must be a matrix.")
        if not self.layers:
            raise ConfigurationError("The MLP needs at least one layer.")
        fan_in = self.layers[0][0].shape[0]
        for weights, bias in self.layers:
            if weights.shape[0] != fan_in or bias.shape != (weights.shape[1],):
                raise ConfigurationError(
                    f"Layer {weights.shape} / {bias.shape} does not follow "
                    f"a layer of width {fan_in}."
                )
            fan_in = weights.shape[1]
        if fan_in != 1:
            raise ConfigurationError("The last layer must have one output.")

    @property
    def depth(self) -> int:
        """
        Feature-map channels expected.

        :return: D.
        """
        return self.projection.shape[0]

    @property
    def input_size(self) -> int:
        """
        Length of the flattened correlation matrix.

        :return: |W|^2.
        """
        return self.layers[0][0].shape[0]

    def mlp(self, x: np.ndarray) -> float:
        """
        Evaluate the MLP with ReLU between layers.

        :param x: flattened correlation matrix.

        :return: the scalar output.
        """
        for i, (weights, bias) in enumerate(self.layers):
            x = x @ weights + bias
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return float(x[0])


def _orthonormal(seed: int, rows: int, cols: int) -> np.ndarray:
    basis, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((rows, cols)))
    return basis


# pylint: disable=too-many-arguments
def random_weights(
    seed: int,
    depth: int = FEATURE_DEPTH,
    windows: int = WINDOW_COUNT,
    hidden: Sequence[int] = (512, 128),
    gem_power: float = 3.0,
    feature_seed: int = 11,
) -> ScorerWeights:
    """
    Randomly initialised weights (He normal, zero biases).

    :param seed: initialisation seed.
    :param depth: feature-map channels.
    :param windows: number of pooling windows.
    :param hidden: hidden layer widths.
    :param gem_power: GeM power.
    :param feature_seed: feature-map projection seed.

    :return: the weights.
    """
    rng = np.random.default_rng(seed)
    sizes = [windows * windows, *hidden, 1]
    layers = tuple(
        (
            rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in),
            np.zeros(fan_out),
        )
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    )
    return ScorerWeights(
        _orthonormal(seed + 1, depth, depth // 4), layers, gem_power, feature_seed
    )


# pylint: disable=too-many-arguments,too-many-positional-arguments
def analytic_weights(
    projection_seed: int = 7,
    slope: float = 25.0,
    offset: float = -1.5,
    depth: int = FEATURE_DEPTH,
    windows: int = WINDOW_COUNT,
    gem_power: float = 3.0,
    feature_seed: int = 11,
) -> ScorerWeights:
    """
    Reference weights that score the window-aligned correlation.

    The first layer computes t = mean diagonal minus mean off-diagonal of the
    correlation matrix into two units holding ReLU(t) and ReLU(-t); the
    second passes them through and the last outputs ``slope * t + offset``.

    :param projection_seed: seed of the orthonormal projection.
    :param slope: gain on t.
    :param offset: bias of each direction's output.
    :param depth: feature-map channels.
    :param windows: number of pooling windows.
    :param gem_power: GeM power.
    :param feature_seed: feature-map projection seed.

    :return: the weights, shaped |W|^2 -> 512 -> 128 -> 1.
    """
    n = windows
    contrast = np.full((n, n), -1.0 / (n * (n - 1)) if n > 1 else 0.0)
    np.fill_diagonal(contrast, 1.0 / n)
    first = np.zeros((n * n, 512))
    first[:, 0] = contrast.ravel()
    first[:, 1] = -contrast.ravel()
    second = np.zeros((512, 128))
    second[0, 0] = 1.0
    second[1, 1] = 1.0
    last = np.zeros((128, 1))
    last[0, 0] = slope
    last[1, 0] = -slope
    layers = (
        (first, np.zeros(512)),
        (second, np.zeros(128)),
        (last, np.array([offset])),
    )
    return ScorerWeights(
        _orthonormal(projection_seed, depth, depth // 4),
        layers,
        gem_power,
        feature_seed,
    )


def save_weights(weights: ScorerWeights, path: Union[str, Path]) -> None:
    """
    Write weights in the versioned binary format.

    Header: magic, u16 version, u32 depth, u32 reduced depth, u32 windows,
    f32 GeM power, u32 feature seed, u32 layer count, u32 pairs of layer
    dimensions. Then every array as little-endian float32, row-major:
    projection, then each layer's weights and bias.

    :param weights: the weights.
    :param path: destination file.
    """
    windows = math.isqrt(weights.input_size)
    header = [
        WEIGHTS_MAGIC,
        struct.pack(
            "<HIIIfII",
            WEIGHTS_VERSION,
            weights.projection.shape[0],
            weights.projection.shape[1],
            windows,
            weights.gem_power,
            weights.feature_seed,
            len(weights.layers),
        ),
    ]
    for layer, _ in weights.layers:
        header.append(struct.pack("<II", *layer.shape))
    arrays = [weights.projection] + [a for layer in weights.layers for a in layer]
    body = [np.asarray(a, dtype="<f4").tobytes() for a in arrays]
    Path(path).write_bytes(b"".join(header + body))


def load_weights(path: Union[str, Path]) -> ScorerWeights:
    """
    Read weights written by :func:`save_weights`.

    :param path: the weights file.

    :return: the weights, in double precision.

    :raises ConfigurationError: on a bad magic, version or size.
    """
    data = Path(path).read_bytes()
    if not data.startswith(WEIGHTS_MAGIC):
        raise ConfigurationError(f"{path} is not a weights file.")
    head = struct.Struct("<HIIIfII")
    try:
        version, depth, reduced, windows, power, feature_seed, count = (
            head.unpack_from(data, len(WEIGHTS_MAGIC))
        )
        offset = len(WEIGHTS_MAGIC) + head.size
        shapes = []
        for _ in range(count):
            shapes.append(struct.unpack_from("<II", data, offset))
            offset += 8
    except struct.error as e:
        raise ConfigurationError(f"Truncated weights header in {path}.") from e
    if version != WEIGHTS_VERSION:
        raise ConfigurationError(f"Unsupported weights version {version}.")

    def take(shape: Tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        size = int(np.prod(shape)) * 4
        chunk = data[offset : offset + size]
        if len(chunk) != size:
            raise ConfigurationError(f"Truncated weights body in {path}.")
        offset += size
        return np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)

    projection = take((depth, reduced))
    layers = tuple((take(shape), take((shape[1],))) for shape in shapes)
    if offset != len(data):
        raise ConfigurationError(f"Trailing bytes in weights file {path}.")
    weights = ScorerWeights(projection, layers, float(power), feature_seed)
    if weights.input_size != windows * windows:
        raise ConfigurationError("Weights file window count disagrees with layers.")
    return weights


def weights_from_settings(settings: Any) -> ScorerWeights:
    """
    Scorer weights named by matchnet settings.

    :param settings: matchnet settings; ``weights_file`` wins over the
        analytic reference when set.

    :return: the weights.

    :raises ConfigurationError: if the weights file is unusable.
    """
    if settings.weights_file:
        return load_weights(settings.weights_file)
    return analytic_weights(
        settings.projection_seed,
        settings.analytic_slope,
        settings.analytic_offset,
        gem_power=settings.gem_power,
        feature_seed=settings.feature_seed,
    )


# Scoring


def pooled_matrix(feature_map: FeatureMap, weights: ScorerWeights) -> PooledMatrix:
    """
    Pool a feature map into one reduced descriptor per window.

    The map is projected to D/4 channels, clamped to be non-negative, GeM
    pooled over each window and each row normalised. A row with zero norm is
    left at zero and flagged as degenerate.

    :param feature_map: the feature map.
    :param weights: supplies the projection and GeM power.

    :return: the pooled matrix.

    :raises ConfigurationError: if the map depth does not match the weights.
    """
    if feature_map.depth != weights.depth:
        raise ConfigurationError(
            f"Feature depth {feature_map.depth} does not match weights "
            f"depth {weights.depth}."
        )
    reduced = np.maximum(feature_map.values @ weights.projection, 0.0)
    windows = enumerate_windows(feature_map.height, feature_map.width)
    rows = np.vstack([gem_pool(reduced, w, weights.gem_power) for w in windows])
    norms = np.linalg.norm(rows, axis=1)
    degenerate = norms == 0
    rows = np.where(
        degenerate[:, np.newaxis],
        0.0,
        rows / np.where(degenerate, 1.0, norms)[:, np.newaxis],
    )
    if degenerate.any():
        logger.debug("%d degenerate pooling windows", int(degenerate.sum()))
    return PooledMatrix(rows, tuple(bool(d) for d in degenerate))


def correlation(a: PooledMatrix, b: PooledMatrix) -> np.ndarray:
    """
    Correlate every window of one matrix with every window of another.

    Each entry is summed in the same order whichever argument comes first,
    so ``correlation(a, b)`` is exactly ``correlation(b, a).T``.

    :param a: first pooled matrix.
    :param b: second pooled matrix.

    :return: the |W| x |W| matrix a . b^T.

    :raises InvalidInputError: if the row dimensions differ.
    """
    if a.rows.shape[1] != b.rows.shape[1]:
        raise InvalidInputError("Pooled matrices have different row dimensions.")
    return (a.rows[:, np.newaxis, :] * b.rows[np.newaxis, :, :]).sum(axis=-1)


def sigmoid(x: float) -> float:
    """
    Logistic function with the input clipped to +-30.

    :param x: the logit.

    :return: a value strictly inside (0, 1).
    """
    x = min(max(x, -LOGIT_CLIP), LOGIT_CLIP)
    return 1.0 / (1.0 + math.exp(-x))


def score_pooled(a: PooledMatrix, b: PooledMatrix, weights: ScorerWeights) -> float:
    """
    Match score of two pooled matrices.

    :param a: first pooled matrix.
    :param b: second pooled matrix.
    :param weights: the verifier weights.

    :return: sigmoid(mlp(C_ab) + mlp(C_ba)).

    :raises ConfigurationError: if the correlation size does not fit the MLP.
    """
    forward = correlation(a, b)
    if forward.size != weights.input_size:
        raise ConfigurationError(
            f"Correlation of size {forward.size} does not fit an MLP taking "
            f"{weights.input_size} inputs."
        )
    backward = correlation(b, a)
    return sigmoid(weights.mlp(forward.ravel()) + weights.mlp(backward.ravel()))


def image_digest(image: ImageAsset) -> str:
    """
    Content digest of an image's pixels and dimensions.

    :param image: the image.

    :return: hex SHA-256.
    """
    digest = hashlib.sha256(struct.pack("<II", image.width, image.height))
    digest.update(image.pixels)
    return digest.hexdigest()


class PooledMatrixCache:
    """Least-recently-used pooled matrices of images, for one set of weights."""

    def __init__(self, weights: ScorerWeights, maxsize: int = 256):
        self.weights = weights
        self.maxsize = maxsize
        self._entries: "OrderedDict[str, PooledMatrix]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, image: ImageAsset) -> PooledMatrix:
        """
        Pooled matrix of an image, computed on a miss.

        :param image: the image.

        :return: the pooled matrix.
        """
        key = image_digest(image)
        cached = self._entries.get(key)
        if cached is not None:
            self._entries.move_to_end(key)
            self.hits += 1
            return cached
        self.misses += 1
        pooled = pooled_matrix(
            extract_feature_map(
                image, self.weights.feature_seed, self.weights.depth
            ),
            self.weights,
        )
        self._entries[key] = pooled
        if len(self._entries) > self.maxsize:
            self._entries.popitem(last=False)
        return pooled


def apportion_score(
    xq: ImageAsset,
    xi: ImageAsset,
    weights: ScorerWeights,
    cache: Optional[PooledMatrixCache] = None,
) -> float:
    """
    Symmetric match score of two images.

    :param xq: the query image.
    :param xi: the candidate image.
    :param weights: the verifier weights.
    :param cache: optional pooled-matrix cache built for ``weights``.

    :return: a score strictly inside (0, 1).
    """
    if cache is not None and cache.weights is weights:
        a, b = cache.get(xq), cache.get(xi)
    else:
        a, b = (
            pooled_matrix(
                extract_feature_map(image, weights.feature_seed, weights.depth),
                weights,
            )
            for image in (xq, xi)
        )
    return score_pooled(a, b, weights)


# Losses and weights


def bce_loss(
    predictions: Sequence[float], labels: Sequence[int]
) -> Tuple[float, np.ndarray]:
    """
    Mean binary cross-entropy and its gradient.

    Predictions are clamped to [1e-9, 1 - 1e-9].

    :param predictions: predicted probabilities in [0, 1].
    :param labels: 0 or 1 per prediction.

    :return: the loss and d loss / d predictions.

    :raises InvalidInputError: for empty or mismatched inputs.
    """
    if not len(predictions) or len(predictions) != len(labels):
        raise InvalidInputError("Predictions and labels must be non-empty and equal.")
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any((y != 0) & (y != 1)):
        raise InvalidInputError("Predictions must lie in [0, 1] and labels in {0, 1}.")
    p = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p)) / n
    return float(loss), grad


def largest_remainder(
    weights: Sequence[float], budget: int, keys: Optional[Sequence[str]] = None
) -> List[int]:
    """
    Split an integer budget in proportion to weights.

    Each share is first rounded down; leftover units go one each to the
    largest remainders, ties to the lower key.

    :param weights: non-negative weights.
    :param budget: units to split.
    :param keys: tie-break keys; positions when omitted.

    :return: integer amounts summing to ``budget``, or all zero when every
        weight is zero.

    :raises InvalidInputError: for a negative budget or weight.
    """
    if budget < 0 or any(w < 0 for w in weights):
        raise InvalidInputError("Budget and weights must be non-negative.")
    exact = [Fraction(w) for w in weights]
    total = sum(exact, Fraction(0))
    if total == 0:
        return [0] * len(weights)
    if keys is None:
        keys = [f"{i:012d}" for i in range(len(weights))]
    quotas = [w * budget / total for w in exact]
    amounts = [math.floor(q) for q in quotas]
    leftover = budget - sum(amounts)
    order = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i] - amounts[i]), keys[i])
    )
    for i in order[:leftover]:
        amounts[i] += 1
    return amounts


def apportionment_weights(scores: Sequence[float], lam: float = 0.7) -> List[float]:
    """
    Credit weights from match scores.

    Each weight is proportional to ``max(score - lam, 0)``. When any is
    positive the weights are split by largest remainder over 2^53 units, so
    they sum to exactly one in any order; otherwise all stay zero.

    :param scores: match scores in [0, 1].
    :param lam: threshold in [0, 1).

    :return: one weight per score.

    :raises InvalidInputError: for a threshold or score out of range.
    """
    if not 0 <= lam < 1:
        raise InvalidInputError(f"Threshold {lam} must lie in [0, 1).")
    if any(not 0 <= s <= 1 for s in scores):
        raise InvalidInputError("Scores must lie in [0, 1].")
    raw = [max(s - lam, 0.0) for s in scores]
    return [units / WEIGHT_UNITS for units in largest_remainder(raw, WEIGHT_UNITS)]


@dataclass(frozen=True)
class ScoreRecord:
    """One line of a score report."""

    query_id: str
    candidate_id: str
    score: float
    weight: float


def write_score_report(path: Union[str, Path], records: Iterable[ScoreRecord]) -> None:
    """
    Write a score report, one JSON object per line.

    :param path: destination file.
    :param records: the records.
    """
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(
                json.dumps(
                    {
                        "query_id": record.query_id,
                        "candidate_id": record.candidate_id,
                        "score": record.score,
                        "weight": record.weight,
                    }
                )
                + "\n"
            )


def read_score_report(path: Union[str, Path]) -> List[ScoreRecord]:
    """
    Read a score report.

    :param path: the report.

    :return: the records.
    """
    with open(path, "r", encoding="utf-8") as f:
        return [ScoreRecord(**json.loads(line)) for line in f if line.strip()]
