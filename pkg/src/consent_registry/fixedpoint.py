"""Fixed-point fingerprint vectors and exact integer similarity.

Components are signed integers at scale 10^15. Dot products of two such vectors
reach 256 * 10^30, far beyond 64 bits, so every product is formed from 25-bit
limbs whose partial sums fit int64, and the limbs are recombined with Python
integers.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from consent_registry.constants import FINGERPRINT_DIM, FIXED_POINT_SCALE
from consent_registry.errors import CorruptionError, InvalidInputError
from consent_registry.fingerprint import Fingerprint

LIMB_BITS = 25
LIMB_MASK = (1 << LIMB_BITS) - 1
# |x| < 2^50 keeps every limb within 2^25, so each middle term stays within
# 2^51 and sums of up to 2^11 terms stay within 2^62.
LIMB_SAFE_BOUND = 1 << (2 * LIMB_BITS)
MAX_LIMB_TERMS = 1 << 11


@dataclass(frozen=True, eq=False)
class FixedPointVector:
    """Signed integers encoding real values at scale 10^15."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64)
        if values.ndim != 1 or values.size == 0:
            raise InvalidInputError("A fixed-point vector must be one-dimensional.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FixedPointVector) and np.array_equal(
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

    def to_bytes(self) -> bytes:
        """
        Little-endian signed 64-bit encoding.

        :return: 8 bytes per component.
        """
        return self.values.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FixedPointVector":
        """
        Decode the little-endian signed 64-bit encoding.

        :param data: 8 bytes per component.

        :return: the vector.

        :raises InvalidInputError: if the length is not a multiple of 8.
        """
        if len(data) % 8:
            raise InvalidInputError("Fixed-point bytes must be a multiple of 8 long.")
        return cls(np.frombuffer(data, dtype="<i8"))

    def to_string(self) -> str:
        """
        Comma-separated decimal encoding.

        :return: the decimal string.
        """
        return ",".join(str(int(v)) for v in self.values)

    @classmethod
    def from_string(cls, text: str) -> "FixedPointVector":
        """
        Decode the comma-separated decimal encoding.

        :param text: the decimal string.

        :return: the vector.

        :raises InvalidInputError: if a component is not an integer.
        """
        try:
            parts = [int(part) for part in text.split(",")]
            return cls(np.array(parts, dtype=np.int64))
        except (ValueError, OverflowError) as e:
            raise InvalidInputError(f"Malformed fixed-point string: {e}") from e


def to_fixed_point(fp: Fingerprint) -> FixedPointVector:
    """
    Encode a fingerprint at scale 10^15, rounding ties to even.

    :param fp: the fingerprint.

    :return: the fixed-point vector.

    :raises InvalidInputError: if a component is not finite.
    """
    values = np.asarray(fp.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Cannot encode a non-finite component.")
    scaled = np.rint(values * float(FIXED_POINT_SCALE))
    return FixedPointVector(scaled.astype(np.int64))


def from_fixed_point(v: FixedPointVector) -> Fingerprint:
    """
    Decode a fixed-point vector to reals.

    The result is not normalised; an all-zero vector decodes to zeros and it
    is up to the caller to reject it.

    :param v: the fixed-point vector.

    :return: the decoded fingerprint.
    """
    return Fingerprint(v.values.astype(np.float64) / float(FIXED_POINT_SCALE))


def round_half_even_div(numerator: int, denominator: int) -> int:
    """
    Divide integers, rounding the quotient half to even.

    :param numerator: dividend.
    :param denominator: positive divisor.

    :return: the rounded quotient.
    """
    quotient, remainder = divmod(numerator, denominator)
    twice = 2 * remainder
    if twice > denominator or (twice == denominator and quotient % 2):
        quotient += 1
    return quotient


def _split(values: np.ndarray) -> tuple:
    return values >> LIMB_BITS, values & LIMB_MASK


def _check_limb_bounds(*arrays: np.ndarray) -> None:
    for array in arrays:
        if array.ndim and array.shape[-1] > MAX_LIMB_TERMS:
            raise InvalidInputError(
                f"At most {MAX_LIMB_TERMS} terms fit exact int64 limb sums."
            )
        if array.size and int(np.max(np.abs(array))) >= LIMB_SAFE_BOUND:
            raise InvalidInputError(
                "Fixed-point component exceeds the exact-arithmetic bound 2^50."
            )


def raw_dot_products(query: np.ndarray, keys: np.ndarray) -> List[int]:
    """
    Exact integer dot products of one vector against many.

    :param query: int64 vector of length D.
    :param keys: int64 matrix of shape (N, D).

    :return: N exact (unbounded) Python integers.
    """
    query = np.asarray(query, dtype=np.int64)
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, query.size)
    _check_limb_bounds(query, keys)
    q_hi, q_lo = _split(query)
    k_hi, k_lo = _split(keys)
    high = k_hi @ q_hi
    middle = k_hi @ q_lo + k_lo @ q_hi
    low = k_lo @ q_lo
    shift = 2 * LIMB_BITS
    return [
        (int(h) << shift) + (int(m) << LIMB_BITS) + int(l)
        for h, m, l in zip(high.tolist(), middle.tolist(), low.tolist())
    ]


def similarities(query: FixedPointVector, keys: np.ndarray) -> List[int]:
    """
    Fixed-point similarities of one vector against the rows of a matrix.

    :param query: the query vector.
    :param keys: int64 matrix of shape (N, D).

    :return: N similarities at scale 10^15.

    :raises InvalidInputError: if the dimensions disagree.
    """
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size == 0:
        return []
    if keys.ndim != 2 or keys.shape[1] != query.dim:
        raise InvalidInputError(
            f"Key matrix shape {keys.shape} does not match dimension {query.dim}."
        )
    return [
        round_half_even_div(raw, FIXED_POINT_SCALE)
        for raw in raw_dot_products(query.values, keys)
    ]


def fixed_point_similarity(a: FixedPointVector, b: FixedPointVector) -> int:
    """
    Similarity of two fixed-point vectors at scale 10^15.

    Equals the cosine similarity when both encode unit vectors. Symmetric and
    deterministic; the same function serves on-chain and off-chain callers.

    :param a: first vector.
    :param b: second vector.

    :return: round(sum(a_i * b_i) / 10^15), ties to even.

    :raises InvalidInputError: if the dimensions disagree.
    """
    if a.dim != b.dim:
        raise InvalidInputError(f"Dimension mismatch: {a.dim} vs {b.dim}.")
    raw = raw_dot_products(a.values, b.values[np.newaxis, :])[0]
    return round_half_even_div(raw, FIXED_POINT_SCALE)


def nearest(scores: Sequence[int]) -> int:
    """
    Index of the highest score; ties go to the lowest index.

    :param scores: similarity scores.

    :return: the winning index.
    """
    best = 0
    for i, score in enumerate(scores):
        if score > scores[best]:
            best = i
    return best


def stack(vectors: Sequence[FixedPointVector]) -> np.ndarray:
    """
    Stack vectors into an (N, D) int64 matrix.

    :param vectors: vectors of equal dimension.

    :return: the matrix.
    """
    if not vectors:
        return np.zeros((0, 0), dtype=np.int64)
    return np.vstack([v.values for v in vectors]).astype(np.int64)


@dataclass(frozen=True)
class FingerprintRecord:
    """An asset identifier paired with its fixed-point fingerprint."""

    asset_id: str
    vector: FixedPointVector


def encode_records(records: Sequence[FingerprintRecord]) -> bytes:
    """
    Encode fingerprint export records.

    Each record is a little-endian u32 length, the UTF-8 asset identifier and
    the vector as little-endian signed 64-bit integers.

    :param records: records of equal dimension.

    :return: the concatenated records.
    """
    chunks = []
    for record in records:
        name = record.asset_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(record.vector.to_bytes())
    return b"".join(chunks)


def decode_records(
    data: bytes, dim: int = FINGERPRINT_DIM
) -> List[FingerprintRecord]:
    """
    Decode fingerprint export records.

    :param data: the concatenated records.
    :param dim: vector dimension of every record.

    :return: the records in file order.

    :raises CorruptionError: if the data is truncated.
    """
    records = []
    offset = 0
    width = 8 * dim
    while offset < len(data):
        if offset + 4 > len(data):
            raise CorruptionError("Truncated fingerprint record header.")
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + length + width
        if end > len(data):
            raise CorruptionError("Truncated fingerprint record.")
        asset_id = data[offset : offset + length].decode("utf-8")
        vector = FixedPointVector.from_bytes(data[offset + length : end])
        records.append(FingerprintRecord(asset_id, vector))
        offset = end
    return records


def write_records(
    path: Union[str, Path], records: Sequence[FingerprintRecord]
) -> None:
    """
    Write fingerprint export records to a file.

    :param path: destination file.
    :param records: the records.
    """
    Path(path).write_bytes(encode_records(records))


def read_records(
    path: Union[str, Path], dim: int = FINGERPRINT_DIM
) -> List[FingerprintRecord]:
    """
    Read fingerprint export records from a file.

    :param path: source file.
    :param dim: vector dimension of every record.

    :return: the records.
    """
    return decode_records(Path(path).read_bytes(), dim)
