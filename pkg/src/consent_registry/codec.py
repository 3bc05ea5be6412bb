"""Wire formats shared by registry contracts and off-chain indexers."""

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from consent_registry.errors import InvalidInputError
from consent_registry.fixedpoint import FixedPointVector, similarities
from consent_registry.ledger import decode_words, encode_words


class KeyEncoding(enum.Enum):
    """How a fingerprint key travels in calldata and events."""

    INT_ARRAY = "int-array"
    STRING = "string"

    @property
    def flag(self) -> int:
        """
        One-byte wire flag.

        :return: 0 for int-array, 1 for string.
        """
        return 0 if self is KeyEncoding.INT_ARRAY else 1

    @classmethod
    def from_flag(cls, flag: int) -> "KeyEncoding":
        """
        Look up an encoding by wire flag.

        :param flag: the flag byte.

        :return: the encoding.

        :raises InvalidInputError: for an unknown flag.
        """
        for encoding in cls:
            if encoding.flag == flag:
                return encoding
        raise InvalidInputError(f"Unknown key encoding flag {flag}.")


def encode_key(vector: FixedPointVector, encoding: KeyEncoding) -> bytes:
    """
    Encode a key.

    :param vector: the fixed-point key.
    :param encoding: 32-byte words or comma-separated decimals.

    :return: the key bytes.
    """
    if encoding is KeyEncoding.INT_ARRAY:
        return encode_words(vector.values)
    return vector.to_string().encode("ascii")


def decode_key(data: bytes, encoding: KeyEncoding) -> FixedPointVector:
    """
    Decode a key.

    :param data: the key bytes.
    :param encoding: how they were encoded.

    :return: the fixed-point key.

    :raises InvalidInputError: if the bytes are malformed.
    """
    if encoding is KeyEncoding.INT_ARRAY:
        return FixedPointVector(decode_words(data))
    try:
        return FixedPointVector.from_string(data.decode("ascii"))
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"Non-ASCII string key: {e}") from e


def key_topic(vector: FixedPointVector) -> bytes:
    """
    Event topic identifying a key.

    :param vector: the key.

    :return: SHA-256 of the key's little-endian int64 bytes.
    """
    return hashlib.sha256(vector.to_bytes()).digest()


@dataclass(frozen=True)
class IngestPayload:
    """A decoded ingest payload."""

    encoding: KeyEncoding
    key: FixedPointVector
    uri: str


def encode_key_payload(vector: FixedPointVector, encoding: KeyEncoding) -> bytes:
    """
    Flag byte, u32 LE key length, key bytes.

    :param vector: the key.
    :param encoding: the key encoding.

    :return: the payload.
    """
    key = encode_key(vector, encoding)
    return struct.pack("<BI", encoding.flag, len(key)) + key


def encode_ingest_payload(
    vector: FixedPointVector, uri: str, encoding: KeyEncoding
) -> bytes:
    """
    Key payload followed by u32 LE URI length and the UTF-8 URI.

    :param vector: the key.
    :param uri: manifest URI.
    :param encoding: the key encoding.

    :return: the payload carried in ingest calldata and events.

    :raises InvalidInputError: for an empty URI.
    """
    if not uri:
        raise InvalidInputError("A shard entry needs a URI.")
    raw = uri.encode("utf-8")
    return (
        encode_key_payload(vector, encoding) + struct.pack("<I", len(raw)) + raw
    )


def decode_key_payload(data: bytes) -> Tuple[KeyEncoding, FixedPointVector, int]:
    """
    Decode a key payload at the start of a buffer.

    :param data: the buffer.

    :return: encoding, key and the offset just past the key.

    :raises InvalidInputError: if the buffer is malformed.
    """
    try:
        flag, length = struct.unpack_from("<BI", data, 0)
    except struct.error as e:
        raise InvalidInputError("Truncated key payload.") from e
    end = 5 + length
    if end > len(data):
        raise InvalidInputError("Truncated key bytes.")
    encoding = KeyEncoding.from_flag(flag)
    return encoding, decode_key(data[5:end], encoding), end


def decode_ingest_payload(data: bytes) -> IngestPayload:
    """
    Decode an ingest payload.

    :param data: the payload.

    :return: the decoded payload.

    :raises InvalidInputError: if the payload is malformed or the URI empty.
    """
    encoding, key, offset = decode_key_payload(data)
    try:
        (length,) = struct.unpack_from("<I", data, offset)
    except struct.error as e:
        raise InvalidInputError("Truncated URI length.") from e
    raw = data[offset + 4 :]
    if len(raw) != length or not length:
        raise InvalidInputError("URI length does not match payload.")
    try:
        uri = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise InvalidInputError(f"URI is not UTF-8: {e}") from e
    return IngestPayload(encoding, key, uri)


@dataclass(frozen=True)
class ShardEntry:
    """A fingerprint key and the manifest URI it resolves to."""

    key: FixedPointVector
    uri: str


@dataclass(frozen=True)
class Candidate:
    """A ranked search hit."""

    uri: str
    similarity: int
    order: int


def rank(
    query: FixedPointVector, keys: np.ndarray, uris: Sequence[str], top_k: int
) -> List[Candidate]:
    """
    Exhaustive scan of a shard.

    :param query: the query key.
    :param keys: (N, D) int64 key matrix in ingest order.
    :param uris: URI per key.
    :param top_k: candidates to keep.

    :return: up to ``top_k`` candidates, by similarity descending then ingest
        order.
    """
    if not len(uris) or top_k < 1:
        return []
    scores = similarities(query, keys)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:top_k]
    return [Candidate(uris[i], scores[i], i) for i in order]


def encode_candidates(candidates: Sequence[Candidate]) -> bytes:
    """
    Encode search results returned by an on-chain scan.

    :param candidates: the candidates.

    :return: u32 count, then per candidate i64 similarity, u32 order, u32 URI
        length and the URI.
    """
    chunks = [struct.pack("<I", len(candidates))]
    for c in candidates:
        raw = c.uri.encode("utf-8")
        chunks.append(struct.pack("<qII", c.similarity, c.order, len(raw)) + raw)
    return b"".join(chunks)


def decode_candidates(data: bytes) -> List[Candidate]:
    """
    Decode search results.

    :param data: bytes from :func:`encode_candidates`.

    :return: the candidates.
    """
    (count,) = struct.unpack_from("<I", data, 0)
    offset = 4
    candidates = []
    for _ in range(count):
        similarity, order, length = struct.unpack_from("<qII", data, offset)
        offset += 16
        uri = data[offset : offset + length].decode("utf-8")
        offset += length
        candidates.append(Candidate(uri, similarity, order))
    return candidates
