"""Sharded fingerprint registry on the ledger.

A hero contract holds k-means centroids and routes every ingest to one of
``k`` shard contracts. Shards keep their entries either in contract storage
or in the event log, and queries predict the shard and scan it either
on-chain or off-chain, depending on the deployment variant.
"""

import enum
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from consent_registry.codec import (
    Candidate,
    KeyEncoding,
    decode_candidates,
    decode_ingest_payload,
    decode_key_payload,
    encode_candidates,
    encode_ingest_payload,
    encode_key_payload,
    key_topic,
    rank,
)
from consent_registry.constants import ADDRESS_SIZE
from consent_registry.errors import (
    CorruptionError,
    InvalidInputError,
    NotFoundError,
)
from consent_registry.fingerprint import Fingerprint
from consent_registry.fixedpoint import (
    FixedPointVector,
    nearest,
    similarities,
    stack,
    to_fixed_point,
)
from consent_registry.imaging import ImageAsset, decode_image
from consent_registry.indexer import OffChainShardIndex, sync_indexer
from consent_registry.ledger import (
    WORD_MAX,
    ContractHandler,
    ExecutionContext,
    Ledger,
    Receipt,
    decode_words,
    encode_words,
    pack_bytes,
    register_handler,
    unpack_bytes,
)
from consent_registry.manifest import Manifest
from consent_registry.matchnet import PooledMatrixCache, ScorerWeights, apportion_score
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
DEFAULT_TOLERANCE = 1e-6

# Hero storage layout.
HERO_K = 0
HERO_DIM = 1
HERO_VARIANT = 2
HERO_OWNER = 3
CENTROID_BASE = 16
SHARD_BASE = 1 << 128

# Shard storage layout.
SHARD_COUNT = 0
SHARD_HERO = 1
SHARD_DIM = 2
SHARD_ID = 3
ENTRY_BASE = 16
ENTRY_STRIDE = 512

_WORD_MODULUS = 1 << 256


class Variant(enum.Enum):
    """
    Where entries live and where query steps run.

    The first letter names the storage (Contract or Event log); the last two
    name where query-time shard prediction and within-shard retrieval run
    (On-chain or oFf-chain). Ingest-time shard prediction is always on-chain.
    """

    C_OOO = "C-OOO"
    E_OOF = "E-OOF"
    E_FOF = "E-FOF"

    @property
    def code(self) -> int:
        """
        Code recorded in hero storage.

        :return: position of the variant in declaration order.
        """
        return list(Variant).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Variant":
        """
        Look up a variant by its stored code.

        :param code: the code.

        :return: the variant.

        :raises InvalidInputError: for an unknown code.
        """
        variants = list(cls)
        if not 0 <= code < len(variants):
            raise InvalidInputError(f"Unknown variant code {code}.")
        return variants[code]

    @property
    def storage_on_chain(self) -> bool:
        """
        Whether entries live in contract storage.

        :return: True for contract storage, False for the event log.
        """
        return self.value[0] == "C"

    @property
    def query_prediction_on_chain(self) -> bool:
        """
        Whether query-time shard prediction runs in the hero contract.

        :return: True if on-chain.
        """
        return self.value[2] == "O"

    @property
    def retrieval_on_chain(self) -> bool:
        """
        Whether the within-shard scan runs in the shard contract.

        :return: True if on-chain.
        """
        return self.value[4] == "O"

    @property
    def shard_handler(self) -> str:
        """
        Handler name of this variant's shard contracts.

        :return: the handler name.
        """
        return "shard-storage" if self.storage_on_chain else "shard-events"


# Clustering


@dataclass(frozen=True)
class CentroidSet:
    """Unit-norm shard centroids in fixed point."""

    centroids: Tuple[FixedPointVector, ...]
    seed: int = 0
    tolerance: float = DEFAULT_TOLERANCE
    iterations: int = 0

    def __post_init__(self):
        if not self.centroids:
            raise InvalidInputError("A centroid set needs at least one centroid.")
        if len({c.dim for c in self.centroids}) != 1:
            raise InvalidInputError("Centroids must share one dimension.")
        if len(set(self.centroids)) != len(self.centroids):
            raise InvalidInputError("Centroids must be pairwise distinct.")

    @property
    def k(self) -> int:
        """
        Number of shards.

        :return: the centroid count.
        """
        return len(self.centroids)

    @property
    def dim(self) -> int:
        """
        Key dimension.

        :return: components per centroid.
        """
        return self.centroids[0].dim

    @property
    def matrix(self) -> np.ndarray:
        """
        Centroids as a (k, D) int64 matrix.

        :return: the matrix.
        """
        return stack(self.centroids)


def _kmeans_plus_plus(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0:
            raise InvalidInputError(
                f"Corpus has fewer than {k} distinct fingerprints."
            )
        index = int(rng.choice(n, p=d2 / total))
        chosen.append(index)
        d2 = np.minimum(d2, np.sum((points - points[index]) ** 2, axis=1))
    return points[chosen].copy()


def _assign(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points**2, axis=1)[:, np.newaxis]
        - 2.0 * points @ centres.T
        + np.sum(centres**2, axis=1)[np.newaxis, :]
    )
    return np.argmin(d2, axis=1)


def cluster_corpus(
    fingerprints: Sequence[Fingerprint],
    k: int,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
) -> CentroidSet:
    """
    Cluster fingerprints into shard centroids.

    Lloyd's algorithm from a k-means++ start, stopping when no centroid moves
    by more than ``tolerance`` or after ``max_iterations``. Centroids are then
    unit-normalised and encoded in fixed point. An emptied cluster is
    re-seeded with the point farthest from its centroid.

    :param fingerprints: the corpus fingerprints.
    :param k: number of shards.
    :param seed: seed of the k-means++ start.
    :param tolerance: convergence threshold on centroid movement.
    :param max_iterations: iteration cap.

    :return: the centroid set.

    :raises InvalidInputError: if ``k`` is not in [1, len(fingerprints)] or
        the corpus has fewer than ``k`` distinct fingerprints.
    """
    if not 1 <= k <= len(fingerprints):
        raise InvalidInputError(
            f"Cannot form {k} shards from {len(fingerprints)} fingerprints."
        )
    points = np.vstack([fp.values for fp in fingerprints]).astype(np.float64)
    rng = np.random.default_rng(seed)
    centres = _kmeans_plus_plus(points, k, rng)

    iterations = 0
    for iterations in range(1, max_iterations + 1):
        labels = _assign(points, centres)
        updated = centres.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                updated[j] = members.mean(axis=0)
            else:
                d2 = np.sum((points - centres[labels]) ** 2, axis=1)
                updated[j] = points[int(np.argmax(d2))]
        shift = float(np.max(np.linalg.norm(updated - centres, axis=1)))
        centres = updated
        if shift < tolerance:
            break

    vectors = []
    for centre in centres:
        norm = float(np.linalg.norm(centre))
        if norm == 0:
            raise InvalidInputError("A cluster mean vanished; fingerprints cancel.")
        vectors.append(to_fixed_point(Fingerprint(centre / norm)))
    if len(set(vectors)) != k:
        raise InvalidInputError(f"Corpus has fewer than {k} distinct fingerprints.")
    logger.info("Clustered %d fingerprints into %d shards", len(points), k)
    return CentroidSet(tuple(vectors), seed, tolerance, iterations)


def _as_key(fp: Union[Fingerprint, FixedPointVector]) -> FixedPointVector:
    return fp if isinstance(fp, FixedPointVector) else to_fixed_point(fp)


def assign_shard(
    fp: Union[Fingerprint, FixedPointVector],
    centroids: Union[CentroidSet, np.ndarray],
) -> int:
    """
    Nearest centroid of a key.

    :param fp: the fingerprint or its fixed-point key.
    :param centroids: centroid set, or its (k, D) int64 matrix.

    :return: index of the most similar centroid; lowest index on ties.

    :raises InvalidInputError: if dimensions differ.
    """
    matrix = centroids.matrix if isinstance(centroids, CentroidSet) else centroids
    key = _as_key(fp)
    if key.dim != matrix.shape[1]:
        raise InvalidInputError(
            f"Key has {key.dim} components, centroids have {matrix.shape[1]}."
        )
    return nearest(similarities(key, matrix))


# Contracts


def _address_word(address: str) -> int:
    return int(address[2:], 16)


def _word_address(word: int) -> str:
    return f"0x{word:0{2 * ADDRESS_SIZE}x}"


def _signed(word: int) -> int:
    return word - _WORD_MODULUS if word > WORD_MAX else word


@register_handler("registry-hero")
class HeroContract(ContractHandler):
    """
    Entry point holding the centroids and the shard addresses.

    Init arguments are words ``k, dim, variant code`` followed by the
    row-major centroid matrix.
    """

    def __init__(self):
        self._centroids: Optional[Tuple[int, np.ndarray]] = None

    def init(self, ctx: ExecutionContext, args: bytes) -> None:
        words = decode_words(args)
        ctx.require(len(words) >= 3, "Hero init needs k, dim and variant.")
        k, dim, code = (int(w) for w in words[:3])
        ctx.require(k >= 1 and dim >= 1, "k and dim must be positive.")
        ctx.require(len(words) == 3 + k * dim, "Centroid data has the wrong size.")
        Variant.from_code(code)
        ctx.sstore_words(HERO_K, [k, dim, code, _address_word(ctx.caller)])
        ctx.sstore_words(CENTROID_BASE, words[3:].tolist())

    def _centroid_matrix(self, ctx: ExecutionContext) -> np.ndarray:
        if ctx.clean and self._centroids and self._centroids[0] == ctx.revision:
            return self._centroids[1]
        k, dim = ctx.sload(HERO_K), ctx.sload(HERO_DIM)
        matrix = np.array(
            ctx.sload_words(CENTROID_BASE, k * dim), dtype=np.int64
        ).reshape(k, dim)
        if ctx.clean:
            self._centroids = (ctx.revision, matrix)
        return matrix

    def _predict(self, ctx: ExecutionContext, key: FixedPointVector) -> int:
        matrix = self._centroid_matrix(ctx)
        ctx.require(key.dim == matrix.shape[1], "Key dimension mismatch.")
        ctx.count_distance_ops(len(matrix))
        return nearest(similarities(key, matrix))

    def call_register_shards(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Record the shard addresses, once, from the owner.

        :param ctx: execution context.
        :param args: ``k`` concatenated 20-byte addresses.

        :return: nothing.
        """
        ctx.require(
            _address_word(ctx.caller) == ctx.sload(HERO_OWNER),
            "Only the owner registers shards.",
        )
        ctx.require(not ctx.has(SHARD_BASE), "Shards are already registered.")
        k = ctx.sload(HERO_K)
        ctx.require(len(args) == k * ADDRESS_SIZE, f"Expected {k} shard addresses.")
        ctx.sstore_words(
            SHARD_BASE,
            [
                int.from_bytes(args[i : i + ADDRESS_SIZE], "big")
                for i in range(0, len(args), ADDRESS_SIZE)
            ],
        )
        return b""

    def call_ingest(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Assign an entry to its shard and forward it there.

        :param ctx: execution context.
        :param args: an ingest payload.

        :return: the shard index as one word.
        """
        payload = decode_ingest_payload(args)
        shard = self._predict(ctx, payload.key)
        ctx.require(ctx.has(SHARD_BASE), "Shards are not registered.")
        ctx.call(_word_address(ctx.sload(SHARD_BASE + shard)), "store", args)
        return encode_words([shard])

    def call_predict(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Predict the shard of a query key.

        :param ctx: execution context.
        :param args: a key payload.

        :return: the shard index as one word.
        """
        _, key, _ = decode_key_payload(args)
        return encode_words([self._predict(ctx, key)])


class _ShardContract(ContractHandler):
    """Init arguments are words ``hero, dim, shard id``."""

    def init(self, ctx: ExecutionContext, args: bytes) -> None:
        words = decode_words(args)
        ctx.require(len(words) == 3, "Shard init needs hero, dim and shard id.")
        ctx.sstore_words(SHARD_HERO, [int(w) for w in words])

    def _check_store(self, ctx: ExecutionContext, args: bytes):
        ctx.require(
            _address_word(ctx.caller) == ctx.sload(SHARD_HERO),
            "Only the hero contract stores entries.",
        )
        payload = decode_ingest_payload(args)
        ctx.require(payload.key.dim == ctx.sload(SHARD_DIM), "Key dimension mismatch.")
        return payload

    def call_count(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Number of stored entries.

        :param ctx: execution context.
        :param args: unused.

        :return: the count as one word.
        """
        return encode_words([ctx.sload(SHARD_COUNT)])


@register_handler("shard-storage")
class StorageShardContract(_ShardContract):
    """Shard keeping its entries in contract storage."""

    def __init__(self):
        self._entries: Optional[Tuple[int, np.ndarray, Tuple[str, ...]]] = None

    def call_store(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Append an entry.

        Entry ``e`` occupies ``ENTRY_BASE + e * ENTRY_STRIDE`` onward: the key
        words, the URI byte length, then the URI packed into words.

        :param ctx: execution context.
        :param args: an ingest payload.

        :return: nothing.
        """
        payload = self._check_store(ctx, args)
        raw = payload.uri.encode("utf-8")
        words = (
            payload.key.values.tolist()
            + [len(raw)]
            + [_signed(w) for w in pack_bytes(raw)]
        )
        ctx.require(len(words) <= ENTRY_STRIDE, "Entry does not fit its slot range.")
        count = ctx.sload(SHARD_COUNT)
        ctx.sstore_words(ENTRY_BASE + count * ENTRY_STRIDE, words)
        ctx.sstore(SHARD_COUNT, count + 1)
        return b""

    def _load(self, ctx: ExecutionContext) -> Tuple[np.ndarray, Tuple[str, ...]]:
        if ctx.clean and self._entries and self._entries[0] == ctx.revision:
            return self._entries[1], self._entries[2]
        count, dim = ctx.sload(SHARD_COUNT), ctx.sload(SHARD_DIM)
        keys = np.zeros((count, dim), dtype=np.int64)
        uris = []
        for e in range(count):
            base = ENTRY_BASE + e * ENTRY_STRIDE
            keys[e] = ctx.sload_words(base, dim)
            length = ctx.sload(base + dim)
            packed = ctx.sload_words(base + dim + 1, -(-length // 32))
            raw = unpack_bytes([w % _WORD_MODULUS for w in packed], length)
            uris.append(raw.decode("utf-8"))
        if ctx.clean:
            self._entries = (ctx.revision, keys, tuple(uris))
        return keys, tuple(uris)

    def call_search(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Exhaustive on-chain scan.

        :param ctx: execution context.
        :param args: a key payload followed by a u32 LE candidate count.

        :return: encoded candidates.
        """
        _, key, offset = decode_key_payload(args)
        ctx.require(len(args) == offset + 4, "Search needs a candidate count.")
        (top_k,) = struct.unpack_from("<I", args, offset)
        ctx.require(key.dim == ctx.sload(SHARD_DIM), "Key dimension mismatch.")
        keys, uris = self._load(ctx)
        ctx.count_distance_ops(len(uris))
        return encode_candidates(rank(key, keys, uris, top_k))


@register_handler("shard-events")
class EventShardContract(_ShardContract):
    """Shard publishing its entries to the event log."""

    def call_store(self, ctx: ExecutionContext, args: bytes) -> bytes:
        """
        Emit an entry as an event topic-tagged with its key digest.

        :param ctx: execution context.
        :param args: an ingest payload, carried verbatim as event data.

        :return: nothing.
        """
        payload = self._check_store(ctx, args)
        ctx.emit([key_topic(payload.key)], args)
        ctx.sstore(SHARD_COUNT, ctx.sload(SHARD_COUNT) + 1)
        return b""


# Deployments


def read_centroids(ledger: Ledger, hero: str) -> np.ndarray:
    """
    Centroid matrix mirrored from hero storage.

    :param ledger: the ledger.
    :param hero: hero contract address.

    :return: the (k, D) int64 matrix.
    """
    storage = ledger.storage_of(hero)
    k, dim = storage.get(HERO_K, 0), storage.get(HERO_DIM, 0)
    return np.array(
        [storage.get(CENTROID_BASE + i, 0) for i in range(k * dim)], dtype=np.int64
    ).reshape(k, dim)


@dataclass
class RegistryDeployment:
    """A hero contract, its shards and the off-chain state that serves them."""

    ledger: Ledger
    variant: Variant
    hero: str
    shards: Tuple[str, ...]
    centroids: CentroidSet
    operator: str
    key_encoding: KeyEncoding = KeyEncoding.INT_ARRAY
    indexers: Dict[int, OffChainShardIndex] = field(default_factory=dict)
    mirror: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.variant.storage_on_chain and not self.indexers:
            self.indexers = {
                i: OffChainShardIndex(i, address, self.centroids.dim)
                for i, address in enumerate(self.shards)
            }
        if self.mirror is None:
            self.refresh_mirror()

    @property
    def k(self) -> int:
        """
        Number of shards.

        :return: the shard count.
        """
        return len(self.shards)

    def refresh_mirror(self) -> None:
        """Re-read the centroid mirror used for off-chain shard prediction."""
        self.mirror = read_centroids(self.ledger, self.hero)

    def sync(self) -> None:
        """Bring every off-chain shard index up to date."""
        for index in self.indexers.values():
            sync_indexer(index, self.ledger)

    def shard_sizes(self) -> List[int]:
        """
        Entries per shard, as recorded on-chain.

        :return: one count per shard.
        """
        return [
            self.ledger.storage_of(address).get(SHARD_COUNT, 0)
            for address in self.shards
        ]

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data record of the deployment.

        :return: addresses, variant, encoding and clustering parameters.
        """
        return {
            "variant": self.variant.value,
            "hero": self.hero,
            "shards": list(self.shards),
            "operator": self.operator,
            "key_encoding": self.key_encoding.value,
            "centroid_seed": self.centroids.seed,
            "centroid_tolerance": self.centroids.tolerance,
            "centroid_iterations": self.centroids.iterations,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], ledger: Ledger) -> "RegistryDeployment":
        """
        Reattach a recorded deployment to a ledger.

        Centroids are read back from hero storage; off-chain indexes start
        empty and need a sync.

        :param data: output of :meth:`to_dict`.
        :param ledger: the ledger holding the contracts.

        :return: the deployment.

        :raises NotFoundError: if the hero contract is not on the ledger.
        """
        ledger.contract(data["hero"])
        mirror = read_centroids(ledger, data["hero"])
        centroids = CentroidSet(
            tuple(FixedPointVector(row) for row in mirror),
            data.get("centroid_seed", 0),
            data.get("centroid_tolerance", DEFAULT_TOLERANCE),
            data.get("centroid_iterations", 0),
        )
        return cls(
            ledger,
            Variant(data["variant"]),
            data["hero"],
            tuple(data["shards"]),
            centroids,
            data["operator"],
            KeyEncoding(data.get("key_encoding", KeyEncoding.INT_ARRAY.value)),
            mirror=mirror,
        )


def deploy_registry(
    ledger: Ledger,
    centroid_set: CentroidSet,
    variant: Variant,
    operator: str,
    key_encoding: KeyEncoding = KeyEncoding.INT_ARRAY,
) -> RegistryDeployment:
    """
    Deploy a hero contract and one shard contract per centroid.

    :param ledger: the ledger.
    :param centroid_set: the shard centroids.
    :param variant: placement variant.
    :param operator: funded account that deploys and owns the registry.
    :param key_encoding: how keys travel in calldata and events.

    :return: the deployment.

    :raises HandlerError: if a deployment transaction is rejected.
    """
    matrix = centroid_set.matrix
    hero_args = encode_words(
        [centroid_set.k, centroid_set.dim, variant.code] + matrix.ravel().tolist()
    )
    hero = ledger.deploy_contract(operator, "registry-hero", hero_args)
    hero.raise_for_status()
    shards = []
    for i in range(centroid_set.k):
        receipt = ledger.deploy_contract(
            operator,
            variant.shard_handler,
            encode_words([_address_word(hero.contract_address), centroid_set.dim, i]),
        )
        shards.append(receipt.raise_for_status().contract_address)
    ledger.call(
        operator,
        hero.contract_address,
        "register_shards",
        b"".join(bytes.fromhex(a[2:]) for a in shards),
    ).raise_for_status()
    logger.info(
        "Deployed %s registry at %s with %d shards",
        variant.value,
        hero.contract_address,
        len(shards),
    )
    return RegistryDeployment(
        ledger,
        variant,
        hero.contract_address,
        tuple(shards),
        centroid_set,
        operator,
        key_encoding,
        mirror=matrix,
    )


def ingest(
    deployment: RegistryDeployment,
    fp: Union[Fingerprint, FixedPointVector],
    manifest_uri: str,
    sender: Optional[str] = None,
) -> Receipt:
    """
    Register a fingerprint against a manifest URI.

    The hero contract picks the shard on-chain for every variant.

    :param deployment: the registry.
    :param fp: the fingerprint or its fixed-point key.
    :param manifest_uri: the manifest's content identifier.
    :param sender: submitting account; defaults to the operator.

    :return: the transaction receipt; ``return_data`` holds the shard index.

    :raises InvalidInputError: for an empty URI.
    """
    payload = encode_ingest_payload(
        _as_key(fp), manifest_uri, deployment.key_encoding
    )
    receipt = deployment.ledger.call(
        sender or deployment.operator, deployment.hero, "ingest", payload
    )
    if not receipt.success:
        logger.warning("Ingest of %s failed: %s", manifest_uri, receipt.error)
    return receipt


@dataclass(frozen=True)
class QueryResult:
    """Ranked candidates from one shard, with a cost breakdown."""

    candidates: Tuple[Candidate, ...]
    shard: int
    predict_seconds: float
    retrieval_seconds: float
    predict_on_chain: bool
    retrieval_on_chain: bool
    predict_gas: int = 0
    retrieval_gas: int = 0
    predict_ops: int = 0
    retrieval_ops: int = 0

    @property
    def gas_used(self) -> int:
        """
        Gas of the on-chain steps.

        :return: gas units; zero when both steps ran off-chain.
        """
        return self.predict_gas + self.retrieval_gas

    @property
    def uris(self) -> List[str]:
        """
        Candidate URIs in rank order.

        :return: the URIs.
        """
        return [c.uri for c in self.candidates]


def query(
    deployment: RegistryDeployment,
    fp: Union[Fingerprint, FixedPointVector],
    top_k: int = 10,
) -> QueryResult:
    """
    Look a fingerprint up in the registry.

    Event-log variants read their off-chain indexes as last synced.

    :param deployment: the registry.
    :param fp: the fingerprint or its fixed-point key.
    :param top_k: candidates to return.

    :return: the ranked candidates and where each step ran.
    """
    key = _as_key(fp)
    variant = deployment.variant
    encoding = deployment.key_encoding

    start = time.perf_counter()
    predict_gas = 0
    if variant.query_prediction_on_chain:
        view = deployment.ledger.view(
            deployment.operator,
            deployment.hero,
            "predict",
            encode_key_payload(key, encoding),
        )
        shard = int(decode_words(view.return_data)[0])
        predict_gas = view.gas_used
    else:
        shard = assign_shard(key, deployment.mirror)
    predict_seconds = time.perf_counter() - start

    start = time.perf_counter()
    retrieval_gas = 0
    if variant.retrieval_on_chain:
        view = deployment.ledger.view(
            deployment.operator,
            deployment.shards[shard],
            "search",
            encode_key_payload(key, encoding) + struct.pack("<I", top_k),
        )
        candidates = decode_candidates(view.return_data)
        retrieval_gas = view.gas_used
        retrieval_ops = deployment.ledger.storage_of(deployment.shards[shard]).get(
            SHARD_COUNT, 0
        )
    else:
        index = deployment.indexers[shard]
        candidates = index.search(key, top_k)
        retrieval_ops = len(index.entries)
    retrieval_seconds = time.perf_counter() - start

    return QueryResult(
        tuple(candidates),
        shard,
        predict_seconds,
        retrieval_seconds,
        variant.query_prediction_on_chain,
        variant.retrieval_on_chain,
        predict_gas,
        retrieval_gas,
        deployment.k,
        retrieval_ops,
    )


@dataclass(frozen=True)
class Match:
    """A candidate verified by the match scorer."""

    uri: str
    score: float
    manifest: Manifest
    order: int


def _candidate_image(
    uri: str, content_store: ContentStore
) -> Tuple[Manifest, ImageAsset]:
    manifest = Manifest.from_bytes(content_store.retrieve(uri))
    image = decode_image(manifest.asset_cid, content_store.retrieve(manifest.asset_cid))
    return manifest, image


def resolve_match(
    query_image: ImageAsset,
    result: QueryResult,
    weights: ScorerWeights,
    threshold: float,
    content_store: ContentStore,
    cache: Optional[PooledMatrixCache] = None,
) -> Optional[Match]:
    """
    Verify candidates by pairwise scoring.

    Each candidate's manifest and image are fetched and scored against the
    query. Candidates that cannot be fetched are skipped. Among equal scores
    the latest ingest wins.

    :param query_image: the query image.
    :param result: the query result.
    :param weights: scorer weights.
    :param threshold: minimum score of a match.
    :param content_store: store holding manifests and images.
    :param cache: optional pooled-matrix cache for ``weights``.

    :return: the best match scoring at least ``threshold``, or None.
    """
    best: Optional[Match] = None
    scored: Dict[str, float] = {}
    for candidate in result.candidates:
        try:
            manifest, image = _candidate_image(candidate.uri, content_store)
        except (NotFoundError, CorruptionError, InvalidInputError) as e:
            logger.warning("Skipping candidate %s: %s", candidate.uri, e)
            continue
        if candidate.uri not in scored:
            scored[candidate.uri] = apportion_score(query_image, image, weights, cache)
        score = scored[candidate.uri]
        if score < threshold:
            continue
        if best is None or (score, candidate.order) > (best.score, best.order):
            best = Match(candidate.uri, score, manifest, candidate.order)
    return best
