"""Signed provenance manifests, consent decisions and provenance graphs."""

import enum
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from consent_registry.constants import DEFAULT_REQUIRED_FLAGS, TRAINING_FLAGS
from consent_registry.errors import (
    CorruptionError,
    InvalidInputError,
    MalformedProvenanceError,
    NotFoundError,
)
from consent_registry.ledger import is_address
from consent_registry.store import ContentStore, compute_cid, is_cid

logger = logging.getLogger(__name__)

KIND_TRAINING_MINING = "c2pa.training-mining"
KIND_WALLET = "wallet"
KIND_CREATOR = "creator"


class FlagValue(enum.Enum):
    """Permission carried by a training-mining flag."""

    ALLOWED = "allowed"
    NOT_ALLOWED = "notAllowed"


class Decision(enum.Enum):
    """Outcome of a consent lookup. Anything but OptedIn means do not use."""

    OPTED_IN = "OptedIn"
    OPTED_OUT = "OptedOut"
    UNKNOWN = "Unknown"


class IngredientRole(enum.Enum):
    """How an ingredient contributed to an asset."""

    CONCEPT_IMAGE = "conceptImage"
    BASE_MODEL = "baseModel"
    SPECIALIZED_MODEL = "specializedModel"
    TRAINING_ARCHIVE = "trainingArchive"


@dataclass(frozen=True)
class Assertion:
    """A typed statement about an asset."""

    kind: str
    payload: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data form.

        :return: ``{"kind": ..., "payload": ...}``.
        """
        return {"kind": self.kind, "payload": dict(self.payload)}


def training_mining(
    flags: Optional[Dict[str, FlagValue]] = None, allowed: bool = True
) -> Assertion:
    """
    Training-mining assertion.

    :param flags: explicit value per flag; missing flags take ``allowed``.
    :param allowed: default for every flag.

    :return: the assertion carrying all four flags.

    :raises InvalidInputError: for an unknown flag name.
    """
    flags = dict(flags or {})
    unknown = set(flags) - set(TRAINING_FLAGS)
    if unknown:
        raise InvalidInputError(f"Unknown training-mining flags {sorted(unknown)}.")
    default = FlagValue.ALLOWED if allowed else FlagValue.NOT_ALLOWED
    payload = {name: flags.get(name, default).value for name in TRAINING_FLAGS}
    return Assertion(KIND_TRAINING_MINING, payload)


def opted_out() -> Assertion:
    """
    Assertion of a creator who has opted out of generative training.

    ``data_mining``, ``ai_training`` and ``ai_generative_training`` are not
    allowed; ``ai_inference`` stays allowed.

    :return: the assertion.
    """
    return training_mining(
        {
            "data_mining": FlagValue.NOT_ALLOWED,
            "ai_training": FlagValue.NOT_ALLOWED,
            "ai_generative_training": FlagValue.NOT_ALLOWED,
        }
    )


def wallet(address: str) -> Assertion:
    """
    Wallet assertion.

    :param address: ledger address receiving payments.

    :return: the assertion.

    :raises InvalidInputError: if the address is malformed.
    """
    if not is_address(address):
        raise InvalidInputError(f"Malformed wallet address {address!r}.")
    return Assertion(KIND_WALLET, {"address": address})


def creator(name: str) -> Assertion:
    """
    Creator-name assertion.

    :param name: the creator.

    :return: the assertion.
    """
    return Assertion(KIND_CREATOR, {"name": name})


@dataclass(frozen=True)
class Ingredient:
    """A reference to another asset's manifest."""

    manifest_cid: str
    role: IngredientRole

    def to_dict(self) -> Dict[str, str]:
        """
        Plain-data form.

        :return: ``{"manifest_cid": ..., "role": ...}``.
        """
        return {"manifest_cid": self.manifest_cid, "role": self.role.value}


def _canonical(document: Dict[str, Any]) -> bytes:
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


@dataclass(frozen=True)
class Manifest:
    """Provenance record bound to an asset by its content identifier."""

    asset_cid: str
    signer_id: str
    assertions: Tuple[Assertion, ...] = ()
    ingredients: Tuple[Ingredient, ...] = ()
    signature: Optional[str] = None

    def __post_init__(self):
        if not is_cid(self.asset_cid):
            raise InvalidInputError(f"Malformed asset identifier {self.asset_cid!r}.")
        for ingredient in self.ingredients:
            if not is_cid(ingredient.manifest_cid):
                raise InvalidInputError(
                    f"Malformed ingredient identifier {ingredient.manifest_cid!r}."
                )

    def signed_document(self) -> Dict[str, Any]:
        """
        The fields covered by the signature.

        :return: asset_cid, assertions, ingredients and signer_id.
        """
        return {
            "asset_cid": self.asset_cid,
            "assertions": [a.to_dict() for a in self.assertions],
            "ingredients": [i.to_dict() for i in self.ingredients],
            "signer_id": self.signer_id,
        }

    def canonical_bytes(self) -> bytes:
        """
        Bytes the signature covers: sorted-key compact UTF-8 JSON.

        :return: the canonical encoding without the signature.
        """
        return _canonical(self.signed_document())

    def to_bytes(self) -> bytes:
        """
        Stored form: the canonical document plus the detached signature.

        :return: canonical JSON bytes.
        """
        document = self.signed_document()
        if self.signature is not None:
            document["signature"] = self.signature
        return _canonical(document)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Manifest":
        """
        Parse a stored manifest.

        Only the canonical stored form is accepted, so two different byte
        strings never parse to the same manifest.

        :param data: stored bytes.

        :return: the manifest.

        :raises InvalidInputError: if the bytes are not a canonical manifest.
        """
        try:
            document = json.loads(data.decode("utf-8"))
            if not isinstance(document.get("signer_id"), str):
                raise ValueError("signer_id must be a string")
            signature = document.get("signature")
            if signature is not None and bytes.fromhex(signature).hex() != signature:
                raise ValueError("signature must be lower-case hex")
            manifest = cls(
                asset_cid=document["asset_cid"],
                signer_id=document["signer_id"],
                assertions=tuple(
                    Assertion(a["kind"], dict(a["payload"]))
                    for a in document["assertions"]
                ),
                ingredients=tuple(
                    Ingredient(i["manifest_cid"], IngredientRole(i["role"]))
                    for i in document["ingredients"]
                ),
                signature=signature,
            )
        except (
            UnicodeDecodeError,
            ValueError,
            KeyError,
            TypeError,
            AttributeError,
        ) as e:
            raise InvalidInputError(f"Not a manifest: {e}") from e
        if manifest.to_bytes() != data:
            raise InvalidInputError("Manifest bytes are not in canonical form.")
        return manifest

    def assertion(self, kind: str) -> Optional[Assertion]:
        """
        First assertion of a kind.

        :param kind: the assertion kind.

        :return: the assertion, or None.
        """
        return next((a for a in self.assertions if a.kind == kind), None)

    @property
    def flags(self) -> Optional[Dict[str, FlagValue]]:
        """
        Training-mining flags.

        :return: flag values, or None if the assertion is absent or invalid.
        """
        found = self.assertion(KIND_TRAINING_MINING)
        if found is None:
            return None
        try:
            return {name: FlagValue(found.payload[name]) for name in TRAINING_FLAGS}
        except (KeyError, ValueError):
            return None

    @property
    def wallet_address(self) -> Optional[str]:
        """
        Payment address.

        :return: the wallet address, or None if absent or malformed.
        """
        found = self.assertion(KIND_WALLET)
        address = found.payload.get("address") if found else None
        return address if isinstance(address, str) and is_address(address) else None

    @property
    def creator_name(self) -> Optional[str]:
        """
        Creator name.

        :return: the name, or None.
        """
        found = self.assertion(KIND_CREATOR)
        return found.payload.get("name") if found else None


# Keys


def derive_signing_key(seed: Union[str, bytes]) -> Ed25519PrivateKey:
    """
    Deterministic Ed25519 key for reproducible fixtures.

    :param seed: any seed; its SHA-256 digest is the private key.

    :return: the private key.
    """
    raw = seed.encode("utf-8") if isinstance(seed, str) else seed
    return Ed25519PrivateKey.from_private_bytes(hashlib.sha256(raw).digest())


def public_key_hex(key: Union[Ed25519PrivateKey, Ed25519PublicKey]) -> str:
    """
    Raw public key as hex.

    :param key: a private or public key.

    :return: 64 hex digits.
    """
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    ).hex()


def _private_key(key: Union[Ed25519PrivateKey, bytes]) -> Ed25519PrivateKey:
    if isinstance(key, Ed25519PrivateKey):
        return key
    try:
        return Ed25519PrivateKey.from_private_bytes(bytes(key))
    except (ValueError, TypeError) as e:
        raise InvalidInputError(f"Malformed private key: {e}") from e


def _public_key(key: Union[Ed25519PublicKey, bytes, str]) -> Ed25519PublicKey:
    if isinstance(key, Ed25519PublicKey):
        return key
    try:
        raw = bytes.fromhex(key) if isinstance(key, str) else bytes(key)
        return Ed25519PublicKey.from_public_bytes(raw)
    except (ValueError, TypeError) as e:
        raise InvalidInputError(f"Malformed public key: {e}") from e


def sign_manifest(
    manifest: Manifest, private_key: Union[Ed25519PrivateKey, bytes]
) -> Manifest:
    """
    Sign a manifest's canonical bytes.

    :param manifest: the manifest; any existing signature is replaced.
    :param private_key: Ed25519 key object or its 32 raw bytes.

    :return: the signed manifest.

    :raises InvalidInputError: if the key is malformed.
    """
    key = _private_key(private_key)
    signature = key.sign(manifest.canonical_bytes())
    return replace(manifest, signature=signature.hex())


def verify_manifest(
    manifest: Manifest, public_key: Union[Ed25519PublicKey, bytes, str]
) -> bool:
    """
    Check a manifest's signature.

    :param manifest: the manifest.
    :param public_key: Ed25519 key object, raw bytes or hex.

    :return: True iff the signature covers the current canonical bytes.

    :raises InvalidInputError: if the key is malformed.
    """
    key = _public_key(public_key)
    if not isinstance(manifest.signature, str) or not manifest.signature:
        return False
    try:
        signature = bytes.fromhex(manifest.signature)
        if signature.hex() != manifest.signature:
            return False
        key.verify(signature, manifest.canonical_bytes())
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass
class TrustList:
    """Known signers and their public keys."""

    keys: Dict[str, str] = field(default_factory=dict)

    def add(self, signer_id: str, key: Union[Ed25519PrivateKey, Ed25519PublicKey]):
        """
        Trust a signer.

        :param signer_id: the signer identifier; no whitespace.
        :param key: the signer's key; only the public half is kept.

        :raises InvalidInputError: if the identifier contains whitespace.
        """
        if not signer_id or any(c.isspace() for c in signer_id):
            raise InvalidInputError(f"Invalid signer identifier {signer_id!r}.")
        self.keys[signer_id] = public_key_hex(key)

    def verify(self, manifest: Manifest) -> bool:
        """
        Verify a manifest against its signer's trusted key.

        :param manifest: the manifest.

        :return: False for unknown signers or bad signatures.
        """
        key = self.keys.get(manifest.signer_id)
        if key is None:
            return False
        try:
            return verify_manifest(manifest, key)
        except InvalidInputError:
            return False

    def save(self, path: Union[str, Path]) -> None:
        """
        Write ``signer_id hex-public-key`` lines.

        :param path: destination file.
        """
        lines = [f"{signer} {key}\n" for signer, key in sorted(self.keys.items())]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrustList":
        """
        Read a trust-list file.

        :param path: the file.

        :return: the trust list.

        :raises InvalidInputError: on a malformed line.
        """
        keys = {}
        for number, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidInputError(f"{path}:{number}: expected 'signer key'.")
            _public_key(parts[1])
            keys[parts[0]] = parts[1].lower()
        return cls(keys)


def consent_decision(
    manifest: Optional[Manifest],
    trust: TrustList,
    required_flags: Sequence[str] = tuple(DEFAULT_REQUIRED_FLAGS),
) -> Decision:
    """
    Decide whether a manifest grants training consent.

    :param manifest: the resolved manifest, or None if nothing resolved.
    :param trust: trusted signer keys.
    :param required_flags: flags that must all be allowed.

    :return: OptedIn only for a verified manifest allowing every required
        flag; OptedOut for a verified manifest denying any; Unknown otherwise.
    """
    if manifest is None or not trust.verify(manifest):
        return Decision.UNKNOWN
    flags = manifest.flags
    if flags is None:
        return Decision.UNKNOWN
    if all(flags[name] is FlagValue.ALLOWED for name in required_flags):
        return Decision.OPTED_IN
    return Decision.OPTED_OUT


def store_manifest(manifest: Manifest, content_store: ContentStore) -> str:
    """
    Store a manifest.

    :param manifest: the manifest.
    :param content_store: the store.

    :return: the manifest's content identifier.
    """
    return content_store.store(manifest.to_bytes())


def load_manifest(cid: str, content_store: ContentStore) -> Manifest:
    """
    Fetch and parse a stored manifest.

    :param cid: manifest identifier.
    :param content_store: the store.

    :return: the manifest.
    """
    return Manifest.from_bytes(content_store.retrieve(cid))


def verify_asset(manifest: Manifest, content_store: ContentStore) -> bool:
    """
    Check that the asset a manifest names is stored intact.

    :param manifest: the manifest.
    :param content_store: the store.

    :return: True iff the stored bytes hash to ``asset_cid``.
    """
    try:
        data = content_store.retrieve(manifest.asset_cid)
    except (NotFoundError, CorruptionError):
        return False
    return compute_cid(data) == manifest.asset_cid


# Provenance graphs


class ManifestSource(Protocol):
    """Anything that returns bytes for a content identifier."""

    def retrieve(self, cid: str) -> bytes:
        """Fetch bytes."""


@dataclass(frozen=True)
class Edge:
    """An ingredient reference between two manifests."""

    source: str
    target: str
    role: IngredientRole


@dataclass
class ProvenanceGraph:
    """Manifests reachable from a root through ingredient references."""

    root: str
    nodes: Dict[str, Manifest] = field(default_factory=dict)
    edges: List[Edge] = field(default_factory=list)
    dangling: List[Edge] = field(default_factory=list)


def _check_acyclic(graph: ProvenanceGraph) -> None:
    children: Dict[str, List[str]] = {}
    for edge in graph.edges:
        children.setdefault(edge.source, []).append(edge.target)
    state: Dict[str, int] = {}
    stack = [(graph.root, iter(children.get(graph.root, [])))]
    state[graph.root] = 1
    while stack:
        node, pending = stack[-1]
        child = next(pending, None)
        if child is None:
            state[node] = 2
            stack.pop()
            continue
        if state.get(child) == 1:
            raise MalformedProvenanceError(f"Provenance cycle through {child}.")
        if child not in state:
            state[child] = 1
            stack.append((child, iter(children.get(child, []))))


def build_provenance_graph(root_cid: str, source: ManifestSource) -> ProvenanceGraph:
    """
    Expand a manifest's ingredients breadth-first.

    Missing or unreadable ingredient manifests are recorded as dangling and
    logged; they do not stop the walk.

    :param root_cid: identifier of the root manifest.
    :param source: store (or any object with ``retrieve``) holding manifests.

    :return: the graph.

    :raises NotFoundError: if the root manifest is not stored.
    :raises MalformedProvenanceError: if the root is not a manifest or the
        references form a cycle.
    """
    try:
        root = Manifest.from_bytes(source.retrieve(root_cid))
    except (InvalidInputError, CorruptionError) as e:
        raise MalformedProvenanceError(f"Root {root_cid} is unusable: {e}") from e
    graph = ProvenanceGraph(root_cid, {root_cid: root})
    queue = deque([root_cid])
    while queue:
        cid = queue.popleft()
        for ingredient in graph.nodes[cid].ingredients:
            edge = Edge(cid, ingredient.manifest_cid, ingredient.role)
            target = ingredient.manifest_cid
            if target not in graph.nodes:
                try:
                    graph.nodes[target] = Manifest.from_bytes(source.retrieve(target))
                except (NotFoundError, CorruptionError, InvalidInputError) as e:
                    logger.warning("Dangling ingredient %s of %s: %s", target, cid, e)
                    graph.dangling.append(edge)
                    continue
                queue.append(target)
            graph.edges.append(edge)
    _check_acyclic(graph)
    return graph


def training_images_of(graph: ProvenanceGraph) -> List[Tuple[str, Manifest]]:
    """
    Concept images used to specialise a model in the graph.

    Training archives are opaque and never expanded.

    :param graph: the provenance graph.

    :return: (asset identifier, manifest) pairs of concept-image ingredients
        of specialised-model nodes, deduplicated and sorted by asset
        identifier.
    """
    models = {
        e.target for e in graph.edges if e.role is IngredientRole.SPECIALIZED_MODEL
    }
    images = {}
    for edge in graph.edges:
        if edge.source in models and edge.role is IngredientRole.CONCEPT_IMAGE:
            manifest = graph.nodes[edge.target]
            images[manifest.asset_cid] = manifest
    return sorted(images.items())
