"""Tests for consent manifests, trust lists and provenance graphs."""

import numpy as np
import pytest

from consent_registry.constants import TRAINING_FLAGS
from consent_registry.errors import (
    InvalidInputError,
    MalformedProvenanceError,
    NotFoundError,
)
from consent_registry.manifest import (
    Decision,
    FlagValue,
    Ingredient,
    IngredientRole,
    Manifest,
    TrustList,
    build_provenance_graph,
    consent_decision,
    creator,
    derive_signing_key,
    load_manifest,
    opted_out,
    public_key_hex,
    sign_manifest,
    store_manifest,
    training_images_of,
    training_mining,
    verify_asset,
    verify_manifest,
    wallet,
)
from consent_registry.store import ContentStore

KEY = derive_signing_key("test-signer")
WALLET = "0x" + "12" * 20


def _cid(n):
    return "cid:" + f"{n:02x}" * 32


def _trusted():
    trust = TrustList()
    trust.add("alice", KEY)
    return trust


def _signed(*assertions, ingredients=(), asset=1):
    return sign_manifest(Manifest(_cid(asset), "alice", assertions, ingredients), KEY)


class DictSource:  # pylint: disable=too-few-public-methods
    """Manifests held in memory under chosen identifiers."""

    def __init__(self, manifests):
        self.manifests = manifests

    def retrieve(self, cid):
        """
        Serialised manifest.

        :param cid: the identifier.
        :return: the manifest bytes.
        """
        if cid not in self.manifests:
            raise NotFoundError(cid)
        return self.manifests[cid].to_bytes()


def test_signature_covers_every_field():
    """Test that a signature breaks when any signed field changes."""
    manifest = _signed(creator("alice"), training_mining(), wallet(WALLET))

    assert verify_manifest(manifest, public_key_hex(KEY))
    for changed in (
        Manifest(_cid(2), "alice", manifest.assertions, (), manifest.signature),
        Manifest(_cid(1), "mallory", manifest.assertions, (), manifest.signature),
        Manifest(_cid(1), "alice", (opted_out(),), (), manifest.signature),
        Manifest(
            _cid(1),
            "alice",
            manifest.assertions,
            (Ingredient(_cid(3), IngredientRole.BASE_MODEL),),
            manifest.signature,
        ),
    ):
        assert not verify_manifest(changed, public_key_hex(KEY))


def test_single_byte_changes_never_verify():
    """Test that changing any one stored byte breaks verification."""
    rng = np.random.default_rng(12)
    trust = _trusted()
    stored = _signed(
        creator("alice"),
        training_mining(),
        wallet(WALLET),
        ingredients=(Ingredient(_cid(3), IngredientRole.BASE_MODEL),),
    ).to_bytes()
    assert trust.verify(Manifest.from_bytes(stored))

    for _ in range(1000):
        data = bytearray(stored)
        position = int(rng.integers(len(data)))
        data[position] = (data[position] + int(rng.integers(1, 256))) % 256
        try:
            changed = Manifest.from_bytes(bytes(data))
        except InvalidInputError:
            continue
        assert not trust.verify(changed)
        assert consent_decision(changed, trust) is Decision.UNKNOWN


def test_non_canonical_stored_forms_are_rejected():
    """Test that a signature in upper-case hex or extra fields do not parse."""
    manifest = _signed(training_mining())
    upper = manifest.to_bytes().replace(
        manifest.signature.encode(), manifest.signature.upper().encode()
    )

    with pytest.raises(InvalidInputError):
        Manifest.from_bytes(upper)
    with pytest.raises(InvalidInputError):
        Manifest.from_bytes(manifest.to_bytes().replace(b"{", b'{"x":1,', 1))
    assert not verify_manifest(
        Manifest(
            manifest.asset_cid,
            "alice",
            manifest.assertions,
            (),
            manifest.signature.upper(),
        ),
        public_key_hex(KEY),
    )


def test_unverified_manifests_never_opt_in():
    """Test random flag sets under every way a manifest can fail to verify."""
    rng = np.random.default_rng(5)
    trust = _trusted()
    stranger = derive_signing_key("stranger")

    for trial in range(250):
        flags = {
            name: FlagValue.ALLOWED if rng.random() < 0.8 else FlagValue.NOT_ALLOWED
            for name in TRAINING_FLAGS
        }
        unsigned = Manifest(_cid(trial % 200), "alice", (training_mining(flags),))
        signed = sign_manifest(unsigned, KEY)
        candidates = (
            unsigned,
            sign_manifest(unsigned, stranger),
            Manifest(_cid(201), "alice", signed.assertions, (), signed.signature),
            Manifest(
                signed.asset_cid, "mallory", signed.assertions, (), signed.signature
            ),
        )
        for manifest in candidates:
            assert consent_decision(manifest, trust) is Decision.UNKNOWN


def test_stored_form_keeps_the_signature():
    """Test that parsing the stored bytes gives back the same manifest."""
    manifest = _signed(creator("alice"), opted_out())

    assert Manifest.from_bytes(manifest.to_bytes()) == manifest
    assert b"signature" not in manifest.canonical_bytes()
    with pytest.raises(InvalidInputError):
        Manifest.from_bytes(b"{}")


def test_manifest_accessors():
    """Test flag, wallet and creator lookups."""
    manifest = _signed(creator("alice"), opted_out(), wallet(WALLET))

    assert manifest.creator_name == "alice"
    assert manifest.wallet_address == WALLET
    assert manifest.flags["ai_inference"] is FlagValue.ALLOWED
    assert manifest.flags["ai_training"] is FlagValue.NOT_ALLOWED
    assert _signed().flags is None
    assert _signed().wallet_address is None


def test_assertion_validation():
    """Test that malformed assertion inputs are rejected."""
    with pytest.raises(InvalidInputError):
        training_mining({"face_swap": FlagValue.ALLOWED})
    with pytest.raises(InvalidInputError):
        wallet("not-an-address")
    with pytest.raises(InvalidInputError):
        Manifest("sha256:abc", "alice")


@pytest.mark.parametrize(
    "assertions, expected",
    [
        ((training_mining(),), Decision.OPTED_IN),
        ((opted_out(),), Decision.OPTED_OUT),
        (
            (training_mining({"ai_training": FlagValue.NOT_ALLOWED}),),
            Decision.OPTED_OUT,
        ),
        ((training_mining({"data_mining": FlagValue.NOT_ALLOWED}),), Decision.OPTED_IN),
        ((creator("alice"),), Decision.UNKNOWN),
    ],
)
def test_consent_decision(assertions, expected):
    """
    Test consent decisions for verified manifests.

    :param assertions: The manifest's assertions.
    :param expected: The expected decision.
    """
    assert consent_decision(_signed(*assertions), _trusted()) is expected


def test_unverified_manifests_are_unknown():
    """Test that missing, untrusted or tampered manifests give Unknown."""
    manifest = _signed(training_mining())
    tampered = Manifest(_cid(9), "alice", manifest.assertions, (), manifest.signature)
    stranger = sign_manifest(
        Manifest(_cid(1), "bob", (training_mining(),)), derive_signing_key("bob")
    )

    assert consent_decision(None, _trusted()) is Decision.UNKNOWN
    assert consent_decision(manifest, TrustList()) is Decision.UNKNOWN
    assert consent_decision(tampered, _trusted()) is Decision.UNKNOWN
    assert consent_decision(stranger, _trusted()) is Decision.UNKNOWN


def test_required_flags_are_configurable():
    """Test that stricter flag requirements turn consent into an opt-out."""
    manifest = _signed(opted_out())

    assert (
        consent_decision(manifest, _trusted(), ["ai_inference"]) is Decision.OPTED_IN
    )


def test_trust_list_file(tmp_path):
    """
    Test that a trust list survives its file form.

    :param tmp_path: pytest's temporary directory.
    """
    trust = _trusted()
    trust.save(tmp_path / "trust.txt")

    loaded = TrustList.load(tmp_path / "trust.txt")
    assert loaded == trust
    assert loaded.verify(_signed(training_mining()))

    (tmp_path / "bad.txt").write_text("alice\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        TrustList.load(tmp_path / "bad.txt")
    with pytest.raises(InvalidInputError):
        trust.add("two words", KEY)


def test_manifests_in_a_content_store(tmp_path):
    """
    Test storing manifests and checking their assets.

    :param tmp_path: pytest's temporary directory.
    """
    content_store = ContentStore(tmp_path)
    asset_cid = content_store.store(b"pixels")
    manifest = sign_manifest(Manifest(asset_cid, "alice", (training_mining(),)), KEY)

    cid = store_manifest(manifest, content_store)
    assert load_manifest(cid, content_store) == manifest
    assert verify_asset(manifest, content_store)
    assert not verify_asset(_signed(asset=4), content_store)


def test_provenance_graph():
    """Test graph expansion, dangling references and training images."""
    image_a = _signed(training_mining(), asset=1)
    image_b = _signed(opted_out(), asset=2)
    base = _signed(asset=3)
    model = _signed(
        ingredients=(
            Ingredient(_cid(30), IngredientRole.BASE_MODEL),
            Ingredient(_cid(20), IngredientRole.CONCEPT_IMAGE),
            Ingredient(_cid(10), IngredientRole.CONCEPT_IMAGE),
            Ingredient(_cid(99), IngredientRole.TRAINING_ARCHIVE),
        ),
        asset=4,
    )
    output = _signed(
        ingredients=(Ingredient(_cid(40), IngredientRole.SPECIALIZED_MODEL),),
        asset=5,
    )
    source = DictSource(
        {
            _cid(10): image_a,
            _cid(20): image_b,
            _cid(30): base,
            _cid(40): model,
            _cid(50): output,
        }
    )

    graph = build_provenance_graph(_cid(50), source)

    assert set(graph.nodes) == {_cid(n) for n in (10, 20, 30, 40, 50)}
    assert len(graph.edges) == 4
    assert [e.target for e in graph.dangling] == [_cid(99)]
    assert training_images_of(graph) == [(_cid(1), image_a), (_cid(2), image_b)]


def test_provenance_cycles_are_rejected():
    """Test that a reference cycle is malformed provenance."""
    first = _signed(
        ingredients=(Ingredient(_cid(20), IngredientRole.BASE_MODEL),), asset=1
    )
    second = _signed(
        ingredients=(Ingredient(_cid(10), IngredientRole.BASE_MODEL),), asset=2
    )

    with pytest.raises(MalformedProvenanceError):
        build_provenance_graph(
            _cid(10), DictSource({_cid(10): first, _cid(20): second})
        )


def test_unusable_provenance_roots():
    """Test that a root must exist and be a manifest."""
    with pytest.raises(NotFoundError):
        build_provenance_graph(_cid(1), DictSource({}))

    class Garbage:  # pylint: disable=too-few-public-methods
        """Source returning bytes that are not a manifest."""

        def retrieve(self, cid):
            """
            Garbage bytes.

            :param cid: ignored.
            :return: the bytes.
            """
            return cid.encode() + b"\xff"

    with pytest.raises(MalformedProvenanceError):
        build_provenance_graph(_cid(1), Garbage())
