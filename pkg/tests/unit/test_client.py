"""Tests for the registry client."""

# pylint: disable=redefined-outer-name
import pytest

from consent_registry.client import RegistryClient
from consent_registry.config import Settings
from consent_registry.corpus import procedural_image
from consent_registry.errors import InvalidInputError
from consent_registry.fingerprint import compute_fingerprint
from consent_registry.fixedpoint import to_fixed_point
from consent_registry.imaging import encode_png
from consent_registry.ledger import Genesis, Ledger
from consent_registry.manifest import (
    Decision,
    Manifest,
    TrustList,
    derive_signing_key,
    opted_out,
    sign_manifest,
    training_mining,
)
from consent_registry.matchnet import weights_from_settings
from consent_registry.registry import CentroidSet, Variant, deploy_registry
from consent_registry.store import ContentStore, compute_cid

OPERATOR = "0x" + "0e" * 20
KEY = derive_signing_key("client-test")


@pytest.fixture
def client(tmp_path):
    """
    A client over an empty two-shard registry.

    :param tmp_path: pytest's temporary directory.
    :return: the client.
    """
    settings = Settings()
    centroids = CentroidSet(
        tuple(
            to_fixed_point(compute_fingerprint(procedural_image(f"c{i}", 100 + i, 32)))
            for i in range(2)
        )
    )
    ledger = Ledger(Genesis({OPERATOR: 10**15}))
    trust = TrustList()
    trust.add("artist", KEY)
    return RegistryClient(
        deploy_registry(ledger, centroids, Variant.E_OOF, OPERATOR),
        ContentStore(tmp_path),
        trust,
        weights_from_settings(settings.matchnet),
        settings,
    )


def _manifest(image, consent):
    return sign_manifest(
        Manifest(compute_cid(encode_png(image)), "artist", (consent,)), KEY
    )


def test_register_then_resolve(client):
    """
    Test the register, search, resolve and consent path.

    :param client: The client.
    """
    image = procedural_image("art", 7, 32)
    manifest_cid, receipt = client.register(image, _manifest(image, opted_out()))

    assert receipt.success
    assert client.search(image).uris[0] == manifest_cid
    assert client.get_manifest(manifest_cid).signer_id == "artist"

    match, decision = client.consent_of(image)
    assert match.uri == manifest_cid
    assert decision is Decision.OPTED_OUT
    assert client.consent_of(image, ["ai_inference"])[1] is Decision.OPTED_IN


def test_unregistered_image_is_unknown(client):
    """
    Test that an empty registry never grants consent.

    :param client: The client.
    """
    match, decision = client.consent_of(procedural_image("stranger", 9, 32))

    assert match is None
    assert decision is Decision.UNKNOWN


def test_manifest_must_name_the_image(client):
    """
    Test that a manifest for other bytes is refused.

    :param client: The client.
    """
    image = procedural_image("art", 7, 32)
    other = procedural_image("other", 8, 32)

    with pytest.raises(InvalidInputError):
        client.register(image, _manifest(other, training_mining()))


def test_settings_drive_the_client(client):
    """
    Test the configured query parameters.

    :param client: The client.
    """
    assert client.top_k == 10
    assert client.threshold == 0.7
    assert client.fingerprint(procedural_image("x", 1, 32)).is_unit()
