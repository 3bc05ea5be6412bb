"""Tests for the sharded registry contracts and its queries."""

# pylint: disable=redefined-outer-name
import numpy as np
import pytest

from consent_registry.codec import Candidate, KeyEncoding, rank
from consent_registry.config import Settings
from consent_registry.corpus import generate_corpus
from consent_registry.errors import InvalidInputError
from consent_registry.fixedpoint import FixedPointVector, stack, to_fixed_point
from consent_registry.ledger import Genesis, Ledger, decode_words
from consent_registry.matchnet import weights_from_settings
from consent_registry.registry import (
    CentroidSet,
    QueryResult,
    RegistryDeployment,
    Variant,
    assign_shard,
    cluster_corpus,
    deploy_registry,
    ingest,
    query,
    resolve_match,
)
from consent_registry.store import ContentStore

OPERATOR = "0x" + "0e" * 20
STRANGER = "0x" + "5e" * 20


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """
    A small generated corpus.

    :param tmp_path_factory: pytest's temporary directory factory.
    :return: the corpus and its content store.
    """
    content_store = ContentStore(tmp_path_factory.mktemp("registry-store"))
    return generate_corpus(12, 3, content_store, image_size=48), content_store


def _deploy(corpus, variant, k, encoding=KeyEncoding.INT_ARRAY):
    ledger = Ledger(Genesis({OPERATOR: 10**15, STRANGER: 10**15}))
    centroids = cluster_corpus(corpus.fingerprints, k, seed=1)
    deployment = deploy_registry(ledger, centroids, variant, OPERATOR, encoding)
    for entry in corpus.entries:
        ingest(deployment, entry.fingerprint, entry.manifest_cid).raise_for_status()
    deployment.sync()
    return deployment


@pytest.fixture(scope="module")
def deployments(corpus):
    """
    One populated deployment per variant, with three shards.

    :param corpus: The corpus and its store.
    :return: deployments keyed by variant.
    """
    return {variant: _deploy(corpus[0], variant, 3) for variant in Variant}


def test_cluster_corpus_bounds(corpus):
    """
    Test that the shard count must lie between one and the corpus size.

    :param corpus: The corpus and its store.
    """
    fps = corpus[0].fingerprints
    for k in (0, len(fps) + 1):
        with pytest.raises(InvalidInputError):
            cluster_corpus(fps, k)


def test_cluster_corpus_is_deterministic(corpus):
    """
    Test that a seed fixes the centroids.

    :param corpus: The corpus and its store.
    """
    fps = corpus[0].fingerprints
    first = cluster_corpus(fps, 3, seed=7)

    assert first.centroids == cluster_corpus(fps, 3, seed=7).centroids
    assert first.k == 3
    assert first.dim == fps[0].dim
    assert first.matrix.shape == (3, fps[0].dim)


def test_centroid_set_validation():
    """Test that centroid sets need distinct vectors of one dimension."""
    with pytest.raises(InvalidInputError):
        CentroidSet(())
    with pytest.raises(InvalidInputError):
        CentroidSet((FixedPointVector([1, 0]), FixedPointVector([1, 0, 0])))
    with pytest.raises(InvalidInputError):
        CentroidSet((FixedPointVector([1, 0]), FixedPointVector([1, 0])))


def test_assign_shard_ties_go_to_lowest_index():
    """Test nearest-centroid assignment and its tie-break."""
    scale = 10**15
    matrix = np.array([[scale, 0], [0, scale]], dtype=np.int64)

    assert assign_shard(FixedPointVector([1, 1]), matrix) == 0
    assert assign_shard(FixedPointVector([1, 5]), matrix) == 1
    with pytest.raises(InvalidInputError):
        assign_shard(FixedPointVector([1, 1, 1]), matrix)


def test_variant_placement():
    """Test where each variant stores entries and runs query steps."""
    assert Variant.C_OOO.storage_on_chain
    assert Variant.C_OOO.retrieval_on_chain
    assert not Variant.E_OOF.storage_on_chain
    assert Variant.E_OOF.query_prediction_on_chain
    assert not Variant.E_OOF.retrieval_on_chain
    assert not Variant.E_FOF.query_prediction_on_chain
    assert Variant.from_code(Variant.E_FOF.code) is Variant.E_FOF
    with pytest.raises(InvalidInputError):
        Variant.from_code(7)


def test_ingest_uses_nearest_centroid(corpus, deployments):
    """
    Test that entries land in the shard of their nearest centroid.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    deployment = deployments[Variant.C_OOO]
    expected = [0] * deployment.k
    for entry in corpus[0].entries:
        expected[assign_shard(entry.fingerprint, deployment.centroids)] += 1

    assert deployment.shard_sizes() == expected
    assert sum(expected) == len(corpus[0])


def test_registered_images_are_found(corpus, deployments):
    """
    Test that every variant returns a registered image first.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    for variant, deployment in deployments.items():
        for entry in corpus[0].entries:
            result = query(deployment, entry.fingerprint, top_k=3)
            assert result.uris[0] == entry.manifest_cid, variant.value
            assert result.predict_ops == deployment.k


def test_variants_return_the_same_candidates(corpus, deployments):
    """
    Test that placement does not change query results.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    for entry in corpus[0].entries[:4]:
        results = {
            variant: query(deployment, entry.fingerprint, top_k=5)
            for variant, deployment in deployments.items()
        }
        reference = results[Variant.C_OOO]
        for result in results.values():
            assert result.candidates == reference.candidates
            assert result.shard == reference.shard


def test_query_costs_follow_placement(corpus, deployments):
    """
    Test that gas is only spent by on-chain query steps.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    fp = corpus[0].entries[0].fingerprint
    on_chain = query(deployments[Variant.C_OOO], fp)
    hybrid = query(deployments[Variant.E_OOF], fp)
    off_chain = query(deployments[Variant.E_FOF], fp)

    assert on_chain.predict_gas > 0 and on_chain.retrieval_gas > 0
    assert hybrid.predict_gas > 0 and hybrid.retrieval_gas == 0
    assert off_chain.gas_used == 0
    assert not off_chain.predict_on_chain and not off_chain.retrieval_on_chain


def test_single_shard_is_brute_force(corpus):
    """
    Test that one shard ranks exactly like a scan of the whole corpus.

    :param corpus: The corpus and its store.
    """
    deployment = _deploy(corpus[0], Variant.E_FOF, 1, KeyEncoding.STRING)
    keys = stack([to_fixed_point(e.fingerprint) for e in corpus[0].entries])
    uris = [e.manifest_cid for e in corpus[0].entries]
    fp = corpus[0].entries[5].fingerprint

    assert list(query(deployment, fp, top_k=4).candidates) == rank(
        to_fixed_point(fp), keys, uris, 4
    )


def test_register_shards_is_owner_only_and_once(deployments):
    """
    Test that the shard list cannot be replaced.

    :param deployments: The deployments.
    """
    deployment = deployments[Variant.C_OOO]
    ledger = deployment.ledger
    args = b"".join(bytes.fromhex(a[2:]) for a in deployment.shards)

    stranger = ledger.call(STRANGER, deployment.hero, "register_shards", args)
    again = ledger.call(OPERATOR, deployment.hero, "register_shards", args)

    assert not stranger.success and "owner" in stranger.error
    assert not again.success and "already" in again.error


def test_ingest_returns_the_shard(corpus):
    """
    Test that an ingest receipt names the chosen shard.

    :param corpus: The corpus and its store.
    """
    deployment = _deploy(corpus[0], Variant.E_OOF, 3)
    entry = corpus[0].entries[0]
    receipt = ingest(deployment, entry.fingerprint, entry.manifest_cid)

    assert receipt.success
    assert int(decode_words(receipt.return_data)[0]) == assign_shard(
        entry.fingerprint, deployment.centroids
    )
    assert len(receipt.events) == 1


def test_deployment_record(corpus, deployments):
    """
    Test that a recorded deployment reattaches to its ledger.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    original = deployments[Variant.E_FOF]
    restored = RegistryDeployment.from_dict(original.to_dict(), original.ledger)
    restored.sync()
    fp = corpus[0].entries[2].fingerprint

    assert restored.centroids.centroids == original.centroids.centroids
    assert restored.shards == original.shards
    assert query(restored, fp).candidates == query(original, fp).candidates


def test_resolve_match(corpus, deployments):
    """
    Test candidate verification against the match threshold.

    :param corpus: The corpus and its store.
    :param deployments: The deployments.
    """
    entries, content_store = corpus[0].entries, corpus[1]
    weights = weights_from_settings(Settings().matchnet)
    result = query(deployments[Variant.E_FOF], entries[1].fingerprint, top_k=3)

    match = resolve_match(entries[1].image, result, weights, 0.5, content_store)
    assert match is not None
    assert match.uri == entries[1].manifest_cid
    assert match.manifest == entries[1].manifest
    assert 0.5 <= match.score <= 1.0

    assert resolve_match(entries[1].image, result, weights, 1.01, content_store) is None


def test_resolve_match_skips_missing_candidates(corpus):
    """
    Test that unreadable candidates are skipped.

    :param corpus: The corpus and its store.
    """
    entry, content_store = corpus[0].entries[0], corpus[1]
    result = QueryResult(
        (Candidate("cid:" + "0" * 64, 10**15, 0),), 0, 0.0, 0.0, False, False
    )
    weights = weights_from_settings(Settings().matchnet)

    assert resolve_match(entry.image, result, weights, 0.0, content_store) is None
