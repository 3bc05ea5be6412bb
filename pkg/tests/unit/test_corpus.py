"""Tests for procedural corpus generation."""

import numpy as np
import pytest

from consent_registry.corpus import (
    generate_corpus,
    load_corpus,
    procedural_image,
    read_manifest_index,
)
from consent_registry.errors import InvalidInputError
from consent_registry.fixedpoint import to_fixed_point
from consent_registry.manifest import Decision, verify_asset
from consent_registry.store import ContentStore


def test_procedural_images_are_seeded():
    """Test that a seed fixes the picture and another seed changes it."""
    first = procedural_image("a", 1, 32)

    assert (first.width, first.height) == (32, 32)
    assert np.array_equal(first.to_array(), procedural_image("a", 1, 32).to_array())
    assert not np.array_equal(first.to_array(), procedural_image("a", 2, 32).to_array())


def test_generated_corpus(tmp_path):
    """
    Test that corpus entries are distinct, signed and stored.

    :param tmp_path: pytest's temporary directory.
    """
    content_store = ContentStore(tmp_path / "store")
    corpus = generate_corpus(10, 4, content_store, image_size=32, signers=3)

    assert [e.asset_id for e in corpus.entries][:2] == ["img-00000", "img-00001"]
    assert len({to_fixed_point(fp) for fp in corpus.fingerprints}) == 10
    assert len(corpus.trust.keys) == 3
    for entry in corpus.entries:
        assert corpus.trust.verify(entry.manifest)
        assert verify_asset(entry.manifest, content_store)
        assert entry.manifest.wallet_address is not None
        assert entry.expected_decision in (Decision.OPTED_IN, Decision.OPTED_OUT)
    assert corpus.by_id("img-00003") is corpus.entries[3]
    with pytest.raises(InvalidInputError):
        corpus.by_id("img-99999")


def test_opt_out_rate_extremes(tmp_path):
    """
    Test that the opt-out rate controls the recorded decisions.

    :param tmp_path: pytest's temporary directory.
    """
    content_store = ContentStore(tmp_path)
    everyone = generate_corpus(4, 1, content_store, image_size=16, opt_out_rate=1.0)
    nobody = generate_corpus(4, 1, content_store, image_size=16, opt_out_rate=0.0)

    assert {e.expected_decision for e in everyone.entries} == {Decision.OPTED_OUT}
    assert {e.expected_decision for e in nobody.entries} == {Decision.OPTED_IN}


def test_corpus_directory(tmp_path):
    """
    Test that a saved corpus loads back and is not overwritten by accident.

    :param tmp_path: pytest's temporary directory.
    """
    content_store = ContentStore(tmp_path / "store")
    root = tmp_path / "corpus"
    corpus = generate_corpus(5, 2, content_store, root=root, image_size=24)

    loaded = load_corpus(root, content_store)

    assert [e.manifest_cid for e in loaded.entries] == [
        e.manifest_cid for e in corpus.entries
    ]
    assert loaded.fingerprints == corpus.fingerprints
    assert loaded.trust == corpus.trust
    assert read_manifest_index(root)["img-00004"] == corpus.entries[4].manifest_cid
    with pytest.raises(InvalidInputError):
        generate_corpus(5, 2, content_store, root=root, image_size=24)
    generate_corpus(3, 2, content_store, root=root, image_size=24, force=True)
    assert len(load_corpus(root, content_store)) == 3


def test_empty_corpus_is_rejected(tmp_path):
    """
    Test that a corpus needs at least one image.

    :param tmp_path: pytest's temporary directory.
    """
    with pytest.raises(InvalidInputError):
        generate_corpus(0, 1, ContentStore(tmp_path))
