"""Tests for the pairwise match scorer."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from consent_registry.constants import WINDOW_COUNT
from consent_registry.corpus import procedural_image
from consent_registry.errors import ConfigurationError, InvalidInputError
from consent_registry.matchnet import (
    PooledMatrixCache,
    ScoreRecord,
    Window,
    analytic_weights,
    apportion_score,
    apportionment_weights,
    bce_loss,
    enumerate_windows,
    extract_feature_map,
    gem_pool,
    largest_remainder,
    load_weights,
    pooled_matrix,
    random_weights,
    read_score_report,
    save_weights,
    score_pooled,
    sigmoid,
    write_score_report,
)


@pytest.fixture(name="weights", scope="module")
def fixture_weights():
    """
    The analytic reference weights.

    :return: the weights.
    """
    return analytic_weights()


@pytest.fixture(name="images", scope="module")
def fixture_images():
    """
    Three distinct procedural images.

    :return: the images.
    """
    return [procedural_image(f"img-{i}", 40 + i, 96) for i in range(3)]


def test_windows_of_the_reference_grid():
    """Test the window enumeration of an 8x8 grid."""
    windows = enumerate_windows(8, 8)

    assert len(windows) == WINDOW_COUNT
    assert windows[0] == Window(0, 0, 0, 8, 8)
    assert windows == sorted(windows)
    assert all(w.row + w.height <= 8 and w.col + w.width <= 8 for w in windows)
    with pytest.raises(InvalidInputError):
        enumerate_windows(0, 8)


def test_gem_pool_interpolates_mean_and_max():
    """Test GeM pooling at p=1 and at a large power."""
    values = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3)
    window = Window(0, 0, 0, 2, 2)

    assert np.allclose(gem_pool(values, window, 1.0), values.mean(axis=(0, 1)))
    assert np.allclose(
        gem_pool(values, window, 200.0), values.max(axis=(0, 1)), rtol=1e-2
    )
    assert np.array_equal(gem_pool(np.zeros((2, 2, 3)), window, 3.0), np.zeros(3))


@pytest.mark.parametrize(
    "window, p",
    [
        (Window(0, 0, 0, 3, 2), 3.0),
        (Window(0, 0, 0, 0, 2), 3.0),
        (Window(0, 0, 0, 2, 2), 0.0),
    ],
)
def test_gem_pool_rejects_bad_windows(window, p):
    """
    Test out-of-bounds windows and non-positive powers.

    :param window: The window.
    :param p: The pooling power.
    """
    with pytest.raises(InvalidInputError):
        gem_pool(np.ones((2, 2, 3)), window, p)


def test_pooled_rows_are_unit_or_degenerate(weights, images):
    """
    Test that every pooled row has unit norm unless flagged degenerate.

    :param weights: The scorer weights.
    :param images: The test images.
    """
    feature_map = extract_feature_map(images[0], weights.feature_seed, weights.depth)
    pooled = pooled_matrix(feature_map, weights)
    norms = np.linalg.norm(pooled.rows, axis=1)

    assert pooled.rows.shape == (WINDOW_COUNT, weights.depth // 4)
    for norm, degenerate in zip(norms, pooled.degenerate):
        assert norm == pytest.approx(0.0 if degenerate else 1.0)


@pytest.mark.parametrize("kind", ["analytic", "random"])
def test_score_is_symmetric(kind, weights):
    """
    Test that swapping the images of random pairs leaves the score unchanged.

    :param kind: Which scorer weights to use.
    :param weights: The analytic scorer weights.
    """
    chosen = weights if kind == "analytic" else random_weights(17)
    cache = PooledMatrixCache(chosen, maxsize=32)
    pool = [procedural_image(f"pair-{i}", 200 + i, 96) for i in range(20)]
    rng = np.random.default_rng(31)

    for _ in range(100):
        i, j = rng.choice(len(pool), size=2, replace=False)
        forward = apportion_score(pool[i], pool[j], chosen, cache)
        assert forward == apportion_score(pool[j], pool[i], chosen, cache)


def test_identical_images_score_highest(weights, images):
    """
    Test that an image matches itself above the threshold and others below.

    :param weights: The scorer weights.
    :param images: The test images.
    """
    same = apportion_score(images[0], images[0].with_id("copy"), weights)
    others = [apportion_score(images[0], other, weights) for other in images[1:]]

    assert same > 0.7
    assert all(score < same for score in others)
    assert all(0.0 < score < 1.0 for score in [same] + others)


def test_sigmoid_is_clipped():
    """Test that extreme logits stay strictly inside (0, 1)."""
    assert 0.0 < sigmoid(-1e6) < sigmoid(0.0) == 0.5 < sigmoid(1e6) < 1.0


def test_cache_hits_and_eviction(weights, images):
    """
    Test the pooled-matrix cache.

    :param weights: The scorer weights.
    :param images: The test images.
    """
    cache = PooledMatrixCache(weights, maxsize=2)
    uncached = apportion_score(images[0], images[1], weights)

    assert apportion_score(images[0], images[1], weights, cache) == uncached
    apportion_score(images[1], images[0], weights, cache)
    assert (cache.hits, cache.misses) == (2, 2)

    apportion_score(images[2], images[2], weights, cache)
    assert len(cache) == 2


def test_mismatched_weights_are_a_configuration_error(weights, images):
    """
    Test that an MLP sized for other windows cannot score.

    :param weights: The scorer weights.
    :param images: The test images.
    """
    small = random_weights(0, depth=weights.depth, windows=4, hidden=(8,))
    feature_map = extract_feature_map(images[0], weights.feature_seed, weights.depth)
    pooled = pooled_matrix(feature_map, weights)

    with pytest.raises(ConfigurationError):
        score_pooled(pooled, pooled, small)


def test_weights_file(tmp_path):
    """
    Test saving and loading weights, and rejecting foreign files.

    :param tmp_path: A per-test directory.
    """
    weights = random_weights(3, depth=16, windows=4, hidden=(8,), gem_power=2.5)
    path = tmp_path / "scorer.bin"
    save_weights(weights, path)
    loaded = load_weights(path)

    assert loaded.gem_power == 2.5
    assert loaded.input_size == 16
    assert np.allclose(loaded.projection, weights.projection, atol=1e-6)
    for (w1, b1), (w2, b2) in zip(loaded.layers, weights.layers):
        assert np.allclose(w1, w2, atol=1e-6)
        assert np.allclose(b1, b2)

    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ConfigurationError):
        load_weights(path)
    save_weights(weights, path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ConfigurationError):
        load_weights(path)


def test_apportionment_weights():
    """Test thresholded, normalised credit weights."""
    weights = apportionment_weights([0.9, 0.75, 0.6], 0.7)

    assert weights == pytest.approx([0.8, 0.2, 0.0])
    assert sum(weights) == 1.0
    assert apportionment_weights([0.5, 0.6], 0.7) == [0.0, 0.0]
    assert apportionment_weights([], 0.7) == []
    with pytest.raises(InvalidInputError):
        apportionment_weights([0.9], 1.0)
    with pytest.raises(InvalidInputError):
        apportionment_weights([1.2], 0.7)


def test_apportionment_weights_on_random_scores():
    """Test exact sums, input order and monotonicity over random score vectors."""
    rng = np.random.default_rng(8)

    for trial in range(1000):
        size = int(rng.integers(1, 16))
        lam = 0.7 if trial % 2 else float(rng.uniform(0.0, 0.95))
        low = lam + 0.01 if trial % 4 == 1 else 0.0
        scores = rng.uniform(low, 1.0, size).round(int(rng.integers(2, 17)))
        scores = np.clip(scores, 0.0, 1.0).tolist()
        weights = apportionment_weights(scores, lam)

        assert len(weights) == size
        if all(s <= lam for s in scores):
            assert weights == [0.0] * size
            continue
        assert sum(weights) == 1.0
        assert sum(reversed(weights)) == 1.0
        assert math.fsum(weights) == 1.0
        for (s1, w1), (s2, w2) in itertools.product(zip(scores, weights), repeat=2):
            if s1 > s2:
                assert w1 >= w2
            if s1 <= lam:
                assert w1 == 0.0


@pytest.mark.parametrize(
    "values, budget, expected",
    [
        ([0.8, 0.2], 1000, [800, 200]),
        ([1 / 3, 1 / 3, 1 / 3], 100, [34, 33, 33]),
        ([0.0, 0.0], 50, [0, 0]),
        ([0.5, 0.5], 0, [0, 0]),
        ([2, 1], 4, [3, 1]),
    ],
)
def test_largest_remainder(values, budget, expected):
    """
    Test integer budget splits.

    :param values: The weights.
    :param budget: The budget.
    :param expected: The expected amounts.
    """
    amounts = largest_remainder(values, budget)

    assert amounts == expected
    assert sum(amounts) in (0, budget)


def test_largest_remainder_tie_break_by_key():
    """Test that leftover units go to the lower key on equal remainders."""
    assert largest_remainder([1, 1], 1, ["b", "a"]) == [0, 1]
    with pytest.raises(InvalidInputError):
        largest_remainder([-1, 2], 10)
    with pytest.raises(InvalidInputError):
        largest_remainder([1], -1)


def test_largest_remainder_on_random_splits():
    """Test random splits against their exact proportional quotas."""
    rng = np.random.default_rng(21)

    for _ in range(1000):
        size = int(rng.integers(1, 12))
        values = (rng.random(size) * (rng.random(size) < 0.8)).tolist()
        budget = int(rng.integers(0, 10**6))
        amounts = largest_remainder(values, budget)

        total = sum((Fraction(v) for v in values), Fraction(0))
        if total == 0:
            assert amounts == [0] * size
            continue
        assert sum(amounts) == budget
        for value, amount in zip(values, amounts):
            quota = Fraction(value) * budget / total
            assert math.floor(quota) <= amount <= math.ceil(quota)
        for (v1, a1), (v2, a2) in itertools.product(zip(values, amounts), repeat=2):
            if v1 > v2:
                assert a1 >= a2


@pytest.mark.parametrize("seed", range(20))
def test_bce_gradient_matches_finite_differences(seed):
    """
    Test the loss gradient numerically on random batches.

    :param seed: The batch seed.
    """
    rng = np.random.default_rng(seed)
    size = int(rng.integers(1, 12))
    predictions = rng.uniform(0.05, 0.95, size)
    labels = rng.integers(0, 2, size).tolist()
    _, grad = bce_loss(predictions, labels)
    eps = 1e-6

    for i in range(size):
        up, down = predictions.copy(), predictions.copy()
        up[i] += eps
        down[i] -= eps
        numeric = (bce_loss(up, labels)[0] - bce_loss(down, labels)[0]) / (2 * eps)
        assert grad[i] == pytest.approx(numeric, rel=1e-5)


@pytest.mark.parametrize(
    "predictions, labels",
    [([], []), ([0.5], [0, 1]), ([1.5], [1]), ([0.5], [2])],
)
def test_bce_rejects_bad_inputs(predictions, labels):
    """
    Test that malformed predictions and labels are rejected.

    :param predictions: The predictions.
    :param labels: The labels.
    """
    with pytest.raises(InvalidInputError):
        bce_loss(predictions, labels)


def test_score_report_file(tmp_path):
    """
    Test the JSON-lines score report.

    :param tmp_path: A per-test directory.
    """
    records = [ScoreRecord("synthetic-5", "cid:" + "a" * 64, 0.91, 0.8)]
    path = tmp_path / "scores.jsonl"
    write_score_report(path, records)

    assert read_score_report(path) == records
