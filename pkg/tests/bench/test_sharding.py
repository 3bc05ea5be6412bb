"""Report-based tests for shard prediction and retrieval."""

import pytest


def test_prediction_scans_every_centroid(bench_report):
    """
    Test that shard prediction costs exactly one similarity per centroid.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("predict_ops", [])

    if violations:
        msg = f"{len(violations)} queries predicted with the wrong op count:\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary} (on-chain: {v.details['on_chain']})\n"
        pytest.fail(msg)


@pytest.mark.parametrize("column", ["retrieval_ops", "retrieval_ms"])
def test_retrieval_cost_falls_with_shards(bench_report, column):
    """
    Test that per-query retrieval cost does not grow with the shard count.

    :param bench_report: The benchmark report to check.
    :param column: The cost column to check.
    """
    violations = bench_report.violations.get(f"retrieval_trend_{column}", [])

    if violations:
        msg = f"{column} rises with k:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.details[column]} over k={v.details['k']} "
                f"(rises at k={v.details['rises_at_k']})\n"
            )
        pytest.fail(msg)


def test_shard_scan_is_exact(bench_report):
    """
    Test that retrieval returns the exact top-K of the predicted shard.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("within_shard_exact", [])

    if violations:
        msg = f"{len(violations)} queries got an inexact shard scan:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} (shard {v.details['shard']}, "
                f"got {v.details['candidates']}, "
                f"expected {v.details['expected']})\n"
            )
        pytest.fail(msg)


def test_single_shard_is_brute_force(bench_report):
    """
    Test that with one shard every query sees the global top-K.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("brute_force", [])

    if violations:
        msg = f"{len(violations)} k=1 queries differ from a global scan:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: got {v.details['candidates']}, "
                f"expected {v.details['expected']}\n"
            )
        pytest.fail(msg)
