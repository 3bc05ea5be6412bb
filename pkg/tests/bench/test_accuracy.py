"""Report-based tests for lookup accuracy."""

import pytest


@pytest.mark.parametrize("check_name", ["unperturbed_accuracy"])
def test_unperturbed_queries_find_their_registration(bench_report, check_name):
    """
    Test that every unperturbed query resolves to its own manifest.

    :param bench_report: The benchmark report to check.
    :param check_name: The check to inspect.
    """
    violations = bench_report.violations.get(check_name, [])

    if violations:
        msg = f"{len(violations)} runs missed unperturbed queries:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"(shard misses: {v.details['shard_misses']}, "
                f"ranking misses: {v.details['ranking_misses']}, "
                f"verify misses: {v.details['verify_misses']})\n"
            )
        pytest.fail(msg)


def test_perturbed_accuracy_floor(bench_report):
    """
    Test that perturbed queries against one shard reach the accuracy floor.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("perturbed_floor", [])

    if violations:
        msg = "Perturbed accuracy at k=1 is too low:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"(ranking misses: {v.details['ranking_misses']}, "
                f"verify misses: {v.details['verify_misses']})\n"
            )
        pytest.fail(msg)


def test_perturbed_accuracy_degradation(bench_report):
    """
    Test that sharding costs little perturbed accuracy.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("perturbed_degradation", [])

    if violations:
        msg = f"{len(violations)} runs degrade too far from k=1:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"({v.details['baseline_pct']:.1f}% -> "
                f"{v.details['accuracy_pct']:.1f}%, "
                f"shard misses: {v.details['shard_misses']})\n"
            )
        pytest.fail(msg)
