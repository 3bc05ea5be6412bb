"""Report-based tests for the placement variants."""

import pytest


def test_variants_return_identical_candidates(bench_report):
    """
    Test that every variant ranks the same candidates for the same query.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("variant_equivalence", [])

    if violations:
        msg = f"{len(violations)} queries differ across variants:\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary}\n"
            for variant, candidates in v.details.items():
                msg += f"    {variant}: {candidates}\n"
        pytest.fail(msg)


def test_steps_run_where_placed(bench_report):
    """
    Test that prediction and retrieval run on- or off-chain per variant.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("placement", [])

    if violations:
        msg = f"{len(violations)} queries ran a step in the wrong place:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"(predict on-chain: {v.details['predict_on_chain']}, "
                f"retrieval on-chain: {v.details['retrieval_on_chain']})\n"
            )
        pytest.fail(msg)


def test_storage_ingest_costs_more_gas(bench_report):
    """
    Test that contract-storage ingest costs well over event-log ingest.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("ingest_gas_ratio", [])

    if violations:
        msg = "Ingest gas ordering does not hold:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"({v.details['heavy_gas']:.0f} vs {v.details['light_gas']:.0f})\n"
            )
        pytest.fail(msg)


def test_event_ingest_is_faster(bench_report):
    """
    Test that event-log ingest takes less wall-clock time at scale.

    :param bench_report: The benchmark report to check.
    """
    violations = bench_report.violations.get("ingest_time_order", [])

    if violations:
        msg = "Ingest time ordering does not hold:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"({v.details['faster_ms']:.3f} ms vs "
                f"{v.details['slower_ms']:.3f} ms)\n"
            )
        pytest.fail(msg)
