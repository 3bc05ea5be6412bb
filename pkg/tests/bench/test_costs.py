"""Report-based tests for ingest costs."""

import pytest


@pytest.mark.parametrize(
    "check_name",
    ["string_encoding_cheaper", "fewer_dims_cheaper", "cost_ratio"],
)
def test_ingest_cost_orderings(bench_report, check_name):
    """
    Test the gas orderings across encodings, dimensions and variants.

    :param bench_report: The benchmark report to check.
    :param check_name: The ordering to check.
    """
    violations = bench_report.violations.get(check_name, [])

    if violations:
        msg = f"{len(violations)} cost cells break {check_name}:\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary} ({v.details})\n"
        pytest.fail(msg)


def test_cost_rows_cover_every_cell(bench_config, cost_rows):
    """
    Test that the cost benchmark measured every dimension, variant and encoding.

    :param bench_config: The benchmark config.
    :param cost_rows: The cost rows.
    """
    cells = {(r.dims, r.variant, r.key_encoding) for r in cost_rows}
    expected = {
        (dims, variant, encoding)
        for dims in bench_config.cost_dims
        for variant in bench_config.variants
        for encoding in ("int-array", "string")
    }
    assert cells == expected
    assert all(r.ingest_gas_mean > 0 for r in cost_rows)
