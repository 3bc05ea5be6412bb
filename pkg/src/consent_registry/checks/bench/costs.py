"""Ingest cost trend checks."""

# pylint: disable=too-few-public-methods,arguments-differ
from collections import defaultdict

from consent_registry.models import BenchCheckContext, Check, Report
from consent_registry.registry import Variant


class StringEncodingCheaperCheck(Check):
    """Check that string keys cost less gas than word arrays in events."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        **kwargs,
    ) -> None:
        """
        Check the key-encoding gas ordering for event-log variants.

        :param report: The report object to add violations to.
        :param context: The context containing cost rows.
        :param kwargs: Additional parameters for the check.
        """
        gas = defaultdict(dict)
        for row in context.cost_rows:
            if Variant(row.variant).storage_on_chain:
                continue
            gas[(row.variant, row.dims)][row.key_encoding] = row.ingest_gas_mean
        for (variant, dims), by_encoding in sorted(gas.items()):
            if len(by_encoding) < 2:
                continue
            if by_encoding["string"] >= by_encoding["int-array"]:
                report.add_violation(
                    check_name="string_encoding_cheaper",
                    subject=f"{variant}/dims={dims}",
                    summary="String keys are not cheaper than word arrays",
                    details=dict(by_encoding),
                )


class FewerDimsCheaperCheck(Check):
    """Check that smaller fingerprints cost less gas."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        **kwargs,
    ) -> None:
        """
        Check that ingest gas strictly falls with dimension for every
        variant and key encoding.

        :param report: The report object to add violations to.
        :param context: The context containing cost rows.
        :param kwargs: Additional parameters for the check.
        """
        series = defaultdict(dict)
        for row in context.cost_rows:
            series[(row.variant, row.key_encoding)][row.dims] = row.ingest_gas_mean
        for (variant, encoding), by_dims in sorted(series.items()):
            dims = sorted(by_dims)
            gas = [by_dims[d] for d in dims]
            if any(low >= high for low, high in zip(gas, gas[1:])):
                report.add_violation(
                    check_name="fewer_dims_cheaper",
                    subject=f"{variant}/{encoding}",
                    summary="Ingest gas does not fall with dimension",
                    details={"dims": dims, "ingest_gas_mean": gas},
                )


class CostRatioCheck(Check):
    """Check the storage-versus-event gas ordering at every dimension."""

    parametrization = [{"heavy": "C-OOO", "light": "E-FOF", "ratio": 2.0}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        heavy: str,
        light: str,
        ratio: float,
        **kwargs,
    ) -> None:
        """
        Check the ingest gas ratio per dimension and key encoding.

        :param report: The report object to add violations to.
        :param context: The context containing cost rows.
        :param heavy: The variant expected to cost more.
        :param light: The variant expected to cost less.
        :param ratio: The minimum ratio.
        :param kwargs: Additional parameters for the check.
        """
        gas = defaultdict(dict)
        for row in context.cost_rows:
            gas[(row.dims, row.key_encoding)][row.variant] = row.ingest_gas_mean
        for (dims, encoding), by_variant in sorted(gas.items()):
            if heavy not in by_variant or light not in by_variant:
                continue
            if by_variant[heavy] < ratio * by_variant[light]:
                report.add_violation(
                    check_name="cost_ratio",
                    subject=f"dims={dims}/{encoding}",
                    summary=f"{heavy} ingest gas is under {ratio}x {light}",
                    details=dict(by_variant),
                )
