"""Cross-variant equivalence and cost-ordering checks."""

# pylint: disable=too-few-public-methods,arguments-differ
from collections import defaultdict

from consent_registry.checks.utils import get_records, get_rows_by, record_subject
from consent_registry.models import BenchCheckContext, Check, Report
from consent_registry.registry import Variant


class VariantEquivalenceCheck(Check):
    """Check that every variant returns the same ranked candidates."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        **kwargs,
    ) -> None:
        """
        Check candidate lists across variants query by query.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param kwargs: Additional parameters for the check.
        """
        lists = defaultdict(dict)
        for record in get_records(context.variant_rows):
            key = (record.k, record.corpus_size, record.query_id)
            lists[key][record.variant] = record.candidates
        for (k, size, query_id), by_variant in lists.items():
            if len(set(by_variant.values())) > 1:
                report.add_violation(
                    check_name="variant_equivalence",
                    subject=f"k={k}/N={size}/{query_id}",
                    summary="Variants disagree on the candidate list",
                    details={v: list(c) for v, c in sorted(by_variant.items())},
                )


class PlacementCheck(Check):
    """Check that each query ran its steps where its variant places them."""

    parametrization = [{"rows": "sharding_rows"}, {"rows": "variant_rows"}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        rows: str,
        **kwargs,
    ) -> None:
        """
        Check the on/off-chain breakdown of every query.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param rows: Which row list of the context to check.
        :param kwargs: Additional parameters for the check.
        """
        for record in get_records(getattr(context, rows)):
            variant = Variant(record.variant)
            placement = (record.predict_on_chain, record.retrieval_on_chain)
            expected = (variant.query_prediction_on_chain, variant.retrieval_on_chain)
            if placement != expected:
                report.add_violation(
                    check_name="placement",
                    subject=record_subject(record),
                    summary="Query steps ran in the wrong place",
                    details={
                        "predict_on_chain": record.predict_on_chain,
                        "retrieval_on_chain": record.retrieval_on_chain,
                    },
                )


class IngestGasRatioCheck(Check):
    """Check that contract storage costs far more gas than the event log."""

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
        Check the mean ingest gas ratio of two variants per corpus size.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param heavy: The variant expected to cost more.
        :param light: The variant expected to cost less.
        :param ratio: The minimum ratio.
        :param kwargs: Additional parameters for the check.
        """
        groups = get_rows_by(context.variant_rows, lambda r: r.corpus_size)
        for size, rows in groups.items():
            gas = {r.variant: r.ingest_gas_mean for r in rows}
            if heavy not in gas or light not in gas:
                continue
            if gas[heavy] < ratio * gas[light]:
                report.add_violation(
                    check_name="ingest_gas_ratio",
                    subject=f"{heavy}/{light}/N={size}",
                    summary=(
                        f"{heavy} ingest gas {gas[heavy]:.0f} is under {ratio}x "
                        f"{light} ({gas[light]:.0f})"
                    ),
                    details={"heavy_gas": gas[heavy], "light_gas": gas[light]},
                )


class IngestTimeOrderCheck(Check):
    """Check that event-log ingest is faster than contract-storage ingest."""

    parametrization = [{"faster": "E-FOF", "slower": "C-OOO"}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        faster: str,
        slower: str,
        **kwargs,
    ) -> None:
        """
        Check the mean ingest wall time ordering on corpora large enough
        to time.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param faster: The variant expected to ingest faster.
        :param slower: The variant expected to ingest slower.
        :param kwargs: Additional parameters for the check.
        """
        groups = get_rows_by(context.variant_rows, lambda r: r.corpus_size)
        for size, rows in groups.items():
            if size < context.config.trend_min_corpus:
                continue
            ms = {r.variant: r.ingest_ms_mean for r in rows}
            if faster not in ms or slower not in ms:
                continue
            if ms[faster] >= ms[slower]:
                report.add_violation(
                    check_name="ingest_time_order",
                    subject=f"{faster}/{slower}/N={size}",
                    summary=f"{faster} ingest is not faster than {slower}",
                    details={"faster_ms": ms[faster], "slower_ms": ms[slower]},
                )
