"""Shard prediction and within-shard retrieval checks."""

# pylint: disable=too-few-public-methods,arguments-differ
from consent_registry.checks.utils import (
    get_inversions,
    get_records,
    get_rows_by,
    record_subject,
)
from consent_registry.models import BenchCheckContext, Check, Report


class PredictOpsCheck(Check):
    """Check that shard prediction costs exactly k distance operations."""

    parametrization = [{"rows": "sharding_rows"}, {"rows": "variant_rows"}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        rows: str,
        **kwargs,
    ) -> None:
        """
        Check the distance-operation count of every query's shard prediction.

        On-chain counts are derived from the metered gas.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param rows: Which row list of the context to check.
        :param kwargs: Additional parameters for the check.
        """
        for record in get_records(getattr(context, rows)):
            if record.predict_ops != record.k:
                report.add_violation(
                    check_name="predict_ops",
                    subject=record_subject(record),
                    summary=f"{record.predict_ops} distance ops for k={record.k}",
                    details={"on_chain": record.predict_on_chain},
                )


class RetrievalTrendCheck(Check):
    """Check that within-shard retrieval gets cheaper as k grows."""

    parametrization = [
        {"column": "retrieval_ops", "wall_clock": False},
        {"column": "retrieval_ms", "wall_clock": True},
    ]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        column: str,
        wall_clock: bool,
        **kwargs,
    ) -> None:
        """
        Check that a retrieval cost column does not increase over k.

        One rise within the configured tolerance is allowed. Wall-clock
        columns are only checked on corpora large enough to time.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param column: The row attribute to check.
        :param wall_clock: Whether the column is a timing.
        :param kwargs: Additional parameters for the check.
        """
        config = context.config
        groups = get_rows_by(
            context.sharding_rows, lambda r: (r.variant, r.corpus_size, r.query_kind)
        )
        for (variant, size, kind), rows in groups.items():
            if wall_clock and size < config.trend_min_corpus:
                continue
            rows = sorted(rows, key=lambda r: r.k)
            values = [getattr(r, column) for r in rows]
            rises, large = get_inversions(values, config.trend_tolerance)
            if len(rises) > 1 or large:
                report.add_violation(
                    check_name=f"retrieval_trend_{column}",
                    subject=f"{variant}/N={size}/{kind}",
                    summary=f"{column} increases with k",
                    details={
                        "k": [r.k for r in rows],
                        column: values,
                        "rises_at_k": [rows[i + 1].k for i in rises],
                    },
                )


class WithinShardExactCheck(Check):
    """Check that retrieval returns exactly the predicted shard's top-K."""

    parametrization = [{"rows": "sharding_rows"}, {"rows": "variant_rows"}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        rows: str,
        **kwargs,
    ) -> None:
        """
        Check candidates against a straight scan of the predicted shard.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param rows: Which row list of the context to check.
        :param kwargs: Additional parameters for the check.
        """
        for record in get_records(getattr(context, rows)):
            if record.candidates != record.shard_scan:
                report.add_violation(
                    check_name="within_shard_exact",
                    subject=record_subject(record),
                    summary="Candidates differ from a scan of the shard",
                    details={
                        "shard": record.predicted_shard,
                        "candidates": list(record.candidates),
                        "expected": list(record.shard_scan),
                    },
                )


class BruteForceCheck(Check):
    """Check that a single shard behaves as a global scan."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        **kwargs,
    ) -> None:
        """
        Check k=1 candidates against a straight-line scan of the corpus.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param kwargs: Additional parameters for the check.
        """
        for record in get_records(context.sharding_rows):
            if record.global_scan is None:
                continue
            if record.candidates != record.global_scan:
                report.add_violation(
                    check_name="brute_force",
                    subject=record_subject(record),
                    summary="k=1 candidates differ from a global scan",
                    details={
                        "candidates": list(record.candidates),
                        "expected": list(record.global_scan),
                    },
                )
