"""Accuracy checks for benchmark rows."""

# pylint: disable=too-few-public-methods,arguments-differ
from consent_registry.checks.utils import get_rows_by, row_subject
from consent_registry.models import BenchCheckContext, Check, Report


class UnperturbedAccuracyCheck(Check):
    """Check that every unperturbed query finds its own registration."""

    parametrization = [{"rows": "sharding_rows"}, {"rows": "variant_rows"}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        rows: str,
        **kwargs,
    ) -> None:
        """
        Check that unperturbed accuracy is 100% for every k and variant.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param rows: Which row list of the context to check.
        :param kwargs: Additional parameters for the check.
        """
        for row in getattr(context, rows):
            if row.query_kind != "unperturbed" or row.accuracy_pct == 100.0:
                continue
            report.add_violation(
                check_name="unperturbed_accuracy",
                subject=row_subject(row),
                summary=f"Unperturbed accuracy {row.accuracy_pct:.1f}%",
                details={
                    "shard_misses": row.failures("shard-miss"),
                    "ranking_misses": row.failures("ranking-miss"),
                    "verify_misses": row.failures("verify-miss"),
                },
            )


class PerturbedAccuracyCheck(Check):
    """Check perturbed accuracy at one shard and its degradation with k."""

    parametrization = [{"k": 25}]

    def check(
        self,
        report: Report,
        context: BenchCheckContext,
        k: int,
        **kwargs,
    ) -> None:
        """
        Check that k=1 perturbed accuracy reaches the floor and that
        accuracy at ``k`` stays within the allowed degradation of it.

        :param report: The report object to add violations to.
        :param context: The context containing benchmark rows.
        :param k: The shard count compared against k=1.
        :param kwargs: Additional parameters for the check.
        """
        config = context.config
        perturbed = get_rows_by(
            (r for r in context.sharding_rows if r.query_kind == "perturbed"),
            lambda r: r.k,
        )
        if 1 not in perturbed:
            return
        baseline = perturbed[1][0]
        if baseline.accuracy_pct < config.perturbed_floor:
            report.add_violation(
                check_name="perturbed_floor",
                subject=row_subject(baseline),
                summary=(
                    f"Perturbed accuracy {baseline.accuracy_pct:.1f}% is below "
                    f"{config.perturbed_floor:.1f}%"
                ),
                details={
                    "ranking_misses": baseline.failures("ranking-miss"),
                    "verify_misses": baseline.failures("verify-miss"),
                },
            )
        for row in perturbed.get(k, []):
            drop = baseline.accuracy_pct - row.accuracy_pct
            if drop > config.degradation_points:
                report.add_violation(
                    check_name="perturbed_degradation",
                    subject=row_subject(row),
                    summary=f"Accuracy drops {drop:.1f} points from k=1",
                    details={
                        "baseline_pct": baseline.accuracy_pct,
                        "accuracy_pct": row.accuracy_pct,
                        "shard_misses": row.failures("shard-miss"),
                    },
                )
