"""Training-set safety checks."""

# pylint: disable=too-few-public-methods,arguments-differ
from consent_registry.manifest import Decision
from consent_registry.models import Check, DemoCheckContext, Report


class UsableSetOptedInCheck(Check):
    """Check that only opted-in images are used for training."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: DemoCheckContext,
        **kwargs,
    ) -> None:
        """
        Check every usable image against the consent its creator recorded.

        :param report: The report object to add violations to.
        :param context: The context containing demo data.
        :param kwargs: Additional parameters for the check.
        """
        for asset_id in context.consent.usable:
            recorded = context.decisions.get(asset_id, Decision.UNKNOWN.value)
            if recorded != Decision.OPTED_IN.value:
                report.add_violation(
                    check_name="usable_not_opted_in",
                    subject=asset_id,
                    summary=f"Used for training although {recorded}",
                    details={"recorded": recorded},
                )


class ProvenanceMatchesUsableCheck(Check):
    """Check that the synthetic image's provenance names the usable set."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: DemoCheckContext,
        **kwargs,
    ) -> None:
        """
        Check the concept images reached from the synthetic manifest.

        :param report: The report object to add violations to.
        :param context: The context containing demo data.
        :param kwargs: Additional parameters for the check.
        """
        expected = {context.asset_cids[a] for a in context.consent.usable}
        reached = set(context.provenance_assets)
        for cid in sorted(reached - expected):
            report.add_violation(
                check_name="provenance_extra",
                subject=cid,
                summary="Provenance names an image outside the usable set",
                details={},
            )
        for cid in sorted(expected - reached):
            report.add_violation(
                check_name="provenance_missing",
                subject=cid,
                summary="Provenance omits a usable image",
                details={},
            )
