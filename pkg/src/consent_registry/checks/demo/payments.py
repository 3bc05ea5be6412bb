"""Payment safety and conservation checks."""

# pylint: disable=too-few-public-methods,arguments-differ
from collections import Counter

from consent_registry.models import Check, DemoCheckContext, Report


class PaymentRecipientsCheck(Check):
    """Check that tokens only reach wallets of opted-in contributors."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: DemoCheckContext,
        **kwargs,
    ) -> None:
        """
        Check every positive payment's image and wallet.

        :param report: The report object to add violations to.
        :param context: The context containing demo data.
        :param kwargs: Additional parameters for the check.
        """
        usable = {context.asset_cids[a] for a in context.consent.usable}
        for payment in context.apportionment.payments:
            if payment.amount <= 0:
                continue
            if payment.asset_cid not in usable:
                report.add_violation(
                    check_name="paid_unusable_image",
                    subject=payment.asset_cid,
                    summary=f"Paid {payment.amount} for an image not trained on",
                    details={"wallet": payment.wallet},
                )
            if payment.wallet != context.wallets.get(payment.asset_cid):
                report.add_violation(
                    check_name="paid_wrong_wallet",
                    subject=payment.asset_cid,
                    summary="Payment went to a wallet the manifest does not name",
                    details={
                        "wallet": payment.wallet,
                        "manifest_wallet": context.wallets.get(payment.asset_cid),
                    },
                )


class BudgetConservationCheck(Check):
    """Check that payments add up to the budget exactly."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: DemoCheckContext,
        **kwargs,
    ) -> None:
        """
        Check the paid total: the budget if any payable weight is positive,
        otherwise zero.

        :param report: The report object to add violations to.
        :param context: The context containing demo data.
        :param kwargs: Additional parameters for the check.
        """
        apportionment = context.apportionment
        payable = any(p.weight > 0 and p.wallet for p in apportionment.payments)
        expected = apportionment.budget if payable else 0
        if apportionment.total_paid != expected:
            report.add_violation(
                check_name="budget_conservation",
                subject=apportionment.payer,
                summary=f"Paid {apportionment.total_paid}, expected {expected}",
                details={"budget": apportionment.budget},
            )


class BalanceDiffCheck(Check):
    """Check ledger balances against the payment report."""

    parametrization = [{}]

    def check(
        self,
        report: Report,
        context: DemoCheckContext,
        **kwargs,
    ) -> None:
        """
        Check that the payer lost the payments plus gas and each recipient
        gained its amount.

        :param report: The report object to add violations to.
        :param context: The context containing demo data.
        :param kwargs: Additional parameters for the check.
        """
        apportionment = context.apportionment
        expected = Counter()
        for payment in apportionment.payments:
            if payment.amount > 0:
                expected[payment.wallet] += payment.amount
        expected[apportionment.payer] -= (
            apportionment.total_paid + apportionment.gas_fees
        )
        for address in sorted(context.balances_after):
            diff = context.balances_after[address] - context.balances_before.get(
                address, 0
            )
            if diff != expected[address]:
                report.add_violation(
                    check_name="balance_diff",
                    subject=address,
                    summary=f"Balance moved by {diff}, expected {expected[address]}",
                    details={
                        "before": context.balances_before.get(address, 0),
                        "after": context.balances_after[address],
                    },
                )
