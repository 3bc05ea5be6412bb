"""Report-based tests for contributor payments."""

import pytest

from consent_registry.constants import PAYER_ADDRESS
from consent_registry.demo import demo_dreambooth, load_demo_fixture
from consent_registry.errors import InsufficientFundsError


@pytest.mark.parametrize("check_name", ["paid_unusable_image", "paid_wrong_wallet"])
def test_payments_reach_consenting_wallets(demo_report, check_name):
    """
    Test that tokens only go to the wallets of images trained on.

    :param demo_report: The demo report to check.
    :param check_name: The kind of misdirected payment to check.
    """
    violations = demo_report.violations.get(check_name, [])

    if violations:
        msg = f"{len(violations)} misdirected payments ({check_name}):\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary} (wallet {v.details['wallet']})\n"
        pytest.fail(msg)


def test_budget_is_conserved(demo_report):
    """
    Test that the payments add up to the budget.

    :param demo_report: The demo report to check.
    """
    violations = demo_report.violations.get("budget_conservation", [])

    if violations:
        msg = "Payments do not add up:\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary} (budget {v.details['budget']})\n"
        pytest.fail(msg)


def test_balances_move_by_payments(demo_report):
    """
    Test that ledger balances moved exactly as reported.

    :param demo_report: The demo report to check.
    """
    violations = demo_report.violations.get("balance_diff", [])

    if violations:
        msg = f"{len(violations)} balances moved unexpectedly:\n"
        for v in violations:
            msg += (
                f"- {v.subject}: {v.summary} "
                f"({v.details['before']} -> {v.details['after']})\n"
            )
        pytest.fail(msg)


def test_zero_budget_pays_nothing(demo_fixture_root, settings, weights):
    """
    Test that a zero budget submits no transfers.

    :param demo_fixture_root: The fixture directory.
    :param settings: The test settings.
    :param weights: The scorer weights.
    """
    fixture = load_demo_fixture(demo_fixture_root)
    result = demo_dreambooth(fixture, 0, settings, weights)

    assert result.apportionment.total_paid == 0
    assert result.apportionment.transactions == []
    assert result.apportionment.gas_fees == 0
    assert result.context.balances_after == result.context.balances_before


def test_unaffordable_budget_pays_nobody(demo_fixture_root, settings, weights):
    """
    Test that a budget the payer cannot cover makes no transfer at all.

    :param demo_fixture_root: The fixture directory.
    :param settings: The test settings.
    :param weights: The scorer weights.
    """
    fixture = load_demo_fixture(demo_fixture_root)
    before = fixture.ledger.balance_of(PAYER_ADDRESS)
    count = len(fixture.ledger.transactions)

    with pytest.raises(InsufficientFundsError):
        demo_dreambooth(fixture, before + 1, settings, weights)

    assert fixture.ledger.balance_of(PAYER_ADDRESS) == before
    assert len(fixture.ledger.transactions) == count
