"""Tests for the demo invariant checks and report bookkeeping."""

from consent_registry.checks.utils import get_inversions
from consent_registry.main import run_demo_checks
from consent_registry.manifest import Decision
from consent_registry.models import DemoCheckContext, Report
from consent_registry.workflow import (
    ApportionmentReport,
    ConsentEntry,
    ConsentReport,
    Payment,
)

PAYER = "0x" + "9a" * 20
WALLET_A = "0x" + "a1" * 20
WALLET_B = "0x" + "b2" * 20
CID_A = "cid:" + "aa" * 32
CID_B = "cid:" + "bb" * 32


def _context(payments, balances_after, provenance=(CID_A,), decision_b="OptedOut"):
    consent = ConsentReport(
        [
            ConsentEntry("a", "cid:" + "01" * 32, 0.9, Decision.OPTED_IN),
            ConsentEntry("b", "cid:" + "02" * 32, 0.9, Decision.OPTED_OUT),
        ]
    )
    return DemoCheckContext(
        consent=consent,
        apportionment=ApportionmentReport(PAYER, 100, payments, gas_fees=21000),
        decisions={"a": "OptedIn", "b": decision_b},
        wallets={CID_A: WALLET_A, CID_B: WALLET_B},
        asset_cids={"a": CID_A, "b": CID_B},
        provenance_assets=list(provenance),
        balances_before={PAYER: 10**6, WALLET_A: 0, WALLET_B: 0},
        balances_after=balances_after,
    )


def test_clean_demo_passes():
    """Test that a consistent demo run has no violations."""
    context = _context(
        [Payment(CID_A, 0.9, 1.0, WALLET_A, 100, 3)],
        {PAYER: 10**6 - 100 - 21000, WALLET_A: 100, WALLET_B: 0},
    )

    assert run_demo_checks(context, 5).passed


def test_unsafe_demo_is_reported():
    """Test that payments and provenance outside the usable set are caught."""
    context = _context(
        [
            Payment(CID_A, 0.9, 0.5, WALLET_B, 50, 3),
            Payment(CID_B, 0.9, 0.5, WALLET_B, 40, 4),
        ],
        {PAYER: 10**6 - 90 - 21000, WALLET_A: 0, WALLET_B: 90},
        provenance=(CID_B,),
    )

    report = run_demo_checks(context, 5)

    assert set(report.violations) == {
        "paid_unusable_image",
        "paid_wrong_wallet",
        "budget_conservation",
        "provenance_extra",
        "provenance_missing",
    }
    assert [v.subject for v in report.violations["paid_wrong_wallet"]] == [CID_A]


def test_usable_image_without_consent():
    """Test that training on an image recorded as opted out is caught."""
    context = _context([], {PAYER: 10**6}, decision_b="OptedOut")
    context.consent.entries[1] = ConsentEntry("b", None, None, Decision.OPTED_IN)
    context.provenance_assets.append(CID_B)

    report = run_demo_checks(context, 5)

    assert [v.subject for v in report.violations["usable_not_opted_in"]] == ["b"]
    assert report.violations["balance_diff"][0].subject == PAYER


def test_overrides_suppress_violations():
    """Test that an overridden subject is recorded instead of reported."""
    report = Report("demo", 5, overrides={"balance_diff": [PAYER]})

    report.add_violation("balance_diff", PAYER, "moved", {})
    report.add_violation("balance_diff", WALLET_A, "moved", {})

    assert [v.subject for v in report.violations["balance_diff"]] == [WALLET_A]
    assert report.used_overrides["balance_diff"] == [PAYER]
    assert not report.passed


def test_get_inversions():
    """Test detection of rises in a sequence that should not increase."""
    assert get_inversions([10.0, 8.0, 8.5, 12.0, 1.0], 0.1) == ([1, 2], [2])
    assert get_inversions([], 0.1) == ([], [])
