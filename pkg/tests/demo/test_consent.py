"""Report-based tests for training-set consent."""

import pytest

from consent_registry.manifest import Decision


def test_only_opted_in_images_are_usable(demo_report):
    """
    Test that the usable set holds no opted-out or unknown image.

    :param demo_report: The demo report to check.
    """
    violations = demo_report.violations.get("usable_not_opted_in", [])

    if violations:
        msg = f"{len(violations)} images were used without consent:\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary}\n"
        pytest.fail(msg)


@pytest.mark.parametrize("check_name", ["provenance_extra", "provenance_missing"])
def test_provenance_names_the_usable_set(demo_report, check_name):
    """
    Test that the synthetic image's provenance lists exactly the usable images.

    :param demo_report: The demo report to check.
    :param check_name: The direction of mismatch to check.
    """
    violations = demo_report.violations.get(check_name, [])

    if violations:
        msg = f"{len(violations)} provenance mismatches ({check_name}):\n"
        for v in violations:
            msg += f"- {v.subject}: {v.summary}\n"
        pytest.fail(msg)


def test_every_opted_in_image_is_usable(demo_result, settings):
    """
    Test that the registry recognises every registered opted-in image.

    :param demo_result: The demo run.
    :param settings: The test settings.
    """
    counts = demo_result.consent.counts()
    assert counts[Decision.OPTED_IN.value] == (
        settings.demo.images - settings.demo.opted_out
    )
    assert counts[Decision.OPTED_OUT.value] == settings.demo.opted_out
    assert counts[Decision.UNKNOWN.value] == 0
    recorded = demo_result.context.decisions
    assert sorted(demo_result.consent.usable) == sorted(
        a for a, d in recorded.items() if d == Decision.OPTED_IN.value
    )
