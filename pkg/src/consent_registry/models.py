"""Data models for registry invariant checks."""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional

if TYPE_CHECKING:
    from consent_registry.bench import BenchConfig, BenchRow, CostRow
    from consent_registry.workflow import ApportionmentReport, ConsentReport


@dataclass
class Violation:
    """A violation of a check."""

    check_name: str
    subject: str
    summary: str
    details: Dict[str, Any]


@dataclass
class Report:
    """A report containing check results."""

    name: str
    seed: int
    violations: Dict[str, List[Violation]] = field(default_factory=dict)
    overrides: Dict[str, List[str]] = field(default_factory=dict)
    used_overrides: Dict[str, List[str]] = field(
        default_factory=lambda: defaultdict(list)
    )

    def add_violation(
        self,
        check_name: str,
        subject: str,
        summary: str,
        details: Dict[str, Any],
    ) -> None:
        """Add a violation to the report.

        :param check_name: The name of the check that failed.
        :param subject: What failed, e.g. ``E-FOF/k=25/perturbed``.
        :param summary: A brief summary of the failure.
        :param details: Additional details about the violation.
        """
        if subject in self.overrides.get(check_name, []):
            if subject not in self.used_overrides[check_name]:
                self.used_overrides[check_name].append(subject)
            return

        if check_name not in self.violations:
            self.violations[check_name] = []
        self.violations[check_name].append(
            Violation(check_name, subject, summary, details)
        )

    @property
    def passed(self) -> bool:
        """
        Whether no check failed.

        :return: True if there are no violations.
        """
        return not any(self.violations.values())


@dataclass
class BenchCheckContext:
    """Context for running benchmark invariant checks."""

    config: "BenchConfig"
    sharding_rows: List["BenchRow"] = field(default_factory=list)
    variant_rows: List["BenchRow"] = field(default_factory=list)
    cost_rows: List["CostRow"] = field(default_factory=list)


@dataclass
class DemoCheckContext:
    """Context for running end-to-end demo checks."""

    consent: "ConsentReport"
    apportionment: "ApportionmentReport"
    decisions: Dict[str, str]
    wallets: Dict[str, Optional[str]]
    asset_cids: Dict[str, str]
    provenance_assets: List[str]
    balances_before: Dict[str, int]
    balances_after: Dict[str, int]


# pylint: disable=too-few-public-methods
class Check:
    """Base class for invariant checks."""

    parametrization: List[Dict[str, Any]] = []

    def check(self, report: Report, context: Any, **kwargs) -> None:
        """Run the check.

        :param report: The report to add violations to.
        :param context: The context containing run data.
        :param kwargs: Additional parameters for the check.

        :raises NotImplementedError: If the method is not implemented.
        """
        raise NotImplementedError
