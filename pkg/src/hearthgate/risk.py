"""Threshold-based anomaly detection over data-channel commits.

Rules are static comparators loaded from configuration. The engine runs
synchronously when a data entry commits (invoked by the ledger's commit
hook under a dedicated risk-engine identity), so alert ordering is
deterministic given transaction order. Homeowners can add notification
targets to a rule; alerts terminate at ledger events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

from .ledger import (
    ChannelName,
    CommitReceipt,
    LedgerNetwork,
    OrgIdentity,
    OrgRole,
    make_transaction,
)
from .payloads import DataEntry, RiskAlert


class Comparator(Enum):
    ABOVE = "above"
    BELOW = "below"


class UnknownRole(Exception):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    metric: str
    comparator: Comparator
    threshold: float
    unit: str
    severity: str
    targets: tuple[OrgRole, ...]

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if not self.targets:
            raise ValueError("rule needs at least one notification target")

    def matches(self, entry: DataEntry) -> bool:
        if entry.metric != self.metric:
            return False
        if self.comparator is Comparator.ABOVE:
            return entry.value > self.threshold
        return entry.value < self.threshold


def evaluate(entry: DataEntry, rules: list[ThresholdRule],
             entry_ref: tuple[int, int] = (0, 0)) -> RiskAlert | None:
    """First matching rule (declaration order) wins; no match, no alert."""
    for rule in rules:
        if rule.matches(entry):
            return RiskAlert(
                device_uid=entry.device_uid,
                metric=entry.metric,
                observed=entry.value,
                threshold=rule.threshold,
                severity=rule.severity,
                notified_roles=tuple(t.value for t in rule.targets),
                entry_height=entry_ref[0],
                entry_index=entry_ref[1],
            )
    return None


class RiskEngine:
    """Holds the rule set and writes alerts to the risk management channel."""

    def __init__(self, rules: list[ThresholdRule], identity: OrgIdentity):
        if identity.role is not OrgRole.RISK_ENGINE:
            raise ValueError("risk engine needs a risk_engine identity")
        self.rules = list(rules)
        self.identity = identity

    def register_contacts(self, contacts: dict[str, list[str]]) -> list[ThresholdRule]:
        """Add notification targets per metric; returns the updated rules.

        Unknown role names and empty target lists are rejected. Adding an
        already-present target is a no-op, so re-registration is idempotent.
        """
        resolved: dict[str, list[OrgRole]] = {}
        for metric, names in contacts.items():
            if not names:
                raise UnknownRole(f"metric {metric!r}: at least one target required")
            roles = []
            for name in names:
                try:
                    roles.append(OrgRole(name))
                except ValueError:
                    raise UnknownRole(f"unknown organization role {name!r}") from None
            resolved[metric] = roles
        for i, rule in enumerate(self.rules):
            extra = [r for r in resolved.get(rule.metric, []) if r not in rule.targets]
            if extra:
                self.rules[i] = replace(rule, targets=rule.targets + tuple(extra))
        return list(self.rules)

    def attach(self, network: LedgerNetwork) -> None:
        """Wire this engine into the network's data-commit path."""

        def hook(entry: DataEntry, receipt: CommitReceipt) -> None:
            alert = evaluate(entry, self.rules,
                             entry_ref=(receipt.height, receipt.tx_index))
            if alert is not None:
                tx = make_transaction(ChannelName.RISK_MANAGEMENT, alert,
                                      self.identity, receipt.commit_time)
                network.submit(tx, receipt.commit_time)

        network.attach_risk_hook(hook)


def load_rules(path: str) -> list[ThresholdRule]:
    """Load rules from a JSON list of {metric, comparator, threshold, severity,
    unit, targets} objects."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("rule file must contain a JSON list")
    rules = []
    for i, item in enumerate(raw):
        try:
            rules.append(ThresholdRule(
                metric=item["metric"],
                comparator=Comparator(item["comparator"]),
                threshold=float(item["threshold"]),
                unit=item.get("unit", ""),
                severity=item["severity"],
                targets=tuple(OrgRole(t) for t in item["targets"]),
            ))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"rule {i}: {exc}") from exc
    return rules


DEFAULT_RULES = [
    ThresholdRule(
        metric="temperature_c",
        comparator=Comparator.ABOVE,
        threshold=60.0,
        unit="C",
        severity="high",
        targets=(OrgRole.EMERGENCY_SERVICE,),
    ),
]
