"""Structured validation reports shared by weight-matrix and model checks."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Issue:
    """A single validation finding.

    ``severity`` is "error" for contract violations and "warning" for
    conditions that are legal but deserve attention.
    """

    code: str
    message: str
    severity: str = "error"
    where: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "severity": self.severity,
            "where": dict(self.where),
        }


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    def add(self, code: str, message: str, severity: str = "error", **where) -> None:
        self.issues.append(Issue(code, message, severity, where))

    @property
    def ok(self) -> bool:
        """True when there are no error-severity issues."""
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}

    def to_dict(self) -> dict:
        return {"ok": self.ok, "issues": [i.to_dict() for i in self.issues]}

    def __str__(self) -> str:
        if not self.issues:
            return "ok"
        return "; ".join(f"[{i.severity}] {i.code}: {i.message}" for i in self.issues)
