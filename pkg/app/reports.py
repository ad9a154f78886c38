import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any

from .config import ensure_parent_dir

logger = logging.getLogger(__name__)

# Reports keep the first few messages per check; the count stays exact
MAX_VIOLATION_MESSAGES = 50


@dataclass
class CheckReport:
    """Outcome of one property check; violations are findings, not exceptions"""

    name: str
    passed: bool = True
    checked: int = 0
    violation_count: int = 0
    violations: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def fail(self, message: str) -> None:
        self.passed = False
        self.violation_count += 1
        if len(self.violations) < MAX_VIOLATION_MESSAGES:
            self.violations.append(message)

    def expect(self, condition: bool, message: str) -> bool:
        self.checked += 1
        if not condition:
            self.fail(message)
        return condition

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class VerdictReport:
    summary: dict[str, Any]
    checks: list[CheckReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def check(self, name: str) -> CheckReport:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed_checks(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "summary": self.summary,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        path = ensure_parent_dir(path)
        path.write_text(self.to_json(), encoding="utf-8")
        logger.info(f"📝 Verdict written to {path}")
