"""Triple-run template validation with resumable partial state.

Every record is classified three times; it enters the exemplar pool only when
all three replies agree. Disagreeing records stay in the db (for audit) with
validated=False. A transport failure mid-run raises ValidationInterrupted
carrying the partial state, which can be persisted and passed back in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .client import ClassificationFailureError, VlmTransportError
from .retrieve import classify_involvement
from .templates import TemplateDb

__all__ = ["ValidationState", "ValidationInterrupted", "validate_templates", "apply_validation"]

_FAILED_RUN = -1  # classification-failure sentinel kept for audit


@dataclass
class ValidationState:
    runs: int = 3
    results: dict[str, list[int]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"runs": self.runs, "results": self.results}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ValidationState":
        raw = json.loads(text)
        return cls(runs=int(raw["runs"]), results={k: list(map(int, v)) for k, v in raw["results"].items()})

    def consistent(self, record_id: str) -> bool:
        got = self.results.get(record_id, [])
        return (
            len(got) == self.runs
            and all(c == got[0] for c in got)
            and got[0] != _FAILED_RUN
        )


class ValidationInterrupted(RuntimeError):
    """Client failed mid-run; .state holds the resumable partial results."""

    def __init__(self, state: ValidationState, cause: Exception):
        super().__init__(f"validation interrupted: {cause}")
        self.state = state


def validate_templates(
    db: TemplateDb, client, prompts, runs: int = 3, state: ValidationState | None = None
) -> ValidationState:
    """Classify each record `runs` times; resume from `state` if given."""
    state = state or ValidationState(runs=runs)
    if state.runs != runs:
        raise ValueError(f"state was built for {state.runs} runs, asked for {runs}")
    for record in sorted(db.records, key=lambda r: r.record_id):
        got = state.results.setdefault(record.record_id, [])
        while len(got) < runs:
            try:
                result = classify_involvement(record.image_ref, client, prompts)
                got.append(int(result.value))
            except ClassificationFailureError:
                got.append(_FAILED_RUN)
            except VlmTransportError as exc:
                raise ValidationInterrupted(state, exc) from exc
    return state


def apply_validation(db: TemplateDb, state: ValidationState) -> TemplateDb:
    """Set validated flags from a completed state; db is mutated and returned."""
    missing = [r.record_id for r in db.records if r.record_id not in state.results]
    if missing:
        raise ValueError(f"validation state incomplete; missing records: {missing[:5]}")
    for record in db.records:
        record.validated = state.consistent(record.record_id)
    return db
