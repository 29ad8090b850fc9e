"""Declarative record schemas and the LLM structured-output repair loop.

A RecordSchema names typed fields; the model is prompted to answer with
a single JSON object, its reply is parsed leniently (code fences and
surrounding prose stripped), validated field by field, and on failure
re-prompted with the machine-readable ValidationReport up to
max_attempts times. Extra fields are warnings, not errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .llm import LlmClient

FIELD_TYPES = ("string", "number", "boolean", "string_array")


class SchemaError(Exception):
    pass


class JsonExtractionError(Exception):
    """No parseable JSON object in the model output; ``position`` is the
    failing character offset when the JSON was found but invalid."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class ExtractionFailedError(Exception):
    """All repair attempts exhausted; carries the final report."""

    def __init__(self, report: "ValidationReport", attempts_used: int):
        super().__init__(
            f"extraction failed after {attempts_used} attempt(s): "
            + "; ".join(f"{path}: {msg}" for path, msg in report.errors))
        self.report = report
        self.attempts_used = attempts_used


@dataclass(frozen=True)
class FieldSpec:
    name: str
    type: str
    description: str
    required: bool = True

    def __post_init__(self):
        if self.type not in FIELD_TYPES:
            raise SchemaError(f"unknown field type {self.type!r}")
        if not self.description:
            raise SchemaError(f"field {self.name!r} needs a description")


@dataclass(frozen=True)
class RecordSchema:
    name: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        if not self.fields:
            raise SchemaError("schema needs at least one field")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in schema {self.name!r}")

    def to_json(self) -> dict:
        return {"name": self.name,
                "fields": [{"name": f.name, "type": f.type,
                            "description": f.description, "required": f.required}
                           for f in self.fields]}

    @classmethod
    def from_json(cls, obj: dict) -> "RecordSchema":
        try:
            fields = tuple(FieldSpec(name=f["name"], type=f["type"],
                                     description=f["description"],
                                     required=f.get("required", True))
                           for f in obj["fields"])
            return cls(name=obj["name"], fields=fields)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RecordSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    errors: tuple[tuple[str, str], ...] = ()    # (path, message)
    warnings: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.ok != (not self.errors):
            raise ValueError("ok must hold exactly when errors is empty")

    def to_json(self) -> dict:
        return {"ok": self.ok,
                "errors": [{"path": p, "message": m} for p, m in self.errors],
                "warnings": [{"path": p, "message": m} for p, m in self.warnings]}

    def render(self) -> str:
        lines = [f"- {path}: {message}" for path, message in self.errors]
        return "\n".join(lines) if lines else "(no errors)"


def schema_to_instruction(schema: RecordSchema) -> str:
    """Deterministic prompt clause describing the expected JSON object."""
    lines = [f"Extract a {schema.name} record from the input.",
             "Answer with a single JSON object only, no prose, with these fields:"]
    for f in schema.fields:
        requirement = "required" if f.required else "optional"
        lines.append(f'- "{f.name}" ({f.type}, {requirement}): {f.description}')
    return "\n".join(lines)


def parse_json_lenient(text: str):
    """Extract and parse the first balanced top-level JSON object.

    Strips code fences and leading/trailing prose, then parses strictly.
    """
    stripped = text.strip()
    if stripped.startswith("```"):
        first_newline = stripped.find("\n")
        if first_newline != -1:
            stripped = stripped[first_newline + 1:]
        if stripped.rstrip().endswith("```"):
            stripped = stripped.rstrip()[:-3]
    start = stripped.find("{")
    if start == -1:
        raise JsonExtractionError("no JSON object found in output")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(stripped)):
        ch = stripped[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                candidate = stripped[start:i + 1]
                try:
                    return json.loads(candidate)
                except json.JSONDecodeError as exc:
                    raise JsonExtractionError(
                        f"invalid JSON: {exc.msg} at position {start + exc.pos}",
                        position=start + exc.pos) from exc
    raise JsonExtractionError("unbalanced JSON object in output",
                              position=len(stripped))


def _type_ok(value, field_type: str) -> bool:
    if field_type == "string":
        return isinstance(value, str)
    if field_type == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if field_type == "boolean":
        return isinstance(value, bool)
    if field_type == "string_array":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    return False


def validate(obj, schema: RecordSchema, strict: bool = False) -> ValidationReport:
    """Check presence and types; total (never raises, reports instead).

    Extra fields are warnings by default (models volunteer fields);
    strict=True promotes them to errors.
    """
    if not isinstance(obj, dict):
        return ValidationReport(ok=False, errors=(
            ("$", f"expected a JSON object, got {type(obj).__name__}"),))
    errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []
    for f in schema.fields:
        if f.name not in obj:
            if f.required:
                errors.append((f.name, "required field is missing"))
            continue
        if not _type_ok(obj[f.name], f.type):
            errors.append((f.name,
                           f"expected {f.type}, got {type(obj[f.name]).__name__}"))
    known = {f.name for f in schema.fields}
    for key in obj:
        if key not in known:
            target = errors if strict else warnings
            target.append((key, "unexpected extra field"))
    return ValidationReport(ok=not errors, errors=tuple(errors),
                            warnings=tuple(warnings))


def build_prompt(schema: RecordSchema, input_text: str) -> str:
    return f"{schema_to_instruction(schema)}\n\nInput:\n{input_text}"


def build_repair_prompt(base_prompt: str, prior_output: str,
                        report: ValidationReport) -> str:
    return (f"{base_prompt}\n\n"
            f"Your previous response was:\n{prior_output}\n\n"
            f"It failed validation with these errors:\n{report.render()}\n\n"
            "Respond again with a single JSON object only, fixing every error.")


def extract_structured(client: LlmClient, input_text: str, schema: RecordSchema,
                       attempt_fix: bool = True,
                       max_attempts: int = 3) -> tuple[dict, int]:
    """Prompt for a schema-conformant record, repairing on failure.

    Returns (record, attempts_used). With attempt_fix=False a single
    attempt is made regardless of max_attempts. Raises
    ExtractionFailedError carrying the final ValidationReport when every
    attempt fails; backend errors propagate.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    base_prompt = build_prompt(schema, input_text)
    budget = max_attempts if attempt_fix else 1
    prompt = base_prompt
    report: ValidationReport | None = None
    for attempt in range(1, budget + 1):
        result = client.complete(prompt)
        try:
            obj = parse_json_lenient(result.text)
        except JsonExtractionError as exc:
            report = ValidationReport(ok=False, errors=(("$", str(exc)),))
            prompt = build_repair_prompt(base_prompt, result.text, report)
            continue
        report = validate(obj, schema)
        if report.ok:
            return obj, attempt
        prompt = build_repair_prompt(base_prompt, result.text, report)
    assert report is not None
    raise ExtractionFailedError(report, attempts_used=budget)
