import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docfoundry.llm import BackendConfig, LlmClient
from docfoundry.structured import (ExtractionFailedError, FieldSpec,
                                   JsonExtractionError, RecordSchema, SchemaError,
                                   ValidationReport, extract_structured,
                                   parse_json_lenient, schema_to_instruction,
                                   validate)

MEASURED_QUANTITY = RecordSchema(
    name="MeasuredQuantity",
    fields=(FieldSpec("value", "string", "numerical value"),
            FieldSpec("unit", "string", "unit of measurement")))


def scripted(script) -> LlmClient:
    return LlmClient(BackendConfig(kind="scripted", model="t"), script=script)


# --- schema validity ---------------------------------------------------------------

def test_schema_requires_fields():
    with pytest.raises(SchemaError):
        RecordSchema(name="Empty", fields=())


def test_schema_rejects_duplicate_names():
    with pytest.raises(SchemaError):
        RecordSchema(name="Dup", fields=(
            FieldSpec("a", "string", "x"), FieldSpec("a", "number", "y")))


def test_field_requires_description_and_known_type():
    with pytest.raises(SchemaError):
        FieldSpec("a", "string", "")
    with pytest.raises(SchemaError):
        FieldSpec("a", "object", "desc")


def test_schema_file_round_trip(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(MEASURED_QUANTITY.to_json()))
    assert RecordSchema.load(path) == MEASURED_QUANTITY


# --- schema_to_instruction -----------------------------------------------------------

def test_instruction_names_every_field():
    text = schema_to_instruction(MEASURED_QUANTITY)
    assert '"value"' in text and '"unit"' in text
    assert "numerical value" in text and "unit of measurement" in text
    assert "JSON" in text


def test_instruction_deterministic():
    assert schema_to_instruction(MEASURED_QUANTITY) == \
        schema_to_instruction(MEASURED_QUANTITY)


def test_instruction_single_field_schema():
    schema = RecordSchema("One", (FieldSpec("only", "boolean", "the flag"),))
    text = schema_to_instruction(schema)
    assert text.count('- "') == 1


# --- parse_json_lenient ------------------------------------------------------------------

def test_parse_fenced_json():
    assert parse_json_lenient('```json\n{"a":1}\n```') == {"a": 1}


def test_parse_json_with_surrounding_prose():
    assert parse_json_lenient('Sure! {"a":1} Hope that helps.') == {"a": 1}


def test_parse_no_json_found():
    with pytest.raises(JsonExtractionError):
        parse_json_lenient("no braces here")


def test_parse_unbalanced_json():
    with pytest.raises(JsonExtractionError):
        parse_json_lenient('{"a": {"b": 1}')


def test_parse_invalid_json_reports_position():
    with pytest.raises(JsonExtractionError) as err:
        parse_json_lenient("{'single': 'quotes'}")
    assert err.value.position is not None


def test_parse_nested_and_string_braces():
    obj = parse_json_lenient('x {"a": {"b": "}"}, "c": [1, 2]} y')
    assert obj == {"a": {"b": "}"}, "c": [1, 2]}


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(
    st.text(alphabet="abcxyz_", min_size=1, max_size=6),
    st.one_of(st.text(max_size=20), st.integers(-10**6, 10**6),
              st.booleans(), st.lists(st.text(max_size=8), max_size=4)),
    max_size=6, min_size=1))
def test_parse_round_trips_strict_serialization(obj):
    assert parse_json_lenient(json.dumps(obj)) == obj
    assert parse_json_lenient(f"prefix {json.dumps(obj)} suffix") == obj


# --- validate ------------------------------------------------------------------------------

def test_validate_conformant_object():
    report = validate({"value": "35", "unit": "mph"}, MEASURED_QUANTITY)
    assert report.ok and report.errors == ()


def test_validate_missing_required_field():
    report = validate({"value": "35"}, MEASURED_QUANTITY)
    assert not report.ok
    assert report.errors == (("unit", "required field is missing"),)


def test_validate_wrong_type():
    report = validate({"value": 35, "unit": "mph"}, MEASURED_QUANTITY)
    assert not report.ok
    assert report.errors[0][0] == "value"


def test_validate_extra_fields_are_warnings():
    report = validate({"value": "35", "unit": "mph", "bonus": 1},
                      MEASURED_QUANTITY)
    assert report.ok
    assert report.warnings == (("bonus", "unexpected extra field"),)


def test_validate_strict_promotes_extras_to_errors():
    report = validate({"value": "35", "unit": "mph", "bonus": 1},
                      MEASURED_QUANTITY, strict=True)
    assert not report.ok
    assert ("bonus", "unexpected extra field") in report.errors


def test_validate_optional_field_may_be_absent():
    schema = RecordSchema("S", (FieldSpec("a", "string", "d"),
                                FieldSpec("b", "number", "d", required=False)))
    assert validate({"a": "x"}, schema).ok
    assert not validate({"a": "x", "b": "not a number"}, schema).ok


def test_validate_number_accepts_int_and_float_not_bool():
    schema = RecordSchema("N", (FieldSpec("n", "number", "d"),))
    assert validate({"n": 3}, schema).ok
    assert validate({"n": 3.5}, schema).ok
    assert not validate({"n": True}, schema).ok


def test_validate_string_array_homogeneous():
    schema = RecordSchema("A", (FieldSpec("xs", "string_array", "d"),))
    assert validate({"xs": ["a", "b"]}, schema).ok
    assert validate({"xs": []}, schema).ok
    assert not validate({"xs": ["a", 1]}, schema).ok


def test_validate_is_total_on_non_objects():
    assert not validate([1, 2], MEASURED_QUANTITY).ok
    assert not validate("text", MEASURED_QUANTITY).ok
    assert not validate(None, MEASURED_QUANTITY).ok


def test_report_invariant_enforced():
    with pytest.raises(ValueError):
        ValidationReport(ok=False, errors=())
    with pytest.raises(ValueError):
        ValidationReport(ok=True, errors=(("a", "b"),))


# --- extract_structured ----------------------------------------------------------------------

def test_appendix_conformance_example():
    client = scripted([
        ("He was going 35 mph.", ['{"value": "35", "unit": "mph"}'])])
    record, attempts = extract_structured(client, "He was going 35 mph.",
                                          MEASURED_QUANTITY)
    assert record == {"value": "35", "unit": "mph"}
    assert attempts == 1
    assert len(client.call_log) == 1


def test_repair_loop_invalid_then_valid():
    client = scripted([("", ["not json at all",
                             '{"value": "35", "unit": "mph"}'])])
    record, attempts = extract_structured(client, "speed text",
                                          MEASURED_QUANTITY, attempt_fix=True)
    assert record["unit"] == "mph"
    assert attempts == 2
    assert len(client.call_log) == 2


def test_no_attempt_fix_fails_after_one_call():
    client = scripted([("", ["garbage", '{"value": "35", "unit": "mph"}'])])
    with pytest.raises(ExtractionFailedError) as err:
        extract_structured(client, "text", MEASURED_QUANTITY, attempt_fix=False)
    assert err.value.attempts_used == 1
    assert len(client.call_log) == 1


def test_exhausted_attempts_carries_final_report():
    client = scripted([("", ['{"value": "35"}', '{"value": "35"}',
                             '{"value": "35"}'])])
    with pytest.raises(ExtractionFailedError) as err:
        extract_structured(client, "text", MEASURED_QUANTITY,
                           attempt_fix=True, max_attempts=3)
    assert err.value.attempts_used == 3
    assert ("unit", "required field is missing") in err.value.report.errors
    assert len(client.call_log) == 3


def test_repair_prompt_contains_prior_output_and_every_error():
    client = scripted([("", ['{"value": 35}',
                             '{"value": "35", "unit": "mph"}'])])
    record, attempts = extract_structured(client, "text", MEASURED_QUANTITY)
    assert attempts == 2
    repair_prompt = client.call_log.entries[1].prompt
    assert '{"value": 35}' in repair_prompt
    first_report = validate({"value": 35}, MEASURED_QUANTITY)
    for _, message in first_report.errors:
        assert message in repair_prompt


def test_attempts_never_exceed_max():
    for max_attempts in (1, 2, 4):
        client = scripted([("", ["junk"] * 10)])
        with pytest.raises(ExtractionFailedError) as err:
            extract_structured(client, "text", MEASURED_QUANTITY,
                               attempt_fix=True, max_attempts=max_attempts)
        assert err.value.attempts_used == max_attempts
        assert len(client.call_log) == max_attempts


def test_prompt_contains_instruction_and_input():
    client = scripted([("", ['{"value": "1", "unit": "m"}'])])
    extract_structured(client, "It is 1 m long.", MEASURED_QUANTITY)
    prompt = client.call_log.entries[0].prompt
    assert "It is 1 m long." in prompt
    assert schema_to_instruction(MEASURED_QUANTITY) in prompt
