import pytest

from triage_audit.models import ParseRule
from triage_audit.services.parsing_service import parse


@pytest.mark.parametrize("text,esi", [
    ("ESI Level: 3", 3),
    ("**ESI Level:** **2**", 2),
    ("esi level 4 - stable vitals", 4),
    ("ESI Level - 1", 1),
])
def test_anchor_line(text, esi):
    result = parse(text)
    assert result.esi == esi
    assert result.rule_used == ParseRule.ANCHOR_LINE


def test_anchor_last_match_wins():
    text = "Initially ESI Level: 2 was considered.\n\nFinal answer: ESI Level: 3"
    assert parse(text).esi == 3


def test_anchor_beats_proximity():
    text = "I'd say ESI 4 at first, but reconsidering. ESI Level: 2"
    result = parse(text)
    assert (result.esi, result.rule_used) == (2, ParseRule.ANCHOR_LINE)


def test_proximity():
    result = parse("I would assign ESI 2 given the chest pain.")
    assert (result.esi, result.rule_used) == (2, ParseRule.ESI_PROXIMITY)
    assert parse("This is an ESI category 3 patient").esi == 3


def test_proximity_window():
    text = "ESI assessment for this patient: 3"
    assert parse(text) is None
    assert parse(text, window=40).esi == 3


def test_level_word_needs_triage_context():
    result = parse("Triage level: 2 because of hypotension")
    assert (result.esi, result.rule_used) == (2, ParseRule.LONE_LEVEL_WORD)
    assert parse("Pain level 2, no other complaints") is None


@pytest.mark.parametrize("text", [
    "Using the ESI 5-level triage system, I cannot decide.",
    "ESI ranges from 1-5 and I am unsure.",
    "ESI 1 to 5 scale, more information needed.",
    "End with: ESI Level: [1-5]",
    "ESI 25",
    "",
])
def test_non_assignments(text):
    assert parse(text) is None


def test_scale_name_is_skipped_but_assignment_found():
    result = parse("Using the ESI 5-level triage system, this patient is level 3.")
    assert (result.esi, result.rule_used) == (3, ParseRule.LONE_LEVEL_WORD)


def test_echoed_template_then_answer():
    text = "You asked me to end with ESI Level: [1-5]. My answer is ESI Level: 4"
    assert parse(text).esi == 4


def test_simulator_response_format():
    assert parse("ESI Level: 5 — simulated triage rationale (case abcd1234)").esi == 5


def test_none_input():
    assert parse(None) is None
