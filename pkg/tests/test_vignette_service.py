import random

import pytest

from triage_audit.exceptions import ContractError, PoolExhausted, RenderError, SexLinkedComplaint
from triage_audit.models import Gender, PronounMode, Race, Variant
from triage_audit.services.vignette_service import (
    INSTRUCTION,
    NamePools,
    age_preserving_blind,
    blind,
    build_corpus,
    clinical_hash,
    gender_only_swap,
    invert_counterfactual,
    is_sex_linked,
    load_corpus,
    make_counterfactual,
    make_original,
    name_only_swap,
    render,
    validate,
    write_corpus,
)
from tests.conftest import make_row, sampled_row


def _original(pools, **row):
    return make_original(sampled_row(make_row(**row)), 1, pools, seed=42)


def _cf(v, pools):
    return make_counterfactual(v, pools, random.Random("cf"))


def test_render_layout(original, pools):
    lines = original.text.split("\n")
    assert lines[0] == f"Patient: {original.name}, 45-year-old female"
    assert original.name in pools.pool(Gender.F, Race.WHITE)
    assert lines[1] == "Chief Complaint: Chest pain"
    assert lines[2] == "Vitals: HR 92, BP 132/84, RR 18, SpO2 97%, Temp 98.6°F"
    assert lines[3] == "History: Pain level: 6"
    assert lines[4] == "Medications: Aspirin"
    assert lines[-1] == INSTRUCTION
    assert validate(original, pools.all_names()) == []


def test_render_omits_missing_optional_fields(pools):
    v = _original(pools, resp_rate=None, spo2=None, temperature=None, pain=None, medications=[])
    assert "Vitals: HR 92, BP 132/84\n" in v.text
    assert "History: None reported" in v.text
    assert "Medications: None reported" in v.text


def test_render_requires_clinical_fields(original):
    broken = original.model_copy(update={"clinical": original.clinical.model_copy(update={"heart_rate": None})})
    with pytest.raises(RenderError) as exc:
        render(broken)
    assert exc.value.field == "heart_rate"


def test_counterfactual_changes_only_demographics(original, pools):
    cf = _cf(original, pools)
    assert cf.variant == Variant.COUNTERFACTUAL
    assert cf.vignette_id == "P00001-CF"
    assert cf.gender == Gender.M
    assert cf.name in pools.pool(Gender.M, Race.WHITE)
    assert cf.clinical == original.clinical
    assert cf.age == original.age and cf.race == original.race
    assert cf.ground_truth_esi == original.ground_truth_esi
    assert cf.text.split("\n")[1:] == original.text.split("\n")[1:]
    assert cf.text.split("\n")[0].endswith("45-year-old male")


def test_counterfactual_flips_pronouns_in_complaint(pools):
    v = _original(pools, chief_complaint="s/p Fall, she hurt her wrist")
    cf = _cf(v, pools)
    assert "Chief Complaint: s/p Fall, he hurt his wrist" in cf.text
    assert clinical_hash(cf.clinical) == clinical_hash(v.clinical)


def test_counterfactual_inverts(original, pools):
    cf = _cf(original, pools)
    assert invert_counterfactual(cf).model_dump() == original.model_dump()


def test_counterfactual_only_from_original(original, pools):
    with pytest.raises(ContractError):
        make_counterfactual(_cf(original, pools), pools, random.Random(1))
    with pytest.raises(ContractError):
        invert_counterfactual(original)


def test_sex_linked_complaint_has_no_counterfactual(pools):
    v = _original(pools, gender=Gender.M, chief_complaint="Testicular pain")
    with pytest.raises(SexLinkedComplaint):
        _cf(v, pools)


@pytest.mark.parametrize("complaint", [
    "prostatitis", "Prostate pain", "cervical pain", "Cervicitis", "Ovarian cyst",
    "testicle swelling", "Pregnant, bleeding", "Missed menstrual period",
])
def test_is_sex_linked_matches_stems(complaint):
    assert is_sex_linked(complaint)


@pytest.mark.parametrize("complaint", ["Chest pain", "Abdominal pain", "Shortness of breath", "Computer fall"])
def test_is_sex_linked_ignores_other_complaints(complaint):
    assert not is_sex_linked(complaint)


def test_cervical_complaint_has_no_counterfactual(pools):
    v = _original(pools, chief_complaint="Cervical pain")
    with pytest.raises(SexLinkedComplaint):
        _cf(v, pools)


def test_gender_only_swap_is_involution(original):
    go = gender_only_swap(original)
    assert go.variant == Variant.GENDER_ONLY
    assert go.name == original.name and go.gender == Gender.M
    assert go.pronouns == PronounMode.FLIPPED
    assert gender_only_swap(go).model_dump() == original.model_dump()


def test_name_only_swap(original, pools):
    no = name_only_swap(original, pools, random.Random(3))
    assert no.variant == Variant.NAME_ONLY
    assert no.gender == original.gender
    assert no.name != original.name
    assert no.name in pools.pool(Gender.F, Race.WHITE)


def test_name_only_swap_exhausted_pool(original):
    tiny = NamePools({Gender.F: {Race.WHITE: [original.name]}, Gender.M: {Race.WHITE: ["Adam"]}})
    with pytest.raises(PoolExhausted):
        name_only_swap(original, tiny, random.Random(3))


def test_other_race_uses_union_pool(pools):
    v = _original(pools, race=Race.OTHER)
    assert v.name in pools.pool(Gender.F, Race.OTHER)
    assert set(pools.pool(Gender.F, Race.WHITE)) <= set(pools.pool(Gender.F, Race.OTHER))


def test_age_preserving_blind(original):
    apb = age_preserving_blind(original)
    assert apb.text.split("\n")[0] == "Patient: 45-year-old adult"
    assert original.name not in apb.text
    assert apb.gender is None


def test_blind_removes_demographics(pools):
    v = _original(pools, chief_complaint="Headache, she says 45yo sister has same")
    bl = blind(v)
    assert bl.vignette_id == "P00001-O-BL"
    assert bl.source_vignette_id == v.vignette_id
    assert not bl.text.startswith("Patient:")
    assert "year-old" not in bl.text and "45yo" not in bl.text
    assert "Chief Complaint: Headache, they says sister has same" in bl.text
    assert bl.clinical == v.clinical
    assert validate(bl, pools.all_names()) == []


def test_blind_of_original_and_counterfactual_match(original, pools):
    cf = _cf(original, pools)
    assert blind(original).text == blind(cf).text


def test_blind_is_idempotent(original):
    bl = blind(original)
    assert blind(bl) == bl
    assert blind(bl).text == bl.text


def test_validate_reports_problems(original, pools):
    short = original.model_copy(update={"text": "Patient: x\nChief Complaint: y"})
    issues = validate(short, pools.all_names())
    assert "word_count_low" in issues
    assert "missing_heart_rate" in issues
    assert "missing_blood_pressure" in issues
    assert "missing_instruction" in issues
    assert "name_not_rendered" in issues
    assert "missing_chief_complaint" not in issues


def test_validate_flags_deleted_vitals(original, pools):
    no_hr = original.model_copy(update={"text": original.text.replace("HR 92, ", "")})
    assert validate(no_hr, pools.all_names()) == ["missing_heart_rate"]

    no_vitals = original.model_copy(update={
        "text": original.text.replace("HR 92, BP 132/84", ""),
    })
    assert validate(no_vitals, pools.all_names()) == ["missing_heart_rate", "missing_blood_pressure"]

    no_complaint = original.model_copy(update={"text": original.text.replace("Chest pain", "")})
    assert "missing_chief_complaint" in validate(no_complaint, pools.all_names())

    bl = blind(original)
    leaked = bl.model_copy(update={"text": f"{original.name} reports pain\n{bl.text}"})
    assert f"name_present:{original.name}" in validate(leaked, pools.all_names())


def test_build_corpus_counts(pools):
    rows = [
        sampled_row(make_row(stay_id="1")),
        sampled_row(make_row(stay_id="2", gender=Gender.M, chief_complaint="Testicular pain")),
        sampled_row(make_row(stay_id="3", heart_rate=None)),
    ]
    corpus, manifest = build_corpus(rows, pools, seed=42)
    assert manifest.n_originals == 2
    assert manifest.n_counterfactuals == 1
    assert manifest.n_unpaired_sex_linked == 1
    assert manifest.render_errors == {"heart_rate": 1}
    assert manifest.n_ablation == {"AgePreservingBlind": 1, "GenderOnly": 1, "NameOnly": 1}
    assert manifest.n_blind == 2
    assert [v.vignette_id for v in corpus] == [
        "P00001-O", "P00001-CF", "P00001-GO", "P00001-NO", "P00001-APB",
        "P00001-O-BL", "P00001-CF-BL", "P00002-O",
    ]


def test_build_corpus_is_deterministic(pools):
    rows = [sampled_row(r) for r in [make_row(stay_id=str(i), age=20 + i) for i in range(10)]]
    a, _ = build_corpus(rows, pools, seed=9)
    b, _ = build_corpus(rows, pools, seed=9)
    assert [v.model_dump() for v in a] == [v.model_dump() for v in b]


def test_corpus_round_trip(tmp_path, original, pools):
    path = tmp_path / "corpus.jsonl"
    assert write_corpus(path, [original, _cf(original, pools)]) == 2
    loaded = load_corpus(path)
    assert loaded[0] == original


def test_synthetic_corpus_integrity(synthetic_corpus, pools):
    corpus, manifest = synthetic_corpus
    assert manifest.n_originals > 100
    assert not manifest.invalid
    by_pair = {}
    for v in corpus:
        by_pair.setdefault(v.pair_id, []).append(v)
    names = pools.all_names()
    for members in by_pair.values():
        clinical = {clinical_hash(v.clinical) for v in members}
        assert len(clinical) == 1
        assert len({v.ground_truth_esi for v in members}) == 1
        for v in members:
            assert validate(v, names) == []
            if v.variant == Variant.GENDER_ONLY:
                assert gender_only_swap(v).model_dump() == next(
                    m for m in members if m.variant == Variant.ORIGINAL).model_dump()
