import math
import random

import pytest

from triage_audit.models import (
    AnalysisOptions,
    BiasProfile,
    BootstrapSpec,
    Gender,
    MetricReport,
    SimOverride,
    Strategy,
    TestRetestReport,
    Variant,
)
from triage_audit.services.analysis_service import (
    analyze,
    compare_endpoints,
    evaluate_intervention,
    fm_interval,
)
from triage_audit.services.runner_service import pair_join
from triage_audit.services.vignette_service import build_corpus
from tests.conftest import pair_corpus, random_rows, record_for, sampled_row, sim_endpoint, simulated_records

SPEC = BootstrapSpec(iterations=200, seed=3)


def test_single_endpoint_has_no_pairwise_tests(tmp_path):
    corpus = pair_corpus(40)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(p_flip=0.2)])
    report = analyze(records, corpus, config, SPEC)
    assert report.pairwise == []
    assert report.bonferroni_alpha is None
    assert any("un solo endpoint" in n for n in report.notes)
    (cell,) = report.cells
    assert cell.metrics.n_pairs == 40
    assert cell.metrics.n_vignettes == 80
    assert cell.flip_ci is not None and cell.flip_ci.iterations == 200


def test_identical_endpoints_show_no_difference(tmp_path):
    corpus = pair_corpus(60)
    endpoints = [sim_endpoint("a", p_flip=0.3, seed=5), sim_endpoint("b", p_flip=0.3, seed=5)]
    records, config = simulated_records(tmp_path, corpus, endpoints)
    report = analyze(records, corpus, config, SPEC)
    (test,) = report.pairwise
    assert (test.endpoint_a, test.endpoint_b, test.n_common_pairs) == ("a", "b", 60)
    assert test.delta_pp == 0.0
    assert test.flip_test.statistic == 0.0
    assert test.flip_test.p == 1.0
    assert test.direction_test.statistic == pytest.approx(0.0)
    assert test.direction_test.p == pytest.approx(1.0)
    assert report.bonferroni_alpha == pytest.approx(0.025)
    assert test.flip_test.significant_at == []


def test_endpoint_order_follows_configuration(tmp_path):
    corpus = pair_corpus(10)
    endpoints = [sim_endpoint("zeta"), sim_endpoint("alpha")]
    records, config = simulated_records(tmp_path, corpus, endpoints)
    report = analyze(records, corpus, config, SPEC)
    assert [c.endpoint_id for c in report.cells] == ["zeta", "alpha"]
    assert (report.pairwise[0].endpoint_a, report.pairwise[0].endpoint_b) == ("zeta", "alpha")


def test_analysis_is_deterministic(tmp_path):
    corpus = pair_corpus(50, ablations=True)
    endpoints = [sim_endpoint("a", p_flip=0.25, fm_skew=0.7), sim_endpoint("b", p_flip=0.1)]
    records, config = simulated_records(tmp_path, corpus, endpoints, [Strategy.BASELINE, Strategy.DEBIASED])
    first = analyze(records, corpus, config, SPEC).model_dump_json()
    assert analyze(records, corpus, config, SPEC).model_dump_json() == first
    shuffled = list(records)
    random.Random(1).shuffle(shuffled)
    assert analyze(shuffled, corpus, config, SPEC).model_dump_json() == first


def test_ablations_reported_for_baseline(tmp_path):
    corpus = pair_corpus(30, ablations=True)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(p_flip=0.2)])
    cell = analyze(records, corpus, config, SPEC).cells[0]
    assert [a.condition for a in cell.ablations] == [
        Variant.GENDER_ONLY.value, Variant.NAME_ONLY.value, Variant.AGE_PRESERVING_BLIND.value,
    ]
    assert all(a.n_pairs == 30 for a in cell.ablations)


def test_intervention_cells_and_verdicts(tmp_path):
    corpus = pair_corpus(80)
    endpoint = sim_endpoint(p_flip=0.4, strategy_overrides={Strategy.DEBIASED: SimOverride(p_flip=0.0)})
    records, config = simulated_records(tmp_path, corpus, [endpoint], [Strategy.BASELINE, Strategy.DEBIASED])
    report = analyze(records, corpus, config, SPEC)
    (intervention,) = report.interventions
    assert intervention.intervention == Strategy.DEBIASED.value
    assert intervention.delta_flip < 0
    debiased = report.cells[1]
    assert debiased.metrics.flip_rate == 0.0


@pytest.mark.parametrize("flip,fm,kappa,verdict", [
    (0.10, 1.5, 0.58, "supported"),
    (0.10, 1.5, 0.40, "not_supported"),
    (0.25, 3.0, 0.60, "not_supported"),
    (None, 1.2, 0.60, "supported"),
    (0.20, 2.0, 0.60, "not_supported"),
    (0.10, 1.5, None, "not_supported"),
])
def test_evaluate_intervention(flip, fm, kappa, verdict):
    baseline = MetricReport(flip_rate=0.20, fm_ratio=2.0, kappa_w=0.60)
    report = evaluate_intervention("sim", "Debiased", baseline, flip, fm, kappa)
    assert report.verdict == verdict


def test_evaluate_intervention_infinite_ratio_has_no_parity_delta():
    baseline = MetricReport(flip_rate=0.20, fm_ratio=math.inf, kappa_w=0.60)
    report = evaluate_intervention("sim", "CoT", baseline, 0.30, 1.0, 0.60)
    assert report.delta_fm_parity is None
    assert report.delta_flip == pytest.approx(0.10)
    assert report.verdict == "not_supported"


def _one_sided_records(corpus):
    records = []
    for v in corpus:
        esi = 4 if v.pair_id == "P00001" and v.gender == Gender.F else 3
        records.append(record_for(v, esi))
    return records


def test_fm_interval_falls_back_to_haldane():
    corpus = pair_corpus(30)
    report = analyze(_one_sided_records(corpus), corpus, AnalysisOptions(), SPEC)
    cell = report.cells[0]
    assert cell.metrics.fm_ratio == math.inf
    assert cell.fm_ci.method == "percentile-haldane"
    assert cell.fm_ci.note
    assert any("F/M sin corrección inestable" in n for n in report.notes)
    assert cell.bands.get("FlipRate") == "noise"


def test_fm_interval_needs_two_pairs():
    corpus = pair_corpus(1)
    report = analyze(_one_sided_records(corpus), corpus, AnalysisOptions(), SPEC)
    assert report.cells[0].fm_ci is None
    assert report.cells[0].flip_ci is None
    assert fm_interval([], SPEC) is None


def test_dpd_population_originals(tmp_path):
    corpus = pair_corpus(40)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(p_flip=0.3)])
    report = analyze(records, corpus, config.analysis_options().model_copy(update={"dpd_population": "originals"}), SPEC)
    metrics = report.cells[0].metrics
    assert metrics.dpd_population == "originals"
    assert metrics.n_vignettes == 80
    assert any("originals" in n for n in report.notes)


def test_dedupe_sensitivity_reported(tmp_path, pools):
    rows = random_rows(20, seed=4)
    sampled = [sampled_row(r) for r in rows] + [sampled_row(r, duplicate=True) for r in rows[:5]]
    corpus, _ = build_corpus(sampled, pools, seed=4, ablations=False, blind_variants=False)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(p_flip=0.3)])

    report = analyze(records, corpus, config, SPEC)
    cell = report.cells[0]
    assert cell.metrics.n_pairs == 25
    assert cell.dedupe_sensitivity["n_pairs"] == 20.0
    assert cell.dedupe_sensitivity["deduped"] == 1.0

    deduped = analyze(records, corpus, config.model_copy(update={"dedupe_duplicates": True}), SPEC)
    assert deduped.cells[0].metrics.n_pairs == 20
    assert deduped.cells[0].dedupe_sensitivity["n_pairs"] == 25.0


def test_augmentation_mode(tmp_path):
    corpus = pair_corpus(40)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(p_flip=0.3)])
    report = analyze(records, corpus, config.model_copy(update={"augmentation_mode": True}), SPEC)
    cell = report.cells[0]
    assert cell.augmentation is not None and cell.augmentation.n == 40
    assert [i.intervention for i in report.interventions] == ["augmentation"]
    assert any(n.startswith("augmentation") for n in report.notes)


def test_noise_floor_flag(tmp_path):
    corpus = pair_corpus(40)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint()])
    retest = TestRetestReport(endpoint_id="sim", n=40, flips=0, valid_pairs=40, parse_failures=0,
                              rate=0.0, cp_ci=(0.0, 0.09))
    report = analyze(records, corpus, config, SPEC, retest=retest)
    assert report.cells[0].within_noise_floor is True
    assert report.test_retest == retest


def test_degenerate_endpoint_noted(tmp_path):
    corpus = pair_corpus(20)
    records, config = simulated_records(tmp_path, corpus, [sim_endpoint(degenerate_level=3)])
    report = analyze(records, corpus, config, SPEC)
    assert report.cells[0].degenerate
    assert any("degenerada" in n for n in report.notes)


def test_compare_endpoints_restricts_to_common_pairs(tmp_path):
    corpus = pair_corpus(30)
    records, _ = simulated_records(tmp_path, corpus, [sim_endpoint("a", p_flip=0.5), sim_endpoint("b")])
    joins = pair_join(records, corpus)
    pairs_a = joins[("a", Strategy.BASELINE)].pairs
    pairs_b = joins[("b", Strategy.BASELINE)].pairs[:10]
    test = compare_endpoints("a", "b", pairs_a, pairs_b)
    assert test.n_common_pairs == 10
    empty = compare_endpoints("a", "b", pairs_a, [])
    assert empty.n_common_pairs == 0 and empty.notes == ["sin pares comunes"]


@pytest.mark.slow
def test_profile_panel_end_to_end(tmp_path):
    corpus = pair_corpus(2000, seed=21)
    endpoints = [
        sim_endpoint("directional", seed=41, p_flip=0.12, fm_skew=2 / 3),
        sim_endpoint("high-flip", seed=43, p_flip=0.44, fm_skew=0.92 / 1.92),
    ]
    records, config = simulated_records(tmp_path, corpus, endpoints)
    report = analyze(records, corpus, config, BootstrapSpec(iterations=1000, seed=1, lower_pct=0.5, upper_pct=99.5))
    profiles = {c.endpoint_id: c.profile for c in report.cells}
    assert profiles == {
        "directional": BiasProfile.A_DIRECTIONAL_FEMALE,
        "high-flip": BiasProfile.C_HIGH_FLIP,
    }
    (test,) = report.pairwise
    assert test.flip_test.p < report.bonferroni_alpha
    assert "bonferroni" in test.flip_test.significant_at
