import pandas as pd
import pytest

from triage_audit.exceptions import ContractError
from triage_audit.services.cohort_service import RaceRules
from triage_audit.services.synth_service import RACE_RAW, TABLE_COLUMNS, synth_cohort


def test_writes_four_tables(tmp_path):
    paths = synth_cohort(200, 3, tmp_path)
    assert set(paths) == {"edstays", "triage", "patients", "medrecon"}
    stays = pd.read_csv(paths["edstays"])
    triage = pd.read_csv(paths["triage"])
    assert len(stays) == 200 and len(triage) == 200
    assert stays["stay_id"].min() == 30_000_000
    assert set(triage["acuity"].unique()) <= {1, 2, 3, 4, 5}


def test_same_seed_same_files(tmp_path):
    a = synth_cohort(100, 5, tmp_path / "a")
    b = synth_cohort(100, 5, tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()


def test_female_share_close_to_target(tmp_path):
    paths = synth_cohort(4000, 11, tmp_path)
    share = (pd.read_csv(paths["patients"])["gender"] == "F").mean()
    assert 0.50 < share < 0.58


def test_empty_cohort_writes_headers_only(tmp_path):
    paths = synth_cohort(0, 1, tmp_path)
    for name, path in paths.items():
        table = pd.read_csv(path)
        assert table.empty
        assert tuple(table.columns) == TABLE_COLUMNS[name]


def test_rejects_negative_size(tmp_path):
    with pytest.raises(ContractError):
        synth_cohort(-1, 1, tmp_path)


def test_marginals_converge(tmp_path):
    paths = synth_cohort(10_000, 7, tmp_path)
    acuity = pd.read_csv(paths["triage"])["acuity"]
    assert abs((acuity == 3).mean() - 0.536) <= 0.02
    rules = RaceRules.load()
    races = pd.read_csv(paths["edstays"])["race"].map(lambda raw: rules.map(raw).value)
    shares = races.value_counts(normalize=True)
    for race, (target, _) in RACE_RAW.items():
        assert abs(shares.get(race, 0.0) - target) <= 0.02, race
