"""
Fixtures compartidas: filas de cohorte, pools de nombres, corpus sintéticos
y endpoints del simulador
"""
import random
from typing import List, Optional

import pytest

from triage_audit.models import (
    CohortRow,
    ComplaintCategory,
    Disposition,
    EndpointKind,
    EvalRecord,
    EvalStatus,
    Gender,
    ModelEndpoint,
    Race,
    RunConfig,
    SampledRow,
    SimProfile,
    Strategy,
    StratumKey,
    Vignette,
)
from triage_audit.services.cohort_service import categorize, ingest, stratified_sample
from triage_audit.services.runner_service import plan
from triage_audit.services.simulator_service import simulate_level
from triage_audit.services.synth_service import COMPLAINTS, synth_cohort
from triage_audit.services.vignette_service import NamePools, build_corpus, make_original


def make_row(**overrides) -> CohortRow:
    base = dict(
        subject_id="10000001",
        stay_id="30000001",
        gender=Gender.F,
        age=45,
        race=Race.WHITE,
        chief_complaint="Chest pain",
        temperature=98.6,
        heart_rate=92.0,
        resp_rate=18.0,
        spo2=97.0,
        sbp=132.0,
        dbp=84.0,
        pain=6,
        medications=["Aspirin"],
        esi=2,
        disposition=Disposition.ADMITTED,
        category=ComplaintCategory.CHEST_PAIN,
    )
    base.update(overrides)
    return CohortRow(**base)


def sampled_row(row: CohortRow, duplicate: bool = False) -> SampledRow:
    category = row.category or categorize(row.chief_complaint)
    return SampledRow(row=row, stratum=StratumKey(esi=row.esi, category=category), duplicate=duplicate)


def random_rows(n: int, seed: int) -> List[CohortRow]:
    """Filas variadas (vitales, motivo, género, raza) con ESI real uniforme."""
    rng = random.Random(seed)
    races = [Race.WHITE, Race.BLACK, Race.HISPANIC, Race.ASIAN, Race.OTHER]
    rows = []
    for i in range(n):
        category = rng.choice(list(COMPLAINTS))
        rows.append(make_row(
            subject_id=str(10_000_000 + i),
            stay_id=str(30_000_000 + i),
            gender=rng.choice([Gender.F, Gender.M]),
            age=rng.randint(18, 90),
            race=rng.choice(races),
            chief_complaint=rng.choice(COMPLAINTS[category]),
            heart_rate=float(rng.randint(50, 140)),
            sbp=float(rng.randint(85, 190)),
            dbp=float(rng.randint(45, 110)),
            resp_rate=float(rng.randint(10, 30)),
            spo2=float(rng.randint(88, 100)),
            temperature=round(rng.uniform(96.5, 102.5), 1),
            pain=rng.randint(0, 10),
            medications=[],
            esi=rng.randint(1, 5),
            disposition=rng.choice([Disposition.ADMITTED, Disposition.HOME]),
            category=category,
        ))
    return rows


def pair_corpus(n: int, seed: int = 7, ablations: bool = False, blind_variants: bool = False,
                pools: Optional[NamePools] = None) -> List[Vignette]:
    corpus, _ = build_corpus(
        [sampled_row(r) for r in random_rows(n, seed)],
        pools or NamePools.load(),
        seed,
        ablations=ablations,
        blind_variants=blind_variants,
    )
    return corpus


def sim_endpoint(endpoint_id: str = "sim", max_in_flight: int = 4, **profile) -> ModelEndpoint:
    return ModelEndpoint(
        id=endpoint_id,
        kind=EndpointKind.SIMULATOR,
        sim_profile=SimProfile(**profile),
        max_in_flight=max_in_flight,
    )


def run_config(tmp_path, endpoints, strategies=(Strategy.BASELINE,), **kwargs) -> RunConfig:
    return RunConfig(
        endpoints=list(endpoints),
        strategies=list(strategies),
        corpus_path=tmp_path / "corpus.jsonl",
        output_dir=tmp_path / "run",
        **kwargs,
    )


def record_for(v: Vignette, esi: Optional[int], endpoint_id: str = "sim",
               strategy: Strategy = Strategy.BASELINE,
               status: Optional[EvalStatus] = None) -> EvalRecord:
    if status is None:
        status = EvalStatus.OK if esi is not None else EvalStatus.PARSE_FAILURE
    return EvalRecord(
        run_id="test",
        endpoint_id=endpoint_id,
        strategy=strategy,
        vignette_id=v.vignette_id,
        pair_id=v.pair_id,
        variant=v.variant,
        raw_response=f"ESI Level: {esi}" if esi is not None else "no level",
        parsed_esi=esi if status == EvalStatus.OK else None,
        status=status,
        attempts=1,
    )



def simulated_records(tmp_path, corpus, endpoints, strategies=(Strategy.BASELINE,)):
    """Registros OK generados directamente con el simulador, sin pasar por el gateway."""
    config = run_config(tmp_path, endpoints, strategies)
    profiles = {e.id: e.sim_profile for e in endpoints}
    records = []
    for item in plan(config, corpus):
        level = simulate_level(profiles[item.endpoint_id], item.features)
        records.append(EvalRecord(
            run_id="test",
            endpoint_id=item.endpoint_id,
            strategy=item.strategy,
            vignette_id=item.vignette_id,
            pair_id=item.pair_id,
            variant=item.variant,
            raw_response=f"ESI Level: {level}",
            parsed_esi=level,
            status=EvalStatus.OK,
            attempts=1,
        ))
    return records, config

@pytest.fixture(scope="session")
def pools() -> NamePools:
    return NamePools.load()


@pytest.fixture
def row() -> CohortRow:
    return make_row()


@pytest.fixture
def original(pools) -> Vignette:
    return make_original(sampled_row(make_row()), 1, pools, seed=42)


@pytest.fixture(scope="session")
def synthetic_cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    synth_cohort(3000, 7, out)
    return out


@pytest.fixture(scope="session")
def synthetic_rows(synthetic_cohort_dir):
    rows, manifest = ingest(synthetic_cohort_dir)
    return rows, manifest


@pytest.fixture(scope="session")
def synthetic_corpus(synthetic_rows, pools):
    rows, _ = synthetic_rows
    sampled, _ = stratified_sample(rows, 20, 42)
    corpus, manifest = build_corpus(sampled, pools, 42)
    return corpus, manifest
