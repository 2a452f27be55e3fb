import json

import pandas as pd
import pytest

from triage_audit.exceptions import ContractError
from triage_audit.models import BootstrapSpec, Strategy
from triage_audit.services.analysis_service import analyze
from triage_audit.services.report_service import (
    TABLES,
    export_prompts,
    load_report,
    render_markdown,
    write_report,
)
from triage_audit.services.strategy_service import prompt_checksums
from tests.conftest import pair_corpus, sim_endpoint, simulated_records


@pytest.fixture
def report(tmp_path):
    corpus = pair_corpus(30, ablations=True)
    endpoints = [sim_endpoint("a", p_flip=0.3, fm_skew=0.6), sim_endpoint("b", p_flip=0.35, seed=9)]
    records, config = simulated_records(tmp_path, corpus, endpoints, [Strategy.BASELINE, Strategy.COT])
    return analyze(records, corpus, config, BootstrapSpec(iterations=100, seed=1))


def test_json_report_reloads(report, tmp_path):
    (path,) = write_report(report, "json", tmp_path / "out")
    assert path.name == "audit_report.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    assert [c["endpoint_id"] for c in data["cells"]] == ["a", "a", "b", "b"]
    assert load_report(path) == report


def test_markdown_report_sections(report, tmp_path):
    (path,) = write_report(report, "md", tmp_path / "out")
    assert path.name == "audit_report.md"
    text = path.read_text(encoding="utf-8")
    assert text == render_markdown(report)
    assert text.startswith("# Auditoría de equidad: run")
    for heading in ("## Métricas por endpoint y estrategia", "## Comparaciones entre modelos",
                    "## Ablaciones", "## Intervenciones frente a Baseline", "## Notas"):
        assert heading in text
    assert "| a / Baseline |" in text


def test_csv_tables(report, tmp_path):
    paths = write_report(report, "csv", tmp_path / "out")
    assert [p.stem for p in paths] == list(TABLES)
    metrics = pd.read_csv(tmp_path / "out" / "metrics.csv")
    assert len(metrics) == 4
    assert list(metrics["endpoint_id"]) == ["a", "a", "b", "b"]
    assert list(metrics["n_pairs"]) == [30, 30, 30, 30]
    interventions = pd.read_csv(tmp_path / "out" / "interventions.csv")
    assert set(interventions["intervention"]) == {"CoT"}


def test_unknown_format(report, tmp_path):
    with pytest.raises(ContractError):
        write_report(report, "xlsx", tmp_path)


def test_export_prompts(tmp_path):
    checksums = export_prompts(tmp_path / "prompts")
    assert checksums == prompt_checksums()
    assert checksums["Blind"] == checksums["Baseline"]
    saved = json.loads((tmp_path / "prompts" / "checksums.json").read_text(encoding="utf-8"))
    assert saved == checksums
    assert (tmp_path / "prompts" / "cot_system_prompt.txt").read_text(encoding="utf-8").endswith("ESI Level: [1-5]")
