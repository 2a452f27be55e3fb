from triage_audit.models import EvalRecord, EvalStatus, Strategy, Variant
from triage_audit.record_store import RecordStore, load_records


def _record(i, status=EvalStatus.OK):
    return EvalRecord(
        run_id="r",
        endpoint_id="sim",
        strategy=Strategy.BASELINE,
        vignette_id=f"P{i:05d}-O",
        pair_id=f"P{i:05d}",
        variant=Variant.ORIGINAL,
        raw_response="ESI Level: 3",
        parsed_esi=3 if status == EvalStatus.OK else None,
        status=status,
        attempts=1,
    )


def test_append_and_read(tmp_path):
    path = tmp_path / "run" / "records.jsonl"
    with RecordStore(path) as store:
        store.append(_record(1))
        store.append(_record(2, EvalStatus.PARSE_FAILURE))
    records = load_records(path)
    assert [r.vignette_id for r in records] == ["P00001-O", "P00002-O"]
    assert records[1].status == EvalStatus.PARSE_FAILURE
    assert RecordStore(path).completed_keys() == {
        ("sim", "Baseline", "P00001-O"),
        ("sim", "Baseline", "P00002-O"),
    }


def test_truncated_tail_is_skipped_and_repaired(tmp_path):
    path = tmp_path / "records.jsonl"
    with RecordStore(path) as store:
        store.append(_record(1))
    line = _record(2).model_dump_json()
    with open(path, "a", encoding="utf-8") as f:
        f.write(line[: len(line) // 2])

    assert [r.vignette_id for r in load_records(path)] == ["P00001-O"]

    with RecordStore(path, durable=True) as store:
        store.append(_record(3))
    assert [r.vignette_id for r in load_records(path)] == ["P00001-O", "P00003-O"]


def test_missing_file_reads_empty(tmp_path):
    assert load_records(tmp_path / "none.jsonl") == []
    assert RecordStore(tmp_path / "none.jsonl").completed_keys() == set()
