"""
Exportación del AuditReport: JSON, tablas CSV y resumen Markdown
"""
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from triage_audit.exceptions import ContractError
from triage_audit.models import AuditReport, CellReport
from triage_audit.services.strategy_service import STRATEGIES, prompt_checksum

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "md")


def _pct(value: Optional[float], digits: int = 1) -> str:
    if value is None:
        return "n/a"
    return f"{100 * value:.{digits}f}%"


def _num(value: Optional[float], digits: int = 2) -> str:
    if value is None:
        return "n/a"
    if not math.isfinite(value):
        return "inf"
    return f"{value:.{digits}f}"


# ---------------------------------------------------------------------------
# Tablas
# ---------------------------------------------------------------------------

def metrics_table(report: AuditReport) -> pd.DataFrame:
    """Una fila por endpoint × estrategia: exactitud, flip, dirección y brechas de grupo."""
    rows = []
    for cell in report.cells:
        m = cell.metrics
        rows.append({
            "endpoint_id": cell.endpoint_id,
            "strategy": cell.strategy.value,
            "n_pairs": m.n_pairs,
            "n_excluded": m.n_excluded,
            "n_unpaired": m.n_unpaired,
            "exact_pct": m.exact_pct,
            "within1_pct": m.within1_pct,
            "kappa_w": m.kappa_w,
            "flip_rate": m.flip_rate,
            "f_ut": m.f_ut,
            "m_ut": m.m_ut,
            "fm_ratio": m.fm_ratio,
            "dpd": m.dpd,
            "eo_gap": m.eo_gap,
            "ut_gap": m.ut_gap,
            "cal_gap": m.cal_gap,
            "profile": cell.profile.value,
            "degenerate": cell.degenerate,
            "within_noise_floor": cell.within_noise_floor,
        })
    return pd.DataFrame(rows)


def calibration_table(report: AuditReport) -> pd.DataFrame:
    """Tasa de admisión por nivel predicho y género."""
    rows = []
    for cell in report.cells:
        if cell.calibration is None:
            continue
        for level, row in sorted(cell.calibration.table.items()):
            rows.append({
                "endpoint_id": cell.endpoint_id,
                "strategy": cell.strategy.value,
                "predicted_esi": level,
                "admit_rate_F": row.get("F"),
                "admit_rate_M": row.get("M"),
                "n_F": row.get("n_F"),
                "n_M": row.get("n_M"),
                "qualifying": level in cell.calibration.qualifying_levels,
            })
    return pd.DataFrame(rows)


def bootstrap_table(report: AuditReport) -> pd.DataFrame:
    rows = []
    for cell in report.cells:
        rows.append({
            "endpoint_id": cell.endpoint_id,
            "strategy": cell.strategy.value,
            "flip_rate": cell.metrics.flip_rate,
            "flip_lo": cell.flip_ci.lo if cell.flip_ci else None,
            "flip_hi": cell.flip_ci.hi if cell.flip_ci else None,
            "fm_ratio": cell.metrics.fm_ratio,
            "fm_lo": cell.fm_ci.lo if cell.fm_ci else None,
            "fm_hi": cell.fm_ci.hi if cell.fm_ci else None,
            "fm_method": cell.fm_ci.method if cell.fm_ci else None,
            "fm_skipped": cell.fm_ci.skipped if cell.fm_ci else None,
            "iterations": cell.flip_ci.iterations if cell.flip_ci else None,
        })
    return pd.DataFrame(rows)


def pairwise_table(report: AuditReport) -> pd.DataFrame:
    rows = []
    for t in report.pairwise:
        rows.append({
            "endpoint_a": t.endpoint_a,
            "endpoint_b": t.endpoint_b,
            "n_common_pairs": t.n_common_pairs,
            "delta_pp": t.delta_pp,
            "mcnemar_chi2": t.flip_test.statistic if t.flip_test else None,
            "mcnemar_p": t.flip_test.p if t.flip_test else None,
            "discordant_b": t.flip_test.discordant[0] if t.flip_test and t.flip_test.discordant else None,
            "discordant_c": t.flip_test.discordant[1] if t.flip_test and t.flip_test.discordant else None,
            "mcnemar_flags": ";".join(t.flip_test.significant_at) if t.flip_test else "",
            "direction_chi2": t.direction_test.statistic if t.direction_test else None,
            "direction_p": t.direction_test.p if t.direction_test else None,
            "direction_flags": ";".join(t.direction_test.significant_at) if t.direction_test else "",
            "notes": "; ".join(t.notes),
        })
    return pd.DataFrame(rows)


def strata_table(report: AuditReport) -> pd.DataFrame:
    rows = []
    for cell in report.cells:
        for key, strata in cell.metrics.strata.items():
            for s in strata.values():
                rows.append({
                    "endpoint_id": cell.endpoint_id,
                    "strategy": cell.strategy.value,
                    "stratify_by": key,
                    "stratum": s.stratum,
                    "n_pairs": s.n_pairs,
                    "flips": s.flips,
                    "flip_rate": s.flip_rate,
                    "f_ut": s.f_ut,
                    "m_ut": s.m_ut,
                    "fm_ratio": s.fm_ratio,
                    "per1000_f_ut": s.per1000_f_ut,
                    "low_n": s.low_n,
                })
    return pd.DataFrame(rows)


def ablation_table(report: AuditReport) -> pd.DataFrame:
    rows = []
    for cell in report.cells:
        for a in cell.ablations:
            rows.append({
                "endpoint_id": cell.endpoint_id,
                "strategy": cell.strategy.value,
                "condition": a.condition,
                "n_pairs": a.n_pairs,
                "flips": a.flips,
                "flip_rate": a.flip_rate,
                "flip_lo": a.flip_ci.lo if a.flip_ci else None,
                "flip_hi": a.flip_ci.hi if a.flip_ci else None,
                "fm_ratio": a.fm_ratio,
                "fm_lo": a.fm_ci.lo if a.fm_ci else None,
                "fm_hi": a.fm_ci.hi if a.fm_ci else None,
            })
    return pd.DataFrame(rows)


def intervention_table(report: AuditReport) -> pd.DataFrame:
    return pd.DataFrame([i.model_dump() for i in report.interventions])


TABLES = {
    "metrics": metrics_table,
    "calibration": calibration_table,
    "bootstrap": bootstrap_table,
    "pairwise": pairwise_table,
    "strata": strata_table,
    "ablations": ablation_table,
    "interventions": intervention_table,
}


# ---------------------------------------------------------------------------
# Escritura
# ---------------------------------------------------------------------------

def write_json(report: AuditReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_report(path: Path) -> AuditReport:
    return AuditReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def write_csv(report: AuditReport, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, build in TABLES.items():
        frame = build(report)
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
        paths.append(path)
        logger.info(f"Tabla {name}: {len(frame)} filas -> {path}")
    return paths


def _markdown_table(headers: List[str], rows: List[List[str]]) -> List[str]:
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    lines.extend("| " + " | ".join(r) + " |" for r in rows)
    return lines


def _cell_label(cell: CellReport) -> str:
    return f"{cell.endpoint_id} / {cell.strategy.value}"


def render_markdown(report: AuditReport) -> str:
    lines = [f"# Auditoría de equidad: {report.run_id}", ""]

    lines += ["## Métricas por endpoint y estrategia", ""]
    lines += _markdown_table(
        ["Celda", "Pares", "Exacto", "κw", "Flip", "IC flip", "F/M", "IC F/M", "DPD", "EO", "ΔUT", "Perfil"],
        [[
            _cell_label(c),
            str(c.metrics.n_pairs),
            _num(c.metrics.exact_pct, 1),
            _num(c.metrics.kappa_w, 3),
            _pct(c.metrics.flip_rate),
            f"[{_pct(c.flip_ci.lo)}, {_pct(c.flip_ci.hi)}]" if c.flip_ci else "n/a",
            _num(c.metrics.fm_ratio),
            f"[{_num(c.fm_ci.lo)}, {_num(c.fm_ci.hi)}]" if c.fm_ci else "n/a",
            _num(c.metrics.dpd, 3),
            _num(c.metrics.eo_gap, 3),
            _num(c.metrics.ut_gap, 3),
            c.profile.value,
        ] for c in report.cells],
    )

    lines += ["", "## Bandas de umbral", ""]
    for c in report.cells:
        bands = ", ".join(f"{k}: {v}" for k, v in c.bands.items()) or "n/a"
        lines.append(f"- {_cell_label(c)}: {bands}")

    if report.pairwise:
        alpha = _num(report.bonferroni_alpha, 5)
        lines += ["", f"## Comparaciones entre modelos (Baseline, α Bonferroni = {alpha})", ""]
        lines += _markdown_table(
            ["A", "B", "Pares", "Δ flip (pp)", "McNemar χ²", "p", "Dirección χ²", "p"],
            [[
                t.endpoint_a,
                t.endpoint_b,
                str(t.n_common_pairs),
                _num(t.delta_pp, 1),
                _num(t.flip_test.statistic) if t.flip_test else "n/a",
                _num(t.flip_test.p, 4) if t.flip_test else "n/a",
                _num(t.direction_test.statistic) if t.direction_test else "n/a",
                _num(t.direction_test.p, 4) if t.direction_test else "n/a",
            ] for t in report.pairwise],
        )

    ablations = [(c, a) for c in report.cells for a in c.ablations]
    if ablations:
        lines += ["", "## Ablaciones", ""]
        lines += _markdown_table(
            ["Celda", "Condición", "Pares", "Flip", "F/M"],
            [[_cell_label(c), a.condition, str(a.n_pairs), _pct(a.flip_rate), _num(a.fm_ratio)] for c, a in ablations],
        )

    if report.interventions:
        lines += ["", "## Intervenciones frente a Baseline", ""]
        lines += _markdown_table(
            ["Endpoint", "Intervención", "Δ flip", "Δ |F/M - 1|", "Δ κw", "Veredicto"],
            [[
                i.endpoint_id,
                i.intervention,
                _num(i.delta_flip, 3),
                _num(i.delta_fm_parity, 3),
                _num(i.delta_kappa, 3),
                i.verdict,
            ] for i in report.interventions],
        )

    if report.test_retest is not None:
        t = report.test_retest
        lines += ["", "## Test-retest", ""]
        lines.append(f"- {t.endpoint_id}: {t.flips}/{t.valid_pairs} discrepancias ({_pct(t.rate)})")
        if t.wilson_ci:
            lines.append(f"- Wilson 95%: [{_pct(t.wilson_ci[0], 2)}, {_pct(t.wilson_ci[1], 2)}]")
        if t.cp_ci:
            lines.append(f"- Clopper-Pearson 95%: [{_pct(t.cp_ci[0], 2)}, {_pct(t.cp_ci[1], 2)}]")

    sensitivity = [c for c in report.cells if c.dedupe_sensitivity]
    if sensitivity:
        lines += ["", "## Sensibilidad a estancias duplicadas", ""]
        for c in sensitivity:
            s = c.dedupe_sensitivity
            label = "sin duplicados" if s.get("deduped") else "con duplicados"
            lines.append(
                f"- {_cell_label(c)} ({label}): flip {_pct(s.get('flip_rate'))}, "
                f"F/M {_num(s.get('fm_ratio'))}, exacto {_num(s.get('exact_pct'), 1)}"
            )

    if report.notes:
        lines += ["", "## Notas", ""]
        lines.extend(f"- {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def write_markdown(report: AuditReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_markdown(report), encoding="utf-8")
    return path


def write_report(report: AuditReport, fmt: str, out_dir: Path) -> List[Path]:
    if fmt not in FORMATS:
        raise ContractError(f"Formato desconocido: {fmt} (opciones: {', '.join(FORMATS)})")
    if fmt == "json":
        return [write_json(report, out_dir / "audit_report.json")]
    if fmt == "md":
        return [write_markdown(report, out_dir / "audit_report.md")]
    return write_csv(report, out_dir)


def export_prompts(out_dir: Path) -> Dict[str, str]:
    """Escribe los textos de sistema tal cual y devuelve sus checksums SHA-256."""
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for strategy, spec in STRATEGIES.items():
        (out_dir / f"{strategy.value.lower()}_system_prompt.txt").write_text(spec.system_text, encoding="utf-8")
        checksums[strategy.value] = prompt_checksum(spec.system_text)
    (out_dir / "checksums.json").write_text(json.dumps(checksums, indent=2), encoding="utf-8")
    logger.info(f"Prompts exportados a {out_dir}")
    return checksums
