"""
Línea de comandos: synth, build, run, retest, analyze, report, serve, prompts
"""
import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ValidationError

from triage_audit.config import settings
from triage_audit.exceptions import ConfigError, TriageAuditError
from triage_audit.models import AnalysisOptions, BootstrapSpec, RunConfig, TestRetestReport
from triage_audit.record_store import RecordStore, load_records

logger = logging.getLogger("triage_audit.cli")

EXIT_ERROR = 1
EXIT_CONFIG = 2


def _write_json(path: Path, model: BaseModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Escrito {path}")
    return path


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"No existe el archivo de configuración: {path}")
    try:
        return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigError(f"Configuración inválida en {path}: {e}") from e


# ---------------------------------------------------------------------------
# Subcomandos
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> None:
    from triage_audit.services.synth_service import synth_cohort

    paths = synth_cohort(args.n, args.seed, Path(args.out))
    for name, path in paths.items():
        logger.info(f"{name}: {path}")


def cmd_build(args: argparse.Namespace) -> None:
    from triage_audit.services.cohort_service import RaceRules, ingest, stratified_sample
    from triage_audit.services.vignette_service import NamePools, build_corpus, write_corpus

    out = Path(args.out)
    rules = RaceRules.load(Path(args.race_rules) if args.race_rules else None)
    rows, cohort_manifest = ingest(Path(args.cohort), rules)
    sampled, sampling_manifest = stratified_sample(
        rows, args.per_stratum, args.seed, multi_membership=not args.single_membership
    )
    pools = NamePools.load(Path(args.pools) if args.pools else None)
    corpus, build_manifest = build_corpus(
        sampled, pools, args.seed, ablations=not args.no_ablations, blind_variants=not args.no_blind
    )
    n = write_corpus(out, corpus)
    logger.info(f"Corpus: {n} viñetas -> {out}")

    stem = out.with_suffix("")
    _write_json(Path(f"{stem}.cohort_manifest.json"), cohort_manifest)
    _write_json(Path(f"{stem}.sampling_manifest.json"), sampling_manifest)
    _write_json(Path(f"{stem}.build_manifest.json"), build_manifest)


def cmd_run(args: argparse.Namespace) -> None:
    from triage_audit.services.gateway_service import Gateway
    from triage_audit.services.runner_service import execute, plan
    from triage_audit.services.vignette_service import load_corpus

    config = load_run_config(Path(args.config))
    corpus = load_corpus(config.corpus_path)
    store = RecordStore(config.output_dir / settings.RECORDS_FILENAME)
    completed = store.completed_keys()
    items = plan(config, corpus, completed)

    async def _run():
        # Los backends se crean antes de cualquier ítem: una API key faltante aborta aquí
        gateway = Gateway(config.endpoints, config.decode, config.retry)
        try:
            with store:
                return await execute(items, config, store, gateway=gateway)
        finally:
            await gateway.close()

    manifest = asyncio.run(_run())
    manifest.skipped_completed = len(completed)
    _write_json(config.output_dir / settings.MANIFEST_FILENAME, manifest)


def cmd_retest(args: argparse.Namespace) -> None:
    from triage_audit.services.runner_service import test_retest
    from triage_audit.services.vignette_service import load_corpus

    config = load_run_config(Path(args.config))
    try:
        endpoint = config.endpoint(args.endpoint)
    except KeyError:
        raise ConfigError(f"Endpoint desconocido: {args.endpoint}")
    corpus = load_corpus(Path(args.corpus) if args.corpus else config.corpus_path)
    report = asyncio.run(test_retest(endpoint, corpus, n=args.n, seed=args.seed))
    out = Path(args.out) if args.out else config.output_dir / f"retest_{endpoint.id}.json"
    _write_json(out, report)


def cmd_analyze(args: argparse.Namespace) -> None:
    from triage_audit.services.analysis_service import analyze, default_bootstrap_spec
    from triage_audit.services.report_service import write_json
    from triage_audit.services.vignette_service import load_corpus

    if args.config:
        options = load_run_config(Path(args.config)).analysis_options()
    else:
        options = AnalysisOptions(
            run_id=args.run_id,
            augmentation_mode=args.augmentation,
            dedupe_duplicates=args.dedupe,
            dpd_population=args.dpd_population,
            chi2_yates=args.yates,
        )
    records_path = Path(args.records)
    if not records_path.exists():
        raise ConfigError(f"No existe el archivo de registros: {records_path}")

    spec = default_bootstrap_spec()
    if args.iterations:
        spec = BootstrapSpec(iterations=args.iterations, seed=spec.seed, workers=spec.workers)
    retest: Optional[TestRetestReport] = None
    if args.retest:
        retest = TestRetestReport.model_validate_json(Path(args.retest).read_text(encoding="utf-8"))

    report = analyze(load_records(records_path), load_corpus(Path(args.corpus)), options, spec, retest)
    write_json(report, Path(args.out))
    logger.info(f"Análisis: {len(report.cells)} celdas -> {args.out}")


def cmd_report(args: argparse.Namespace) -> None:
    from triage_audit.services.report_service import load_report, write_report

    analysis = Path(args.analysis)
    if not analysis.exists():
        raise ConfigError(f"No existe el análisis: {analysis}")
    out_dir = Path(args.out) if args.out else analysis.parent
    for path in write_report(load_report(analysis), args.format, out_dir):
        logger.info(f"Escrito {path}")


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    uvicorn.run("triage_audit.main:app", host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())


def cmd_prompts(args: argparse.Namespace) -> None:
    from triage_audit.services.report_service import export_prompts

    checksums = export_prompts(Path(args.out))
    for strategy, digest in checksums.items():
        logger.info(f"{strategy}: {digest}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triage-audit",
        description="Auditoría contrafactual de equidad de género en triaje ESI con LLMs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Genera una cohorte sintética con el esquema de urgencias")
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=str(settings.DATA_DIR / "synthetic"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="Ingesta, muestreo estratificado y corpus de viñetas")
    p.add_argument("--cohort", required=True, help="Directorio con edstays/triage/patients/medrecon")
    p.add_argument("--per-stratum", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pools", default=None, help="JSON de pools de nombres")
    p.add_argument("--race-rules", default=None, help="JSON de reglas de raza")
    p.add_argument("--out", required=True, help="Corpus JSONL de salida")
    p.add_argument("--no-ablations", action="store_true")
    p.add_argument("--no-blind", action="store_true")
    p.add_argument("--single-membership", action="store_true",
                   help="Cada visita pertenece sólo a su primera categoría")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("run", help="Ejecuta (o reanuda) endpoints × estrategias × viñetas")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("retest", help="Evalúa dos veces las mismas viñetas bajo Baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_retest)

    p = sub.add_parser("analyze", help="Métricas, intervalos y pruebas sobre los registros")
    p.add_argument("--records", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="RunConfig de la ejecución (orden de endpoints y opciones)")
    p.add_argument("--retest", default=None, help="Reporte test-retest en JSON")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--run-id", default="run")
    p.add_argument("--augmentation", action="store_true")
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--dpd-population", choices=("all", "originals"), default="all")
    p.add_argument("--yates", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="Exporta el análisis como CSV, JSON o Markdown")
    p.add_argument("--analysis", required=True)
    p.add_argument("--format", choices=("csv", "json", "md"), default="md")
    p.add_argument("--out", default=None, help="Directorio de salida")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="Sirve el simulador por HTTP")
    p.add_argument("--host", default=settings.SIM_HOST)
    p.add_argument("--port", type=int, default=settings.SIM_PORT)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("prompts", help="Exporta los textos de sistema de cada estrategia")
    p.add_argument("--out", default="prompts")
    p.set_defaults(func=cmd_prompts)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        logger.error(f"Error de configuración: {e}")
        return EXIT_CONFIG
    except TriageAuditError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
