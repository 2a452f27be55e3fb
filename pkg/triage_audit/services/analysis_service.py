"""
Análisis de una ejecución: métricas por endpoint × estrategia, intervalos
bootstrap, perfiles de sesgo, pruebas pareadas entre modelos e intervenciones
"""
import itertools
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from triage_audit.config import settings
from triage_audit.exceptions import UndefinedMetric, UndefinedTest, UnstableStatistic
from triage_audit.models import (
    AblationReport,
    AuditReport,
    BootstrapSpec,
    CellReport,
    ConfidenceInterval,
    EvalRecord,
    InterventionReport,
    MetricKind,
    MetricReport,
    PairedTestResult,
    PairOutcome,
    PairwiseTest,
    AnalysisOptions,
    RunConfig,
    Strategy,
    TestRetestReport,
    Variant,
    Vignette,
)
from triage_audit.services.metrics_service import (
    accuracy,
    build_metric_report,
    directional_counts,
    flip_rate,
    fm_ratio,
    is_degenerate,
    pair_arrays,
    prediction_distribution,
    threshold_classify,
)
from triage_audit.services.runner_service import (
    GroupKey,
    Observations,
    PairJoin,
    classify_profile,
    pair_join,
)
from triage_audit.services.stats_service import (
    bonferroni,
    bootstrap_ci,
    chi2_2x2,
    flip_rate_statistic,
    fm_ratio_haldane_statistic,
    fm_ratio_statistic,
    mcnemar,
    significance_flags,
)

logger = logging.getLogger(__name__)

FAMILY_ALPHA = 0.05

AUGMENTATION_NOTE = (
    "augmentation: la predicción agregada de cada par es la más urgente de las dos "
    "cuando difieren; es una interpretación determinista de la 'moda' de dos respuestas"
)


def endpoint_order(groups: Iterable[GroupKey], options: AnalysisOptions) -> List[str]:
    """Orden declarado en la configuración; los endpoints no declarados van al final por id."""
    present = {k[0] for k in groups}
    declared = [e for e in options.endpoint_order if e in present]
    return declared + sorted(present - set(declared))


def default_bootstrap_spec() -> BootstrapSpec:
    return BootstrapSpec(
        iterations=settings.BOOTSTRAP_ITERATIONS,
        seed=settings.BOOTSTRAP_SEED,
        workers=settings.BOOTSTRAP_WORKERS,
    )


# ---------------------------------------------------------------------------
# Intervalos
# ---------------------------------------------------------------------------

def flip_interval(pairs: Sequence[PairOutcome], spec: BootstrapSpec) -> Optional[ConfidenceInterval]:
    if len(pairs) < 2:
        return None
    return bootstrap_ci(pairs, flip_rate_statistic, spec)


def fm_interval(pairs: Sequence[PairOutcome], spec: BootstrapSpec) -> Optional[ConfidenceInterval]:
    """
    IC bootstrap de F/M; si más de la mitad de las réplicas queda indefinida
    se recurre a la corrección de Haldane y el intervalo queda rotulado
    """
    if len(pairs) < 2:
        return None
    try:
        return bootstrap_ci(pairs, fm_ratio_statistic, spec)
    except UnstableStatistic as e:
        logger.warning(f"F/M inestable ({e.skipped}/{e.iterations} réplicas indefinidas); se usa Haldane")
        ci = bootstrap_ci(pairs, fm_ratio_haldane_statistic, spec)
        ci.method = "percentile-haldane"
        ci.note = f"F/M sin corrección inestable: {e.skipped}/{e.iterations} réplicas indefinidas"
        return ci


# ---------------------------------------------------------------------------
# Celdas endpoint × estrategia
# ---------------------------------------------------------------------------

def _bands(metrics: MetricReport) -> Dict[str, str]:
    values = {
        MetricKind.FLIP_RATE: metrics.flip_rate,
        MetricKind.DPD: metrics.dpd,
        MetricKind.EO_GAP: metrics.eo_gap,
        MetricKind.UT_GAP: metrics.ut_gap,
        MetricKind.CAL_GAP: metrics.cal_gap,
    }
    return {kind.value: threshold_classify(kind, v) for kind, v in values.items() if v is not None}


def _headline(pairs: Sequence[PairOutcome], obs: Observations) -> Dict[str, Optional[float]]:
    summary: Dict[str, Optional[float]] = {"n_pairs": float(len(pairs))}
    summary["flip_rate"] = flip_rate(pairs) if pairs else None
    summary["fm_ratio"] = fm_ratio(*directional_counts(pair_arrays(pairs))) if pairs else None
    try:
        acc = accuracy(obs.preds, obs.truths)
        summary["exact_pct"] = acc.exact_pct
        summary["kappa_w"] = acc.kappa_w
    except UndefinedMetric:
        summary["exact_pct"] = None
        summary["kappa_w"] = None
    return summary


def _ablations(join: PairJoin, spec: BootstrapSpec) -> List[AblationReport]:
    reports = []
    for variant, pairs in join.ablations.items():
        arr = pair_arrays(pairs)
        f_ut, m_ut = directional_counts(arr)
        reports.append(AblationReport(
            condition=variant.value,
            n_pairs=len(pairs),
            flips=int((arr.esi_f != arr.esi_m).sum()),
            flip_rate=flip_rate(arr),
            f_ut=f_ut,
            m_ut=m_ut,
            fm_ratio=fm_ratio(f_ut, m_ut),
            flip_ci=flip_interval(pairs, spec),
            fm_ci=fm_interval(pairs, spec),
        ))
    return reports


def analyze_cell(
    key: GroupKey,
    join: PairJoin,
    options: AnalysisOptions,
    spec: BootstrapSpec,
    retest: Optional[TestRetestReport] = None,
) -> CellReport:
    endpoint_id, strategy = key
    all_obs = join.observations
    all_pairs = join.pairs
    deduped_pairs = [p for p in all_pairs if not p.duplicate_source]
    deduped_obs = all_obs.filter(lambda i: not all_obs.duplicates[i])

    pairs, obs = (deduped_pairs, deduped_obs) if options.dedupe_duplicates else (all_pairs, all_obs)
    population = obs
    if options.dpd_population == "originals":
        population = obs.filter(lambda i: obs.variants[i] == Variant.ORIGINAL)

    metrics, calibration = build_metric_report(
        pairs,
        population.preds,
        population.truths,
        population.genders,
        population.admitted,
        n_excluded=join.excluded,
        n_unpaired=join.unpaired,
        dpd_population=options.dpd_population,
    )
    if population is not obs:
        # Exactitud siempre sobre todas las viñetas evaluadas
        try:
            acc = accuracy(obs.preds, obs.truths)
            metrics.exact_pct, metrics.within1_pct, metrics.kappa_w = acc.exact_pct, acc.within1_pct, acc.kappa_w
            metrics.n_vignettes = acc.n
        except UndefinedMetric:
            pass

    parsed = [(p, t) for p, t in zip(obs.preds, obs.truths) if p is not None]
    confusion, share = prediction_distribution([p for p, _ in parsed], [t for _, t in parsed])

    cell = CellReport(
        endpoint_id=endpoint_id,
        strategy=strategy,
        metrics=metrics,
        flip_ci=flip_interval(pairs, spec),
        fm_ci=fm_interval(pairs, spec),
        bands=_bands(metrics),
        calibration=calibration,
        confusion=confusion,
        prediction_share=share,
        degenerate=is_degenerate(share),
        ablations=_ablations(join, spec),
    )
    cell.profile = classify_profile(metrics.flip_rate, cell.fm_ci)

    if retest is not None and retest.cp_ci is not None and metrics.flip_rate is not None:
        lo, hi = retest.cp_ci
        cell.within_noise_floor = lo <= metrics.flip_rate <= hi

    if options.augmentation_mode and join.aggregated:
        kept = {p.pair_id for p in pairs}
        aggregated = [(agg, truth) for pair_id, agg, truth in join.aggregated if pair_id in kept]
        if aggregated:
            cell.augmentation = accuracy([a for a, _ in aggregated], [t for _, t in aggregated])

    if len(deduped_pairs) != len(all_pairs):
        alternate = (all_pairs, all_obs) if options.dedupe_duplicates else (deduped_pairs, deduped_obs)
        cell.dedupe_sensitivity = _headline(*alternate)
        cell.dedupe_sensitivity["deduped"] = 0.0 if options.dedupe_duplicates else 1.0
    return cell


# ---------------------------------------------------------------------------
# Comparaciones entre modelos (Baseline)
# ---------------------------------------------------------------------------

def _zero_discordance() -> PairedTestResult:
    return PairedTestResult(statistic=0.0, p=1.0, discordant=(0, 0), note="sin pares discordantes (b + c = 0)")


def compare_endpoints(a: str, b: str, pairs_a: Iterable[PairOutcome], pairs_b: Iterable[PairOutcome],
                      yates: bool = False) -> PairwiseTest:
    """McNemar sobre flips y χ² sobre la dirección, restringidos a los pares comunes."""
    by_a = {p.pair_id: p for p in pairs_a}
    by_b = {p.pair_id: p for p in pairs_b}
    common = sorted(set(by_a) & set(by_b))
    test = PairwiseTest(endpoint_a=a, endpoint_b=b, n_common_pairs=len(common))
    if not common:
        test.notes.append("sin pares comunes")
        return test

    common_a = [by_a[pid] for pid in common]
    common_b = [by_b[pid] for pid in common]
    flips_a = {p.pair_id for p in common_a if p.esi_F != p.esi_M}
    flips_b = {p.pair_id for p in common_b if p.esi_F != p.esi_M}
    test.delta_pp = 100 * (len(flips_a) - len(flips_b)) / len(common)

    try:
        test.flip_test = mcnemar(len(flips_a - flips_b), len(flips_b - flips_a))
    except UndefinedTest:
        test.flip_test = _zero_discordance()

    f_a, m_a = directional_counts(common_a)
    f_b, m_b = directional_counts(common_b)
    test.direction_table = [[f_a, m_a], [f_b, m_b]]
    try:
        test.direction_test = chi2_2x2(f_a, m_a, f_b, m_b, yates=yates)
    except UndefinedTest as e:
        test.notes.append(str(e))
    return test


def pairwise_tests(
    joins: Dict[GroupKey, PairJoin], options: AnalysisOptions
) -> Tuple[List[PairwiseTest], Optional[float]]:
    """Todas las parejas de endpoints bajo Baseline, con Bonferroni sobre la familia completa."""
    baseline = [e for e in endpoint_order(joins, options) if (e, Strategy.BASELINE) in joins]
    tests = [
        compare_endpoints(
            a, b,
            _headline_pairs(joins[(a, Strategy.BASELINE)], options),
            _headline_pairs(joins[(b, Strategy.BASELINE)], options),
            yates=options.chi2_yates,
        )
        for a, b in itertools.combinations(baseline, 2)
    ]
    results = [r for t in tests for r in (t.flip_test, t.direction_test) if r is not None]
    if not results:
        return tests, None
    alpha = bonferroni(FAMILY_ALPHA, len(results))
    for r in results:
        r.significant_at = significance_flags(r.p, alpha)
    return tests, alpha


def _headline_pairs(join: PairJoin, options: AnalysisOptions) -> List[PairOutcome]:
    if options.dedupe_duplicates:
        return [p for p in join.pairs if not p.duplicate_source]
    return join.pairs


# ---------------------------------------------------------------------------
# Intervenciones
# ---------------------------------------------------------------------------

def _parity_distance(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return abs(value - 1.0)


def _delta(new: Optional[float], old: Optional[float]) -> Optional[float]:
    if new is None or old is None:
        return None
    return new - old


def evaluate_intervention(endpoint_id: str, name: str, baseline: MetricReport,
                          flip: Optional[float], fm: Optional[float],
                          kappa: Optional[float]) -> InterventionReport:
    """
    supported: baja la tasa de flip o F/M se acerca a 1, con κ_w cayendo
    como mucho KAPPA_TOLERANCE
    """
    report = InterventionReport(
        endpoint_id=endpoint_id,
        intervention=name,
        delta_flip=_delta(flip, baseline.flip_rate),
        delta_fm_parity=_delta(_parity_distance(fm), _parity_distance(baseline.fm_ratio)),
        delta_kappa=_delta(kappa, baseline.kappa_w),
    )
    improved = (report.delta_flip is not None and report.delta_flip < 0) or (
        report.delta_fm_parity is not None and report.delta_fm_parity < 0
    )
    kappa_ok = report.delta_kappa is not None and report.delta_kappa >= -settings.KAPPA_TOLERANCE
    report.verdict = "supported" if improved and kappa_ok else "not_supported"
    return report


def interventions(cells: Dict[GroupKey, CellReport], options: AnalysisOptions) -> List[InterventionReport]:
    reports = []
    for endpoint_id in endpoint_order(cells, options):
        base = cells.get((endpoint_id, Strategy.BASELINE))
        if base is None:
            continue
        for strategy in Strategy:
            cell = cells.get((endpoint_id, strategy))
            if strategy == Strategy.BASELINE or cell is None:
                continue
            m = cell.metrics
            reports.append(evaluate_intervention(endpoint_id, strategy.value, base.metrics,
                                                 m.flip_rate, m.fm_ratio, m.kappa_w))
        if base.augmentation is not None:
            # El agregado no tiene flips ni dirección: ambas versiones reciben el mismo nivel
            reports.append(evaluate_intervention(endpoint_id, "augmentation", base.metrics,
                                                 0.0, None, base.augmentation.kappa_w))
    return reports


# ---------------------------------------------------------------------------
# Reporte
# ---------------------------------------------------------------------------

def analyze(
    records: Iterable[EvalRecord],
    corpus: Sequence[Vignette],
    options: Union[AnalysisOptions, RunConfig],
    spec: Optional[BootstrapSpec] = None,
    retest: Optional[TestRetestReport] = None,
) -> AuditReport:
    """
    AuditReport completo. No incluye marcas de tiempo: mismas entradas, mismo reporte.
    """
    if isinstance(options, RunConfig):
        options = options.analysis_options()
    spec = spec or default_bootstrap_spec()
    joins = pair_join(records, corpus, augmentation_mode=options.augmentation_mode)

    order = {e: i for i, e in enumerate(endpoint_order(joins, options))}
    keys = sorted(joins, key=lambda k: (order.get(k[0], len(order)), k[0], list(Strategy).index(k[1])))

    cells: Dict[GroupKey, CellReport] = {}
    for key in keys:
        logger.info(f"Analizando {key[0]}/{key[1].value}")
        cells[key] = analyze_cell(key, joins[key], options, spec, retest)

    report = AuditReport(run_id=options.run_id, cells=[cells[k] for k in keys], test_retest=retest)
    report.pairwise, report.bonferroni_alpha = pairwise_tests(joins, options)
    report.interventions = interventions(cells, options)

    report.notes.append(f"métricas de grupo sobre población: {options.dpd_population}")
    if options.augmentation_mode:
        report.notes.append(AUGMENTATION_NOTE)
    if options.dedupe_duplicates:
        report.notes.append("métricas principales sin estancias duplicadas entre estratos")
    for cell in report.cells:
        if cell.degenerate:
            report.notes.append(
                f"{cell.endpoint_id}/{cell.strategy.value}: distribución degenerada; "
                f"las comparaciones de flip no son informativas"
            )
        if cell.fm_ci is not None and cell.fm_ci.note:
            report.notes.append(f"{cell.endpoint_id}/{cell.strategy.value}: {cell.fm_ci.note}")
    if len({k[0] for k in keys}) < 2:
        report.notes.append("un solo endpoint: sin pruebas pareadas entre modelos")
    return report
