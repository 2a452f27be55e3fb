"""
Inferencia estadística: bootstrap por pares, intervalos de proporción,
pruebas pareadas (McNemar, χ² 2x2) y corrección de Bonferroni
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.stats import chi2, chi2_contingency
from statsmodels.stats.proportion import proportion_confint

from triage_audit.exceptions import ContractError, UndefinedTest, UnstableStatistic
from triage_audit.models import BootstrapSpec, ConfidenceInterval, PairedTestResult
from triage_audit.services.metrics_service import (
    PairArrays,
    as_pair_arrays,
    directional_counts,
    flip_rate,
    fm_ratio,
)

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVELS = (0.05, 0.01, 0.001)

Statistic = Callable[[PairArrays], Optional[float]]


def chi2_sf_1df(x: float) -> float:
    """Cola superior de χ² con 1 grado de libertad."""
    if x < 0:
        raise ContractError(f"chi2_sf_1df requiere x >= 0 (recibido {x})")
    if x == 0:
        return 1.0
    return float(chi2.sf(x, df=1))


def significance_flags(p: float, bonferroni_alpha: Optional[float] = None) -> list:
    flags = [str(level) for level in SIGNIFICANCE_LEVELS if p < level]
    if bonferroni_alpha is not None and p < bonferroni_alpha:
        flags.append("bonferroni")
    return flags


def mcnemar(b: int, c: int) -> PairedTestResult:
    """
    McNemar con corrección de continuidad acotada en cero:
    χ² = max(|b - c| - 1, 0)² / (b + c)
    """
    if b < 0 or c < 0:
        raise ContractError(f"Conteos discordantes negativos: ({b}, {c})")
    if b + c == 0:
        raise UndefinedTest("mcnemar: no hay pares discordantes (b + c = 0)")
    statistic = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    p = chi2_sf_1df(statistic)
    return PairedTestResult(statistic=statistic, p=p, discordant=(b, c), significant_at=significance_flags(p))


def chi2_2x2(f1: int, m1: int, f2: int, m2: int, yates: bool = False) -> PairedTestResult:
    """
    χ² de Pearson sobre la tabla [[f1, m1], [f2, m2]] de conteos direccionales de dos modelos
    """
    table = np.array([[f1, m1], [f2, m2]], dtype=np.int64)
    if (table < 0).any():
        raise ContractError(f"Conteos negativos en la tabla: {table.tolist()}")
    if (table.sum(axis=1) == 0).any() or (table.sum(axis=0) == 0).any():
        raise UndefinedTest(f"chi2_2x2: marginal cero en {table.tolist()}")
    statistic, _, _, _ = chi2_contingency(table, correction=yates)
    statistic = max(float(statistic), 0.0)
    p = chi2_sf_1df(statistic)
    return PairedTestResult(statistic=statistic, p=p, table=table.tolist(), significant_at=significance_flags(p))


def _check_proportion(k: int, n: int) -> None:
    if n < 1 or k < 0 or k > n:
        raise ContractError(f"Proporción inválida k={k}, n={n}")


def wilson_ci(k: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    _check_proportion(k, n)
    lo, hi = proportion_confint(k, n, alpha=1 - confidence, method="wilson")
    lo = 0.0 if k == 0 else min(max(float(lo), 0.0), 1.0)
    hi = 1.0 if k == n else min(max(float(hi), 0.0), 1.0)
    return lo, hi


def clopper_pearson_ci(k: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    _check_proportion(k, n)
    lo, hi = proportion_confint(k, n, alpha=1 - confidence, method="beta")
    lo = 0.0 if k == 0 or math.isnan(lo) else float(lo)
    hi = 1.0 if k == n or math.isnan(hi) else float(hi)
    return lo, hi


def bonferroni(alpha: float, m: int) -> float:
    if m < 1:
        raise ContractError(f"bonferroni requiere m >= 1 (recibido {m})")
    return alpha / m


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

def flip_rate_statistic(arr: PairArrays) -> Optional[float]:
    return flip_rate(arr)


def fm_ratio_statistic(arr: PairArrays) -> Optional[float]:
    return fm_ratio(*directional_counts(arr))


def fm_ratio_haldane_statistic(arr: PairArrays) -> Optional[float]:
    return fm_ratio(*directional_counts(arr), haldane=True)


def bootstrap_ci(pairs, statistic_fn: Statistic, spec: Optional[BootstrapSpec] = None) -> ConfidenceInterval:
    """
    Intervalo percentil remuestreando pares con reemplazo.

    Cada iteración usa su propio generador derivado de (semilla, índice), por lo
    que el resultado no depende del orden ni del número de hilos. Las iteraciones
    con estadístico indefinido o no finito se omiten y se cuentan.
    """
    spec = spec or BootstrapSpec()
    arr = as_pair_arrays(pairs)
    n = len(arr)
    if n < 2:
        raise ContractError(f"bootstrap_ci requiere al menos 2 pares (recibido {n})")

    def _one(i: int) -> float:
        rng = np.random.default_rng([spec.seed, i])
        value = statistic_fn(arr.take(rng.integers(0, n, size=n)))
        if value is None or not math.isfinite(value):
            return math.nan
        return float(value)

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            values = np.fromiter(pool.map(_one, range(spec.iterations)), dtype=float, count=spec.iterations)
    else:
        values = np.fromiter((_one(i) for i in range(spec.iterations)), dtype=float, count=spec.iterations)

    defined = values[~np.isnan(values)]
    skipped = int(spec.iterations - defined.size)
    if skipped:
        logger.info(f"Bootstrap: {skipped}/{spec.iterations} iteraciones indefinidas omitidas")
    if skipped * 2 > spec.iterations:
        raise UnstableStatistic(
            f"Bootstrap inestable: {skipped} de {spec.iterations} iteraciones indefinidas",
            skipped=skipped,
            iterations=spec.iterations,
        )
    lo, hi = np.percentile(defined, [spec.lower_pct, spec.upper_pct])
    return ConfidenceInterval(lo=float(lo), hi=float(hi), iterations=spec.iterations, skipped=skipped)
