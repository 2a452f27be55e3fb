"""
Modelos Pydantic del dominio: cohorte, viñetas, gateway, registros y reportes
"""
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


# ---------------------------------------------------------------------------
# Enumeraciones
# ---------------------------------------------------------------------------

class Gender(str, Enum):
    F = "F"
    M = "M"

    def flipped(self) -> "Gender":
        return Gender.M if self is Gender.F else Gender.F


class Race(str, Enum):
    WHITE = "White"
    BLACK = "Black"
    HISPANIC = "Hispanic"
    ASIAN = "Asian"
    OTHER = "Other"
    UNKNOWN = "Unknown"


# Razas con pool propio de nombres; Other/Unknown usan la unión
POOL_RACES = (Race.WHITE, Race.BLACK, Race.HISPANIC, Race.ASIAN)


class Disposition(str, Enum):
    ADMITTED = "ADMITTED"
    HOME = "HOME"
    EXPIRED = "EXPIRED"
    TRANSFER = "TRANSFER"
    LWBS = "LWBS"
    AMA = "AMA"
    ELOPED = "ELOPED"
    OTHER = "OTHER"


ADMITTED_DISPOSITIONS = frozenset({Disposition.ADMITTED, Disposition.TRANSFER, Disposition.EXPIRED})


class ComplaintCategory(str, Enum):
    """Orden de declaración = orden de prioridad del clasificador"""
    CHEST_PAIN = "ChestPain"
    ABDOMINAL_PAIN = "AbdominalPain"
    PSYCHIATRIC = "Psychiatric"
    TRAUMA = "Trauma"
    RESPIRATORY = "Respiratory"
    NEUROLOGICAL = "Neurological"
    PAIN_OTHER = "PainOther"
    GENERAL_MEDICAL = "GeneralMedical"


class Variant(str, Enum):
    ORIGINAL = "Original"
    COUNTERFACTUAL = "Counterfactual"
    GENDER_ONLY = "GenderOnly"
    NAME_ONLY = "NameOnly"
    AGE_PRESERVING_BLIND = "AgePreservingBlind"
    BLIND = "Blind"


PAIR_VARIANTS = (Variant.ORIGINAL, Variant.COUNTERFACTUAL)
ABLATION_VARIANTS = (Variant.GENDER_ONLY, Variant.NAME_ONLY, Variant.AGE_PRESERVING_BLIND)


class PronounMode(str, Enum):
    AS_RECORDED = "AsRecorded"
    FLIPPED = "Flipped"
    NEUTRAL = "Neutral"


class Strategy(str, Enum):
    BASELINE = "Baseline"
    COT = "CoT"
    DEBIASED = "Debiased"
    BLIND = "Blind"


class EndpointKind(str, Enum):
    HTTP_CHAT = "HttpChat"
    SIMULATOR = "Simulator"


class ParseRule(str, Enum):
    ANCHOR_LINE = "AnchorLine"
    ESI_PROXIMITY = "EsiProximity"
    LONE_LEVEL_WORD = "LoneLevelWord"


class EvalStatus(str, Enum):
    OK = "OK"
    PARSE_FAILURE = "ParseFailure"
    PERSISTENT_FAILURE = "PersistentFailure"


class AgeBand(str, Enum):
    YOUNG = "18-44"
    MIDDLE = "45-64"
    OLDER = "65plus"

    @classmethod
    def from_age(cls, age: int) -> "AgeBand":
        if age < 45:
            return cls.YOUNG
        if age < 65:
            return cls.MIDDLE
        return cls.OLDER


class MetricKind(str, Enum):
    DPD = "DPD"
    EO_GAP = "EOGap"
    FLIP_RATE = "FlipRate"
    UT_GAP = "UTGap"
    CAL_GAP = "CalGap"


class BiasProfile(str, Enum):
    A_DIRECTIONAL_FEMALE = "A_directional_female"
    A_HIGH_FLIP = "A_directional_female_high_flip"
    B_NEAR_PARITY = "B_near_parity"
    C_HIGH_FLIP = "C_high_flip"
    UNCLASSIFIED = "unclassified"


class StratifyKey(str, Enum):
    CATEGORY = "category"
    RACE = "race"
    AGE_BAND = "age_band"
    TRUTH_ESI = "truth_esi"


# ---------------------------------------------------------------------------
# Cohorte
# ---------------------------------------------------------------------------

class StratumKey(BaseModel):
    model_config = ConfigDict(frozen=True)

    esi: int = Field(ge=1, le=5)
    category: ComplaintCategory

    def label(self) -> str:
        return f"ESI{self.esi}|{self.category.value}"


class ClinicalFields(BaseModel):
    """Campos clínicos que se mantienen idénticos dentro de un par"""
    model_config = ConfigDict(frozen=True)

    chief_complaint: str
    temperature: Optional[float] = None
    heart_rate: Optional[float] = None
    resp_rate: Optional[float] = None
    spo2: Optional[float] = None
    sbp: Optional[float] = None
    dbp: Optional[float] = None
    pain: Optional[int] = None
    medications: List[str] = Field(default_factory=list)


class CohortRow(BaseModel):
    """Una visita de urgencias desidentificada"""
    subject_id: str
    stay_id: str
    gender: Gender
    age: int
    race: Race
    chief_complaint: str
    temperature: Optional[float] = None
    heart_rate: Optional[float] = None
    resp_rate: Optional[float] = None
    spo2: Optional[float] = None
    sbp: Optional[float] = None
    dbp: Optional[float] = None
    pain: Optional[int] = None
    medications: List[str] = Field(default_factory=list)
    esi: int = Field(ge=1, le=5)
    disposition: Disposition
    category: Optional[ComplaintCategory] = None

    def clinical(self) -> ClinicalFields:
        return ClinicalFields(
            chief_complaint=self.chief_complaint,
            temperature=self.temperature,
            heart_rate=self.heart_rate,
            resp_rate=self.resp_rate,
            spo2=self.spo2,
            sbp=self.sbp,
            dbp=self.dbp,
            pain=self.pain,
            medications=list(self.medications),
        )


class SampledRow(BaseModel):
    row: CohortRow
    stratum: StratumKey
    duplicate: bool = False


class CohortManifest(BaseModel):
    """Conteos de exclusión por criterio"""
    n_stays: int = 0
    n_rows: int = 0
    excluded: Dict[str, int] = Field(default_factory=dict)
    malformed: Dict[str, int] = Field(default_factory=dict)
    gender_share: Dict[str, float] = Field(default_factory=dict)
    race_share: Dict[str, float] = Field(default_factory=dict)
    esi_share: Dict[str, float] = Field(default_factory=dict)
    category_share: Dict[str, float] = Field(default_factory=dict)


class SamplingManifest(BaseModel):
    seed: int
    per_stratum_target: int
    n_sampled: int = 0
    drawn: Dict[str, int] = Field(default_factory=dict)
    available: Dict[str, int] = Field(default_factory=dict)
    empty_strata: List[str] = Field(default_factory=list)
    duplicate_stay_ids: List[str] = Field(default_factory=list)
    sample_esi_share: Dict[str, float] = Field(default_factory=dict)
    source_esi_share: Dict[str, float] = Field(default_factory=dict)


# ---------------------------------------------------------------------------
# Viñetas
# ---------------------------------------------------------------------------

class Vignette(BaseModel):
    """Presentación clínica renderizada con su procedencia estructurada"""
    vignette_id: str
    pair_id: str
    variant: Variant
    name: Optional[str] = None
    gender: Optional[Gender] = None
    age: Optional[int] = None
    race: Race
    clinical: ClinicalFields
    text: str
    ground_truth_esi: int = Field(ge=1, le=5)
    disposition: Disposition
    category: ComplaintCategory
    stay_id: str
    # Género de la viñeta original del par (define la dirección de pronombres)
    source_gender: Gender
    # Nombre de la viñeta de origen: permite invertir la transformación
    source_name: Optional[str] = None
    source_vignette_id: Optional[str] = None
    pronouns: PronounMode = PronounMode.AS_RECORDED
    duplicate_source: bool = False

    @property
    def age_band(self) -> Optional[AgeBand]:
        return AgeBand.from_age(self.age) if self.age is not None else None


class BuildManifest(BaseModel):
    n_originals: int = 0
    n_counterfactuals: int = 0
    n_unpaired_sex_linked: int = 0
    n_ablation: Dict[str, int] = Field(default_factory=dict)
    n_blind: int = 0
    invalid: Dict[str, int] = Field(default_factory=dict)
    render_errors: Dict[str, int] = Field(default_factory=dict)
    duplicate_stay_ids: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Gateway y simulador
# ---------------------------------------------------------------------------

class ChatMessage(BaseModel):
    role: str
    content: str


class DecodeConfig(BaseModel):
    temperature: float = 0.0
    max_tokens: int = 1024


class RetryPolicy(BaseModel):
    max_retries: int = 5
    backoff: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    min_response_chars: int = 10

    def delay_for(self, retry_index: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(retry_index, len(self.backoff) - 1)]


class SimOverride(BaseModel):
    """Ajustes del simulador por estrategia (p.ej. colapso bajo CoT)"""
    p_flip: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    fm_skew: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    noise_rate: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    degenerate_level: Optional[int] = Field(default=None, ge=1, le=5)


class SimProfile(BaseModel):
    seed: int = 0
    p_flip: float = Field(default=0.0, ge=0.0, le=1.0)
    fm_skew: float = Field(default=0.5, ge=0.0, le=1.0)
    # Núcleo de confusión: probabilidades para desvíos -2..+2 respecto a la verdad
    base_error: List[float] = Field(default_factory=lambda: [0.03, 0.17, 0.60, 0.17, 0.03])
    noise_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    degenerate_level: Optional[int] = Field(default=None, ge=1, le=5)
    fm_skew_by_race: Dict[Race, float] = Field(default_factory=dict)
    strategy_overrides: Dict[Strategy, SimOverride] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_kernel(self) -> "SimProfile":
        if len(self.base_error) != 5 or any(p < 0 for p in self.base_error) or sum(self.base_error) <= 0:
            raise ValueError("base_error debe tener 5 probabilidades no negativas (desvíos -2..+2)")
        for race, skew in self.fm_skew_by_race.items():
            if not 0.0 <= skew <= 1.0:
                raise ValueError(f"fm_skew_by_race[{race.value}] fuera de [0, 1]")
        return self

    def for_strategy(self, strategy: Optional[Strategy]) -> "SimProfile":
        override = self.strategy_overrides.get(strategy) if strategy else None
        if override is None:
            return self
        changes = {k: v for k, v in override.model_dump().items() if v is not None}
        return self.model_copy(update=changes)


class ModelEndpoint(BaseModel):
    id: str
    kind: EndpointKind
    base_url: Optional[str] = None
    model_name: Optional[str] = None
    api_key_ref: Optional[str] = None
    inter_request_delay: float = Field(default=0.1, ge=0.0, le=0.3)
    max_in_flight: int = Field(default=4, ge=1)
    sim_profile: Optional[SimProfile] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "ModelEndpoint":
        if self.kind == EndpointKind.HTTP_CHAT:
            if not self.base_url or not self.model_name:
                raise ValueError(f"Endpoint {self.id}: HttpChat requiere base_url y model_name")
            if not 0.1 <= self.inter_request_delay <= 0.3:
                raise ValueError(f"Endpoint {self.id}: inter_request_delay debe estar en [0.1, 0.3]")
        elif self.sim_profile is None:
            raise ValueError(f"Endpoint {self.id}: Simulator requiere sim_profile")
        return self


class VignetteFeatures(BaseModel):
    """Lo que el simulador ve de una viñeta"""
    content_hash: str
    # Identidad de la entrada exacta; las repeticiones se cuentan por ella
    input_id: Optional[str] = None
    gender: Optional[Gender] = None
    strategy: Optional[Strategy] = None
    variant: Optional[Variant] = None
    truth_esi: int = Field(default=3, ge=1, le=5)
    race: Optional[Race] = None


class Completion(BaseModel):
    raw_text: str
    attempts: int
    latency_ms: float


# Formato de cable compatible con chat-completion

class ChatCompletionRequest(BaseModel):
    model: str
    messages: List[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 1024


class ChatChoice(BaseModel):
    index: int = 0
    message: ChatMessage
    finish_reason: str = "stop"


class ChatCompletionResponse(BaseModel):
    id: str
    object: str = "chat.completion"
    created: int = 0
    model: str
    choices: List[ChatChoice]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

class ParseResult(BaseModel):
    esi: int = Field(ge=1, le=5)
    rule_used: ParseRule
    span: Tuple[int, int]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    endpoints: List[ModelEndpoint] = Field(min_length=1)
    strategies: List[Strategy] = Field(min_length=1)
    corpus_path: Path
    output_dir: Path
    seed: int = 42
    augmentation_mode: bool = False
    dedupe_duplicates: bool = False
    run_id: str = "run"
    # Estrategias bajo las cuales se evalúan las variantes de ablación
    ablation_strategies: List[Strategy] = Field(default_factory=lambda: [Strategy.BASELINE])
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    retry: RetryPolicy = Field(default_factory=RetryPolicy)
    dpd_population: str = Field(default="all", pattern="^(all|originals)$")
    chi2_yates: bool = False

    @model_validator(mode="after")
    def _unique_endpoints(self) -> "RunConfig":
        ids = [e.id for e in self.endpoints]
        if len(ids) != len(set(ids)):
            raise ValueError("ids de endpoint duplicados")
        return self

    def endpoint(self, endpoint_id: str) -> ModelEndpoint:
        for e in self.endpoints:
            if e.id == endpoint_id:
                return e
        raise KeyError(endpoint_id)

    def analysis_options(self) -> "AnalysisOptions":
        return AnalysisOptions(
            run_id=self.run_id,
            endpoint_order=[e.id for e in self.endpoints],
            augmentation_mode=self.augmentation_mode,
            dedupe_duplicates=self.dedupe_duplicates,
            dpd_population=self.dpd_population,
            chi2_yates=self.chi2_yates,
        )


class AnalysisOptions(BaseModel):
    """Lo que el análisis necesita de una ejecución; no requiere los endpoints completos"""
    run_id: str = "run"
    endpoint_order: List[str] = Field(default_factory=list)
    augmentation_mode: bool = False
    dedupe_duplicates: bool = False
    dpd_population: str = Field(default="all", pattern="^(all|originals)$")
    chi2_yates: bool = False


class WorkItem(BaseModel):
    endpoint_id: str
    strategy: Strategy
    vignette_id: str
    pair_id: str
    variant: Variant
    # Texto efectivamente enviado (viñeta cegada bajo Blind)
    text: str
    features: VignetteFeatures

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.endpoint_id, self.strategy.value, self.vignette_id)


class EvalRecord(BaseModel):
    run_id: str
    endpoint_id: str
    strategy: Strategy
    vignette_id: str
    pair_id: str
    variant: Variant
    raw_response: str = ""
    parsed_esi: Optional[int] = Field(default=None, ge=1, le=5)
    parse_rule: Optional[ParseRule] = None
    status: EvalStatus
    attempts: int = 0
    latency_ms: float = 0.0
    timestamp: str = ""
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.endpoint_id, self.strategy.value, self.vignette_id)


class RunManifest(BaseModel):
    run_id: str
    planned: int = 0
    skipped_completed: int = 0
    status_counts: Dict[str, int] = Field(default_factory=dict)
    per_endpoint: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    parse_failures: List[Dict[str, str]] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Métricas y estadística
# ---------------------------------------------------------------------------

class PairOutcome(BaseModel):
    pair_id: str
    esi_F: int = Field(ge=1, le=5)
    esi_M: int = Field(ge=1, le=5)
    truth_esi: int = Field(ge=1, le=5)
    category: ComplaintCategory
    race: Race
    age_band: AgeBand
    admitted: bool
    original_gender: Gender
    stay_id: str = ""
    duplicate_source: bool = False


class BootstrapSpec(BaseModel):
    iterations: int = Field(default=10_000, ge=1)
    seed: int = 42
    lower_pct: float = 2.5
    upper_pct: float = 97.5
    workers: int = Field(default=1, ge=1)


class ConfidenceInterval(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    lo: float
    hi: float
    method: str = "percentile"
    iterations: int = 0
    skipped: int = 0
    note: Optional[str] = None

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


class PairedTestResult(BaseModel):
    statistic: float = Field(ge=0.0)
    p: float = Field(ge=0.0, le=1.0)
    discordant: Optional[Tuple[int, int]] = None
    table: Optional[List[List[int]]] = None
    significant_at: List[str] = Field(default_factory=list)
    note: Optional[str] = None


class AccuracyResult(BaseModel):
    exact_pct: float
    within1_pct: float
    kappa_w: Optional[float] = None
    n: int = 0


class CalibrationResult(BaseModel):
    gap: float
    # nivel -> {"F": tasa, "M": tasa, "n_F": n, "n_M": n}
    table: Dict[int, Dict[str, Optional[float]]]
    qualifying_levels: List[int]


class StratumReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    stratum: str
    n_pairs: int
    flips: int
    f_ut: int
    m_ut: int
    flip_rate: float
    fm_ratio: Optional[float] = None
    low_n: bool = False
    per1000_f_ut: Optional[float] = None


class MetricReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    exact_pct: Optional[float] = None
    within1_pct: Optional[float] = None
    kappa_w: Optional[float] = None
    flip_rate: Optional[float] = None
    f_ut: int = 0
    m_ut: int = 0
    fm_ratio: Optional[float] = None
    dpd: Optional[float] = None
    eo_gap: Optional[float] = None
    cal_gap: Optional[float] = None
    ut_gap: Optional[float] = None
    strata: Dict[str, Dict[str, StratumReport]] = Field(default_factory=dict)
    n_pairs: int = 0
    n_excluded: int = 0
    n_unpaired: int = 0
    n_vignettes: int = 0
    undefined: List[str] = Field(default_factory=list)
    dpd_population: str = "all"


class TestRetestReport(BaseModel):
    __test__ = False

    endpoint_id: str
    n: int
    flips: int
    valid_pairs: int
    parse_failures: int
    rate: Optional[float] = None
    wilson_ci: Optional[Tuple[float, float]] = None
    cp_ci: Optional[Tuple[float, float]] = None
    discrepancies: List[Dict[str, Any]] = Field(default_factory=list)


class AblationReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    condition: str
    n_pairs: int
    flips: int
    flip_rate: Optional[float] = None
    f_ut: int = 0
    m_ut: int = 0
    fm_ratio: Optional[float] = None
    flip_ci: Optional[ConfidenceInterval] = None
    fm_ci: Optional[ConfidenceInterval] = None


class InterventionReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    endpoint_id: str
    intervention: str
    delta_flip: Optional[float] = None
    delta_fm_parity: Optional[float] = None
    delta_kappa: Optional[float] = None
    verdict: str = "not_supported"


class PairwiseTest(BaseModel):
    endpoint_a: str
    endpoint_b: str
    n_common_pairs: int
    delta_pp: Optional[float] = None
    flip_test: Optional[PairedTestResult] = None
    direction_test: Optional[PairedTestResult] = None
    direction_table: Optional[List[List[int]]] = None
    notes: List[str] = Field(default_factory=list)


class CellReport(BaseModel):
    """Resultado de un endpoint × estrategia"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    endpoint_id: str
    strategy: Strategy
    metrics: MetricReport
    flip_ci: Optional[ConfidenceInterval] = None
    fm_ci: Optional[ConfidenceInterval] = None
    profile: BiasProfile = BiasProfile.UNCLASSIFIED
    bands: Dict[str, str] = Field(default_factory=dict)
    calibration: Optional[CalibrationResult] = None
    confusion: List[List[float]] = Field(default_factory=list)
    prediction_share: Dict[int, float] = Field(default_factory=dict)
    degenerate: bool = False
    within_noise_floor: Optional[bool] = None
    augmentation: Optional[AccuracyResult] = None
    dedupe_sensitivity: Optional[Dict[str, Optional[float]]] = None
    ablations: List[AblationReport] = Field(default_factory=list)


class AuditReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    run_id: str
    cells: List[CellReport] = Field(default_factory=list)
    pairwise: List[PairwiseTest] = Field(default_factory=list)
    bonferroni_alpha: Optional[float] = None
    interventions: List[InterventionReport] = Field(default_factory=list)
    test_retest: Optional[TestRetestReport] = None
    notes: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# API de transparencia de prompts
# ---------------------------------------------------------------------------

class PromptInfo(BaseModel):
    strategy: Strategy
    system_text: str
    sha256: str
    has_demographics: bool
    has_fairness_instruction: bool
    has_cot: bool
