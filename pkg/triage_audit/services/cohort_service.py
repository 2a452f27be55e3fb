"""
Servicio de cohorte: ingesta de las tablas ED, mapeo de raza,
categorización de motivo de consulta y muestreo estratificado
"""
import json
import logging
import re
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from triage_audit.config import settings
from triage_audit.exceptions import ConfigError, ContractError
from triage_audit.models import (
    CohortManifest,
    CohortRow,
    ComplaintCategory,
    Disposition,
    Gender,
    Race,
    SampledRow,
    SamplingManifest,
    StratumKey,
)
from triage_audit.utils.text_cleaner import clean_chief_complaint

logger = logging.getLogger(__name__)

# Palabras clave por categoría, en orden de prioridad (primer acierto gana)
CATEGORY_KEYWORDS: Dict[ComplaintCategory, Tuple[str, ...]] = {
    ComplaintCategory.CHEST_PAIN: ("chest pain", "chest tightness", "substernal", "angina", "palpitations"),
    ComplaintCategory.ABDOMINAL_PAIN: ("abdominal pain", "abd pain", "epigastric", "nausea", "vomiting", "diarrhea"),
    ComplaintCategory.PSYCHIATRIC: ("suicidal", "anxiety", "depression", "psychosis", "agitation", "SI", "overdose"),
    ComplaintCategory.TRAUMA: ("fall", "MVC", "laceration", "fracture", "assault", "injury"),
    ComplaintCategory.RESPIRATORY: ("shortness of breath", "SOB", "dyspnea", "cough", "wheezing", "asthma"),
    ComplaintCategory.NEUROLOGICAL: ("headache", "dizziness", "syncope", "seizure", "weakness", "numbness", "stroke"),
    ComplaintCategory.PAIN_OTHER: ("back pain", "flank pain", "extremity pain", "joint pain", "neck pain"),
    ComplaintCategory.GENERAL_MEDICAL: ("fever", "weakness", "fatigue", "malaise", "altered mental status"),
}

# Abreviaturas que solo cuentan en mayúsculas y como palabra completa ("SI" no debe coincidir con "si")
_ABBREVIATIONS = {"SI", "SOB", "MVC"}


def _keyword_regex(keyword: str) -> re.Pattern:
    if keyword in _ABBREVIATIONS:
        return re.compile(rf"(?<![A-Za-z]){re.escape(keyword)}(?![A-Za-z])")
    # Subcadena sin distinguir mayúsculas: "Falls", "chest pains", "Seizures"
    return re.compile(re.escape(keyword), re.IGNORECASE)


_CATEGORY_REGEXES: List[Tuple[ComplaintCategory, List[re.Pattern]]] = [
    (category, [_keyword_regex(k) for k in keywords])
    for category, keywords in CATEGORY_KEYWORDS.items()
]

OBSTETRIC_TERMS = (
    "pregnant", "pregnancy", "labor", "contractions", "vaginal bleeding", "miscarriage",
    "ectopic", "postpartum", "prenatal", "rupture of membranes", "srom",
)
_OBSTETRIC_REGEX = re.compile(
    r"(?<![A-Za-z])(?:" + "|".join(re.escape(t) for t in OBSTETRIC_TERMS) + r")(?![A-Za-z])",
    re.IGNORECASE,
)

_DISPOSITION_MAP = {
    "ADMITTED": Disposition.ADMITTED,
    "HOME": Disposition.HOME,
    "EXPIRED": Disposition.EXPIRED,
    "TRANSFER": Disposition.TRANSFER,
    "LEFT WITHOUT BEING SEEN": Disposition.LWBS,
    "LWBS": Disposition.LWBS,
    "LEFT AGAINST MEDICAL ADVICE": Disposition.AMA,
    "AMA": Disposition.AMA,
    "ELOPED": Disposition.ELOPED,
}

# Columnas mínimas por tabla
REQUIRED_COLUMNS = {
    "edstays": ("subject_id", "stay_id", "race", "disposition"),
    "triage": ("stay_id", "acuity", "chiefcomplaint", "heartrate", "sbp", "dbp"),
    "patients": ("subject_id", "anchor_age"),
    "medrecon": ("stay_id", "name"),
}
OPTIONAL_TRIAGE_COLUMNS = ("temperature", "resprate", "o2sat", "pain")

# Edades mayores de 89 se agrupan como 91
AGE_CAP = 91


# ---------------------------------------------------------------------------
# Categorización
# ---------------------------------------------------------------------------

def matching_categories(text: str) -> List[ComplaintCategory]:
    """Todas las categorías específicas cuyo léxico aparece en el texto, en orden de prioridad."""
    hits = [
        category
        for category, regexes in _CATEGORY_REGEXES
        if category != ComplaintCategory.GENERAL_MEDICAL and any(r.search(text or "") for r in regexes)
    ]
    return hits


def categorize(text: str) -> ComplaintCategory:
    """
    Asigna la primera categoría cuyo léxico coincide; GeneralMedical es el fallback
    """
    hits = matching_categories(text)
    return hits[0] if hits else ComplaintCategory.GENERAL_MEDICAL


def is_obstetric(text: str) -> bool:
    return bool(_OBSTETRIC_REGEX.search(text or ""))


# ---------------------------------------------------------------------------
# Raza
# ---------------------------------------------------------------------------

class RaceRules:
    """Reglas ordenadas de mapeo de raza cruda -> categoría colapsada"""

    def __init__(self, rules: List[dict], default: Race = Race.UNKNOWN, missing: Race = Race.UNKNOWN):
        self.rules = rules
        self.default = default
        self.missing = missing

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "RaceRules":
        path = Path(path or settings.RACE_RULES_PATH)
        if not path.exists():
            raise ConfigError(f"No existe el archivo de reglas de raza: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(
            rules=data["rules"],
            default=Race(data.get("default", Race.UNKNOWN.value)),
            missing=Race(data.get("missing", Race.UNKNOWN.value)),
        )

    def map(self, raw: Optional[str]) -> Race:
        if raw is None or (isinstance(raw, float) and np.isnan(raw)):
            return self.missing
        text = str(raw).strip().upper()
        if not text:
            return self.missing
        for rule in self.rules:
            pattern = rule["pattern"].upper()
            kind = rule.get("match", "prefix")
            if (
                (kind == "prefix" and text.startswith(pattern))
                or (kind == "contains" and pattern in text)
                or (kind == "exact" and text == pattern)
            ):
                return Race(rule["race"])
        return self.default


def map_race(raw: Optional[str], rules: Optional[RaceRules] = None) -> Race:
    return (rules or RaceRules.load()).map(raw)


def map_disposition(raw: Optional[str]) -> Disposition:
    if raw is None or (isinstance(raw, float) and np.isnan(raw)):
        return Disposition.OTHER
    return _DISPOSITION_MAP.get(str(raw).strip().upper(), Disposition.OTHER)


# ---------------------------------------------------------------------------
# Ingesta
# ---------------------------------------------------------------------------

def _find_table(data_dir: Path, name: str) -> Optional[Path]:
    for candidate in (data_dir / f"{name}.csv", data_dir / f"{name}.csv.gz"):
        if candidate.exists():
            return candidate
    return None


def _read_table(data_dir: Path, name: str, malformed: Dict[str, int], required: bool = True) -> pd.DataFrame:
    """Lee una tabla CSV como texto; las líneas mal formadas se cuentan y se omiten."""
    path = _find_table(data_dir, name)
    if path is None:
        if required:
            raise ConfigError(f"Falta la tabla {name}.csv en {data_dir}")
        logger.warning(f"Tabla opcional {name}.csv no encontrada; se continúa sin ella")
        malformed[name] = 0
        return pd.DataFrame(columns=list(REQUIRED_COLUMNS[name]))

    bad_lines = 0

    def _on_bad_line(_line: List[str]) -> None:
        nonlocal bad_lines
        bad_lines += 1
        return None

    try:
        df = pd.read_csv(path, dtype=str, engine="python", on_bad_lines=_on_bad_line)
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=list(REQUIRED_COLUMNS[name]))

    missing = [c for c in REQUIRED_COLUMNS[name] if c not in df.columns]
    if missing:
        raise ConfigError(f"La tabla {name} no tiene las columnas requeridas: {missing}")

    malformed[name] = bad_lines
    if bad_lines:
        logger.warning(f"{name}: {bad_lines} líneas mal formadas omitidas")
    return df


def _stay_sort_key(stay_id: str) -> Tuple[int, str]:
    return (len(stay_id), stay_id)


def _shares(values: Iterable[str]) -> Dict[str, float]:
    counts = Counter(values)
    total = sum(counts.values())
    if not total:
        return {}
    return {k: counts[k] / total for k in sorted(counts)}


def ingest(data_dir: Path, race_rules: Optional[RaceRules] = None) -> Tuple[List[CohortRow], CohortManifest]:
    """
    Une edstays, triage, patients y medrecon en filas de cohorte aplicando
    los criterios de inclusión; cada exclusión queda contada en el manifiesto
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"No existe el directorio de cohorte: {data_dir}")
    rules = race_rules or RaceRules.load()
    malformed: Dict[str, int] = {}

    edstays = _read_table(data_dir, "edstays", malformed)
    triage = _read_table(data_dir, "triage", malformed)
    patients = _read_table(data_dir, "patients", malformed)
    medrecon = _read_table(data_dir, "medrecon", malformed, required=False)

    manifest = CohortManifest(n_stays=len(edstays), malformed=malformed)

    for col in OPTIONAL_TRIAGE_COLUMNS:
        if col not in triage.columns:
            triage[col] = np.nan

    stays = edstays.rename(columns={"gender": "stay_gender"})
    if "stay_gender" not in stays.columns:
        stays["stay_gender"] = np.nan
    stays = stays.drop_duplicates(subset="stay_id")

    df = triage.drop(columns=[c for c in ("subject_id",) if c in triage.columns]).drop_duplicates(subset="stay_id")
    df = df.merge(
        stays[["stay_id", "subject_id", "stay_gender", "race", "disposition"]],
        on="stay_id",
        how="inner",
    )
    pat = patients.rename(columns={"gender": "patient_gender"}).drop_duplicates(subset="subject_id")
    if "patient_gender" not in pat.columns:
        pat["patient_gender"] = np.nan
    df = df.merge(pat[["subject_id", "anchor_age", "patient_gender"]], on="subject_id", how="left")

    for col in ("acuity", "heartrate", "sbp", "dbp", "temperature", "resprate", "o2sat", "pain", "anchor_age"):
        df[col] = pd.to_numeric(df[col], errors="coerce")

    df["complaint"] = df["chiefcomplaint"].fillna("").map(clean_chief_complaint)
    df["gender"] = df["patient_gender"].fillna(df["stay_gender"]).fillna("").str.strip().str.upper()
    df["disposition_enum"] = df["disposition"].map(map_disposition)

    # Criterios en orden; cada fila se cuenta en el primero que la excluye
    checks = [
        ("missing_esi", ~df["acuity"].isin([1.0, 2.0, 3.0, 4.0, 5.0])),
        ("missing_chief_complaint", df["complaint"] == ""),
        ("missing_heart_rate", df["heartrate"].isna()),
        ("missing_blood_pressure", df["sbp"].isna() | df["dbp"].isna()),
        ("missing_age", df["anchor_age"].isna()),
        ("under_18", df["anchor_age"] < 18),
        ("invalid_gender", ~df["gender"].isin(["F", "M"])),
        ("left_without_being_seen", df["disposition_enum"] == Disposition.LWBS),
        ("obstetric_complaint", df["complaint"].map(is_obstetric)),
    ]
    keep = pd.Series(True, index=df.index)
    excluded: Dict[str, int] = {}
    for name, mask in checks:
        dropped = keep & mask.fillna(False).astype(bool)
        excluded[name] = int(dropped.sum())
        keep &= ~dropped
    manifest.excluded = excluded
    df = df[keep]

    meds: Dict[str, List[str]] = {}
    if len(medrecon):
        for stay_id, names in medrecon.dropna(subset=["name"]).groupby("stay_id", sort=False)["name"]:
            meds[str(stay_id)] = list(dict.fromkeys(n.strip() for n in names if n and n.strip()))

    rows: List[CohortRow] = []
    for rec in df.itertuples(index=False):
        pain = rec.pain if pd.notna(rec.pain) and 0 <= rec.pain <= 10 else None
        rows.append(CohortRow(
            subject_id=str(rec.subject_id),
            stay_id=str(rec.stay_id),
            gender=Gender(rec.gender),
            age=min(int(rec.anchor_age), AGE_CAP),
            race=rules.map(rec.race),
            chief_complaint=rec.complaint,
            temperature=None if pd.isna(rec.temperature) else float(rec.temperature),
            heart_rate=float(rec.heartrate),
            resp_rate=None if pd.isna(rec.resprate) else float(rec.resprate),
            spo2=None if pd.isna(rec.o2sat) else float(rec.o2sat),
            sbp=float(rec.sbp),
            dbp=float(rec.dbp),
            pain=None if pain is None else int(pain),
            medications=meds.get(str(rec.stay_id), []),
            esi=int(rec.acuity),
            disposition=rec.disposition_enum,
            category=categorize(rec.complaint),
        ))
    rows.sort(key=lambda r: _stay_sort_key(r.stay_id))

    manifest.n_rows = len(rows)
    manifest.gender_share = _shares(r.gender.value for r in rows)
    manifest.race_share = _shares(r.race.value for r in rows)
    manifest.esi_share = _shares(str(r.esi) for r in rows)
    manifest.category_share = _shares(r.category.value for r in rows)

    logger.info(
        f"Cohorte: {manifest.n_rows} filas de {manifest.n_stays} visitas; "
        f"excluidas: {sum(excluded.values())}"
    )
    return rows, manifest


# ---------------------------------------------------------------------------
# Muestreo estratificado
# ---------------------------------------------------------------------------

def all_strata() -> List[StratumKey]:
    return [StratumKey(esi=esi, category=cat) for esi in range(1, 6) for cat in ComplaintCategory]


def stratified_sample(
    rows: Sequence[CohortRow],
    per_stratum_target: int,
    seed: int,
    multi_membership: bool = True,
) -> Tuple[List[SampledRow], SamplingManifest]:
    """
    Muestrea min(objetivo, disponibles) filas sin reemplazo en cada estrato ESI × categoría.

    Con multi_membership, una visita cuyo motivo coincide con varias categorías
    específicas es elegible en cada una; si se muestrea dos veces queda marcada
    como duplicada.
    """
    if per_stratum_target < 1:
        raise ContractError(f"per_stratum_target debe ser >= 1 (recibido {per_stratum_target})")

    members: Dict[StratumKey, List[CohortRow]] = defaultdict(list)
    for row in rows:
        if multi_membership:
            categories = matching_categories(row.chief_complaint) or [ComplaintCategory.GENERAL_MEDICAL]
        else:
            categories = [row.category or categorize(row.chief_complaint)]
        for category in categories:
            members[StratumKey(esi=row.esi, category=category)].append(row)

    rng = np.random.default_rng(seed)
    manifest = SamplingManifest(seed=seed, per_stratum_target=per_stratum_target)
    sampled: List[SampledRow] = []

    for key in all_strata():
        pool = sorted(members.get(key, []), key=lambda r: _stay_sort_key(r.stay_id))
        manifest.available[key.label()] = len(pool)
        if not pool:
            manifest.empty_strata.append(key.label())
            manifest.drawn[key.label()] = 0
            continue
        k = min(per_stratum_target, len(pool))
        if k < per_stratum_target:
            logger.info(f"Estrato {key.label()}: solo {len(pool)} disponibles (objetivo {per_stratum_target})")
        chosen = sorted(rng.choice(len(pool), size=k, replace=False).tolist())
        manifest.drawn[key.label()] = k
        for i in chosen:
            row = pool[i].model_copy(update={"category": key.category})
            sampled.append(SampledRow(row=row, stratum=key))

    stay_counts = Counter(s.row.stay_id for s in sampled)
    duplicates = sorted((sid for sid, n in stay_counts.items() if n > 1), key=_stay_sort_key)
    if duplicates:
        dup_set = set(duplicates)
        for s in sampled:
            s.duplicate = s.row.stay_id in dup_set
        logger.warning(f"{len(duplicates)} visitas muestreadas en más de un estrato")

    manifest.duplicate_stay_ids = duplicates
    manifest.n_sampled = len(sampled)
    manifest.sample_esi_share = _shares(str(s.stratum.esi) for s in sampled)
    manifest.source_esi_share = _shares(str(r.esi) for r in rows)
    logger.info(f"Muestreo: {manifest.n_sampled} filas en {len(all_strata()) - len(manifest.empty_strata)} estratos")
    return sampled, manifest
