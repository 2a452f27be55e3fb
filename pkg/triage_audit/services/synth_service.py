"""
Generador de cohortes sintéticas con el esquema de las tablas ED
Permite ejercitar el pipeline completo sin datos restringidos
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from triage_audit.exceptions import ContractError
from triage_audit.models import ComplaintCategory

logger = logging.getLogger(__name__)

FEMALE_SHARE = 0.538
ESI_SHARES = (0.059, 0.335, 0.536, 0.068, 0.002)

# Columnas de cada tabla; con n=0 se escriben solo los encabezados
TABLE_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "edstays": ("subject_id", "stay_id", "gender", "race", "disposition"),
    "triage": ("subject_id", "stay_id", "temperature", "heartrate", "resprate", "o2sat", "sbp", "dbp",
               "pain", "acuity", "chiefcomplaint"),
    "patients": ("subject_id", "gender", "anchor_age"),
    "medrecon": ("subject_id", "stay_id", "name"),
}

# Cadenas crudas de raza por categoría colapsada, con su peso de la distribución objetivo
RACE_RAW: Dict[str, Tuple[float, Tuple[str, ...]]] = {
    "White": (0.586, ("WHITE", "WHITE - OTHER EUROPEAN", "WHITE - RUSSIAN", "PORTUGUESE")),
    "Black": (0.219, ("BLACK/AFRICAN AMERICAN", "BLACK/CAPE VERDEAN", "BLACK/CARIBBEAN ISLAND")),
    "Hispanic": (0.078, ("HISPANIC/LATINO - PUERTO RICAN", "HISPANIC OR LATINO", "HISPANIC/LATINO - DOMINICAN")),
    "Asian": (0.044, ("ASIAN", "ASIAN - CHINESE", "ASIAN - SOUTH EAST ASIAN")),
    "Other": (0.052, ("OTHER", "AMERICAN INDIAN/ALASKA NATIVE", "MULTIPLE RACE/ETHNICITY",
                      "NATIVE HAWAIIAN OR OTHER PACIFIC ISLANDER")),
    "Unknown": (0.021, ("UNKNOWN", "UNABLE TO OBTAIN", "PATIENT DECLINED TO ANSWER")),
}

CATEGORY_SHARES: Dict[ComplaintCategory, float] = {
    ComplaintCategory.GENERAL_MEDICAL: 0.406,
    ComplaintCategory.ABDOMINAL_PAIN: 0.137,
    ComplaintCategory.TRAUMA: 0.108,
    ComplaintCategory.NEUROLOGICAL: 0.090,
    ComplaintCategory.CHEST_PAIN: 0.080,
    ComplaintCategory.PSYCHIATRIC: 0.068,
    ComplaintCategory.RESPIRATORY: 0.062,
    ComplaintCategory.PAIN_OTHER: 0.049,
}

# Motivos de consulta que el clasificador asigna a la categoría correspondiente
COMPLAINTS: Dict[ComplaintCategory, Tuple[str, ...]] = {
    ComplaintCategory.CHEST_PAIN: ("Chest pain", "Chest pain, Dyspnea", "Palpitations", "Substernal chest pressure",
                                   "Chest tightness"),
    ComplaintCategory.ABDOMINAL_PAIN: ("Abd pain", "Abd pain, Tachypnea", "Nausea, Vomiting", "Epigastric pain",
                                       "Diarrhea", "Abdominal pain, Fever"),
    ComplaintCategory.PSYCHIATRIC: ("Suicidal ideation", "Anxiety", "Depression", "Agitation", "SI", "Overdose"),
    ComplaintCategory.TRAUMA: ("s/p Fall", "MVC", "Laceration", "Wrist fracture", "Assault", "Head injury"),
    ComplaintCategory.RESPIRATORY: ("Shortness of breath", "SOB", "Dyspnea", "Cough", "Wheezing", "Asthma"),
    ComplaintCategory.NEUROLOGICAL: ("Headache", "Dizziness", "Syncope", "Seizure", "Numbness", "Weakness"),
    ComplaintCategory.PAIN_OTHER: ("Back pain", "Flank pain", "Extremity pain", "Joint pain", "Neck pain"),
    ComplaintCategory.GENERAL_MEDICAL: ("Fever", "Fatigue", "Malaise", "Altered mental status", "Rash",
                                        "Hyperglycemia", "Abnormal labs", "Toothache", "Eye redness"),
}
OBSTETRIC_COMPLAINTS = ("Vaginal bleeding, pregnant", "Contractions")

MEDICATIONS = (
    "Lisinopril", "Metformin", "Atorvastatin", "Levothyroxine", "Amlodipine", "Omeprazole",
    "Albuterol", "Sertraline", "Gabapentin", "Metoprolol", "Aspirin", "Insulin glargine",
)

# Probabilidad de admisión por ESI (alta agudeza se admite más)
ADMIT_BY_ESI = (0.80, 0.55, 0.30, 0.08, 0.04)

# Tasas de filas que los criterios de inclusión deben descartar
UNDERAGE_RATE = 0.02
LWBS_RATE = 0.015
OBSTETRIC_RATE = 0.01
MISSING_HR_RATE = 0.005


def _vitals(rng: np.random.Generator, esi: int) -> Dict[str, float]:
    """Signos vitales con mayor dispersión a mayor agudeza."""
    spread = (2.0, 1.5, 1.0, 0.7, 0.5)[esi - 1]
    return {
        "temperature": round(float(rng.normal(98.6, 0.8 * spread)), 1),
        "heartrate": float(np.clip(round(rng.normal(85, 14 * spread)), 30, 200)),
        "resprate": float(np.clip(round(rng.normal(17, 2.5 * spread)), 6, 50)),
        "o2sat": float(np.clip(round(rng.normal(98 - (5 - esi) * 0.8, 1.5 * spread)), 70, 100)),
        "sbp": float(np.clip(round(rng.normal(135, 20 * spread)), 60, 240)),
        "dbp": float(np.clip(round(rng.normal(78, 12 * spread)), 30, 140)),
    }


def synth_cohort(n: int, seed: int, out_dir: Path) -> Dict[str, Path]:
    """
    Escribe edstays.csv, triage.csv, patients.csv y medrecon.csv con n visitas
    cuyas marginales aproximan la distribución de referencia
    """
    if n < 0:
        raise ContractError(f"n debe ser >= 0 (recibido {n})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    race_names = list(RACE_RAW)
    race_p = np.array([RACE_RAW[r][0] for r in race_names])
    race_p = race_p / race_p.sum()
    categories = list(CATEGORY_SHARES)
    cat_p = np.array([CATEGORY_SHARES[c] for c in categories])
    cat_p = cat_p / cat_p.sum()
    esi_p = np.array(ESI_SHARES) / sum(ESI_SHARES)

    stays: List[dict] = []
    triage: List[dict] = []
    patients: List[dict] = []
    medrecon: List[dict] = []

    for i in range(n):
        subject_id = 10_000_000 + i
        stay_id = 30_000_000 + i
        gender = "F" if rng.random() < FEMALE_SHARE else "M"
        esi = int(rng.choice(5, p=esi_p)) + 1
        race_key = race_names[int(rng.choice(len(race_names), p=race_p))]
        race_raw = RACE_RAW[race_key][1][int(rng.integers(len(RACE_RAW[race_key][1])))]
        category = categories[int(rng.choice(len(categories), p=cat_p))]
        options = COMPLAINTS[category]
        complaint = options[int(rng.integers(len(options)))]
        age = int(np.clip(round(rng.normal(52, 19)), 18, 91))

        if rng.random() < UNDERAGE_RATE:
            age = int(rng.integers(2, 18))
        if gender == "F" and rng.random() < OBSTETRIC_RATE:
            complaint = OBSTETRIC_COMPLAINTS[int(rng.integers(len(OBSTETRIC_COMPLAINTS)))]

        if rng.random() < LWBS_RATE:
            disposition = "LEFT WITHOUT BEING SEEN"
        elif rng.random() < ADMIT_BY_ESI[esi - 1]:
            disposition = "ADMITTED"
        else:
            disposition = str(rng.choice(["HOME"] * 17 + ["TRANSFER", "LEFT AGAINST MEDICAL ADVICE", "ELOPED"]))

        vitals = _vitals(rng, esi)
        if rng.random() < MISSING_HR_RATE:
            vitals["heartrate"] = np.nan
        pain = int(rng.integers(0, 11)) if rng.random() < 0.85 else np.nan

        stays.append({
            "subject_id": subject_id, "stay_id": stay_id, "gender": gender,
            "race": race_raw, "disposition": disposition,
        })
        patients.append({"subject_id": subject_id, "gender": gender, "anchor_age": age})
        triage.append({
            "subject_id": subject_id, "stay_id": stay_id, **vitals, "pain": pain,
            "acuity": esi, "chiefcomplaint": complaint,
        })
        for med in rng.choice(MEDICATIONS, size=int(rng.integers(0, 4)), replace=False):
            medrecon.append({"subject_id": subject_id, "stay_id": stay_id, "name": str(med)})

    paths = {
        "edstays": out_dir / "edstays.csv",
        "triage": out_dir / "triage.csv",
        "patients": out_dir / "patients.csv",
        "medrecon": out_dir / "medrecon.csv",
    }
    for name, rows in (("edstays", stays), ("triage", triage), ("patients", patients), ("medrecon", medrecon)):
        pd.DataFrame(rows, columns=list(TABLE_COLUMNS[name])).to_csv(paths[name], index=False)

    logger.info(f"Cohorte sintética: {n} visitas escritas en {out_dir}")
    return paths
