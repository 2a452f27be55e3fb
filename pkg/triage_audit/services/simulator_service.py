"""
Simulador de modelo de triaje con sesgo configurable
Determinista: cada decisión sale de un hash de (semilla, contenido clínico, estrategia)
"""
import hashlib
import json
import logging
import re
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from triage_audit.config import settings
from triage_audit.exceptions import ConfigError
from triage_audit.models import ChatMessage, Gender, SimProfile, Strategy, VignetteFeatures
from triage_audit.services.strategy_service import detect_strategy
from triage_audit.utils.text_cleaner import neutralize_gendered_terms, strip_age_mentions

logger = logging.getLogger(__name__)

DEFAULT_PROFILE = "default"

_PATIENT_LINE_REGEX = re.compile(
    r"^Patient:\s*(?:(?P<name>[^,\n]+),\s*)?(?P<age>\d+)-year-old\s+(?P<sex>female|male|adult)\s*$",
    re.MULTILINE,
)
_VITAL_REGEXES = {
    "hr": re.compile(r"\bHR (\d+)"),
    "sbp": re.compile(r"\bBP (\d+)/\d+"),
    "rr": re.compile(r"\bRR (\d+)"),
    "spo2": re.compile(r"\bSpO2 (\d+)%"),
    "temp": re.compile(r"\bTemp (\d+(?:\.\d+)?)"),
    "pain": re.compile(r"Pain level: (\d+)"),
}


def _uniform(*parts) -> float:
    """Uniforme en [0, 1) derivado de un hash; reproducible entre procesos."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") / 2 ** 64


def _base_level(profile: SimProfile, truth: int, u: float) -> int:
    if profile.degenerate_level is not None:
        return profile.degenerate_level
    weights = []
    for offset, p in zip(range(-2, 3), profile.base_error):
        level = truth + offset
        weights.append((level, p if 1 <= level <= 5 else 0.0))
    total = sum(p for _, p in weights)
    if total <= 0:
        return truth
    acc = 0.0
    for level, p in weights:
        acc += p / total
        if u < acc:
            return level
    return max(level for level, p in weights if p > 0)


def _apply_flip(base: int, gender: Gender, female_under: bool) -> int:
    """La versión desfavorecida recibe un nivel menos urgente; en ESI 5 la otra baja a 4."""
    disadvantaged = Gender.F if female_under else Gender.M
    if base < 5:
        return base + 1 if gender == disadvantaged else base
    return 5 if gender == disadvantaged else 4


def simulate_level(profile: SimProfile, features: VignetteFeatures, occurrence: int = 0) -> int:
    """
    Nivel ESI simulado. Con noise_rate = 0 es función pura de
    (semilla, contenido, género, estrategia).
    """
    p = profile.for_strategy(features.strategy)
    strategy = features.strategy.value if features.strategy else "-"
    key = (p.seed, features.content_hash, strategy)

    level = _base_level(p, features.truth_esi, _uniform(*key, "base"))

    if features.gender is not None and _uniform(*key, "flip") < p.p_flip:
        skew = p.fm_skew_by_race.get(features.race, p.fm_skew) if features.race else p.fm_skew
        level = _apply_flip(level, features.gender, _uniform(*key, "direction") < skew)

    if occurrence > 0 and p.noise_rate > 0:
        gender = features.gender.value if features.gender else "-"
        if _uniform(*key, gender, "noise", occurrence) < p.noise_rate:
            if level == 1:
                level = 2
            elif level == 5:
                level = 4
            else:
                level += 1 if _uniform(*key, gender, "noise-dir", occurrence) < 0.5 else -1
    return level


def render_response(level: int, features: VignetteFeatures) -> str:
    return f"ESI Level: {level} — simulated triage rationale (case {features.content_hash[:8]})"


def simulate(profile: SimProfile, features: VignetteFeatures, occurrence: int = 0) -> str:
    return render_response(simulate_level(profile, features, occurrence), features)


class Simulator:
    """
    Simulador con estado mínimo: cuenta repeticiones de cada entrada idéntica para que
    la primera respuesta sea limpia y las repeticiones difieran con prob. noise_rate.

    El conteo es estado de test-retest: recuerda a lo sumo max_tracked entradas
    (LRU); una entrada olvidada vuelve a responderse como primera vez.
    """

    def __init__(self, profile: SimProfile, max_tracked: Optional[int] = None):
        self.profile = profile
        self.max_tracked = max_tracked or settings.SIM_MAX_TRACKED_INPUTS
        self._occurrences: "OrderedDict[tuple, int]" = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def input_key(features: VignetteFeatures) -> tuple:
        return (
            features.input_id or features.content_hash,
            features.strategy.value if features.strategy else "-",
            features.gender.value if features.gender else "-",
        )

    def respond(self, features: VignetteFeatures) -> str:
        key = self.input_key(features)
        with self._lock:
            occurrence = self._occurrences.pop(key, 0)
            self._occurrences[key] = occurrence + 1
            while len(self._occurrences) > self.max_tracked:
                self._occurrences.popitem(last=False)
        return simulate(self.profile, features, occurrence)

    @property
    def tracked_inputs(self) -> int:
        return len(self._occurrences)


# ---------------------------------------------------------------------------
# Rasgos desde mensajes (simulador servido por HTTP)
# ---------------------------------------------------------------------------

def text_hash(vignette_text: str) -> str:
    """Huella del bloque clínico del texto, sin línea de paciente ni términos con género."""
    lines = [ln for ln in vignette_text.split("\n") if not ln.startswith("Patient:")]
    neutral = strip_age_mentions(neutralize_gendered_terms("\n".join(lines)))
    return hashlib.sha256(neutral.encode("utf-8")).hexdigest()[:16]


def heuristic_acuity(vignette_text: str) -> int:
    """ESI aproximado a partir de los signos vitales del texto cuando no hay verdad conocida."""
    values: Dict[str, float] = {}
    for name, regex in _VITAL_REGEXES.items():
        m = regex.search(vignette_text)
        if m:
            values[name] = float(m.group(1))
    if (
        values.get("spo2", 100) < 90
        or values.get("sbp", 120) < 90
        or values.get("hr", 80) > 130
        or values.get("rr", 16) > 30
    ):
        return 2
    if values.get("hr", 80) > 100 or values.get("temp", 98.6) >= 100.4 or values.get("pain", 0) >= 7:
        return 3
    return 4


def features_from_messages(
    messages: Sequence[ChatMessage],
    truth_lookup: Optional[Dict[str, int]] = None,
) -> VignetteFeatures:
    system = next((m.content for m in messages if m.role == "system"), "")
    user = next((m.content for m in reversed(messages) if m.role == "user"), "")
    m = _PATIENT_LINE_REGEX.search(user)
    gender: Optional[Gender] = None
    if m and m.group("sex") in ("female", "male"):
        gender = Gender.F if m.group("sex") == "female" else Gender.M
    content_hash = text_hash(user)
    truth = (truth_lookup or {}).get(content_hash) or heuristic_acuity(user)
    strategy: Optional[Strategy] = detect_strategy(system, has_demographics=m is not None)
    input_id = hashlib.sha256(f"{system}\n\x00\n{user}".encode("utf-8")).hexdigest()[:16]
    return VignetteFeatures(
        content_hash=content_hash, input_id=input_id, gender=gender, strategy=strategy, truth_esi=truth,
    )


def build_truth_lookup(texts_and_truths: List[tuple]) -> Dict[str, int]:
    return {text_hash(text): truth for text, truth in texts_and_truths}


def load_profiles(path: Optional[Path]) -> Dict[str, SimProfile]:
    """
    Perfiles del simulador servido. El archivo puede contener un único SimProfile
    o {"profiles": {nombre: SimProfile}}; el campo "model" de la solicitud elige uno.
    """
    if path is None:
        return {DEFAULT_PROFILE: SimProfile()}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Perfil de simulador no encontrado: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        if "profiles" in data:
            profiles = {name: SimProfile.model_validate(p) for name, p in data["profiles"].items()}
        else:
            profiles = {DEFAULT_PROFILE: SimProfile.model_validate(data)}
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"Perfil de simulador inválido en {path}: {e}") from e
    logger.info(f"Perfiles de simulador cargados: {', '.join(sorted(profiles))}")
    return profiles
