"""
Extracción del nivel ESI desde la respuesta libre del modelo
Tres reglas en orden; dentro de cada regla gana la última coincidencia
"""
import re
from typing import Optional

from triage_audit.config import settings
from triage_audit.models import ParseResult, ParseRule

# "ESI Level: 3", "ESI level 3", "**ESI Level:** **3**"
_ANCHOR_REGEX = re.compile(r"ESI\s+Level[\s*]*[:\-]?[\s*]*([1-5])(?!\d)", re.IGNORECASE)

# No son asignaciones: "ESI 5-level", rangos "1-5" / "1 to 5" y la plantilla "[1-5]"
_NOT_LEVEL_NAME = r"(?!\d)(?!\s*-\s*level)(?!\s*(?:-|–|to)\s*[1-5])"


def _proximity_regex(window: int) -> re.Pattern:
    return re.compile(
        rf"\bESI\b([^\d]{{0,{window}}}?)(?<!\[)([1-5]){_NOT_LEVEL_NAME}",
        re.IGNORECASE | re.DOTALL,
    )


_LEVEL_WORD_REGEX = re.compile(rf"\blevel\b[\s*]*[:\-]?[\s*]*(?<!\[)([1-5]){_NOT_LEVEL_NAME}", re.IGNORECASE)
_CONTEXT_REGEX = re.compile(r"\b(?:ESI|triage)\b", re.IGNORECASE)


def parse(text: Optional[str], window: Optional[int] = None) -> Optional[ParseResult]:
    """
    Devuelve el ESI extraído y la regla usada, o None si ninguna regla aplica
    """
    if not text:
        return None

    anchors = list(_ANCHOR_REGEX.finditer(text))
    if anchors:
        m = anchors[-1]
        return ParseResult(esi=int(m.group(1)), rule_used=ParseRule.ANCHOR_LINE, span=(m.start(), m.end()))

    proximity = list(_proximity_regex(window or settings.PROXIMITY_WINDOW).finditer(text))
    if proximity:
        m = proximity[-1]
        return ParseResult(esi=int(m.group(2)), rule_used=ParseRule.ESI_PROXIMITY, span=(m.start(), m.end()))

    if _CONTEXT_REGEX.search(text):
        levels = list(_LEVEL_WORD_REGEX.finditer(text))
        if levels:
            m = levels[-1]
            return ParseResult(esi=int(m.group(1)), rule_used=ParseRule.LONE_LEVEL_WORD, span=(m.start(), m.end()))

    return None
