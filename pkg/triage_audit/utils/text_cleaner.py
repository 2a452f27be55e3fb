"""
Utilidades de texto para viñetas clínicas
Incluye inversión y neutralización de términos con género y limpieza demográfica
"""
import re
from typing import Dict, Iterable

# Léxico de inversión de género (minúsculas); "her" se resuelve por contexto
FLIP_TERMS: Dict[str, str] = {
    "she": "he",
    "he": "she",
    "his": "her",
    "him": "her",
    "hers": "his",
    "herself": "himself",
    "himself": "herself",
    "woman": "man",
    "man": "woman",
    "women": "men",
    "men": "women",
    "female": "male",
    "male": "female",
    "girl": "boy",
    "boy": "girl",
    "ms": "mr",
    "mrs": "mr",
    "mr": "ms",
}

NEUTRAL_TERMS: Dict[str, str] = {
    "she": "they",
    "he": "they",
    "his": "their",
    "him": "them",
    "hers": "theirs",
    "herself": "themself",
    "himself": "themself",
    "woman": "person",
    "man": "person",
    "women": "people",
    "men": "people",
    "female": "adult",
    "male": "adult",
    "girl": "child",
    "boy": "child",
}

# Palabras tras "her" que indican uso objeto ("gave her to") y no posesivo
_OBJECT_FOLLOWERS = {
    "a", "an", "the", "and", "or", "but", "to", "at", "in", "on", "with", "for",
    "from", "by", "of", "as", "is", "was", "if", "that", "this", "up", "down",
    "out", "off", "over", "again", "today", "yesterday", "now",
}

_TERM_REGEX = re.compile(
    r"\b(?:" + "|".join(sorted(set(FLIP_TERMS) | {"her"}, key=len, reverse=True)) + r")\b\.?",
    flags=re.IGNORECASE,
)
_TITLE_REGEX = re.compile(r"\b(?:mrs|ms|mr)\b\.?\s*", flags=re.IGNORECASE)
_NEXT_WORD_REGEX = re.compile(r"\s+([A-Za-z]+)")

GENDERED_TOKEN_REGEX = re.compile(
    r"\b(?:she|he|her|hers|his|him|herself|himself|woman|man|women|men|female|male|"
    r"girl|boy|mrs|ms|mr)\b",
    flags=re.IGNORECASE,
)

AGE_REGEX = re.compile(
    r"\b\d{1,3}\s*(?:-\s*)?(?:years?[\s-]*old|yrs?[\s-]*old|yo|y/o|y\.o\.?)(?=\W|$)",
    flags=re.IGNORECASE,
)


def _match_case(source: str, replacement: str) -> str:
    """Copia el patrón de mayúsculas del término original."""
    if source.isupper() and len(source) > 1:
        return replacement.upper()
    if source[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _her_is_possessive(text: str, end: int) -> bool:
    m = _NEXT_WORD_REGEX.match(text, end)
    return bool(m) and m.group(1).lower() not in _OBJECT_FOLLOWERS


def flip_gendered_terms(text: str) -> str:
    """
    Invierte pronombres y términos con género (she↔he, her↔his/him, Ms.↔Mr., ...)
    """
    if not text:
        return text

    def _swap(m: re.Match) -> str:
        token = m.group(0)
        dot = "." if token.endswith(".") else ""
        word = token.rstrip(".")
        lower = word.lower()
        if lower == "her":
            target = "his" if _her_is_possessive(text, m.end()) else "him"
        else:
            target = FLIP_TERMS[lower]
        return _match_case(word, target) + dot

    return _TERM_REGEX.sub(_swap, text)


def neutralize_gendered_terms(text: str) -> str:
    """
    Reemplaza términos con género por formas neutras y elimina tratamientos
    """
    if not text:
        return text
    text = _TITLE_REGEX.sub("", text)

    def _neutral(m: re.Match) -> str:
        token = m.group(0)
        dot = "." if token.endswith(".") else ""
        word = token.rstrip(".")
        lower = word.lower()
        if lower == "her":
            target = "their" if _her_is_possessive(text, m.end()) else "them"
        else:
            target = NEUTRAL_TERMS.get(lower, word)
        return _match_case(word, target) + dot

    return _TERM_REGEX.sub(_neutral, text)


def strip_age_mentions(text: str) -> str:
    """Elimina menciones de edad tipo '45yo', '45 y/o', '45-year-old'."""
    if not text:
        return text
    return normalize_whitespace(AGE_REGEX.sub("", text))


def strip_names(text: str, names: Iterable[str]) -> str:
    """Elimina nombres propios conocidos del texto libre."""
    for name in names:
        if name:
            text = re.sub(rf"\b{re.escape(name)}\b", "", text)
    return normalize_whitespace(text)


def has_gendered_terms(text: str) -> bool:
    return bool(GENDERED_TOKEN_REGEX.search(text or ""))


def normalize_whitespace(text: str) -> str:
    """Colapsa espacios sin tocar saltos de línea."""
    lines = [re.sub(r"[ \t]+", " ", line).strip() for line in text.split("\n")]
    return "\n".join(lines)


def clean_chief_complaint(raw: str) -> str:
    """
    Limpia el motivo de consulta crudo: separadores, espacios y comas repetidas
    """
    if not raw:
        return ""
    text = str(raw).replace("\r\n", " ").replace("\n", " ")
    text = re.sub(r"\s*,\s*", ", ", text)
    text = re.sub(r"(,\s*)+", ", ", text)
    return text.strip(" ,")


def word_count(text: str) -> int:
    return len(text.split())
