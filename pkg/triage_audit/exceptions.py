"""
Jerarquía de errores del sistema de auditoría
"""
from typing import Optional


class TriageAuditError(Exception):
    """Error base de la auditoría"""


class ConfigError(TriageAuditError):
    """Error fatal de configuración (archivo faltante, API key, auth)"""


class RenderError(TriageAuditError):
    """Falta un campo clínico requerido para renderizar la viñeta"""

    def __init__(self, field: str):
        super().__init__(f"Campo requerido ausente: {field}")
        self.field = field


class SexLinkedComplaint(TriageAuditError):
    """Motivo de consulta ligado al sexo: no admite par contrafactual"""


class PoolExhausted(TriageAuditError):
    """El pool de nombres no tiene alternativas suficientes"""


class ContractError(TriageAuditError):
    """Combinación de entradas que viola el contrato de la operación"""


class TransientBackendError(TriageAuditError):
    """Error de transporte reintentable (5xx, timeout, conexión)"""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class PersistentFailure(TriageAuditError):
    """Se agotaron los reintentos"""

    def __init__(self, message: str, attempts: int, last_status: Optional[int] = None,
                 last_text: str = ""):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status
        self.last_text = last_text


class UndefinedMetric(TriageAuditError):
    """La métrica no está definida para la entrada (denominador vacío)"""


class UndefinedTest(TriageAuditError):
    """La prueba estadística no está definida para la tabla dada"""


class UnstableStatistic(TriageAuditError):
    """Más de la mitad de las iteraciones bootstrap fueron indefinidas"""

    def __init__(self, message: str, skipped: int, iterations: int):
        super().__init__(message)
        self.skipped = skipped
        self.iterations = iterations
