"""
Configuración del sistema de auditoría
"""
from pathlib import Path
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

# Cargar variables de entorno (.env opcional en la raíz del proyecto)
env_path = Path(__file__).parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)
else:
    load_dotenv()


PACKAGE_DIR = Path(__file__).parent


class Settings(BaseSettings):
    """Configuración de la aplicación"""

    # Directorios de trabajo
    DATA_DIR: Path = PACKAGE_DIR.parent / "data"
    OUTPUT_DIR: Path = PACKAGE_DIR.parent / "runs"

    # Archivos de datos editables (pools de nombres y reglas de raza)
    NAME_POOLS_PATH: Path = PACKAGE_DIR / "data" / "name_pools.json"
    RACE_RULES_PATH: Path = PACKAGE_DIR / "data" / "race_rules.json"

    # Nombres de archivos dentro de output_dir
    RECORDS_FILENAME: str = "records.jsonl"
    MANIFEST_FILENAME: str = "run_manifest.json"

    LOG_LEVEL: str = "INFO"

    # Bootstrap (remuestreo a nivel de par)
    BOOTSTRAP_ITERATIONS: int = 10_000
    BOOTSTRAP_SEED: int = 42
    BOOTSTRAP_WORKERS: int = 1

    # Umbrales de reporte
    MIN_STRATUM_PAIRS: int = 50
    CALIBRATION_MIN_N: int = 50
    DEGENERATE_SHARE: float = 0.90
    KAPPA_TOLERANCE: float = 0.05

    # Parser: ventana "ESI ... N" en caracteres
    PROXIMITY_WINDOW: int = 20

    # Validación de viñetas
    MIN_WORDS: int = 30
    MAX_WORDS: int = 300

    # Gateway HTTP
    HTTP_TIMEOUT_S: float = 120.0

    # Simulador servido (uvicorn)
    SIM_HOST: str = "127.0.0.1"
    SIM_PORT: int = 8000
    SIM_PROFILE_PATH: Path | None = None
    # Si se define, el simulador servido exige "Authorization: Bearer <key>"
    SIM_API_KEY: str | None = None
    # Corpus JSONL opcional para que el simulador servido conozca el ESI real
    SIM_CORPUS_PATH: Path | None = None
    # Entradas distintas cuyo número de repeticiones recuerda cada simulador (solo afecta al ruido)
    SIM_MAX_TRACKED_INPUTS: int = 200_000

    # Persistencia: fsync tras cada registro (más lento, tolera cortes de energía)
    DURABLE_FSYNC: bool = False

    class Config:
        env_file = ".env"
        case_sensitive = True


settings = Settings()
