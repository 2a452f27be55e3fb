"""
Almacén append-only de registros de evaluación (JSONL)
Un único escritor; cada registro se escribe completo en una línea
"""
import logging
import os
from pathlib import Path
from typing import Iterator, List, Optional, Set, Tuple

from pydantic import ValidationError

from triage_audit.config import settings
from triage_audit.models import EvalRecord

logger = logging.getLogger(__name__)


class RecordStore:
    """Log de persistencia de una ejecución"""

    def __init__(self, path: Path, durable: Optional[bool] = None):
        self.path = Path(path)
        self.durable = settings.DURABLE_FSYNC if durable is None else durable
        self._handle = None

    def open(self) -> "RecordStore":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._repair_tail()
        self._handle = open(self.path, "a", encoding="utf-8")
        return self

    def _repair_tail(self) -> None:
        """Completa con salto de línea una última línea truncada para no pegarle el siguiente registro."""
        if not self.path.exists() or self.path.stat().st_size == 0:
            return
        with open(self.path, "rb+") as f:
            f.seek(-1, os.SEEK_END)
            if f.read(1) != b"\n":
                logger.warning(f"{self.path.name}: última línea truncada; se ignorará al leer")
                f.write(b"\n")

    def append(self, record: EvalRecord) -> None:
        if self._handle is None:
            self.open()
        self._handle.write(record.model_dump_json() + "\n")
        self._handle.flush()
        if self.durable:
            os.fsync(self._handle.fileno())

    def close(self) -> None:
        if self._handle is not None:
            self._handle.flush()
            os.fsync(self._handle.fileno())
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "RecordStore":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()

    def iter_records(self) -> Iterator[EvalRecord]:
        """Lee registros tolerando líneas truncadas o corruptas (se omiten)."""
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield EvalRecord.model_validate_json(line)
                except ValidationError:
                    logger.warning(f"{self.path.name}:{lineno}: línea ilegible omitida")

    def read_all(self) -> List[EvalRecord]:
        return list(self.iter_records())

    def completed_keys(self) -> Set[Tuple[str, str, str]]:
        return {r.key for r in self.iter_records()}


def load_records(path: Path) -> List[EvalRecord]:
    return RecordStore(path).read_all()
