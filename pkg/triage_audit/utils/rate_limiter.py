"""
Limitador de ritmo por endpoint
Acota solicitudes concurrentes y espacia el inicio de cada solicitud
"""
import asyncio
import logging
import time
from contextlib import asynccontextmanager
from typing import AsyncIterator, Dict, Optional

logger = logging.getLogger(__name__)


class RateLimiter:
    """
    Rate limiter de un endpoint:
    - max_in_flight: solicitudes simultáneas como máximo
    - inter_request_delay: segundos mínimos entre inicios consecutivos
    """

    def __init__(self, max_in_flight: int = 4, inter_request_delay: float = 0.1):
        self.max_in_flight = max_in_flight
        self.inter_request_delay = inter_request_delay
        self._slots = asyncio.Semaphore(max_in_flight)
        self._spacing = asyncio.Lock()
        self._last_start: Optional[float] = None
        self.in_flight = 0
        self.peak_in_flight = 0

    async def wait_for_capacity(self) -> None:
        """Espera hasta que se cumpla el espaciado mínimo desde el último inicio."""
        if self.inter_request_delay <= 0:
            return
        async with self._spacing:
            now = time.monotonic()
            if self._last_start is not None:
                wait_time = self._last_start + self.inter_request_delay - now
                if wait_time > 0:
                    logger.debug(f"Rate limit: esperando {wait_time:.3f}s")
                    await asyncio.sleep(wait_time)
            self._last_start = time.monotonic()

    @asynccontextmanager
    async def slot(self) -> AsyncIterator[None]:
        """Ocupa un lugar de concurrencia durante una solicitud."""
        async with self._slots:
            await self.wait_for_capacity()
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                yield
            finally:
                self.in_flight -= 1


class RateLimiterRegistry:
    """Un RateLimiter por endpoint, creado a demanda dentro del event loop activo"""

    def __init__(self):
        self._limiters: Dict[str, RateLimiter] = {}

    def get(self, endpoint_id: str, max_in_flight: int, inter_request_delay: float) -> RateLimiter:
        limiter = self._limiters.get(endpoint_id)
        if limiter is None:
            limiter = RateLimiter(max_in_flight=max_in_flight, inter_request_delay=inter_request_delay)
            self._limiters[endpoint_id] = limiter
        return limiter
