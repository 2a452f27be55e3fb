"""
Middleware de logging para el simulador servido
"""
import time
import logging
from fastapi import Request
from starlette.middleware.base import BaseHTTPMiddleware

logger = logging.getLogger(__name__)


class LoggingMiddleware(BaseHTTPMiddleware):
    """Registra método, ruta, estado y tiempo de cada solicitud (nunca el header Authorization)"""

    async def dispatch(self, request: Request, call_next):
        start_time = time.perf_counter()
        route = f"{request.method} {request.url.path}"

        try:
            response = await call_next(request)
        except Exception as e:
            elapsed = time.perf_counter() - start_time
            logger.error(f"Error en {route}: {e} - Time: {elapsed:.4f}s", exc_info=True)
            raise

        elapsed = time.perf_counter() - start_time
        response.headers["X-Process-Time"] = str(round(elapsed, 4))
        level = logging.WARNING if response.status_code >= 400 else logging.INFO
        logger.log(level, f"{route} - Status: {response.status_code} - Time: {elapsed:.4f}s")
        return response
