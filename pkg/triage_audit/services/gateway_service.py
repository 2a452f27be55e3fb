"""
Gateway de modelos: envía mensajes a un endpoint de chat-completion
(o al simulador en proceso) con reintentos, backoff y control de ritmo
"""
import asyncio
import logging
import os
import time
from typing import Awaitable, Callable, Dict, Optional, Protocol, Sequence

import httpx
from openai import (
    APIConnectionError,
    APIStatusError,
    APITimeoutError,
    AsyncOpenAI,
    AuthenticationError,
    PermissionDeniedError,
)

from triage_audit.config import settings
from triage_audit.exceptions import ConfigError, PersistentFailure, TransientBackendError
from triage_audit.models import (
    ChatMessage,
    Completion,
    DecodeConfig,
    EndpointKind,
    ModelEndpoint,
    RetryPolicy,
    VignetteFeatures,
)
from triage_audit.services.simulator_service import Simulator, features_from_messages
from triage_audit.utils.rate_limiter import RateLimiter, RateLimiterRegistry

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}

Sleep = Callable[[float], Awaitable[None]]


class Backend(Protocol):
    async def send(
        self,
        messages: Sequence[ChatMessage],
        decode: DecodeConfig,
        features: Optional[VignetteFeatures] = None,
    ) -> str:
        ...


class HttpChatBackend:
    """Cliente del protocolo chat-completion (POST {base_url}/chat/completions, Bearer)"""

    def __init__(self, endpoint: ModelEndpoint, http_client: Optional[httpx.AsyncClient] = None,
                 timeout: Optional[float] = None):
        api_key = "not-needed"
        if endpoint.api_key_ref:
            api_key = os.getenv(endpoint.api_key_ref)
            if not api_key:
                raise ConfigError(
                    f"Endpoint {endpoint.id}: la variable de entorno {endpoint.api_key_ref} no está definida"
                )
        self.endpoint = endpoint
        self.client = AsyncOpenAI(
            api_key=api_key,
            base_url=endpoint.base_url,
            max_retries=0,
            timeout=timeout or settings.HTTP_TIMEOUT_S,
            http_client=http_client,
        )

    async def send(self, messages, decode, features=None) -> str:
        try:
            response = await self.client.chat.completions.create(
                model=self.endpoint.model_name,
                messages=[m.model_dump() for m in messages],
                temperature=decode.temperature,
                max_tokens=decode.max_tokens,
            )
        except (AuthenticationError, PermissionDeniedError) as e:
            raise ConfigError(f"Endpoint {self.endpoint.id}: autenticación rechazada ({e.status_code})") from e
        except APITimeoutError as e:
            raise TransientBackendError(f"timeout: {e}") from e
        except APIConnectionError as e:
            raise TransientBackendError(f"conexión: {e}") from e
        except APIStatusError as e:
            if e.status_code in RETRYABLE_STATUS or e.status_code >= 500:
                raise TransientBackendError(f"HTTP {e.status_code}", status=e.status_code) from e
            raise PersistentFailure(
                f"Endpoint {self.endpoint.id}: HTTP {e.status_code} no reintentable",
                attempts=1,
                last_status=e.status_code,
            ) from e
        if not response.choices:
            return ""
        return response.choices[0].message.content or ""

    async def close(self) -> None:
        await self.client.close()


class SimulatorBackend:
    """Backend en proceso respaldado por un SimProfile"""

    def __init__(self, simulator: Simulator):
        self.simulator = simulator

    async def send(self, messages, decode, features=None) -> str:
        if features is None:
            features = features_from_messages(messages)
        return self.simulator.respond(features)


def create_backend(endpoint: ModelEndpoint, http_client: Optional[httpx.AsyncClient] = None) -> Backend:
    if endpoint.kind == EndpointKind.SIMULATOR:
        return SimulatorBackend(Simulator(endpoint.sim_profile))
    return HttpChatBackend(endpoint, http_client=http_client)


async def complete(
    endpoint: ModelEndpoint,
    messages: Sequence[ChatMessage],
    decode: DecodeConfig,
    retry: RetryPolicy,
    backend: Backend,
    limiter: Optional[RateLimiter] = None,
    features: Optional[VignetteFeatures] = None,
    sleep: Sleep = asyncio.sleep,
) -> Completion:
    """
    Envía una solicitud y reintenta errores transitorios y respuestas cortas.

    Respuestas de menos de min_response_chars se tratan como fallo transitorio.
    Los fallos de parseo no se reintentan aquí.
    """
    start = time.monotonic()
    last_status: Optional[int] = None
    last_text = ""
    total_attempts = retry.max_retries + 1

    for attempt in range(1, total_attempts + 1):
        try:
            if limiter is not None:
                async with limiter.slot():
                    text = await backend.send(messages, decode, features)
            else:
                text = await backend.send(messages, decode, features)
            last_text = text or ""
            if len(last_text.strip()) >= retry.min_response_chars:
                return Completion(
                    raw_text=last_text,
                    attempts=attempt,
                    latency_ms=(time.monotonic() - start) * 1000,
                )
            reason = f"respuesta corta ({len(last_text.strip())} caracteres)"
        except TransientBackendError as e:
            last_status = e.status
            reason = str(e)
        except PersistentFailure as e:
            e.attempts = attempt
            e.last_text = last_text
            raise

        if attempt < total_attempts:
            delay = retry.delay_for(attempt - 1)
            logger.info(
                f"Endpoint {endpoint.id}: reintento {attempt}/{retry.max_retries} "
                f"en {delay:.1f}s ({reason})"
            )
            await sleep(delay)

    logger.warning(f"Endpoint {endpoint.id}: fallo persistente tras {total_attempts} intentos")
    raise PersistentFailure(
        f"Endpoint {endpoint.id}: {total_attempts} intentos sin respuesta válida",
        attempts=total_attempts,
        last_status=last_status,
        last_text=last_text,
    )


class Gateway:
    """
    Backends y limitadores por endpoint para una ejecución.
    Debe crearse dentro del event loop que lo usa.
    """

    def __init__(
        self,
        endpoints: Sequence[ModelEndpoint],
        decode: Optional[DecodeConfig] = None,
        retry: Optional[RetryPolicy] = None,
        backends: Optional[Dict[str, Backend]] = None,
        sleep: Sleep = asyncio.sleep,
    ):
        self.endpoints = {e.id: e for e in endpoints}
        self.decode = decode or DecodeConfig()
        self.retry = retry or RetryPolicy()
        self.sleep = sleep
        self.backends: Dict[str, Backend] = dict(backends or {})
        for e in endpoints:
            if e.id not in self.backends:
                self.backends[e.id] = create_backend(e)
        self.limiters = RateLimiterRegistry()

    def limiter_for(self, endpoint_id: str) -> RateLimiter:
        e = self.endpoints[endpoint_id]
        # El simulador en proceso no necesita espaciado entre solicitudes
        delay = e.inter_request_delay if e.kind == EndpointKind.HTTP_CHAT else 0.0
        return self.limiters.get(endpoint_id, e.max_in_flight, delay)

    async def complete(
        self,
        endpoint_id: str,
        messages: Sequence[ChatMessage],
        features: Optional[VignetteFeatures] = None,
    ) -> Completion:
        return await complete(
            self.endpoints[endpoint_id],
            messages,
            self.decode,
            self.retry,
            self.backends[endpoint_id],
            limiter=self.limiter_for(endpoint_id),
            features=features,
            sleep=self.sleep,
        )

    async def close(self) -> None:
        for backend in self.backends.values():
            close = getattr(backend, "close", None)
            if close is not None:
                await close()
