"""
Simulador servido con el protocolo chat-completion (POST /v1/chat/completions)
"""
import logging
import time
import uuid
from functools import lru_cache
from typing import Dict, Optional

from fastapi import APIRouter, Depends, Header, HTTPException

from triage_audit.config import settings
from triage_audit.exceptions import TriageAuditError
from triage_audit.models import (
    ChatChoice,
    ChatCompletionRequest,
    ChatCompletionResponse,
    ChatMessage,
    Variant,
)
from triage_audit.services.simulator_service import (
    DEFAULT_PROFILE,
    Simulator,
    build_truth_lookup,
    features_from_messages,
    load_profiles,
)
from triage_audit.services.vignette_service import load_corpus

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/v1", tags=["simulator"])


class SimulatorState:
    """Un Simulator por perfil y la tabla de ESI real por huella de texto"""

    def __init__(self, simulators: Dict[str, Simulator], truth_lookup: Optional[Dict[str, int]] = None):
        self.simulators = simulators
        self.truth_lookup = truth_lookup or {}

    def simulator_for(self, model: str) -> Optional[Simulator]:
        if model in self.simulators:
            return self.simulators[model]
        if len(self.simulators) == 1:
            return next(iter(self.simulators.values()))
        return self.simulators.get(DEFAULT_PROFILE)


@lru_cache(maxsize=1)
def get_simulator_state() -> SimulatorState:
    profiles = load_profiles(settings.SIM_PROFILE_PATH)
    truth_lookup = {}
    if settings.SIM_CORPUS_PATH is not None:
        corpus = load_corpus(settings.SIM_CORPUS_PATH)
        truth_lookup = build_truth_lookup(
            [(v.text, v.ground_truth_esi) for v in corpus if v.variant == Variant.ORIGINAL]
        )
        logger.info(f"Simulador: {len(truth_lookup)} viñetas con ESI real conocido")
    return SimulatorState({name: Simulator(p) for name, p in profiles.items()}, truth_lookup)


def verify_api_key(authorization: Optional[str] = Header(default=None)) -> None:
    if settings.SIM_API_KEY and authorization != f"Bearer {settings.SIM_API_KEY}":
        raise HTTPException(status_code=401, detail="API key inválida o ausente")


@router.post("/chat/completions", response_model=ChatCompletionResponse,
             dependencies=[Depends(verify_api_key)])
def chat_completions(
    request: ChatCompletionRequest,
    state: SimulatorState = Depends(get_simulator_state),
):
    """
    Responde como un modelo de triaje con el sesgo del perfil elegido por "model".
    La respuesta contiene "ESI Level: N".
    """
    try:
        if not any(m.role == "user" for m in request.messages):
            raise HTTPException(status_code=400, detail="Se requiere al menos un mensaje user")

        simulator = state.simulator_for(request.model)
        if simulator is None:
            raise HTTPException(status_code=404, detail=f"Perfil desconocido: {request.model}")

        features = features_from_messages(request.messages, state.truth_lookup)
        content = simulator.respond(features)
        return ChatCompletionResponse(
            id=f"chatcmpl-{uuid.uuid4().hex[:12]}",
            created=int(time.time()),
            model=request.model,
            choices=[ChatChoice(message=ChatMessage(role="assistant", content=content))],
        )

    except HTTPException:
        raise
    except TriageAuditError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error en simulador: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Error interno del simulador: {str(e)}")
