"""
Endpoints de transparencia: textos de sistema verbatim con su checksum
"""
from typing import List

from fastapi import APIRouter

from triage_audit.models import PromptInfo, Strategy
from triage_audit.services.strategy_service import describe

router = APIRouter(prefix="/api", tags=["prompts"])


@router.get("/prompts", response_model=List[PromptInfo])
def list_prompts():
    """Las cuatro estrategias con su texto de sistema y SHA-256."""
    return [describe(s) for s in Strategy]


@router.get("/prompts/{strategy}", response_model=PromptInfo)
def get_prompt(strategy: Strategy):
    return describe(strategy)
