"""Coverage-guided fuzz loop."""

from semfuzz.engine.campaign import (
    C2P_BOUND,
    Campaign,
    CampaignResult,
    Verdict,
    classify_execution,
    publish_to_llm,
    run_campaign,
    try_consume_llm,
)
from semfuzz.engine.havoc import mutate_builtin
from semfuzz.engine.scheduler import EmptyQueue, FuzzQueue, select_next

__all__ = [
    "C2P_BOUND",
    "Campaign",
    "CampaignResult",
    "EmptyQueue",
    "FuzzQueue",
    "Verdict",
    "classify_execution",
    "mutate_builtin",
    "publish_to_llm",
    "run_campaign",
    "select_next",
    "try_consume_llm",
]
