"""Pydantic models for run summaries."""

from datetime import datetime
from typing import Dict

from pydantic import BaseModel, Field


class RunSummary(BaseModel):
    """Summary of one simulation run."""
    seed: int = Field(description="Random seed of the run")
    timestamp: datetime = Field(default_factory=datetime.now, description="When the run happened")
    final_time_ms: int = Field(description="Virtual time at quiescence")
    events: int = Field(description="Number of logged events")
    event_counts: Dict[str, int] = Field(default_factory=dict, description="Events per kind")
    dead_lettered: int = Field(default=0, description="Dead-letter records produced")
