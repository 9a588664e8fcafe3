"""Shared utilities: settings and logging, console formatting, delivery metrics."""

from .console import ConsoleFormatter
from .metrics import evaluate_delivery
from .models import RunSummary
from .settings import Settings, load_settings, parse_endpoint, setup_logging

__all__ = [
    "ConsoleFormatter",
    "evaluate_delivery",
    "RunSummary",
    "Settings",
    "load_settings",
    "parse_endpoint",
    "setup_logging",
]
