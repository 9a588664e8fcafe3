"""Console output for the acwp command."""

from typing import Any, Dict, List, Optional, TextIO
import sys

import pandas as pd

from .models import RunSummary


class ConsoleFormatter:
    """Colored status lines and text tables; color only when the stream is a terminal."""

    rule_char = "-"
    width = 60

    @staticmethod
    def _colored(code: str, text: str, stream: Optional[TextIO]) -> str:
        stream = stream or sys.stderr
        if stream.isatty():
            return f"\033[{code}m{text}\033[0m"
        return text

    @staticmethod
    def success_message(message: str, stream: Optional[TextIO] = None) -> str:
        return ConsoleFormatter._colored("92", f"✓ {message}", stream)

    @staticmethod
    def error_message(message: str, stream: Optional[TextIO] = None) -> str:
        return ConsoleFormatter._colored("91", f"✗ {message}", stream)

    @classmethod
    def format_run_summary(cls, summary: RunSummary, title: str = "Simulation run") -> str:
        """
        Key/value block for a finished simulation run.

        Args:
            summary: Run totals from ``SimWorld.summary``
            title: Heading centred above the block

        Returns:
            The block, framed by rules
        """
        rule = cls.rule_char * cls.width
        fields: Dict[str, Any] = {
            "seed": summary.seed,
            "virtual time (ms)": summary.final_time_ms,
            "events": summary.events,
            "dead-lettered": summary.dead_lettered,
            **{f"  {kind}": n for kind, n in summary.event_counts.items()},
        }
        key_width = max(len(k) for k in fields)
        lines = [rule, title.center(cls.width), rule]
        lines += [f"{key.ljust(key_width)} : {value}" for key, value in fields.items()]
        lines.append(rule)
        return "\n".join(lines)

    @staticmethod
    def format_table(rows: List[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
        """
        Render rows as a fixed-width text table.

        Args:
            rows: One dictionary per row
            columns: Column order; defaults to the keys of the first row

        Returns:
            Table text, or "(empty)" when there are no rows
        """
        if not rows:
            return "(empty)"
        df = pd.DataFrame(rows)
        if columns:
            df = df[[c for c in columns if c in df.columns]]
        return df.to_string(index=False)
