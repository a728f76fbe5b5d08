"""Structured event log shared by gateways, PLCs and the scenario harness."""
from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

log = logging.getLogger("plcbridge.events")


def _fmt(value: Any) -> str:
    if isinstance(value, (bytes, bytearray)):
        return value.hex() or "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value) or "-"
    return str(value)


@dataclass(frozen=True)
class Event:
    seq: int
    ts: float
    actor: str
    event: str
    level: str = "info"
    detail: dict = field(default_factory=dict)

    def detail_text(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.detail.items()) or "-"

    def format(self) -> str:
        """``ts level event key=value...``"""
        return f"{self.ts:.6f} {self.level} {self.event} actor={self.actor} {self.detail_text()}"


class EventLog:
    """Append-only, totally ordered event list stamped with the loop clock."""

    def __init__(self, echo: bool = True):
        self.events: list[Event] = []
        self.echo = echo

    def emit(self, actor: str, event: str, level: str = "info", **detail) -> Event:
        try:
            ts = asyncio.get_running_loop().time()
        except RuntimeError:
            ts = 0.0
        ev = Event(len(self.events), ts, actor, event, level, detail)
        self.events.append(ev)
        if self.echo:
            log.log(logging.WARNING if level == "error" else logging.INFO, "%s", ev.format())
        return ev

    def select(self, actor: Optional[str] = None, event: Optional[str] = None) -> list[Event]:
        return [e for e in self.events
                if (actor is None or e.actor == actor) and (event is None or e.event == event)]

    def count(self, actor: Optional[str] = None, event: Optional[str] = None) -> int:
        return len(self.select(actor, event))
