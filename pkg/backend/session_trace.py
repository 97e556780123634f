from dataclasses import dataclass, field
from typing import Dict, List, Optional

from models import Role

LEDGER_ACTOR = "Ledger"


def short(txid: bytes) -> str:
    """Txids are shortened to 16 hex characters in traces"""
    return txid.hex()[:16]


@dataclass
class TraceEvent:
    """A single line of a session trace"""
    height: int
    actor: str   # "Alice", "Bob" or "Ledger"
    event: str
    payload: Dict[str, str] = field(default_factory=dict)

    def format(self) -> str:
        parts = [str(self.height), self.actor, self.event]
        parts.extend(f"{key}={value}" for key, value in self.payload.items())
        return " ".join(parts)


@dataclass(frozen=True)
class SessionResult:
    alice_net: int
    bob_net: int
    height: int
    reason: str  # no-stake | refunded | settled | horizon

    def format(self) -> str:
        return (f"RESULT alice_net={self.alice_net} bob_net={self.bob_net} "
                f"height={self.height} reason={self.reason}")


class SessionTrace:
    """Ordered record of one session plus what the auditor needs to judge it"""

    def __init__(self):
        self.events: List[TraceEvent] = []
        self.result: Optional[SessionResult] = None
        self.secrets: Dict[Role, bytes] = {}
        self.honest: Dict[Role, bool] = {}
        self.strategy_names: Dict[Role, str] = {}
        # Who took each principle output on the final chain: alice | bob | refund | none
        self.bet_claim = "none"
        self.reveal_claim = "none"
        self.refund_locktimes: Dict[str, int] = {}
        self.ledger_findings: List[str] = []
        self.ledger_snapshot = ""  # final ledger state, for replay comparisons
        self.protocol_violations: List[str] = []

    def add_event(self, height: int, actor: str, event: str, **payload) -> TraceEvent:
        """Append an event; payload values are rendered with str()"""
        entry = TraceEvent(height, actor, event, {key: str(value) for key, value in payload.items()})
        self.events.append(entry)
        return entry

    def finish(self, alice_net: int, bob_net: int, height: int, reason: str) -> SessionResult:
        self.result = SessionResult(alice_net, bob_net, height, reason)
        return self.result

    def net_of(self, role: Role) -> int:
        if self.result is None:
            raise ValueError("session has not finished")
        return self.result.alice_net if role is Role.ALICE else self.result.bob_net

    def events_of(self, actor: Optional[str] = None, event: Optional[str] = None) -> List[TraceEvent]:
        return [
            entry for entry in self.events
            if (actor is None or entry.actor == actor) and (event is None or entry.event == event)
        ]

    def lines(self) -> List[str]:
        lines = [entry.format() for entry in self.events]
        if self.result is not None:
            lines.append(self.result.format())
        return lines

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"
