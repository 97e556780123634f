import copy
import logging
import re
from abc import ABC
from dataclasses import replace
from typing import Any, Dict, List, Optional

from ledger import LedgerView, Output, Transaction, TxInput
from models import BetParams, Role
from protocol import (
    Action,
    Broadcast,
    BroadcastResult,
    BlockTick,
    Observation,
    PartyState,
    Phase,
    Reorg,
    SecretDisclosure,
    SendMessage,
    Transition,
    build_redeem_transaction,
    decide_winner,
    revealed_secret,
    sign_inputs,
    step_party,
)
from scriptvm import Sig

logger = logging.getLogger(__name__)


def stake_locked(state: PartyState, view: LedgerView) -> bool:
    """Whether the party's principle output still waits to be settled"""
    principle = state.bet if state.role is Role.BOB else state.reveal
    if principle is None or not view.exists(principle.txid):
        return False
    spender = view.spender(principle.outpoint(0))
    return spender is None or not view.is_confirmed(spender.txid)


class Strategy(ABC):
    """Base class for the decision procedure that plays one seat of a session"""

    name = "honest"

    def __init__(self):
        self.deviated = False

    def get_definition(self) -> Dict[str, Any]:
        """Name and description, as listed by the registry"""
        return {"name": self.name, "description": (self.__doc__ or "").strip()}

    def decide(self, state: PartyState, params: BetParams, observation: Observation) -> Transition:
        state, actions = step_party(state, params, observation)
        return state, self.screen(state, actions)

    def screen(self, state: PartyState, actions: List[Action]) -> List[Action]:
        """Filter or reorder the honest actions; the base strategy keeps them all"""
        return actions

    def before_block(self, state: PartyState, params: BetParams, view: LedgerView) -> Transition:
        """Last chance to act in a tick, after every message has been delivered"""
        return state, []

    def finished(self, state: PartyState, view: LedgerView) -> bool:
        if state.phase is Phase.DONE:
            return True
        return self.deviated and not stake_locked(state, view)

    def spawn(self) -> "Strategy":
        """A fresh copy for a new session"""
        return copy.deepcopy(self)

    @property
    def is_honest(self) -> bool:
        return type(self) is Honest

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Honest(Strategy):
    """Follows the protocol exactly"""

    name = "honest"


class AbortAtStep(Strategy):
    """Stops cooperating at protocol step n; refunds are still claimed"""

    def __init__(self, step: int):
        super().__init__()
        if not 1 <= step <= 10:
            raise ValueError(f"protocol steps run from 1 to 10, got {step}")
        self.step = step
        self.name = f"abort-at-{step}"

    def screen(self, state: PartyState, actions: List[Action]) -> List[Action]:
        kept = []
        for action in actions:
            if isinstance(action, Broadcast) and action.refund:
                kept.append(action)
            elif self.deviated or action.step >= self.step:
                if not self.deviated:
                    logger.debug("%s stops before %s", self.name, type(action).__name__)
                self.deviated = True
            else:
                kept.append(action)
        return kept


class WithholdReveal(Strategy):
    """Bob never redeems the reveal transaction"""

    name = "withhold-reveal"

    def screen(self, state: PartyState, actions: List[Action]) -> List[Action]:
        kept = []
        for action in actions:
            if isinstance(action, Broadcast) and action.label == "redeem_reveal":
                self.deviated = True
                continue
            kept.append(action)
        return kept


class WithholdSecret(Strategy):
    """A losing Alice never sends A1"""

    name = "withhold-secret"

    def screen(self, state: PartyState, actions: List[Action]) -> List[Action]:
        kept = []
        for action in actions:
            if isinstance(action, SendMessage) and isinstance(action.message, SecretDisclosure):
                self.deviated = True
                continue
            kept.append(action)
        return kept


class RefundThenReveal(Strategy):
    """Bob sits on the reveal, refunds the bet at its locktime, then tries to redeem the reveal"""

    name = "refund-then-reveal"

    def __init__(self):
        super().__init__()
        self.held: Optional[Broadcast] = None
        self.refunded = False

    def screen(self, state: PartyState, actions: List[Action]) -> List[Action]:
        kept = []
        for action in actions:
            if isinstance(action, Broadcast) and action.label == "redeem_reveal":
                self.deviated = True
                if self.refunded:
                    kept.append(action)
                else:
                    self.held = action
                continue
            kept.append(action)
            if isinstance(action, Broadcast) and action.label == "refund_bet":
                self.refunded = True
                if self.held is not None:
                    kept.append(self.held)
                    self.held = None
        return kept

    def finished(self, state: PartyState, view: LedgerView) -> bool:
        return self.held is None and super().finished(state, view)


class ReorgDoubleSpend(Strategy):
    """
    Reverts the party's own principle through a colluding miner once the
    counterparty has acted on it.

    Bob strikes when Alice's reveal shows up on top of his bet; Alice strikes
    when Bob's reveal redemption tells her she lost.
    """

    def __init__(self, depth: int):
        super().__init__()
        if depth < 1:
            raise ValueError("a reorg must replace at least one block")
        self.depth = depth
        self.name = f"reorg-double-spend-{depth}"
        self.attempted = False
        self.succeeded = False
        self.claim: Optional[Transaction] = None

    def _double_spend(self, state: PartyState) -> Transaction:
        total = sum(coin.value for coin in state.funding)
        tx = Transaction([TxInput(coin.outpoint) for coin in state.funding], [Output(total, Sig(state.pubkey))], 0)
        return sign_inputs(tx, state.secret_key)

    def before_block(self, state: PartyState, params: BetParams, view: LedgerView) -> Transition:
        if self.attempted:
            return state, []
        if state.role is Role.BOB:
            if state.bet_txid is None or not view.is_confirmed(state.bet_txid):
                return state, []
            if state.reveal_txid is None or not view.exists(state.reveal_txid):
                return state, []
        else:
            if state.reveal is None or not view.is_confirmed(state.reveal.txid):
                return state, []
            b_secret = revealed_secret(view, state.reveal.outpoint(0), state.counterparty_commit)
            if b_secret is None:
                return state, []
            state = replace(state, counterparty_secret=b_secret)
            if decide_winner(params, state.secret, b_secret) is Role.ALICE:
                self.attempted = True
                return state, []

        self.attempted = True
        self.deviated = True
        return state, [Reorg(self.depth, (self._double_spend(state),))]

    def decide(self, state: PartyState, params: BetParams, observation: Observation) -> Transition:
        if isinstance(observation, BroadcastResult) and observation.label == "double_spend":
            self.succeeded = observation.accepted
            return state, []
        state, actions = super().decide(state, params, observation)
        if (self.succeeded and state.role is Role.BOB and self.claim is None
                and isinstance(observation, BlockTick)):
            claim = self._claim_reveal(state, params, observation.view)
            if claim is not None:
                self.claim = claim
                if not any(isinstance(a, Broadcast) and a.transaction.txid == claim.txid for a in actions):
                    actions.append(Broadcast(claim, "redeem_reveal", 9))
        return state, actions

    def _claim_reveal(self, state: PartyState, params: BetParams, view: LedgerView) -> Optional[Transaction]:
        """Once the bet is gone, take Alice's stake as soon as the reveal confirms"""
        if state.reveal_txid is None or not view.is_confirmed(state.reveal_txid):
            return None
        reveal = view.transaction(state.reveal_txid)
        if view.output(reveal.outpoint(0)) is None or view.spender(reveal.outpoint(0)) is not None:
            return None
        return build_redeem_transaction(reveal, 0, {"B": state.secret}, state.secret_key, params.pk_bob)

    def finished(self, state: PartyState, view: LedgerView) -> bool:
        if self.claim is not None and view.is_pending(self.claim.txid):
            return False
        return super().finished(state, view)


def enumerate_adversaries() -> List[Strategy]:
    """Every strategy the harness pits against an honest party, in a fixed order"""
    return [
        Honest(),
        *(AbortAtStep(step) for step in range(1, 11)),
        WithholdReveal(),
        WithholdSecret(),
        RefundThenReveal(),
        ReorgDoubleSpend(1),
        ReorgDoubleSpend(2),
    ]


_PARAMETRIZED = {
    re.compile(r"^abort-at-(\d+)$"): AbortAtStep,
    re.compile(r"^reorg-double-spend-(\d+)$"): ReorgDoubleSpend,
}


class StrategyRegistry:
    """Named strategies available to the harness and the CLI"""

    def __init__(self):
        self.strategies: Dict[str, Strategy] = {}

    def register_strategy(self, strategy: Strategy):
        """Register any strategy under its name"""
        definition = strategy.get_definition()
        name = definition.get("name")
        if not name:
            raise ValueError("Strategy must have a name")
        self.strategies[name] = strategy

    def get_definitions(self) -> List[Dict[str, Any]]:
        return [strategy.get_definition() for strategy in self.strategies.values()]

    def names(self) -> List[str]:
        return list(self.strategies)

    def create(self, name: str) -> Strategy:
        """A fresh strategy by name; abort-at-N and reorg-double-spend-N accept any N"""
        if name in self.strategies:
            return self.strategies[name].spawn()
        for pattern, factory in _PARAMETRIZED.items():
            match = pattern.match(name)
            if match:
                return factory(int(match.group(1)))
        raise KeyError(f"unknown strategy '{name}'; known: {', '.join(self.names())}")


def default_registry() -> StrategyRegistry:
    registry = StrategyRegistry()
    for strategy in enumerate_adversaries():
        registry.register_strategy(strategy)
    return registry
