import logging
import math
import random
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ledger import KeyRegistry, Ledger, LedgerView, Output
from models import BetParams, Role
from protocol import (
    Action,
    Broadcast,
    BroadcastResult,
    BlockTick,
    Coin,
    Message,
    PartyState,
    ProtocolViolation,
    RefundSignatureRequest,
    Reorg,
    SendMessage,
    SessionStart,
    decide_winner,
    new_party,
    new_secret,
)
from scriptvm import Sig
from session_trace import LEDGER_ACTOR, SessionTrace, short
from strategies import (
    Honest,
    RefundThenReveal,
    ReorgDoubleSpend,
    Strategy,
    WithholdReveal,
    WithholdSecret,
)

logger = logging.getLogger(__name__)

ROLES = (Role.ALICE, Role.BOB)


class SessionConfig(BaseModel):
    """Everything that determines a session, seed included"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    params: BetParams = Field(default_factory=BetParams)
    strategy_alice: Strategy = Field(default_factory=Honest)
    strategy_bob: Strategy = Field(default_factory=Honest)
    max_height: Optional[int] = None  # defaults to 2 * bet_locktime + 10
    rng_seed: int = Field(default=1, ge=0, lt=1 << 64)
    reorg_budget: int = Field(default=3, ge=0)

    @model_validator(mode="after")
    def check_horizon(self) -> "SessionConfig":
        if self.max_height is not None and self.max_height <= self.params.bet_locktime:
            raise ValueError("max_height must exceed bet_locktime or refunds are unreachable")
        return self

    @property
    def horizon(self) -> int:
        if self.max_height is not None:
            return self.max_height
        return 2 * self.params.bet_locktime + 10

    def strategy_of(self, role: Role) -> Strategy:
        return self.strategy_alice if role is Role.ALICE else self.strategy_bob


@dataclass(frozen=True)
class SessionMaterial:
    """Keys and secrets drawn from a session's RNG stream"""
    alice_key: bytes
    bob_key: bytes
    alice_secret: bytes
    bob_secret: bytes


def derive_session_material(seed: int) -> SessionMaterial:
    rng = random.Random(seed)
    alice_key = rng.randbytes(32)
    bob_key = rng.randbytes(32)
    return SessionMaterial(alice_key, bob_key, new_secret(rng), new_secret(rng))


class SessionRunner:
    """Event loop for one session: a fresh ledger, two strategies and a message queue"""

    def __init__(self, config: SessionConfig):
        self.config = config
        material = derive_session_material(config.rng_seed)

        self.key_registry = KeyRegistry()
        pk_alice = self.key_registry.register(material.alice_key)
        pk_bob = self.key_registry.register(material.bob_key)
        self.params = config.params.model_copy(update={"pk_alice": pk_alice, "pk_bob": pk_bob})

        self.ledger = Ledger(self.key_registry, max_reorg_depth=config.reorg_budget)
        faucet = self.ledger.issue([
            Output(self.params.alice_stake, Sig(pk_alice)),
            Output(self.params.pot, Sig(pk_bob)),
        ])

        self.strategies: Dict[Role, Strategy] = {role: config.strategy_of(role).spawn() for role in ROLES}
        self.states: Dict[Role, PartyState] = {
            Role.ALICE: new_party(Role.ALICE, material.alice_secret, material.alice_key,
                                  [Coin(faucet.outpoint(0), self.params.alice_stake)]),
            Role.BOB: new_party(Role.BOB, material.bob_secret, material.bob_key,
                                [Coin(faucet.outpoint(1), self.params.pot)]),
        }
        self.initial_balance = {role: self.ledger.balance_of(self.params.pubkey_of(role)) for role in ROLES}
        self.queue: Deque[Tuple[Role, Message]] = deque()
        self.labels: Dict[bytes, str] = {}

        self.trace = SessionTrace()
        for role in ROLES:
            self.trace.secrets[role] = material.alice_secret if role is Role.ALICE else material.bob_secret
            self.trace.honest[role] = self.strategies[role].is_honest
            self.trace.strategy_names[role] = self.strategies[role].name
        self.trace.add_event(0, LEDGER_ACTOR, "faucet", tx=short(faucet.txid),
                             alice=self.params.alice_stake, bob=self.params.pot)

    # -- plumbing --

    def _record(self, role: Role, event: str, **payload) -> None:
        entry = self.trace.add_event(self.ledger.height, role.value, event, **payload)
        logger.debug(entry.format())

    def _observe(self, role: Role, observation) -> None:
        strategy = self.strategies[role]
        try:
            state, actions = strategy.decide(self.states[role], self.params, observation)
        except ProtocolViolation as e:
            logger.warning("%s rejected %s: %s", role.value, type(observation).__name__, e)
            self.trace.protocol_violations.append(f"{role.value}: {e}")
            self._record(role, "violation", observation=type(observation).__name__)
            return
        self._transition(role, state, actions)

    def _transition(self, role: Role, state: PartyState, actions: List[Action]) -> None:
        previous = self.states[role].phase
        self.states[role] = state
        if state.phase is not previous:
            self._record(role, "phase", phase=state.phase.value)
        for action in actions:
            self._perform(role, action)

    def _perform(self, role: Role, action: Action) -> None:
        if isinstance(action, SendMessage):
            message = action.message
            self._record(role, "send", msg=type(message).__name__, step=action.step, **message.summary())
            if isinstance(message, RefundSignatureRequest):
                principle = "bet" if role is Role.BOB else "reveal"
                self.trace.refund_locktimes[principle] = message.transaction.locktime
            self.queue.append((role.counterparty, message))
        elif isinstance(action, Broadcast):
            tx = action.transaction
            self.labels[tx.txid] = action.label
            # Refunds may be handed over early; the ledger holds them until their locktime
            result = self.ledger.submit_transaction(tx, defer=action.refund)
            outcome = "deferred" if result.deferred else result.describe()
            self._record(role, "broadcast", label=action.label, tx=short(tx.txid), result=outcome)
            accepted = result.accepted or result.deferred
            reason = None if accepted else result.reason.value
            self._observe(role, BroadcastResult(tx.txid, action.label, accepted, reason))
        elif isinstance(action, Reorg):
            self._reorg(role, action)

    def _reorg(self, role: Role, action: Reorg) -> None:
        # A party may only rewrite history with its own coins
        own = {coin.outpoint for coin in self.states[role].funding}
        replacement = list(action.replacement)
        authorized = all(tx_in.outpoint in own for tx in replacement for tx_in in tx.inputs)
        if authorized:
            result = self.ledger.reorg(action.depth, replacement)
            outcome = result.describe()
        else:
            result = None
            outcome = "unauthorized"
        for tx in replacement:
            self.labels[tx.txid] = "double_spend"
        self.trace.add_event(self.ledger.height, LEDGER_ACTOR, "reorg", depth=action.depth,
                             by=role.value, result=outcome)
        accepted = result is not None and result.accepted
        marker = replacement[0].txid if replacement else b""
        self._observe(role, BroadcastResult(marker, "double_spend", accepted, None if accepted else outcome))

    def _drain(self) -> None:
        while self.queue:
            role, message = self.queue.popleft()
            self._observe(role, message)

    # -- main loop --

    def _finished(self, view: LedgerView) -> bool:
        return all(self.strategies[role].finished(self.states[role], view) for role in ROLES)

    def run(self) -> SessionTrace:
        """
        Run the session to completion.

        Each tick delivers a BlockTick to Alice then Bob (draining messages after
        each), runs the before_block hooks, checks termination and mines one block.
        """
        for role in ROLES:
            self._observe(role, SessionStart(self.ledger.height))
        self._drain()

        reason = "horizon"
        while True:
            for role in ROLES:
                self._observe(role, BlockTick(self.ledger.height, self.ledger.view()))
                self._drain()
            for role in ROLES:
                state, actions = self.strategies[role].before_block(self.states[role], self.params, self.ledger.view())
                self._transition(role, state, actions)
                self._drain()

            if self._finished(self.ledger.view()):
                reason = None
                break
            if self.ledger.height >= self.config.horizon:
                break
            self.ledger.advance_blocks(1)
            for tx in self.ledger.blocks[-1]:
                self.trace.add_event(self.ledger.height, LEDGER_ACTOR, "confirm",
                                     tx=short(tx.txid), label=self.labels.get(tx.txid, "unknown"))
        return self._close(reason)

    def _claimant(self, principle_txid: Optional[bytes]) -> str:
        """Who took a principle output on the final chain"""
        if principle_txid is None or self.ledger.confirmation_height(principle_txid) is None:
            return "none"
        spender = self.ledger.spender_of(self.ledger.find_transaction(principle_txid).outpoint(0))
        if spender is None or self.ledger.confirmation_height(spender.txid) is None:
            return "none"
        if spender.locktime > 0:
            return "refund"
        if spender.outputs[0].script == Sig(self.params.pk_alice):
            return "alice"
        return "bob"

    def _close(self, reason: Optional[str]) -> SessionTrace:
        trace = self.trace
        bet_txid = self.states[Role.BOB].bet_txid or self.states[Role.ALICE].bet_txid
        reveal_txid = self.states[Role.ALICE].reveal_txid or self.states[Role.BOB].reveal_txid
        trace.bet_claim = self._claimant(bet_txid)
        trace.reveal_claim = self._claimant(reveal_txid)
        trace.ledger_findings = self.ledger.audit()
        trace.ledger_snapshot = self.ledger.snapshot_text()

        if reason is None:
            funded = any(
                txid is not None and self.ledger.confirmation_height(txid) is not None
                for txid in (bet_txid, reveal_txid)
            )
            if not funded:
                reason = "no-stake"
            elif trace.reveal_claim == "bob" or trace.bet_claim in ("alice", "bob"):
                reason = "settled"
            else:
                reason = "refunded"

        nets = {
            role: self.ledger.balance_of(self.params.pubkey_of(role)) - self.initial_balance[role]
            for role in ROLES
        }
        result = trace.finish(nets[Role.ALICE], nets[Role.BOB], self.ledger.height, reason)
        logger.info("session seed=%d %s", self.config.rng_seed, result.format())
        return trace


def run_session(config: SessionConfig) -> SessionTrace:
    return SessionRunner(config).run()


def audit_trace(trace: SessionTrace, config: SessionConfig) -> List[str]:
    """Check a finished trace for outcomes an honest party should never suffer"""
    violations = []
    params = config.params
    result = trace.result
    if result is None:
        return ["trace has no result"]

    if result.alice_net + result.bob_net != 0:
        violations.append(f"zero-sum: alice_net {result.alice_net} + bob_net {result.bob_net} != 0")

    toss_winner = decide_winner(params, trace.secrets[Role.ALICE], trace.secrets[Role.BOB])
    completed = {
        Role.ALICE: trace.reveal_claim == "bob",   # Bob took Alice's stake
        Role.BOB: trace.bet_claim == "alice",      # Alice took the pot
    }
    for role in ROLES:
        if not trace.honest.get(role, False):
            continue
        stake = params.stake_of(role)
        net = trace.net_of(role)
        if net < -stake:
            violations.append(f"safety: honest {role.value} nets {net}, below -{stake}")
        elif net == -stake and not (toss_winner is role.counterparty and completed[role]):
            violations.append(f"safety: honest {role.value} nets {net} without losing the toss")

    violations.extend(f"ledger: {finding}" for finding in trace.ledger_findings)

    if not params.unsound_mode:
        bet_lock = trace.refund_locktimes.get("bet")
        reveal_lock = trace.refund_locktimes.get("reveal")
        if bet_lock is not None and reveal_lock is not None and reveal_lock >= bet_lock:
            violations.append(f"locktime: refund_reveal at {reveal_lock} is not before refund_bet at {bet_lock}")
    return violations


# --- Monte Carlo --------------------------------------------------------------------

class Statistics(BaseModel):
    n: int
    alice_wins: int
    alice_freq: float
    mean_height: float
    max_height: int
    violations: int
    outcomes: Dict[str, int]
    alice_nets: Dict[int, int]  # histogram of per-session alice_net

    def lines(self) -> List[str]:
        histogram = ",".join(f"{reason}:{count}" for reason, count in sorted(self.outcomes.items()))
        return [
            f"n={self.n}",
            f"alice_wins={self.alice_wins}",
            f"alice_freq={self.alice_freq:.4f}",
            f"mean_height={self.mean_height:.2f}",
            f"max_height={self.max_height}",
            f"violations={self.violations}",
            f"outcomes={histogram}",
        ]

    def three_sigma_band(self, probability: float) -> Tuple[float, float]:
        sigma = math.sqrt(probability * (1 - probability) / self.n)
        return probability - 3 * sigma, probability + 3 * sigma


def _session_summary(config: SessionConfig) -> Tuple[int, int, str, int]:
    trace = run_session(config)
    return trace.result.alice_net, trace.result.height, trace.result.reason, len(audit_trace(trace, config))


def monte_carlo(template: SessionConfig, n: int, workers: int = 1) -> Statistics:
    """Run n sessions seeded template.rng_seed + 0 .. n - 1 and aggregate the outcomes"""
    if n < 1:
        raise ValueError("monte_carlo needs at least one session")
    configs = [template.model_copy(update={"rng_seed": template.rng_seed + i}) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            summaries = list(executor.map(_session_summary, configs, chunksize=max(1, n // (workers * 4))))
    else:
        summaries = [_session_summary(config) for config in configs]

    alice_wins = sum(1 for net, _, _, _ in summaries if net > 0)
    heights = [height for _, height, _, _ in summaries]
    return Statistics(
        n=n,
        alice_wins=alice_wins,
        alice_freq=alice_wins / n,
        mean_height=sum(heights) / n,
        max_height=max(heights),
        violations=sum(count for _, _, _, count in summaries),
        outcomes=dict(Counter(reason for _, _, reason, _ in summaries)),
        alice_nets=dict(Counter(net for net, _, _, _ in summaries)),
    )


# --- Attack scenarios ------------------------------------------------------------------

@dataclass(frozen=True)
class AttackScenario:
    name: str
    description: str
    strategies: Callable[[], Tuple[Strategy, Strategy]]
    winner: Optional[Role]  # the toss outcome under which the attack bites
    expects_violation: Callable[[SessionConfig, SessionTrace], bool]
    min_reorg_budget: int = 0


def _late_reveal_refund(config: SessionConfig, trace: SessionTrace) -> bool:
    bet_lock = trace.refund_locktimes.get("bet")
    reveal_lock = trace.refund_locktimes.get("reveal")
    return bet_lock is not None and reveal_lock is not None and reveal_lock > bet_lock


ATTACKS: Dict[str, AttackScenario] = {
    "refund-then-reveal": AttackScenario(
        name="refund-then-reveal",
        description="Bob refunds the bet at its locktime, then redeems the reveal",
        strategies=lambda: (Honest(), RefundThenReveal()),
        winner=Role.ALICE,
        expects_violation=_late_reveal_refund,
    ),
    "reorg-double-spend": AttackScenario(
        name="reorg-double-spend",
        description="Bob reverts his bet with a one-block reorg after Alice reveals",
        strategies=lambda: (Honest(), ReorgDoubleSpend(1)),
        winner=Role.ALICE,
        expects_violation=lambda config, trace: config.params.confirmation_depth < 1,
        min_reorg_budget=1,
    ),
    "withhold-reveal": AttackScenario(
        name="withhold-reveal",
        description="Bob never redeems the reveal transaction",
        strategies=lambda: (Honest(), WithholdReveal()),
        winner=None,
        expects_violation=lambda config, trace: False,
    ),
    "withhold-secret": AttackScenario(
        name="withhold-secret",
        description="A losing Alice never discloses A1",
        strategies=lambda: (WithholdSecret(), Honest()),
        winner=Role.BOB,
        expects_violation=lambda config, trace: False,
    ),
}


def find_seed(params: BetParams, start: int, winner: Role, limit: int = 10_000) -> int:
    """First seed at or above start whose secrets make `winner` win the toss"""
    for seed in range(start, start + limit):
        material = derive_session_material(seed)
        if decide_winner(params, material.alice_secret, material.bob_secret) is winner:
            return seed
    raise ValueError(f"no seed in [{start}, {start + limit}) lets {winner.value} win")


@dataclass
class AttackReport:
    scenario: AttackScenario
    config: SessionConfig
    trace: SessionTrace
    violations: List[str]
    expected_violation: bool

    @property
    def matched(self) -> bool:
        return bool(self.violations) == self.expected_violation


def run_attack(name: str, params: BetParams, seed: int = 1, reorg_budget: int = 3) -> AttackReport:
    """Run a named attack against an honest counterparty and audit the result"""
    scenario = ATTACKS.get(name)
    if scenario is None:
        raise KeyError(f"unknown attack '{name}'; known: {', '.join(ATTACKS)}")
    if scenario.winner is not None:
        seed = find_seed(params, seed, scenario.winner)
    alice, bob = scenario.strategies()
    config = SessionConfig(
        params=params,
        strategy_alice=alice,
        strategy_bob=bob,
        rng_seed=seed,
        reorg_budget=max(reorg_budget, scenario.min_reorg_budget),
    )
    trace = run_session(config)
    violations = audit_trace(trace, config)
    expected = scenario.expects_violation(config, trace)
    logger.info("attack %s seed=%d violations=%d expected=%s", name, seed, len(violations), expected)
    return AttackReport(scenario, config, trace, violations, expected)
