import logging
from dataclasses import dataclass, replace
from enum import Enum
from random import Random
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ledger import LedgerView, OutPoint, Output, Transaction, TxInput, derive_pubkey, sign
from models import BetParams, CoinPredicate, Role
from scriptvm import (
    And,
    Digest,
    GreaterThanSha1,
    HashAlgorithm,
    LowBitsCompare,
    Or,
    ParityEquals,
    PreimageSha256,
    ScriptExpr,
    Sig,
    SignatureToken,
    Witness,
    digest,
    low_bits,
    parity,
)

logger = logging.getLogger(__name__)

SECRET_SIZE = 32


class DomainError(ValueError):
    """Arguments outside an operation's domain"""


class FundingMismatch(ValueError):
    """Funding coins do not add up to the required stake"""


class BadIndex(ValueError):
    """Referenced output index does not exist on the parent transaction"""


class ProtocolViolation(ValueError):
    """An observation that cannot happen in the party's current phase"""


# --- Secrets and winners --------------------------------------------------------------

def new_secret(rng: Random) -> bytes:
    return rng.randbytes(SECRET_SIZE)


def commit(secret: bytes) -> Digest:
    """A2 = SHA256(A1)"""
    return digest(HashAlgorithm.SHA256, secret)


def winner(a_secret: bytes, b_secret: bytes) -> Role:
    """Alice wins iff (A xor B) mod 2 == 0"""
    return Role.ALICE if parity(a_secret) ^ parity(b_secret) == 0 else Role.BOB


def biased_winner(a_secret: bytes, b_secret: bytes, k_bits: int, threshold: int) -> Role:
    """Alice wins iff the low k bits of the XORed secret tails are below threshold"""
    if not 1 <= k_bits <= 16:
        raise DomainError(f"k_bits must be within 1..16, got {k_bits}")
    if not 0 <= threshold <= (1 << k_bits):
        raise DomainError(f"threshold must be within 0..2^{k_bits}, got {threshold}")
    window = low_bits(a_secret, k_bits) ^ low_bits(b_secret, k_bits)
    return Role.ALICE if window < threshold else Role.BOB


def sha1_winner(a_secret: bytes, b_secret: bytes, threshold: int) -> Role:
    """Standard-script variant: Alice wins iff SHA1(A || B) > threshold"""
    value = int.from_bytes(digest(HashAlgorithm.SHA1, a_secret + b_secret), "big")
    return Role.ALICE if value > threshold else Role.BOB


def decide_winner(params: BetParams, a_secret: bytes, b_secret: bytes) -> Role:
    """The winner under whichever coin the parameters describe"""
    if params.bias is not None:
        return biased_winner(a_secret, b_secret, params.bias.k_bits, params.bias.threshold)
    if params.predicate is CoinPredicate.SHA1:
        return sha1_winner(a_secret, b_secret, params.sha1_threshold)
    return winner(a_secret, b_secret)


# --- Scripts ----------------------------------------------------------------------------

def _require_keys(params: BetParams) -> Tuple[bytes, bytes]:
    if params.pk_alice is None or params.pk_bob is None:
        raise DomainError("both public keys must be set before building transactions")
    return params.pk_alice, params.pk_bob


def coin_conditions(params: BetParams) -> Tuple[ScriptExpr, ScriptExpr]:
    """(Alice-wins condition, Bob-wins condition) over witness slots A and B"""
    slots = ("A", "B")
    if params.bias is not None:
        k_bits, threshold = params.bias.k_bits, params.bias.threshold
        return (LowBitsCompare(slots, k_bits, threshold, "<"),
                LowBitsCompare(slots, k_bits, threshold, ">="))
    if params.predicate is CoinPredicate.SHA1:
        return (GreaterThanSha1(slots, params.sha1_threshold, ">"),
                GreaterThanSha1(slots, params.sha1_threshold, "<="))
    return ParityEquals(slots, 0), ParityEquals(slots, 1)


def bet_script(params: BetParams, a_commit: Digest, b_commit: Digest) -> ScriptExpr:
    """[A sig AND B sig] OR [preimages AND ((Alice wins AND A sig) OR (Bob wins AND B sig))]"""
    pk_alice, pk_bob = _require_keys(params)
    alice_wins, bob_wins = coin_conditions(params)
    return Or(
        And(Sig(pk_alice), Sig(pk_bob)),
        And(
            And(PreimageSha256("A", a_commit), PreimageSha256("B", b_commit)),
            Or(And(alice_wins, Sig(pk_alice)), And(bob_wins, Sig(pk_bob))),
        ),
    )


def reveal_script(params: BetParams, b_commit: Digest) -> ScriptExpr:
    """[A sig AND B sig] OR [SHA256(B) == B2 AND B sig]"""
    pk_alice, pk_bob = _require_keys(params)
    return Or(
        And(Sig(pk_alice), Sig(pk_bob)),
        And(PreimageSha256("B", b_commit), Sig(pk_bob)),
    )


# --- Transactions ----------------------------------------------------------------------

@dataclass(frozen=True)
class Coin:
    """A spendable output a party controls"""
    outpoint: OutPoint
    value: int


def _funding_inputs(funding: Sequence[Coin], required: int) -> List[TxInput]:
    total = sum(coin.value for coin in funding)
    if total != required:
        raise FundingMismatch(f"funding sums to {total}, the stake requires {required}")
    return [TxInput(coin.outpoint) for coin in funding]


def build_bet_transaction(params: BetParams, funding: Sequence[Coin],
                          a_commit: Digest, b_commit: Digest) -> Transaction:
    """Bob's pot, spendable by the toss winner once both secrets are public (unsigned)"""
    inputs = _funding_inputs(funding, params.pot)
    return Transaction(inputs, [Output(params.pot, bet_script(params, a_commit, b_commit))], 0)


def build_reveal_transaction(params: BetParams, funding: Sequence[Coin], b_commit: Digest) -> Transaction:
    """Alice's stake, spendable by Bob only by disclosing B1 (unsigned)"""
    inputs = _funding_inputs(funding, params.alice_stake)
    return Transaction(inputs, [Output(params.alice_stake, reveal_script(params, b_commit))], 0)


def _parent_output(parent: Transaction, output_index: int) -> Output:
    if not 0 <= output_index < len(parent.outputs):
        raise BadIndex(f"parent has no output {output_index}")
    return parent.outputs[output_index]


def build_refund_transaction(parent: Transaction, output_index: int, locktime_offset: int,
                             current_height: int, dest_pk: bytes) -> Transaction:
    """Timelocked spend of a principle output back to its funder; signatures come later"""
    source = _parent_output(parent, output_index)
    return Transaction(
        [TxInput(parent.outpoint(output_index))],
        [Output(source.value, Sig(dest_pk))],
        current_height + locktime_offset,
    )


def build_redeem_transaction(parent: Transaction, output_index: int, preimages: Mapping[str, bytes],
                             signer_secret_key: bytes, dest_pk: bytes) -> Transaction:
    """Spend a parent output with preimages plus the signer's signature over the new txid"""
    source = _parent_output(parent, output_index)
    unsigned = Transaction([TxInput(parent.outpoint(output_index))], [Output(source.value, Sig(dest_pk))], 0)
    token = sign(signer_secret_key, unsigned.txid)
    return unsigned.with_witness(0, Witness(slots=dict(preimages), signatures=frozenset({token})))


def add_signature(tx: Transaction, input_index: int, token: SignatureToken) -> Transaction:
    return tx.with_witness(input_index, tx.inputs[input_index].witness.with_signature(token))


def sign_inputs(tx: Transaction, secret_key: bytes) -> Transaction:
    """Sign every input of tx with one key (funding a principle from own coins)"""
    token = sign(secret_key, tx.txid)
    for index in range(len(tx.inputs)):
        tx = add_signature(tx, index, token)
    return tx


# --- Messages, observations and actions --------------------------------------------------

@dataclass(frozen=True)
class Commit:
    digest: Digest

    def summary(self) -> Dict[str, str]:
        return {"digest": self.digest.hex()}


@dataclass(frozen=True)
class RefundSignatureRequest:
    transaction: Transaction

    def summary(self) -> Dict[str, str]:
        return {"tx": self.transaction.txid.hex()[:16], "locktime": str(self.transaction.locktime)}


@dataclass(frozen=True)
class RefundSignature:
    token: SignatureToken

    def summary(self) -> Dict[str, str]:
        return {"tx": self.token.message.hex()[:16]}


@dataclass(frozen=True)
class SecretDisclosure:
    secret: bytes

    def summary(self) -> Dict[str, str]:
        return {"secret": self.secret.hex()}


Message = Union[Commit, RefundSignatureRequest, RefundSignature, SecretDisclosure]


@dataclass(frozen=True)
class SessionStart:
    height: int


@dataclass(frozen=True)
class BlockTick:
    height: int
    view: LedgerView


@dataclass(frozen=True)
class BroadcastResult:
    """Ledger feedback on one of the party's own broadcasts"""
    txid: Digest
    label: str
    accepted: bool
    reason: Optional[str] = None


Observation = Union[Message, SessionStart, BlockTick, BroadcastResult]


@dataclass(frozen=True)
class SendMessage:
    message: Message
    step: int


@dataclass(frozen=True)
class Broadcast:
    transaction: Transaction
    label: str
    step: int
    refund: bool = False


@dataclass(frozen=True)
class Reorg:
    """Ask a colluding miner to replace the last `depth` blocks"""
    depth: int
    replacement: Tuple[Transaction, ...]


Action = Union[SendMessage, Broadcast, Reorg]


# --- Party state machines ------------------------------------------------------------

class Phase(str, Enum):
    INIT = "Init"
    COMMIT_SENT = "CommitSent"
    COMMIT_EXCHANGED = "CommitExchanged"
    REFUND_BET_SIGNED = "RefundBetSigned"
    BET_BROADCAST = "BetBroadcast"
    REFUND_REVEAL_SIGNED = "RefundRevealSigned"
    REVEAL_BROADCAST = "RevealBroadcast"
    REVEAL_REDEEMED = "RevealRedeemed"
    BET_REDEEMED = "BetRedeemed"
    REFUNDED = "Refunded"
    DONE = "Done"


@dataclass(frozen=True)
class PartyState:
    role: Role
    phase: Phase
    secret: bytes
    secret_key: bytes
    funding: Tuple[Coin, ...]
    height: int = 0
    counterparty_commit: Optional[Digest] = None
    counterparty_secret: Optional[bytes] = None
    bet: Optional[Transaction] = None
    bet_txid: Optional[Digest] = None
    reveal: Optional[Transaction] = None
    reveal_txid: Optional[Digest] = None
    refund_bet: Optional[Transaction] = None
    refund_reveal: Optional[Transaction] = None
    reveal_claim: Optional[Transaction] = None
    bet_claim: Optional[Transaction] = None
    net_outcome: Optional[int] = None

    @property
    def pubkey(self) -> bytes:
        return derive_pubkey(self.secret_key)

    @property
    def own_commit(self) -> Digest:
        return commit(self.secret)


def new_party(role: Role, secret: bytes, secret_key: bytes, funding: Sequence[Coin]) -> PartyState:
    if len(secret) != SECRET_SIZE:
        raise DomainError("secrets are 32 bytes")
    return PartyState(role=role, phase=Phase.INIT, secret=secret, secret_key=secret_key, funding=tuple(funding))


# Phases in which a party has nothing locked yet and may walk away
_ALICE_UNFUNDED = {Phase.INIT, Phase.COMMIT_SENT, Phase.COMMIT_EXCHANGED, Phase.REFUND_BET_SIGNED, Phase.BET_BROADCAST}
_BOB_UNFUNDED = {Phase.INIT, Phase.COMMIT_EXCHANGED}
_BOB_BET_LIVE = {Phase.REFUND_BET_SIGNED, Phase.BET_BROADCAST, Phase.REFUND_REVEAL_SIGNED,
                 Phase.REVEAL_REDEEMED, Phase.BET_REDEEMED, Phase.REFUNDED}

Transition = Tuple[PartyState, List[Action]]


def revealed_secret(view: LedgerView, outpoint: OutPoint, commitment: Digest, label: str = "B") -> Optional[bytes]:
    """A preimage of `commitment` published by whatever spends outpoint"""
    spender = view.spender(outpoint)
    if spender is None:
        return None
    for tx_in in spender.inputs:
        if tx_in.outpoint == outpoint:
            value = tx_in.witness.slots.get(label)
            if value is not None and commit(value) == commitment:
                return value
    return None


def _refund_due(view: LedgerView, refund: Transaction, outpoint: OutPoint) -> bool:
    return (view.height >= refund.locktime
            and view.output(outpoint) is not None
            and view.spender(outpoint) is None)


def _check_refund_terms(refund: Transaction, dest_pk: bytes, value: int, min_locktime: int) -> None:
    if len(refund.inputs) != 1 or len(refund.outputs) != 1:
        raise ProtocolViolation("a refund spends one output to one output")
    if refund.outputs[0] != Output(value, Sig(dest_pk)):
        raise ProtocolViolation("refund does not pay the agreed amount back to its funder")
    if refund.locktime < min_locktime:
        raise ProtocolViolation(f"refund locktime {refund.locktime} is earlier than {min_locktime}")


def _check_counterparty_commit(state: PartyState, received: Digest) -> bool:
    """True if the commitment is new; False for an identical duplicate"""
    if state.counterparty_commit is None:
        return True
    if state.counterparty_commit != received:
        raise ProtocolViolation("counterparty sent two different commitments")
    return False


def _alice_settle(state: PartyState, params: BetParams, b_secret: bytes) -> Transition:
    """Step 10: redeem the bet if Alice won, otherwise hand A1 to Bob"""
    state = replace(state, counterparty_secret=b_secret)
    if decide_winner(params, state.secret, b_secret) is Role.ALICE:
        claim = build_redeem_transaction(state.bet, 0, {"A": state.secret, "B": b_secret},
                                         state.secret_key, params.pk_alice)
        return replace(state, phase=Phase.BET_REDEEMED, bet_claim=claim), [Broadcast(claim, "redeem_bet", 10)]
    return replace(state, phase=Phase.DONE), [SendMessage(SecretDisclosure(state.secret), 10)]


def _alice_tick(state: PartyState, params: BetParams, view: LedgerView) -> Transition:
    phase = state.phase

    if phase is Phase.REFUND_BET_SIGNED:
        bet = view.transaction(state.bet_txid)
        depth = view.depth(state.bet_txid)
        if bet is not None and depth is not None and depth >= params.confirmation_depth:
            expected = Output(params.pot, bet_script(params, state.own_commit, state.counterparty_commit))
            if len(bet.outputs) != 1 or bet.outputs[0] != expected:
                logger.warning("bet %s does not carry the agreed condition", bet.txid.hex()[:16])
                return replace(state, phase=Phase.DONE), []
            # refund_reveal must mature strictly before refund_bet
            if not params.unsound_mode and view.height + params.reveal_locktime >= state.refund_bet.locktime:
                logger.warning("bet %s confirmed too late: refund_reveal at %d would not precede refund_bet at %d",
                               bet.txid.hex()[:16], view.height + params.reveal_locktime, state.refund_bet.locktime)
                return replace(state, phase=Phase.DONE), []
            reveal = sign_inputs(
                build_reveal_transaction(params, state.funding, state.counterparty_commit), state.secret_key)
            refund = build_refund_transaction(reveal, 0, params.reveal_locktime, view.height, params.pk_alice)
            state = replace(state, phase=Phase.BET_BROADCAST, bet=bet, reveal=reveal, reveal_txid=reveal.txid,
                            refund_reveal=add_signature(refund, 0, sign(state.secret_key, refund.txid)))
            return state, [SendMessage(RefundSignatureRequest(refund), 7)]

    if phase in _ALICE_UNFUNDED:
        if view.height >= params.setup_timeout:
            return replace(state, phase=Phase.DONE), []
        return state, []

    if phase in (Phase.REVEAL_BROADCAST, Phase.REFUNDED):
        reveal_out = state.reveal.outpoint(0)
        b_secret = state.counterparty_secret or revealed_secret(view, reveal_out, state.counterparty_commit)
        if b_secret is not None:
            return _alice_settle(state, params, b_secret)
        if phase is Phase.REFUNDED:
            if view.is_confirmed(state.refund_reveal.txid):
                return replace(state, phase=Phase.DONE), []
            return state, []
        if not view.exists(state.reveal.txid):
            return replace(state, phase=Phase.DONE), []
        if _refund_due(view, state.refund_reveal, reveal_out):
            return (replace(state, phase=Phase.REFUNDED),
                    [Broadcast(state.refund_reveal, "refund_reveal", 7, refund=True)])
        return state, []

    if phase is Phase.BET_REDEEMED:
        if view.is_confirmed(state.bet_claim.txid) or not view.exists(state.bet_txid):
            return replace(state, phase=Phase.DONE), []
        spender = view.spender(state.bet.outpoint(0))
        if spender is not None and spender.txid != state.bet_claim.txid:
            return replace(state, phase=Phase.DONE), []
    return state, []


def _alice_step(state: PartyState, params: BetParams, observation: Observation) -> Transition:
    if isinstance(observation, SessionStart):
        if state.phase is not Phase.INIT:
            raise ProtocolViolation("session started twice")
        return replace(state, phase=Phase.COMMIT_SENT), [SendMessage(Commit(state.own_commit), 1)]

    if isinstance(observation, Commit):
        if not _check_counterparty_commit(state, observation.digest):
            return state, []
        if state.phase is not Phase.COMMIT_SENT:
            raise ProtocolViolation(f"commitment received in phase {state.phase.value}")
        return replace(state, phase=Phase.COMMIT_EXCHANGED, counterparty_commit=observation.digest), []

    if isinstance(observation, RefundSignatureRequest):
        if state.phase is not Phase.COMMIT_EXCHANGED:
            raise ProtocolViolation(f"refund_bet signature requested in phase {state.phase.value}")
        refund = observation.transaction
        _check_refund_terms(refund, params.pk_bob, params.pot, state.height + params.bet_locktime)
        token = sign(state.secret_key, refund.txid)
        state = replace(state, phase=Phase.REFUND_BET_SIGNED, refund_bet=refund,
                        bet_txid=refund.inputs[0].outpoint.txid)
        return state, [SendMessage(RefundSignature(token), 4)]

    if isinstance(observation, RefundSignature):
        if state.phase is not Phase.BET_BROADCAST:
            raise ProtocolViolation(f"refund signature received in phase {state.phase.value}")
        token = observation.token
        if token.pubkey != params.pk_bob or token.message != state.refund_reveal.txid:
            raise ProtocolViolation("signature does not cover refund_reveal")
        state = replace(state, phase=Phase.REVEAL_BROADCAST,
                        refund_reveal=add_signature(state.refund_reveal, 0, token))
        return state, [Broadcast(state.reveal, "reveal", 8)]

    if isinstance(observation, SecretDisclosure):
        raise ProtocolViolation("Alice never receives a secret by message")

    if isinstance(observation, BroadcastResult):
        if not observation.accepted and observation.label in ("reveal", "redeem_bet"):
            return replace(state, phase=Phase.DONE), []
        return state, []

    if isinstance(observation, BlockTick):
        return _alice_tick(state, params, observation.view)
    raise ProtocolViolation(f"unexpected observation {type(observation).__name__}")


def _bob_tick(state: PartyState, params: BetParams, view: LedgerView) -> Transition:
    phase = state.phase

    if phase in _BOB_UNFUNDED:
        if view.height >= params.setup_timeout:
            return replace(state, phase=Phase.DONE), []
        return state, []

    if phase is Phase.REFUND_BET_SIGNED and view.is_confirmed(state.bet_txid):
        state = replace(state, phase=Phase.BET_BROADCAST)

    actions: List[Action] = []
    if state.phase is Phase.REFUND_REVEAL_SIGNED:
        reveal = view.transaction(state.reveal_txid)
        depth = view.depth(state.reveal_txid)
        expected = Output(params.alice_stake, reveal_script(params, state.own_commit))
        if (reveal is not None and depth is not None and depth >= params.confirmation_depth
                and len(reveal.outputs) == 1 and reveal.outputs[0] == expected):
            claim = build_redeem_transaction(reveal, 0, {"B": state.secret}, state.secret_key, params.pk_bob)
            state = replace(state, phase=Phase.REVEAL_REDEEMED, reveal=reveal, reveal_claim=claim)
            actions.append(Broadcast(claim, "redeem_reveal", 9))

    # Watch the bet output until it is settled one way or another
    if state.phase in _BOB_BET_LIVE:
        if not view.exists(state.bet_txid):
            return replace(state, phase=Phase.DONE), actions
        bet_out = state.bet.outpoint(0)
        spender = view.spender(bet_out)
        if spender is not None:
            if view.is_confirmed(spender.txid):
                return replace(state, phase=Phase.DONE), actions
            return state, actions
        if _refund_due(view, state.refund_bet, bet_out):
            actions.append(Broadcast(state.refund_bet, "refund_bet", 4, refund=True))
            return replace(state, phase=Phase.REFUNDED), actions
    return state, actions


def _bob_step(state: PartyState, params: BetParams, observation: Observation) -> Transition:
    if isinstance(observation, SessionStart):
        if state.phase is not Phase.INIT:
            raise ProtocolViolation("session started twice")
        return state, []

    if isinstance(observation, Commit):
        if not _check_counterparty_commit(state, observation.digest):
            return state, []
        if state.phase is not Phase.INIT:
            raise ProtocolViolation(f"commitment received in phase {state.phase.value}")
        bet = sign_inputs(
            build_bet_transaction(params, state.funding, observation.digest, state.own_commit), state.secret_key)
        refund = build_refund_transaction(bet, 0, params.bet_locktime, state.height, params.pk_bob)
        refund = add_signature(refund, 0, sign(state.secret_key, refund.txid))
        state = replace(state, phase=Phase.COMMIT_EXCHANGED, counterparty_commit=observation.digest,
                        bet=bet, bet_txid=bet.txid, refund_bet=refund)
        return state, [SendMessage(Commit(state.own_commit), 2), SendMessage(RefundSignatureRequest(refund), 4)]

    if isinstance(observation, RefundSignature):
        if state.phase is not Phase.COMMIT_EXCHANGED:
            raise ProtocolViolation(f"refund signature received in phase {state.phase.value}")
        token = observation.token
        if token.pubkey != params.pk_alice or token.message != state.refund_bet.txid:
            raise ProtocolViolation("signature does not cover refund_bet")
        state = replace(state, phase=Phase.REFUND_BET_SIGNED,
                        refund_bet=add_signature(state.refund_bet, 0, token))
        return state, [Broadcast(state.bet, "bet", 5)]

    if isinstance(observation, RefundSignatureRequest):
        if state.phase not in (Phase.REFUND_BET_SIGNED, Phase.BET_BROADCAST):
            raise ProtocolViolation(f"refund_reveal signature requested in phase {state.phase.value}")
        refund = observation.transaction
        _check_refund_terms(refund, params.pk_alice, params.alice_stake, state.height + params.reveal_locktime)
        token = sign(state.secret_key, refund.txid)
        state = replace(state, phase=Phase.REFUND_REVEAL_SIGNED, refund_reveal=refund,
                        reveal_txid=refund.inputs[0].outpoint.txid)
        return state, [SendMessage(RefundSignature(token), 7)]

    if isinstance(observation, SecretDisclosure):
        if commit(observation.secret) != state.counterparty_commit:
            raise ProtocolViolation("disclosed secret does not open Alice's commitment")
        if state.phase not in (Phase.REVEAL_REDEEMED, Phase.BET_REDEEMED, Phase.REFUNDED):
            raise ProtocolViolation(f"secret disclosed in phase {state.phase.value}")
        state = replace(state, counterparty_secret=observation.secret)
        if state.phase is Phase.REVEAL_REDEEMED and decide_winner(params, observation.secret, state.secret) is Role.BOB:
            claim = build_redeem_transaction(state.bet, 0, {"A": observation.secret, "B": state.secret},
                                             state.secret_key, params.pk_bob)
            return replace(state, phase=Phase.BET_REDEEMED, bet_claim=claim), [Broadcast(claim, "redeem_bet", 10)]
        return state, []

    if isinstance(observation, BroadcastResult):
        if not observation.accepted and observation.label == "bet":
            return replace(state, phase=Phase.DONE), []
        return state, []

    if isinstance(observation, BlockTick):
        return _bob_tick(state, params, observation.view)
    raise ProtocolViolation(f"unexpected observation {type(observation).__name__}")


def step_party(state: PartyState, params: BetParams, observation: Observation) -> Transition:
    """
    Advance one honest party by one observation.

    Args:
        state: The party's current state
        params: Agreed bet parameters (both public keys filled in)
        observation: A message, a ledger event or a block tick

    Returns:
        Tuple of (new state, actions to perform)

    Raises:
        ProtocolViolation: the observation is impossible in the current phase
    """
    if state.phase is Phase.DONE:
        return state, []
    if isinstance(observation, (BlockTick, SessionStart)):
        state = replace(state, height=observation.height)
    if state.role is Role.ALICE:
        return _alice_step(state, params, observation)
    return _bob_step(state, params, observation)
