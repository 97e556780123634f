import hashlib
import hmac
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple

from scriptvm import (
    Digest,
    HashAlgorithm,
    MalformedScript,
    PubKey,
    ScriptExpr,
    Sig,
    SignatureToken,
    SignatureVerifier,
    Witness,
    digest,
    encode_script,
    eval_script,
)

logger = logging.getLogger(__name__)


class LedgerError(ValueError):
    """Misuse of the ledger API (not a transaction rejection)"""


# --- Keys and signatures -------------------------------------------------------

def derive_pubkey(secret_key: bytes) -> PubKey:
    return digest(HashAlgorithm.SHA256, secret_key)


def sign(secret_key: bytes, message: Digest) -> SignatureToken:
    """Mint a token authorizing `message` under the key derived from secret_key"""
    tag = hmac.new(secret_key, message, hashlib.sha256).digest()
    return SignatureToken(pubkey=derive_pubkey(secret_key), message=message, tag=tag)


class KeyRegistry:
    """Simulation-grade signature scheme: the kernel knows every secret key"""

    def __init__(self):
        self._secret_keys: Dict[PubKey, bytes] = {}

    def register(self, secret_key: bytes) -> PubKey:
        if len(secret_key) != 32:
            raise LedgerError("secret keys are 32 bytes")
        pubkey = derive_pubkey(secret_key)
        self._secret_keys[pubkey] = secret_key
        return pubkey

    def generate(self, rng: Random) -> Tuple[bytes, PubKey]:
        """Create and register a fresh key pair from the session's RNG stream"""
        secret_key = rng.randbytes(32)
        return secret_key, self.register(secret_key)

    def verify(self, token: SignatureToken) -> bool:
        secret_key = self._secret_keys.get(token.pubkey)
        if secret_key is None:
            return False
        expected = hmac.new(secret_key, token.message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, token.tag)

    def __contains__(self, pubkey: PubKey) -> bool:
        return pubkey in self._secret_keys


# --- Transactions --------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class OutPoint:
    txid: Digest
    index: int

    def __str__(self) -> str:
        return f"{self.txid.hex()}:{self.index}"


@dataclass(frozen=True)
class Output:
    value: int
    script: ScriptExpr

    def __post_init__(self):
        if self.value < 0:
            raise LedgerError(f"output value must be non-negative, got {self.value}")


@dataclass(frozen=True)
class TxInput:
    outpoint: OutPoint
    witness: Witness = field(default_factory=Witness)


@dataclass(frozen=True)
class Transaction:
    inputs: Tuple[TxInput, ...]
    outputs: Tuple[Output, ...]
    locktime: int = 0

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.outputs:
            raise LedgerError("a transaction needs at least one output")
        if self.locktime < 0:
            raise LedgerError("locktime must be a non-negative height")

    @cached_property
    def txid(self) -> Digest:
        return digest(HashAlgorithm.SHA256, canonical_serialize(self))

    @property
    def is_faucet(self) -> bool:
        return not self.inputs

    def outpoint(self, index: int) -> OutPoint:
        return OutPoint(self.txid, index)

    def with_witness(self, input_index: int, witness: Witness) -> "Transaction":
        """Same transaction (same txid) with one input's witness replaced"""
        inputs = list(self.inputs)
        inputs[input_index] = TxInput(inputs[input_index].outpoint, witness)
        return Transaction(inputs, self.outputs, self.locktime)


def canonical_serialize(tx: Transaction) -> bytes:
    """Bit-exact serialization that defines the txid; witnesses are omitted"""
    parts = [struct.pack(">I", len(tx.inputs))]
    for tx_in in tx.inputs:
        parts.append(tx_in.outpoint.txid)
        parts.append(struct.pack(">I", tx_in.outpoint.index))
    parts.append(struct.pack(">I", len(tx.outputs)))
    for tx_out in tx.outputs:
        script = encode_script(tx_out.script).encode("utf-8")
        parts.append(struct.pack(">QI", tx_out.value, len(script)))
        parts.append(script)
    parts.append(struct.pack(">I", tx.locktime))
    return b"".join(parts)


def txid(tx: Transaction) -> Digest:
    return tx.txid


# --- Results -----------------------------------------------------------------------

class RejectReason(str, Enum):
    INPUT_MISSING = "InputMissing"
    INPUT_SPENT = "InputSpent"
    SCRIPT_FAILED = "ScriptFailed"
    VALUE_MISMATCH = "ValueMismatch"
    LOCKTIME_NOT_REACHED = "LocktimeNotReached"
    DEPTH_EXCEEDED = "DepthExceeded"
    INVALID_REPLACEMENT = "InvalidReplacement"


@dataclass(frozen=True)
class LedgerResult:
    """Outcome of a ledger operation: accept, or reject with a reason"""
    accepted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""
    deferred: bool = False  # parked in the locktime retry set

    @classmethod
    def ok(cls, detail: str = "") -> "LedgerResult":
        return cls(accepted=True, detail=detail)

    @classmethod
    def reject(cls, reason: RejectReason, detail: str = "", deferred: bool = False) -> "LedgerResult":
        return cls(accepted=False, reason=reason, detail=detail, deferred=deferred)

    def __bool__(self) -> bool:
        return self.accepted

    def describe(self) -> str:
        return "accepted" if self.accepted else self.reason.value


# --- Ledger ---------------------------------------------------------------------------

class Ledger:
    """Single-node UTXO ledger with mempool, locktimes and bounded reorgs"""

    def __init__(self, key_registry: SignatureVerifier, max_reorg_depth: int = 3):
        self.key_registry = key_registry
        self.max_reorg_depth = max_reorg_depth
        self.height = 0
        self.issued = 0

        # Chain: blocks[h] holds the transactions confirmed at height h
        self.blocks: List[List[Transaction]] = [[]]
        self._undo: List[List[Dict[OutPoint, Output]]] = [[]]
        self.utxos: Dict[OutPoint, Output] = {}
        self._confirmed: Dict[Digest, int] = {}
        self._transactions: Dict[Digest, Transaction] = {}
        self._spent_by: Dict[OutPoint, Digest] = {}

        # Pending transactions
        self.mempool: Dict[Digest, Transaction] = {}
        self._mempool_spends: Dict[OutPoint, Digest] = {}
        self._mempool_outputs: Dict[OutPoint, Output] = {}
        self._deferred: Dict[Digest, Transaction] = {}

    # -- setup --

    def issue(self, outputs: Sequence[Output]) -> Transaction:
        """Confirm the scenario's single faucet transaction into the current block"""
        if self.issued or any(tx.is_faucet for block in self.blocks for tx in block):
            raise LedgerError("a ledger accepts exactly one faucet transaction")
        faucet = Transaction((), tuple(outputs), 0)
        self._undo[self.height].append(self._apply(faucet, self.height))
        self.blocks[self.height].append(faucet)
        self.issued = sum(out.value for out in faucet.outputs)
        logger.debug("faucet %s issued %d", faucet.txid.hex()[:16], self.issued)
        return faucet

    # -- state transitions --

    def _apply(self, tx: Transaction, height: int) -> Dict[OutPoint, Output]:
        spent = {}
        for tx_in in tx.inputs:
            spent[tx_in.outpoint] = self.utxos.pop(tx_in.outpoint)
            self._spent_by[tx_in.outpoint] = tx.txid
        for index, tx_out in enumerate(tx.outputs):
            self.utxos[OutPoint(tx.txid, index)] = tx_out
        self._confirmed[tx.txid] = height
        self._transactions[tx.txid] = tx
        return spent

    def _unapply(self, tx: Transaction, spent: Dict[OutPoint, Output]) -> None:
        for index in range(len(tx.outputs)):
            del self.utxos[OutPoint(tx.txid, index)]
        for outpoint, tx_out in spent.items():
            self.utxos[outpoint] = tx_out
            del self._spent_by[outpoint]
        del self._confirmed[tx.txid]
        del self._transactions[tx.txid]

    def _admit(self, tx: Transaction) -> None:
        self.mempool[tx.txid] = tx
        for tx_in in tx.inputs:
            self._mempool_spends[tx_in.outpoint] = tx.txid
        for index, tx_out in enumerate(tx.outputs):
            self._mempool_outputs[OutPoint(tx.txid, index)] = tx_out

    def _clear_mempool(self) -> List[Transaction]:
        pending = list(self.mempool.values())
        self.mempool.clear()
        self._mempool_spends.clear()
        self._mempool_outputs.clear()
        return pending

    def _check(self, tx: Transaction, height: int) -> Optional[LedgerResult]:
        """Validate tx against confirmed and pending outputs; None means valid"""
        if tx.is_faucet:
            return LedgerResult.reject(RejectReason.INPUT_MISSING, "only the faucet may create coins")

        seen = set()
        total_in = 0
        for tx_in in tx.inputs:
            outpoint = tx_in.outpoint
            if outpoint in seen or outpoint in self._mempool_spends:
                return LedgerResult.reject(RejectReason.INPUT_SPENT, f"{outpoint} already spent by a pending transaction")
            seen.add(outpoint)
            source = self.utxos.get(outpoint)
            if source is None:
                source = self._mempool_outputs.get(outpoint)
            if source is None:
                return LedgerResult.reject(RejectReason.INPUT_MISSING, f"{outpoint} is unknown or spent")
            total_in += source.value

        total_out = sum(tx_out.value for tx_out in tx.outputs)
        if total_in != total_out:
            return LedgerResult.reject(RejectReason.VALUE_MISMATCH, f"inputs {total_in} != outputs {total_out}")

        if tx.locktime > height:
            return LedgerResult.reject(RejectReason.LOCKTIME_NOT_REACHED, f"locktime {tx.locktime} > height {height}")

        for position, tx_in in enumerate(tx.inputs):
            source = self.utxos.get(tx_in.outpoint) or self._mempool_outputs[tx_in.outpoint]
            try:
                satisfied = eval_script(source.script, tx_in.witness, tx.txid, self.key_registry)
            except MalformedScript as e:
                return LedgerResult.reject(RejectReason.SCRIPT_FAILED, f"input {position}: {e}")
            if not satisfied:
                return LedgerResult.reject(RejectReason.SCRIPT_FAILED, f"input {position} witness does not satisfy its script")
        return None

    def submit_transaction(self, tx: Transaction, defer: bool = False) -> LedgerResult:
        """
        Validate a transaction and admit it to the mempool.

        Args:
            tx: The transaction to broadcast
            defer: Park the transaction in the locktime retry set when its
                locktime is the only thing standing in the way

        Returns:
            LedgerResult; accepted transactions confirm at the next tick
        """
        if tx.txid in self.mempool:
            return LedgerResult.ok("already pending")
        if tx.txid in self._confirmed:
            return LedgerResult.reject(RejectReason.INPUT_MISSING, "transaction already confirmed")

        problem = self._check(tx, self.height)
        if problem is None:
            self._admit(tx)
            logger.debug("accepted %s at height %d", tx.txid.hex()[:16], self.height)
            return LedgerResult.ok()

        if defer and problem.reason is RejectReason.LOCKTIME_NOT_REACHED and self._check(tx, tx.locktime) is None:
            self._deferred[tx.txid] = tx
            return LedgerResult.reject(problem.reason, f"deferred until height {tx.locktime}", deferred=True)

        logger.debug("rejected %s: %s %s", tx.txid.hex()[:16], problem.reason.value, problem.detail)
        return problem

    def _promote_deferred(self) -> None:
        for txid in sorted(self._deferred):
            tx = self._deferred[txid]
            if tx.locktime > self.height:
                continue
            del self._deferred[txid]
            problem = self._check(tx, self.height)
            if problem is None:
                self._admit(tx)
            else:
                logger.debug("dropped deferred %s: %s", txid.hex()[:16], problem.reason.value)

    def _mine_block(self) -> None:
        block: List[Transaction] = []
        undo: List[Dict[OutPoint, Output]] = []
        pending = {tx.txid: tx for tx in self._clear_mempool()}

        # Readiness waves: parents before children, ascending txid within a wave
        while pending:
            ready = sorted(
                txid for txid, tx in pending.items()
                if all(tx_in.outpoint in self.utxos for tx_in in tx.inputs)
            )
            if not ready:
                break
            for txid in ready:
                tx = pending.pop(txid)
                undo.append(self._apply(tx, self.height))
                block.append(tx)
        for txid in pending:
            logger.warning("dropped unconfirmable mempool transaction %s", txid.hex()[:16])

        self.blocks.append(block)
        self._undo.append(undo)

    def advance_blocks(self, n: int) -> int:
        """Mine n blocks, each confirming every valid pending transaction"""
        if n < 0:
            raise LedgerError("cannot advance by a negative number of blocks")
        for _ in range(n):
            self.height += 1
            self._promote_deferred()
            self._mine_block()
        return self.height

    def _snapshot(self):
        return (
            self.height, list(self.blocks), list(self._undo), dict(self.utxos),
            dict(self._confirmed), dict(self._transactions), dict(self._spent_by),
            dict(self.mempool), dict(self._mempool_spends), dict(self._mempool_outputs),
        )

    def _restore(self, snapshot) -> None:
        (self.height, self.blocks, self._undo, self.utxos,
         self._confirmed, self._transactions, self._spent_by,
         self.mempool, self._mempool_spends, self._mempool_outputs) = snapshot

    def reorg(self, depth: int, replacement: Sequence[Transaction]) -> LedgerResult:
        """
        Replace the last `depth` blocks.

        The unwound blocks are reverted, `replacement` is confirmed in the first
        of `depth` fresh blocks and the height is restored. Unwound transactions
        that are still valid return to the mempool.
        """
        if depth < 0 or depth > self.max_reorg_depth:
            return LedgerResult.reject(RejectReason.DEPTH_EXCEEDED, f"depth {depth} > max {self.max_reorg_depth}")
        if depth > self.height:
            return LedgerResult.reject(RejectReason.DEPTH_EXCEEDED, "the genesis block cannot be replaced")
        if depth == 0 and replacement:
            return LedgerResult.reject(RejectReason.INVALID_REPLACEMENT, "no block to carry the replacement")

        snapshot = self._snapshot()
        target_height = self.height
        unwound: List[Transaction] = []
        for _ in range(depth):
            block = self.blocks.pop()
            undo = self._undo.pop()
            for tx, spent in reversed(list(zip(block, undo))):
                self._unapply(tx, spent)
            unwound = block + unwound
            self.height -= 1
        previously_pending = self._clear_mempool()

        block = []
        undo = []
        if depth:
            self.height += 1
            for tx in replacement:
                problem = self._check(tx, self.height)
                if problem is not None:
                    self._restore(snapshot)
                    return LedgerResult.reject(
                        RejectReason.INVALID_REPLACEMENT,
                        f"{tx.txid.hex()[:16]}: {problem.reason.value} {problem.detail}",
                    )
                undo.append(self._apply(tx, self.height))
                block.append(tx)
            self.blocks.append(block)
            self._undo.append(undo)
        while self.height < target_height:
            self.height += 1
            self.blocks.append([])
            self._undo.append([])

        replaced = {tx.txid for tx in replacement}
        for tx in unwound + previously_pending:
            if tx.txid in replaced:
                continue
            if self._check(tx, self.height) is None:
                self._admit(tx)
            else:
                logger.debug("reorg evicted %s", tx.txid.hex()[:16])

        logger.info("reorg depth=%d replaced=%d unwound=%d at height %d",
                    depth, len(replacement), len(unwound), self.height)
        return LedgerResult.ok(f"unwound {len(unwound)} transactions")

    # -- queries --

    def balance_of(self, pubkey: PubKey) -> int:
        """Confirmed coins held in plain pay-to-pubkey outputs of pubkey"""
        target = Sig(pubkey)
        return sum(tx_out.value for tx_out in self.utxos.values() if tx_out.script == target)

    def confirmation_height(self, txid: Digest) -> Optional[int]:
        return self._confirmed.get(txid)

    def find_transaction(self, txid: Digest) -> Optional[Transaction]:
        """A confirmed or pending transaction by id"""
        return self._transactions.get(txid) or self.mempool.get(txid)

    def spender_of(self, outpoint: OutPoint) -> Optional[Transaction]:
        """The confirmed, else pending, transaction consuming outpoint"""
        txid = self._spent_by.get(outpoint) or self._mempool_spends.get(outpoint)
        if txid is None:
            return None
        return self.find_transaction(txid)

    def view(self) -> "LedgerView":
        return LedgerView(self)

    # -- audits and dumps --

    def audit(self) -> List[str]:
        """Rebuild the UTXO set from genesis and check the ledger invariants"""
        findings = []
        supply = sum(tx_out.value for tx_out in self.utxos.values())
        if supply != self.issued:
            findings.append(f"conservation: utxo total {supply} != issued {self.issued}")

        rebuilt: Dict[OutPoint, Output] = {}
        consumed = set()
        for height, block in enumerate(self.blocks):
            for tx in block:
                if tx.locktime > height:
                    findings.append(f"locktime: {tx.txid.hex()[:16]} locktime {tx.locktime} in block {height}")
                for tx_in in tx.inputs:
                    if tx_in.outpoint in consumed:
                        findings.append(f"double spend: {tx_in.outpoint} consumed twice")
                    elif tx_in.outpoint not in rebuilt:
                        findings.append(f"missing input: {tx_in.outpoint} in block {height}")
                    consumed.add(tx_in.outpoint)
                    rebuilt.pop(tx_in.outpoint, None)
                for index, tx_out in enumerate(tx.outputs):
                    rebuilt[OutPoint(tx.txid, index)] = tx_out

        if rebuilt != self.utxos:
            findings.append(
                f"rebuild: replayed utxo set ({len(rebuilt)} entries) differs from incremental ({len(self.utxos)})"
            )
        return findings

    def dump(self) -> str:
        """Audit dump: one UTXO per line, sorted"""
        lines = sorted(
            f"{outpoint} {tx_out.value} {encode_script(tx_out.script)}"
            for outpoint, tx_out in self.utxos.items()
        )
        return "\n".join(lines)

    def snapshot_text(self) -> str:
        """Deterministic text of the full state, for reproducibility checks"""
        lines = [f"height={self.height}"]
        for height, block in enumerate(self.blocks):
            lines.append(f"block {height}: " + " ".join(tx.txid.hex() for tx in block))
        lines.append("mempool: " + " ".join(sorted(txid.hex() for txid in self.mempool)))
        lines.append(self.dump())
        return "\n".join(lines)


class LedgerView:
    """Read-only window on a ledger handed to the parties"""

    def __init__(self, ledger: Ledger):
        self._ledger = ledger

    @property
    def height(self) -> int:
        return self._ledger.height

    def depth(self, txid: Digest) -> Optional[int]:
        """Blocks built on top of the one confirming txid (0 in the tip); None if unconfirmed"""
        confirmed_at = self._ledger.confirmation_height(txid)
        return None if confirmed_at is None else self._ledger.height - confirmed_at

    def is_confirmed(self, txid: Digest) -> bool:
        return self._ledger.confirmation_height(txid) is not None

    def is_pending(self, txid: Digest) -> bool:
        return txid in self._ledger.mempool

    def exists(self, txid: Digest) -> bool:
        return self.is_confirmed(txid) or self.is_pending(txid)

    def transaction(self, txid: Digest) -> Optional[Transaction]:
        return self._ledger.find_transaction(txid)

    def spender(self, outpoint: OutPoint) -> Optional[Transaction]:
        return self._ledger.spender_of(outpoint)

    def output(self, outpoint: OutPoint) -> Optional[Output]:
        """A confirmed unspent output"""
        return self._ledger.utxos.get(outpoint)
