import pytest
import sys
import os

# Add backend to path for imports
backend_path = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, backend_path)

from ledger import (
    KeyRegistry,
    Ledger,
    LedgerError,
    OutPoint,
    Output,
    RejectReason,
    Transaction,
    TxInput,
    canonical_serialize,
    derive_pubkey,
    sign,
    txid,
)
from scriptvm import PreimageSha256, Sig, Witness, encode_script

ALICE_SK = b"\x01" * 32
BOB_SK = b"\x02" * 32


def pay(outpoint, value, secret_key, dest_pk, locktime=0):
    """Spend a pay-to-pubkey output to dest_pk, signed by secret_key"""
    tx = Transaction([TxInput(outpoint)], [Output(value, Sig(dest_pk))], locktime)
    return tx.with_witness(0, Witness(signatures=frozenset({sign(secret_key, tx.txid)})))


@pytest.fixture
def registry():
    keys = KeyRegistry()
    keys.register(ALICE_SK)
    keys.register(BOB_SK)
    return keys


@pytest.fixture
def pk_a():
    return derive_pubkey(ALICE_SK)


@pytest.fixture
def pk_b():
    return derive_pubkey(BOB_SK)


@pytest.fixture
def ledger(registry):
    return Ledger(registry, max_reorg_depth=3)


@pytest.fixture
def faucet(ledger, pk_a, pk_b):
    """Alice holds 50 and Bob 100 in the genesis block"""
    return ledger.issue([Output(50, Sig(pk_a)), Output(100, Sig(pk_b))])


class TestTxid:

    def test_golden_faucet_txid(self):
        tx = Transaction((), [Output(1000, Sig(bytes(32)))], 0)
        assert len(canonical_serialize(tx)) == 93
        assert txid(tx).hex() == "88295610445599b3f43ff38efcf76c64ca5a1893a20090a72ed745972d32ba7d"

    def test_witness_does_not_change_txid(self, faucet, pk_b):
        unsigned = Transaction([TxInput(faucet.outpoint(0))], [Output(50, Sig(pk_b))], 0)
        signed = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        assert unsigned.txid == signed.txid

    def test_locktime_changes_txid(self, faucet, pk_b):
        assert pay(faucet.outpoint(0), 50, ALICE_SK, pk_b).txid != pay(faucet.outpoint(0), 50, ALICE_SK, pk_b, 5).txid

    def test_negative_values_are_rejected_at_construction(self, pk_a):
        with pytest.raises(LedgerError):
            Output(-1, Sig(pk_a))


class TestSignatures:

    def test_sign_then_verify(self, registry):
        token = sign(ALICE_SK, bytes(32))
        assert token.pubkey == derive_pubkey(ALICE_SK)
        assert registry.verify(token)

    def test_tampered_tag_fails(self, registry):
        token = sign(ALICE_SK, bytes(32))
        forged = type(token)(pubkey=token.pubkey, message=token.message, tag=bytes(32))
        assert not registry.verify(forged)

    def test_registry_rejects_short_keys(self, registry):
        with pytest.raises(LedgerError):
            registry.register(b"short")


class TestSubmit:

    def test_valid_spend_is_accepted(self, ledger, faucet, pk_b):
        result = ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_b))
        assert result.accepted
        assert result.describe() == "accepted"

    def test_resubmitting_a_pending_transaction_is_idempotent(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        assert ledger.submit_transaction(tx)
        assert ledger.submit_transaction(tx)
        assert len(ledger.mempool) == 1

    def test_unknown_input(self, ledger, faucet, pk_b):
        result = ledger.submit_transaction(pay(OutPoint(bytes(32), 0), 50, ALICE_SK, pk_b))
        assert result.reason is RejectReason.INPUT_MISSING

    def test_missing_signature(self, ledger, faucet, pk_b):
        tx = Transaction([TxInput(faucet.outpoint(0))], [Output(50, Sig(pk_b))], 0)
        assert ledger.submit_transaction(tx).reason is RejectReason.SCRIPT_FAILED

    def test_wrong_signer(self, ledger, faucet, pk_b):
        assert ledger.submit_transaction(pay(faucet.outpoint(0), 50, BOB_SK, pk_b)).reason is RejectReason.SCRIPT_FAILED

    def test_value_mismatch(self, ledger, faucet, pk_b):
        assert ledger.submit_transaction(pay(faucet.outpoint(0), 49, ALICE_SK, pk_b)).reason is RejectReason.VALUE_MISMATCH

    def test_conflicting_pending_spend(self, ledger, faucet, pk_a, pk_b):
        assert ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_b))
        result = ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_a))
        assert result.reason is RejectReason.INPUT_SPENT

    def test_spending_a_confirmed_spent_output(self, ledger, faucet, pk_a, pk_b):
        ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_b))
        ledger.advance_blocks(1)
        result = ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_a))
        assert result.reason is RejectReason.INPUT_MISSING

    def test_only_the_faucet_creates_coins(self, ledger, faucet, pk_a):
        result = ledger.submit_transaction(Transaction((), [Output(10, Sig(pk_a))], 0))
        assert result.reason is RejectReason.INPUT_MISSING

    def test_second_faucet_is_misuse(self, ledger, faucet, pk_a):
        with pytest.raises(LedgerError):
            ledger.issue([Output(1, Sig(pk_a))])

    def test_script_failure_with_malformed_condition(self, registry, pk_a):
        from scriptvm import And, ParityEquals
        ledger = Ledger(registry)
        # The parity leaf references a slot no preimage leaf declares
        faucet = ledger.issue([Output(5, And(Sig(pk_a), ParityEquals(("Z",), 0)))])
        tx = pay(faucet.outpoint(0), 5, ALICE_SK, pk_a)
        assert ledger.submit_transaction(tx).reason is RejectReason.SCRIPT_FAILED


class TestLocktime:

    def test_one_block_early_is_rejected(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b, locktime=1)
        assert ledger.submit_transaction(tx).reason is RejectReason.LOCKTIME_NOT_REACHED

    def test_accepted_at_exactly_the_locktime(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b, locktime=1)
        ledger.advance_blocks(1)
        assert ledger.submit_transaction(tx)
        ledger.advance_blocks(1)
        assert ledger.confirmation_height(tx.txid) == 2

    def test_deferred_transaction_confirms_in_its_locktime_block(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b, locktime=3)
        result = ledger.submit_transaction(tx, defer=True)
        assert not result.accepted and result.deferred
        ledger.advance_blocks(2)
        assert ledger.confirmation_height(tx.txid) is None
        ledger.advance_blocks(1)
        assert ledger.confirmation_height(tx.txid) == 3

    def test_only_locktime_problems_are_deferred(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, BOB_SK, pk_b, locktime=3)
        result = ledger.submit_transaction(tx, defer=True)
        assert not result.deferred

    def test_deferred_transaction_is_dropped_if_its_input_is_taken(self, ledger, faucet, pk_a, pk_b):
        late = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b, locktime=2)
        ledger.submit_transaction(late, defer=True)
        ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_a))
        ledger.advance_blocks(2)
        assert ledger.confirmation_height(late.txid) is None
        assert ledger.audit() == []


class TestBlocks:

    def test_advance_confirms_pending(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        ledger.submit_transaction(tx)
        assert ledger.advance_blocks(1) == 1
        assert ledger.confirmation_height(tx.txid) == 1
        assert not ledger.mempool

    def test_mempool_chain_confirms_parent_first(self, ledger, faucet, pk_a, pk_b):
        parent = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        child = pay(parent.outpoint(0), 50, BOB_SK, pk_a)
        assert ledger.submit_transaction(parent)
        assert ledger.submit_transaction(child)
        ledger.advance_blocks(1)
        assert ledger.blocks[1] == [parent, child]

    def test_independent_transactions_confirm_in_txid_order(self, ledger, faucet, pk_a, pk_b):
        first = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        second = pay(faucet.outpoint(1), 100, BOB_SK, pk_a)
        ledger.submit_transaction(first)
        ledger.submit_transaction(second)
        ledger.advance_blocks(1)
        assert [tx.txid for tx in ledger.blocks[1]] == sorted([first.txid, second.txid])

    def test_negative_advance_is_misuse(self, ledger):
        with pytest.raises(LedgerError):
            ledger.advance_blocks(-1)

    def test_view_depth(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        ledger.submit_transaction(tx)
        view = ledger.view()
        assert view.is_pending(tx.txid) and view.depth(tx.txid) is None
        assert view.spender(faucet.outpoint(0)) == tx
        ledger.advance_blocks(1)
        assert view.depth(tx.txid) == 0
        ledger.advance_blocks(2)
        assert view.depth(tx.txid) == 2
        assert view.output(tx.outpoint(0)) == Output(50, Sig(pk_b))


class TestReorg:

    def test_depth_beyond_budget(self, ledger, faucet):
        ledger.advance_blocks(5)
        assert ledger.reorg(4, []).reason is RejectReason.DEPTH_EXCEEDED

    def test_genesis_cannot_be_replaced(self, ledger, faucet):
        ledger.advance_blocks(1)
        assert ledger.reorg(2, []).reason is RejectReason.DEPTH_EXCEEDED

    def test_empty_reorg_of_empty_block_changes_nothing(self, ledger, faucet):
        ledger.advance_blocks(2)
        before = ledger.snapshot_text()
        assert ledger.reorg(1, [])
        assert ledger.snapshot_text() == before

    def test_double_spend_evicts_zero_conf_transaction(self, ledger, faucet, pk_a, pk_b):
        bet = pay(faucet.outpoint(1), 100, BOB_SK, pk_a)
        ledger.submit_transaction(bet)
        ledger.advance_blocks(1)
        double_spend = pay(faucet.outpoint(1), 100, BOB_SK, pk_b)

        assert ledger.reorg(1, [double_spend])
        assert ledger.height == 1
        assert ledger.confirmation_height(bet.txid) is None
        assert bet.txid not in ledger.mempool
        assert ledger.confirmation_height(double_spend.txid) == 1
        assert ledger.balance_of(pk_b) == 100
        assert ledger.audit() == []

    def test_unwound_transactions_return_to_mempool(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        ledger.submit_transaction(tx)
        ledger.advance_blocks(1)
        assert ledger.reorg(1, [])
        assert tx.txid in ledger.mempool
        ledger.advance_blocks(1)
        assert ledger.confirmation_height(tx.txid) == 2

    def test_invalid_replacement_restores_state(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        ledger.submit_transaction(tx)
        ledger.advance_blocks(2)
        before = ledger.snapshot_text()
        bad = pay(faucet.outpoint(1), 99, BOB_SK, pk_b)
        assert ledger.reorg(1, [bad]).reason is RejectReason.INVALID_REPLACEMENT
        assert ledger.snapshot_text() == before

    def test_replacement_needs_a_block(self, ledger, faucet, pk_b):
        result = ledger.reorg(0, [pay(faucet.outpoint(1), 100, BOB_SK, pk_b)])
        assert result.reason is RejectReason.INVALID_REPLACEMENT

    def test_deep_confirmation_survives_shallow_reorg(self, ledger, faucet, pk_a, pk_b):
        bet = pay(faucet.outpoint(1), 100, BOB_SK, pk_a)
        ledger.submit_transaction(bet)
        ledger.advance_blocks(2)  # depth 1
        result = ledger.reorg(1, [pay(faucet.outpoint(1), 100, BOB_SK, pk_b)])
        assert result.reason is RejectReason.INVALID_REPLACEMENT
        assert ledger.confirmation_height(bet.txid) == 1


class TestQueriesAndAudit:

    def test_balance_counts_only_plain_outputs(self, registry, pk_a):
        ledger = Ledger(registry)
        ledger.issue([Output(7, Sig(pk_a)), Output(9, PreimageSha256("A", bytes(32)))])
        assert ledger.balance_of(pk_a) == 7

    def test_spender_prefers_confirmed(self, ledger, faucet, pk_b):
        tx = pay(faucet.outpoint(0), 50, ALICE_SK, pk_b)
        ledger.submit_transaction(tx)
        ledger.advance_blocks(1)
        assert ledger.spender_of(faucet.outpoint(0)) == tx
        assert ledger.find_transaction(tx.txid) == tx

    def test_clean_ledger_audits_clean(self, ledger, faucet, pk_b):
        ledger.submit_transaction(pay(faucet.outpoint(0), 50, ALICE_SK, pk_b))
        ledger.advance_blocks(3)
        assert ledger.audit() == []

    def test_audit_detects_lost_coins(self, ledger, faucet):
        ledger.utxos.pop(faucet.outpoint(0))
        findings = ledger.audit()
        assert any(finding.startswith("conservation") for finding in findings)
        assert any(finding.startswith("rebuild") for finding in findings)

    def test_dump_format(self, ledger, faucet, pk_a, pk_b):
        lines = ledger.dump().splitlines()
        assert len(lines) == 2
        assert f"{faucet.txid.hex()}:0 50 {encode_script(Sig(pk_a))}" in lines
        assert f"{faucet.txid.hex()}:1 100 {encode_script(Sig(pk_b))}" in lines
