import pytest
import sys
import os
from hypothesis import given, settings, strategies as st

# Add backend to path for imports
backend_path = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, backend_path)

from ledger import KeyRegistry, sign
from scriptvm import (
    And,
    EmptyOperand,
    GreaterThanSha1,
    HashAlgorithm,
    LowBitsCompare,
    MalformedScript,
    Or,
    ParityEquals,
    PreimageSha256,
    Sig,
    Witness,
    declared_slots,
    digest,
    encode_script,
    eval_script,
    low_bits,
    parity,
    parse_script,
)

TXID = bytes(range(32))


@pytest.fixture
def registry():
    """Key registry with two registered keys"""
    keys = KeyRegistry()
    keys.register(b"\x01" * 32)
    keys.register(b"\x02" * 32)
    return keys


@pytest.fixture
def alice_key():
    return b"\x01" * 32


@pytest.fixture
def bob_key():
    return b"\x02" * 32


def sha(data: bytes) -> bytes:
    return digest(HashAlgorithm.SHA256, data)


def pubkey(secret_key: bytes) -> bytes:
    return sha(secret_key)


class TestDigest:
    """Known-answer vectors for the hash primitives"""

    def test_sha256_abc(self):
        assert digest(HashAlgorithm.SHA256, b"abc").hex() == \
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

    def test_sha1_abc(self):
        assert digest(HashAlgorithm.SHA1, b"abc").hex() == "a9993e364706816aba3e25717850c26c9cd0d89d"

    def test_sha256_empty(self):
        assert digest(HashAlgorithm.SHA256, b"").hex() == \
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


class TestBitOperations:

    def test_parity_reads_last_byte(self):
        assert parity(b"\x00\x01") == 1
        assert parity(b"\x01\x00") == 0
        assert parity(b"\xff") == 1

    def test_parity_of_empty_raises(self):
        with pytest.raises(EmptyOperand):
            parity(b"")

    def test_low_bits_uses_last_two_bytes(self):
        assert low_bits(b"\xff\x12\x34", 16) == 0x1234
        assert low_bits(b"\x12\x34", 4) == 0x4
        assert low_bits(b"\x07", 2) == 3

    def test_low_bits_of_empty_raises(self):
        with pytest.raises(EmptyOperand):
            low_bits(b"", 4)


class TestNodeValidation:

    def test_sig_requires_32_byte_key(self):
        with pytest.raises(MalformedScript):
            Sig(b"\x00" * 31)

    def test_preimage_requires_32_byte_commitment(self):
        with pytest.raises(MalformedScript):
            PreimageSha256("A", b"\x00" * 20)

    def test_slot_names_are_identifiers(self):
        with pytest.raises(MalformedScript):
            PreimageSha256("1A", bytes(32))

    def test_parity_bit_is_binary(self):
        with pytest.raises(MalformedScript):
            ParityEquals(("A",), 2)

    def test_labels_are_frozen_to_tuples(self):
        node = ParityEquals(["A", "B"], 0)
        assert node.labels == ("A", "B")
        hash(node)

    def test_low_bits_window_bounds(self):
        with pytest.raises(MalformedScript):
            LowBitsCompare(("A",), 17, 0)
        with pytest.raises(MalformedScript):
            LowBitsCompare(("A",), 2, 5)


class TestEvalScript:

    def test_preimage_leaf(self, registry):
        script = PreimageSha256("A", sha(b"secret"))
        assert eval_script(script, Witness(slots={"A": b"secret"}), TXID, registry)
        assert not eval_script(script, Witness(slots={"A": b"other"}), TXID, registry)
        assert not eval_script(script, Witness(), TXID, registry)

    def test_sig_leaf_checks_message_and_key(self, registry, alice_key, bob_key):
        script = Sig(pubkey(alice_key))
        good = Witness(signatures=frozenset({sign(alice_key, TXID)}))
        wrong_message = Witness(signatures=frozenset({sign(alice_key, bytes(32))}))
        wrong_key = Witness(signatures=frozenset({sign(bob_key, TXID)}))
        assert eval_script(script, good, TXID, registry)
        assert not eval_script(script, wrong_message, TXID, registry)
        assert not eval_script(script, wrong_key, TXID, registry)

    def test_sig_from_unregistered_key_fails(self, registry):
        stranger = b"\x09" * 32
        script = Sig(pubkey(stranger))
        witness = Witness(signatures=frozenset({sign(stranger, TXID)}))
        assert not eval_script(script, witness, TXID, registry)

    def test_missing_slot_makes_bit_leaf_false(self, registry):
        script = And(And(PreimageSha256("A", sha(b"a")), PreimageSha256("B", sha(b"b"))), ParityEquals(("A", "B"), 0))
        assert not eval_script(script, Witness(slots={"A": b"a"}), TXID, registry)

    def test_empty_slot_makes_bit_leaf_false(self, registry):
        script = Or(PreimageSha256("A", sha(b"")), ParityEquals(("A",), 0))
        # The preimage branch still holds for the empty string
        assert eval_script(script, Witness(slots={"A": b""}), TXID, registry)
        only_parity = Or(PreimageSha256("A", sha(b"x")), ParityEquals(("A",), 0))
        assert not eval_script(only_parity, Witness(slots={"A": b""}), TXID, registry)

    def test_undeclared_slot_is_malformed(self, registry):
        script = And(PreimageSha256("A", sha(b"a")), ParityEquals(("A", "C"), 0))
        with pytest.raises(MalformedScript):
            eval_script(script, Witness(slots={"A": b"a", "C": b"c"}), TXID, registry)

    def test_declared_slots(self):
        script = Or(PreimageSha256("A", bytes(32)), And(PreimageSha256("B", bytes(32)), Sig(bytes(32))))
        assert declared_slots(script) == frozenset({"A", "B"})

    def test_low_bits_compare(self, registry):
        a, b = b"\x00\x01", b"\x00\x02"  # 1 xor 2 == 3
        declared = And(PreimageSha256("A", sha(a)), PreimageSha256("B", sha(b)))
        witness = Witness(slots={"A": a, "B": b})
        below = And(declared, LowBitsCompare(("A", "B"), 2, 3, "<"))
        at_or_above = And(declared, LowBitsCompare(("A", "B"), 2, 3, ">="))
        assert not eval_script(below, witness, TXID, registry)
        assert eval_script(at_or_above, witness, TXID, registry)

    def test_sha1_compare_is_complementary(self, registry):
        a, b = b"a", b"bc"
        value = int.from_bytes(digest(HashAlgorithm.SHA1, b"abc"), "big")
        declared = And(PreimageSha256("A", sha(a)), PreimageSha256("B", sha(b)))
        witness = Witness(slots={"A": a, "B": b})
        assert eval_script(And(declared, GreaterThanSha1(("A", "B"), value - 1, ">")), witness, TXID, registry)
        assert not eval_script(And(declared, GreaterThanSha1(("A", "B"), value, ">")), witness, TXID, registry)
        assert eval_script(And(declared, GreaterThanSha1(("A", "B"), value, "<=")), witness, TXID, registry)


class TestBetConditionTruthTable:
    """The coin-toss condition pays exactly the winner for every parity combination"""

    @pytest.mark.parametrize("a_parity", [0, 1])
    @pytest.mark.parametrize("b_parity", [0, 1])
    @pytest.mark.parametrize("signer", ["alice", "bob"])
    def test_only_the_winner_can_spend(self, registry, alice_key, bob_key, a_parity, b_parity, signer):
        a_secret = bytes(31) + bytes([0x10 | a_parity])
        b_secret = bytes(31) + bytes([0x20 | b_parity])
        pk_a, pk_b = pubkey(alice_key), pubkey(bob_key)
        script = And(
            And(PreimageSha256("A", sha(a_secret)), PreimageSha256("B", sha(b_secret))),
            Or(And(ParityEquals(("A", "B"), 0), Sig(pk_a)), And(ParityEquals(("A", "B"), 1), Sig(pk_b))),
        )
        key = alice_key if signer == "alice" else bob_key
        witness = Witness(slots={"A": a_secret, "B": b_secret}, signatures=frozenset({sign(key, TXID)}))

        alice_wins = (a_parity ^ b_parity) == 0
        assert eval_script(script, witness, TXID, registry) == (alice_wins == (signer == "alice"))


class TestEncoding:

    def test_encode_leaves(self):
        assert encode_script(Sig(b"\xab" * 32)) == f"sig({'ab' * 32})"
        assert encode_script(PreimageSha256("A", bytes(32))) == f"sha256(A) == {'00' * 32}"
        assert encode_script(ParityEquals(("A", "B"), 1)) == "(parity (xor A B) == 1)"
        assert encode_script(GreaterThanSha1(("A", "B"), 7)) == "(sha1cat(A B) > 7)"
        assert encode_script(LowBitsCompare(("A", "B"), 2, 1, ">=")) == "(lowbits 2 (xor A B) >= 1)"

    def test_encode_is_fully_parenthesized(self):
        script = Or(And(Sig(bytes(32)), Sig(bytes(32))), PreimageSha256("B", bytes(32)))
        zeros = "00" * 32
        assert encode_script(script) == f"((sig({zeros}) AND sig({zeros})) OR sha256(B) == {zeros})"

    def test_parse_golden_bet_script(self):
        golden = os.path.join(os.path.dirname(__file__), "golden", "bet_script.txt")
        with open(golden) as f:
            text = f.read().strip()
        assert encode_script(parse_script(text)) == text

    @pytest.mark.parametrize("text", [
        "",
        "sig(zz)",
        "(sig(" + "00" * 32 + ") XOR sig(" + "00" * 32 + "))",
        "sha256(A) == " + "AB" * 32,
        "(parity (xor A B) == 1",
        "sig(" + "00" * 32 + ") trailing",
        "(lowbits 2 (xor A B) > 1)",
    ])
    def test_parse_rejects_malformed_text(self, text):
        with pytest.raises(MalformedScript):
            parse_script(text)


# --- Property tests -----------------------------------------------------------------

LABELS = st.sampled_from(["A", "B", "C", "slot_1"])
LABEL_TUPLES = st.lists(LABELS, min_size=1, max_size=3).map(tuple)
KEYS = st.binary(min_size=32, max_size=32)


@st.composite
def leaves(draw):
    kind = draw(st.sampled_from(["preimage", "sig", "parity", "sha1", "lowbits"]))
    if kind == "preimage":
        return PreimageSha256(draw(LABELS), draw(KEYS))
    if kind == "sig":
        return Sig(draw(KEYS))
    if kind == "parity":
        return ParityEquals(draw(LABEL_TUPLES), draw(st.integers(0, 1)))
    if kind == "sha1":
        return GreaterThanSha1(draw(LABEL_TUPLES), draw(st.integers(0, (1 << 160) - 1)), draw(st.sampled_from([">", "<="])))
    k_bits = draw(st.integers(1, 16))
    return LowBitsCompare(draw(LABEL_TUPLES), k_bits, draw(st.integers(0, 1 << k_bits)), draw(st.sampled_from(["<", ">="])))


scripts = st.recursive(
    leaves(),
    lambda children: st.one_of(st.builds(And, children, children), st.builds(Or, children, children)),
    max_leaves=12,
)


@given(scripts)
@settings(max_examples=1000, deadline=None)
def test_parse_inverts_encode(script):
    text = encode_script(script)
    assert parse_script(text) == script
    assert encode_script(parse_script(text)) == text


@st.composite
def secrets_and_extras(draw):
    a = draw(st.binary(min_size=1, max_size=8))
    b = draw(st.binary(min_size=1, max_size=8))
    extra = draw(st.binary(min_size=0, max_size=8))
    signer = draw(st.sampled_from([b"\x01" * 32, b"\x02" * 32]))
    return a, b, extra, signer


@given(secrets_and_extras())
@settings(max_examples=200, deadline=None)
def test_extra_witness_material_never_breaks_a_satisfied_script(case):
    a, b, extra, signer = case
    registry = KeyRegistry()
    registry.register(b"\x01" * 32)
    registry.register(b"\x02" * 32)
    script = And(
        And(PreimageSha256("A", sha(a)), PreimageSha256("B", sha(b))),
        Or(And(ParityEquals(("A", "B"), 0), Sig(pubkey(b"\x01" * 32))),
           And(ParityEquals(("A", "B"), 1), Sig(pubkey(b"\x02" * 32)))),
    )
    witness = Witness(slots={"A": a, "B": b}, signatures=frozenset({sign(signer, TXID)}))
    if not eval_script(script, witness, TXID, registry):
        return
    richer = witness.with_slots(C=extra).with_signature(sign(b"\x01" * 32, TXID)).with_signature(
        sign(b"\x02" * 32, TXID))
    assert eval_script(script, richer, TXID, registry)
