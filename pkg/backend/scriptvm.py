import hashlib
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import FrozenSet, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

Digest = bytes
PubKey = bytes

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
SHA1_BITS = 160


class MalformedScript(ValueError):
    """Raised when a script tree or its textual form is not well-formed"""


class EmptyOperand(ValueError):
    """Raised when a bit operation is applied to an empty byte string"""


class HashAlgorithm(str, Enum):
    SHA256 = "sha256"
    SHA1 = "sha1"


DIGEST_SIZES = {HashAlgorithm.SHA256: 32, HashAlgorithm.SHA1: 20}


def digest(algorithm: HashAlgorithm, data: bytes) -> Digest:
    """Return the SHA-256 or SHA-1 digest of data"""
    if algorithm is HashAlgorithm.SHA256:
        return hashlib.sha256(data).digest()
    return hashlib.sha1(data).digest()


def parity(data: bytes) -> int:
    """Least-significant bit of data read as a big-endian unsigned integer"""
    if not data:
        raise EmptyOperand("parity of an empty byte string")
    return data[-1] & 1


def low_bits(data: bytes, k_bits: int) -> int:
    """Low k_bits of the last two bytes of data, big-endian"""
    if not data:
        raise EmptyOperand("bit window of an empty byte string")
    return int.from_bytes(data[-2:], "big") & ((1 << k_bits) - 1)


def _check_name(label: str) -> None:
    if not isinstance(label, str) or not _NAME_RE.match(label):
        raise MalformedScript(f"invalid witness slot name {label!r}")


def _freeze_labels(node, labels: Sequence[str]) -> None:
    labels = tuple(labels)
    if not labels:
        raise MalformedScript(f"{type(node).__name__} needs at least one slot")
    for label in labels:
        _check_name(label)
    object.__setattr__(node, "labels", labels)


# --- Script tree -----------------------------------------------------------

@dataclass(frozen=True)
class And:
    left: "ScriptExpr"
    right: "ScriptExpr"


@dataclass(frozen=True)
class Or:
    left: "ScriptExpr"
    right: "ScriptExpr"


@dataclass(frozen=True)
class PreimageSha256:
    """True iff SHA256(witness slot `label`) equals `expected`"""
    label: str
    expected: Digest

    def __post_init__(self):
        _check_name(self.label)
        if len(self.expected) != DIGEST_SIZES[HashAlgorithm.SHA256]:
            raise MalformedScript("sha256 commitment must be 32 bytes")


@dataclass(frozen=True)
class Sig:
    required_pubkey: PubKey

    def __post_init__(self):
        if len(self.required_pubkey) != 32:
            raise MalformedScript("public keys are 32 bytes")


@dataclass(frozen=True)
class ParityEquals:
    """XOR of the parities of the referenced slots equals `bit`"""
    labels: Tuple[str, ...]
    bit: int

    def __post_init__(self):
        _freeze_labels(self, self.labels)
        if self.bit not in (0, 1):
            raise MalformedScript(f"parity bit must be 0 or 1, got {self.bit}")


@dataclass(frozen=True)
class GreaterThanSha1:
    """SHA1 of the concatenated slots, as a 160-bit integer, compared with `threshold`.

    `op` is ">" (the standard-script form) or "<=" for the complementary branch.
    """
    labels: Tuple[str, ...]
    threshold: int
    op: str = ">"

    def __post_init__(self):
        _freeze_labels(self, self.labels)
        if not 0 <= self.threshold < (1 << SHA1_BITS):
            raise MalformedScript("sha1 threshold must fit in 160 bits")
        if self.op not in (">", "<="):
            raise MalformedScript(f"unsupported sha1 comparison {self.op!r}")


@dataclass(frozen=True)
class LowBitsCompare:
    """Low k bits of the XOR of the slots' last two bytes, compared with `threshold`"""
    labels: Tuple[str, ...]
    k_bits: int
    threshold: int
    op: str = "<"

    def __post_init__(self):
        _freeze_labels(self, self.labels)
        if not 1 <= self.k_bits <= 16:
            raise MalformedScript("bit window must be between 1 and 16 bits")
        if not 0 <= self.threshold <= (1 << self.k_bits):
            raise MalformedScript("threshold outside the bit window")
        if self.op not in ("<", ">="):
            raise MalformedScript(f"unsupported window comparison {self.op!r}")


ScriptExpr = Union[And, Or, PreimageSha256, Sig, ParityEquals, GreaterThanSha1, LowBitsCompare]


# --- Witness material --------------------------------------------------------

@dataclass(frozen=True)
class SignatureToken:
    """Authorization of `message` (a txid) by the holder of `pubkey`'s secret key"""
    pubkey: PubKey
    message: Digest
    tag: bytes


@dataclass(frozen=True)
class Witness:
    slots: Mapping[str, bytes] = field(default_factory=dict)
    signatures: FrozenSet[SignatureToken] = frozenset()

    def with_slots(self, **values: bytes) -> "Witness":
        merged = dict(self.slots)
        merged.update(values)
        return Witness(slots=merged, signatures=self.signatures)

    def with_signature(self, token: SignatureToken) -> "Witness":
        return Witness(slots=dict(self.slots), signatures=self.signatures | {token})


class SignatureVerifier(Protocol):
    """Anything that can check a SignatureToken (the ledger's key registry)"""

    def verify(self, token: SignatureToken) -> bool:
        ...


# --- Evaluation ----------------------------------------------------------------

def walk(expr: ScriptExpr) -> Iterator[ScriptExpr]:
    """Yield every node of the tree, parents first"""
    yield expr
    if isinstance(expr, (And, Or)):
        yield from walk(expr.left)
        yield from walk(expr.right)


@lru_cache(maxsize=1024)
def declared_slots(expr: ScriptExpr) -> FrozenSet[str]:
    """The script's slot universe: every label bound by a sha256 preimage leaf"""
    return frozenset(node.label for node in walk(expr) if isinstance(node, PreimageSha256))


@lru_cache(maxsize=1024)
def _check_slot_universe(expr: ScriptExpr) -> None:
    universe = declared_slots(expr)
    for node in walk(expr):
        labels = getattr(node, "labels", ())
        undeclared = [label for label in labels if label not in universe]
        if undeclared:
            raise MalformedScript(f"slots {undeclared} are not bound by any sha256 leaf")


def _slot_values(labels: Tuple[str, ...], witness: Witness) -> Optional[List[bytes]]:
    values = [witness.slots.get(label) for label in labels]
    if any(value is None or len(value) == 0 for value in values):
        return None
    return values


def _evaluate(expr: ScriptExpr, witness: Witness, spending_txid: Digest,
              verifier: SignatureVerifier) -> bool:
    if isinstance(expr, And):
        return (_evaluate(expr.left, witness, spending_txid, verifier)
                and _evaluate(expr.right, witness, spending_txid, verifier))
    if isinstance(expr, Or):
        return (_evaluate(expr.left, witness, spending_txid, verifier)
                or _evaluate(expr.right, witness, spending_txid, verifier))
    if isinstance(expr, PreimageSha256):
        value = witness.slots.get(expr.label)
        return value is not None and digest(HashAlgorithm.SHA256, value) == expr.expected
    if isinstance(expr, Sig):
        return any(
            token.pubkey == expr.required_pubkey
            and token.message == spending_txid
            and verifier.verify(token)
            for token in witness.signatures
        )

    # Bit and comparison leaves: missing material is a false leaf
    values = _slot_values(expr.labels, witness)
    if values is None:
        return False
    if isinstance(expr, ParityEquals):
        combined = 0
        for value in values:
            combined ^= parity(value)
        return combined == expr.bit
    if isinstance(expr, LowBitsCompare):
        window = 0
        for value in values:
            window ^= low_bits(value, expr.k_bits)
        return window < expr.threshold if expr.op == "<" else window >= expr.threshold
    if isinstance(expr, GreaterThanSha1):
        value = int.from_bytes(digest(HashAlgorithm.SHA1, b"".join(values)), "big")
        return value > expr.threshold if expr.op == ">" else value <= expr.threshold
    raise MalformedScript(f"unknown script node {type(expr).__name__}")


def eval_script(expr: ScriptExpr, witness: Witness, spending_txid: Digest,
                key_registry: SignatureVerifier) -> bool:
    """
    Decide whether a witness satisfies an output's spending condition.

    Args:
        expr: The output's script tree
        witness: Preimages and signature tokens supplied by the spender
        spending_txid: Id of the spending transaction (what signatures must cover)
        key_registry: Verifier for signature tokens

    Returns:
        True iff the condition holds. Missing slots or tokens make a leaf false.

    Raises:
        MalformedScript: a bit/comparison leaf references a slot no sha256 leaf declares
    """
    _check_slot_universe(expr)
    return _evaluate(expr, witness, spending_txid, key_registry)


# --- Text encoding ---------------------------------------------------------------

def encode_script(expr: ScriptExpr) -> str:
    """Fully parenthesized, deterministic text form of a script"""
    if isinstance(expr, And):
        return f"({encode_script(expr.left)} AND {encode_script(expr.right)})"
    if isinstance(expr, Or):
        return f"({encode_script(expr.left)} OR {encode_script(expr.right)})"
    if isinstance(expr, PreimageSha256):
        return f"sha256({expr.label}) == {expr.expected.hex()}"
    if isinstance(expr, Sig):
        return f"sig({expr.required_pubkey.hex()})"
    if isinstance(expr, ParityEquals):
        return f"(parity (xor {' '.join(expr.labels)}) == {expr.bit})"
    if isinstance(expr, GreaterThanSha1):
        return f"(sha1cat({' '.join(expr.labels)}) {expr.op} {expr.threshold})"
    if isinstance(expr, LowBitsCompare):
        return f"(lowbits {expr.k_bits} (xor {' '.join(expr.labels)}) {expr.op} {expr.threshold})"
    raise MalformedScript(f"unknown script node {type(expr).__name__}")


_TOKEN_RE = re.compile(r"\s*(==|>=|<=|[()<>]|[^\s()<>=]+)")


def _tokenize(text: str) -> List[str]:
    tokens = []
    text = text.rstrip()
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise MalformedScript(f"unexpected character at offset {pos}")
        tokens.append(match.group(1))
        pos = match.end()
    return tokens


class _Parser:
    """Recursive-descent parser for the grammar produced by encode_script"""

    def __init__(self, tokens: List[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        token = self.peek()
        if token is None:
            raise MalformedScript("unexpected end of script")
        self.pos += 1
        return token

    def expect(self, token: str) -> None:
        found = self.take()
        if found != token:
            raise MalformedScript(f"expected {token!r}, found {found!r}")

    def integer(self) -> int:
        token = self.take()
        try:
            value = int(token, 0)
        except ValueError:
            raise MalformedScript(f"expected a number, found {token!r}") from None
        if value < 0:
            raise MalformedScript("numbers in scripts are unsigned")
        return value

    def hex_bytes(self) -> bytes:
        token = self.take()
        if token != token.lower():
            raise MalformedScript("byte strings are lowercase hex")
        try:
            return bytes.fromhex(token)
        except ValueError:
            raise MalformedScript(f"expected hex, found {token!r}") from None

    def names(self) -> Tuple[str, ...]:
        """Read slot names up to and including the closing parenthesis"""
        labels = []
        while self.peek() != ")":
            labels.append(self.take())
        self.take()
        return tuple(labels)

    def comparison(self, allowed: Tuple[str, ...]) -> str:
        op = self.take()
        if op not in allowed:
            raise MalformedScript(f"expected one of {allowed}, found {op!r}")
        return op

    def expr(self) -> ScriptExpr:
        token = self.take()
        if token == "sha256":
            self.expect("(")
            label = self.take()
            self.expect(")")
            self.expect("==")
            return PreimageSha256(label, self.hex_bytes())
        if token == "sig":
            self.expect("(")
            pubkey = self.hex_bytes()
            self.expect(")")
            return Sig(pubkey)
        if token != "(":
            raise MalformedScript(f"unexpected token {token!r}")

        head = self.peek()
        if head == "parity":
            self.take()
            self.expect("(")
            self.expect("xor")
            labels = self.names()
            self.expect("==")
            bit = self.integer()
            self.expect(")")
            return ParityEquals(labels, bit)
        if head == "sha1cat":
            self.take()
            self.expect("(")
            labels = self.names()
            op = self.comparison((">", "<="))
            threshold = self.integer()
            self.expect(")")
            return GreaterThanSha1(labels, threshold, op)
        if head == "lowbits":
            self.take()
            k_bits = self.integer()
            self.expect("(")
            self.expect("xor")
            labels = self.names()
            op = self.comparison(("<", ">="))
            threshold = self.integer()
            self.expect(")")
            return LowBitsCompare(labels, k_bits, threshold, op)

        left = self.expr()
        connective = self.take()
        right = self.expr()
        self.expect(")")
        if connective == "AND":
            return And(left, right)
        if connective == "OR":
            return Or(left, right)
        raise MalformedScript(f"expected AND or OR, found {connective!r}")


def parse_script(text: str) -> ScriptExpr:
    """Inverse of encode_script"""
    parser = _Parser(_tokenize(text))
    expr = parser.expr()
    if parser.peek() is not None:
        raise MalformedScript(f"trailing tokens after script: {parser.tokens[parser.pos:]}")
    return expr
