from enum import Enum
from math import gcd
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Role(str, Enum):
    """The two seats of a coin-toss session"""
    ALICE = "Alice"
    BOB = "Bob"

    @property
    def counterparty(self) -> "Role":
        return Role.BOB if self is Role.ALICE else Role.ALICE


class CoinPredicate(str, Enum):
    """How the winner is read from the two secrets"""
    PARITY = "parity"  # (A xor B) mod 2, or a wider bit window when biased
    SHA1 = "sha1"      # SHA1(A || B) compared against a threshold


class BiasTerms(BaseModel):
    """A biased coin: Alice wins with probability threshold / 2^k_bits"""
    model_config = ConfigDict(frozen=True)

    k_bits: int = Field(ge=1, le=16)
    threshold: int = Field(ge=0)
    alice_stake: int = Field(ge=1)  # minimum stake of one unit for each side
    bob_stake: int = Field(ge=1)

    @model_validator(mode="after")
    def check_odds(self) -> "BiasTerms":
        span = 1 << self.k_bits
        if self.threshold > span:
            raise ValueError(f"threshold {self.threshold} exceeds 2^{self.k_bits}")
        # Fair odds: alice_stake / bob_stake == T / (2^k - T)
        if self.alice_stake * (span - self.threshold) != self.bob_stake * self.threshold:
            raise ValueError("stakes do not match the T/(2^k - T) odds ratio")
        return self

    @classmethod
    def from_odds(cls, stake_x: int, k_bits: int, threshold: int) -> "BiasTerms":
        """Smallest integer stakes in the exact odds ratio, scaled by stake_x"""
        span = 1 << k_bits
        divisor = gcd(threshold, span - threshold) or 1
        return cls(
            k_bits=k_bits,
            threshold=threshold,
            alice_stake=stake_x * threshold // divisor,
            bob_stake=stake_x * (span - threshold) // divisor,
        )

    @property
    def alice_win_probability(self) -> float:
        return self.threshold / (1 << self.k_bits)


class BetParams(BaseModel):
    """Parameters both parties agree on before a session starts"""
    model_config = ConfigDict(frozen=True)

    stake_x: int = Field(default=50, ge=1)
    bet_locktime: int = Field(default=20, ge=1)      # refund_bet offset (step 4)
    reveal_locktime: int = Field(default=10, ge=1)   # refund_reveal offset (step 7)
    pk_alice: Optional[bytes] = None                 # filled with fresh keys per session
    pk_bob: Optional[bytes] = None
    bias: Optional[BiasTerms] = None
    confirmation_depth: int = Field(default=1, ge=0)
    setup_timeout: int = Field(default=10, ge=1)
    predicate: CoinPredicate = CoinPredicate.PARITY
    sha1_threshold: int = Field(default=1 << 159, ge=0, lt=1 << 160)
    unsound_mode: bool = False

    @field_validator("pk_alice", "pk_bob")
    @classmethod
    def check_pubkey(cls, value: Optional[bytes]) -> Optional[bytes]:
        if value is not None and len(value) != 32:
            raise ValueError("public keys are 32 bytes")
        return value

    @model_validator(mode="after")
    def check_protocol(self) -> "BetParams":
        if not self.unsound_mode and self.reveal_locktime >= self.bet_locktime:
            raise ValueError(
                f"soundness requires reveal_locktime < bet_locktime "
                f"(got {self.reveal_locktime} >= {self.bet_locktime}); pass unsound_mode to allow it"
            )
        # Alice acts no earlier than one block plus confirmation_depth after the bet request
        earliest_reveal_refund = 1 + self.confirmation_depth + self.reveal_locktime
        if not self.unsound_mode and earliest_reveal_refund >= self.bet_locktime:
            raise ValueError(
                f"soundness requires 1 + confirmation_depth + reveal_locktime < bet_locktime "
                f"(got {earliest_reveal_refund} >= {self.bet_locktime}); pass unsound_mode to allow it"
            )
        if self.bias is not None and self.predicate is not CoinPredicate.PARITY:
            raise ValueError("a biased coin is only available with the parity predicate")
        if self.setup_timeout <= self.confirmation_depth + 1:
            raise ValueError("setup_timeout must leave time for the bet to reach confirmation_depth")
        return self

    @property
    def alice_stake(self) -> int:
        return self.bias.alice_stake if self.bias else self.stake_x

    @property
    def bob_stake(self) -> int:
        return self.bias.bob_stake if self.bias else self.stake_x

    @property
    def pot(self) -> int:
        """Value of Bob's bet output (2X for a fair coin)"""
        return self.alice_stake + self.bob_stake

    def stake_of(self, role: Role) -> int:
        return self.alice_stake if role is Role.ALICE else self.bob_stake

    def pubkey_of(self, role: Role) -> Optional[bytes]:
        return self.pk_alice if role is Role.ALICE else self.pk_bob

    @property
    def alice_win_probability(self) -> float:
        if self.bias is not None:
            return self.bias.alice_win_probability
        if self.predicate is CoinPredicate.SHA1:
            return ((1 << 160) - 1 - self.sha1_threshold) / (1 << 160)
        return 0.5
