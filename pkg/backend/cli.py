import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import config
from harness import ATTACKS, SessionConfig, monte_carlo, run_attack, run_session
from ledger import OutPoint, Output, Transaction
from models import BetParams, BiasTerms, CoinPredicate
from protocol import Coin, bet_script, build_bet_transaction, commit, reveal_script
from scriptvm import HashAlgorithm, Sig, digest, encode_script
from strategies import default_registry

logger = logging.getLogger(__name__)

Subcommand = Literal["run", "attack", "montecarlo", "vectors"]

# Reveal refund offset used by `attack --unsound` when none is given
UNSOUND_REVEAL_LOCKTIME = 25


class CliConfig(BaseModel):
    """Parsed command line"""
    model_config = ConfigDict(frozen=True)

    subcommand: Subcommand
    stake: int = config.STAKE
    bet_locktime: int = config.BET_LOCKTIME
    reveal_locktime: int = config.REVEAL_LOCKTIME
    alice: str = "honest"
    bob: str = "honest"
    bias: Optional[Tuple[int, int]] = None
    confirmation_depth: int = config.CONFIRMATION_DEPTH
    setup_timeout: int = config.SETUP_TIMEOUT
    seed: int = Field(default=config.SEED, ge=0, lt=1 << 64)
    reorg_budget: int = Field(default=config.MAX_REORG_DEPTH, ge=0)
    unsound: bool = False
    predicate: CoinPredicate = CoinPredicate.PARITY
    sha1_threshold: int = config.SHA1_THRESHOLD
    n: int = Field(default=config.MONTE_CARLO_RUNS, ge=1)
    workers: int = Field(default=config.MONTE_CARLO_WORKERS, ge=1)
    name: str = "refund-then-reveal"
    output: Optional[str] = None  # None or "-" means standard output

    def bet_params(self) -> BetParams:
        bias = None
        if self.bias is not None:
            k_bits, threshold = self.bias
            bias = BiasTerms.from_odds(self.stake, k_bits, threshold)
        return BetParams(
            stake_x=self.stake,
            bet_locktime=self.bet_locktime,
            reveal_locktime=self.reveal_locktime,
            bias=bias,
            confirmation_depth=self.confirmation_depth,
            setup_timeout=self.setup_timeout,
            predicate=self.predicate,
            sha1_threshold=self.sha1_threshold,
            unsound_mode=self.unsound,
        )

    def session_config(self) -> SessionConfig:
        registry = default_registry()
        return SessionConfig(
            params=self.bet_params(),
            strategy_alice=registry.create(self.alice),
            strategy_bob=registry.create(self.bob),
            rng_seed=self.seed,
            reorg_budget=self.reorg_budget,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cointoss", description="Fair coin toss over a simulated UTXO ledger")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stake", type=int, default=config.STAKE, help="X, each party's stake")
    common.add_argument("--bet-locktime", type=int, default=config.BET_LOCKTIME)
    common.add_argument("--reveal-locktime", type=int, default=None)
    common.add_argument("--confirmation-depth", type=int, default=config.CONFIRMATION_DEPTH)
    common.add_argument("--setup-timeout", type=int, default=config.SETUP_TIMEOUT)
    common.add_argument("--bias", type=int, nargs=2, metavar=("K", "T"), default=None,
                        help="biased coin: Alice wins with probability T / 2^K")
    common.add_argument("--predicate", choices=[p.value for p in CoinPredicate], default=CoinPredicate.PARITY.value)
    common.add_argument("--sha1-threshold", type=lambda raw: int(raw, 0), default=config.SHA1_THRESHOLD)
    common.add_argument("--seed", type=int, default=config.SEED)
    common.add_argument("--reorg-budget", type=int, default=config.MAX_REORG_DEPTH)
    common.add_argument("--unsound", action="store_true", help="allow reveal_locktime >= bet_locktime")
    common.add_argument("--output", default=None, help="write to this file instead of standard output")

    strategy_names = ", ".join(definition["name"] for definition in default_registry().get_definitions())
    run = sub.add_parser("run", parents=[common], help="run one session and print its trace")
    run.add_argument("--alice", default="honest", help=f"strategy ({strategy_names})")
    run.add_argument("--bob", default="honest", help=f"strategy ({strategy_names})")

    attack = sub.add_parser("attack", parents=[common], help="run a named attack and audit it")
    attack.add_argument("--name", choices=sorted(ATTACKS), default="refund-then-reveal")

    montecarlo = sub.add_parser("montecarlo", parents=[common], help="outcome statistics over many seeds")
    montecarlo.add_argument("--alice", default="honest")
    montecarlo.add_argument("--bob", default="honest")
    montecarlo.add_argument("-n", type=int, default=config.MONTE_CARLO_RUNS)
    montecarlo.add_argument("--workers", type=int, default=config.MONTE_CARLO_WORKERS)

    sub.add_parser("vectors", parents=[common], help="print golden script encodings and txids")
    return parser


def _describe(error: Exception) -> str:
    if isinstance(error, ValidationError):
        return "; ".join(detail["msg"] for detail in error.errors())
    if isinstance(error, KeyError):
        return str(error.args[0])
    return str(error)


def parse_args(argv: Optional[Sequence[str]] = None) -> CliConfig:
    """Map argv onto a validated CliConfig; usage errors exit with status 2"""
    parser = build_parser()
    args = parser.parse_args(argv)

    reveal_locktime = args.reveal_locktime
    if reveal_locktime is None:
        use_unsound_demo = args.subcommand == "attack" and args.unsound
        reveal_locktime = UNSOUND_REVEAL_LOCKTIME if use_unsound_demo else config.REVEAL_LOCKTIME

    fields = {key: value for key, value in vars(args).items() if value is not None}
    fields["reveal_locktime"] = reveal_locktime
    if args.bias is not None:
        fields["bias"] = tuple(args.bias)
    try:
        cli = CliConfig(**fields)
        # Check BetParams/SessionConfig invariants before anything runs
        cli.session_config()
    except (ValidationError, ValueError, KeyError) as e:
        parser.error(_describe(e))
    return cli


# --- Subcommands -------------------------------------------------------------------

CommandResult = Tuple[List[str], int]


def cmd_run(cli: CliConfig) -> CommandResult:
    trace = run_session(cli.session_config())
    return trace.lines(), 0


def cmd_attack(cli: CliConfig) -> CommandResult:
    report = run_attack(cli.name, cli.bet_params(), seed=cli.seed, reorg_budget=cli.reorg_budget)
    lines = report.trace.lines()
    lines.append(f"AUDIT scenario={cli.name} seed={report.config.rng_seed} violations={len(report.violations)}")
    lines.extend(f"VIOLATION {violation}" for violation in report.violations)
    lines.append(f"EXPECTED violation={str(report.expected_violation).lower()} "
                 f"matched={str(report.matched).lower()}")
    return lines, 0 if report.matched else 1


def cmd_montecarlo(cli: CliConfig) -> CommandResult:
    session = cli.session_config()
    stats = monte_carlo(session, cli.n, workers=cli.workers)
    code = 0
    if session.strategy_alice.is_honest and session.strategy_bob.is_honest:
        low, high = stats.three_sigma_band(session.params.alice_win_probability)
        if not low <= stats.alice_freq <= high:
            logger.warning("alice_freq %.4f outside [%.4f, %.4f]", stats.alice_freq, low, high)
            code = 1
    return stats.lines(), code


VECTOR_PUBKEY_ALICE = bytes([0xAA]) * 32
VECTOR_PUBKEY_BOB = bytes([0xBB]) * 32
VECTOR_SECRET_ALICE = bytes(32)
VECTOR_SECRET_BOB = bytes([0x01]) * 32


def vector_lines() -> List[str]:
    """Fixed inputs whose outputs can be checked with any SHA-256 tool"""
    params = BetParams(stake_x=500, pk_alice=VECTOR_PUBKEY_ALICE, pk_bob=VECTOR_PUBKEY_BOB)
    a_commit, b_commit = commit(VECTOR_SECRET_ALICE), commit(VECTOR_SECRET_BOB)
    faucet = Transaction((), [Output(1000, Sig(bytes(32)))], 0)
    bet = build_bet_transaction(params, [Coin(OutPoint(faucet.txid, 0), 1000)], a_commit, b_commit)
    return [
        f"sha256_abc={digest(HashAlgorithm.SHA256, b'abc').hex()}",
        f"sha1_abc={digest(HashAlgorithm.SHA1, b'abc').hex()}",
        f"commit_zero={a_commit.hex()}",
        f"faucet_txid={faucet.txid.hex()}",
        f"bet_script={encode_script(bet_script(params, a_commit, b_commit))}",
        f"reveal_script={encode_script(reveal_script(params, b_commit))}",
        f"bet_txid={bet.txid.hex()}",
    ]


def cmd_vectors(cli: CliConfig) -> CommandResult:
    return vector_lines(), 0


COMMANDS: Dict[str, Callable[[CliConfig], CommandResult]] = {
    "run": cmd_run,
    "attack": cmd_attack,
    "montecarlo": cmd_montecarlo,
    "vectors": cmd_vectors,
}


def main(cli: CliConfig) -> int:
    """Execute a parsed command line; 0 expected outcome, 1 unexpected, 2 internal error"""
    try:
        lines, code = COMMANDS[cli.subcommand](cli)
    except Exception:
        logger.exception("internal error while running %s", cli.subcommand)
        return 2

    text = "\n".join(lines) + "\n"
    if cli.output and cli.output != "-":
        Path(cli.output).write_text(text)
    else:
        sys.stdout.write(text)
    return code


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=config.LOG_LEVEL,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return main(parse_args(argv))


if __name__ == "__main__":
    sys.exit(run_cli())
