"""Ready-made scenarios, the attack catalog and the anonymity measurement."""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .engine import Phase
from .harness import RunResult, run
from .incentives import NetworkParams
from .scenario import Role, Scenario, ScenarioBuilder

REGISTRARS = ("r1", "r2", "r3")
WITNESSES = ("w1", "w2", "w3")
BAIL_EXPIRY = 200

# the happy path: setup in blocks 1-5, death at 20, antes at 21/24/26,
# deliberation from 26 to 31, reveal and acknowledgment at 31
DEATH_BLOCK = 20
ANTE_BLOCKS = (21, 24, 26)
DELIBERATION = 5


def _setup(b: ScenarioBuilder, donor: str = "alice", start: int = 1, **open_args) -> ScenarioBuilder:
    """Registrars stake, the donor opens an instance and completes setup."""
    args = dict(registrars=",".join(REGISTRARS), t=2, threshold=90, deliberation=DELIBERATION,
                registrar_fee=100, witness_fees=30)
    args.update(open_args)
    b.at(start + 1, donor, "open", **args)
    for r in REGISTRARS:
        b.at(start + 2, r, "accept", donor=donor)
    b.at(start + 3, donor, "distribute")
    b.at(start + 4, donor, "finalize")
    return b


def _cast(name: str, seed: int, donor_death="never", network=None,
          registrar_params=None) -> ScenarioBuilder:
    registrar_params = registrar_params or {}
    b = ScenarioBuilder(name, seed, network)
    b.actor("alice", Role.DONOR, 100, death_block=donor_death, civil_name="Alice Liddell",
            birth_date="1852-05-04", birth_place="Westminster")
    for r in REGISTRARS:
        b.actor(r, Role.REGISTRAR, 1000, **registrar_params.get(r, {}))
    for w in WITNESSES:
        b.actor(w, Role.WITNESS, 100)
    for r in REGISTRARS:
        b.at(1, r, "stake", amount=100, expiry=BAIL_EXPIRY)
    return b


def _antes(b: ScenarioBuilder, donor: str = "alice", amount: int = 30,
           blocks=ANTE_BLOCKS, **extra) -> ScenarioBuilder:
    for w, block in zip(WITNESSES, blocks):
        b.at(block, w, "ante", donor=donor, amount=amount, **extra)
    return b


def happy_path(seed: int = 7) -> Scenario:
    """One donor dies; three witnesses signal; two-of-three registrars reveal."""
    b = _cast("happy-path", seed, donor_death=DEATH_BLOCK)
    _setup(b)
    _antes(b)
    return b.build()


def silent_registrar(seed: int = 7, silent: tuple[str, ...] = ("r3",)) -> Scenario:
    """The happy path, except some registrars never reveal their shares."""
    b = _cast("silent-registrar", seed, donor_death=DEATH_BLOCK,
              registrar_params={r: {"reveal": "silent"} for r in silent})
    _setup(b)
    _antes(b)
    return b.build()


def liveness_abort(seed: int = 0, move_block: int | None = None) -> Scenario:
    """Witnesses falsely signal a living donor, who moves inside the window.

    Without an explicit ``move_block`` the move lands uniformly at random,
    drawn from the seed, strictly inside the deliberation window.
    """
    start = ANTE_BLOCKS[-1]
    deadline = start + DELIBERATION
    if move_block is None:
        move_block = random.Random(f"move:{seed}").randrange(start + 1, deadline)
    b = _cast("liveness-abort", seed)
    _setup(b)
    _antes(b)
    b.at(move_block, "alice", "move")
    return b.build()


def supersession(seed: int = 3) -> Scenario:
    """A donor sets up three instances in turn; only the last one is live."""
    b = _cast("supersession", seed, donor_death=DEATH_BLOCK)
    _setup(b, start=1)
    _setup(b, start=5)
    _setup(b, start=9)
    # a stale ante aimed at the first instance is refused
    b.at(15, "w1", "ante", donor="alice", amount=30, instance=0)
    _antes(b)
    return b.build()


def key_transfer_attack_scenario(deliberation_time: int = DELIBERATION, move_offset: int = 2,
                                 seed: int = 11) -> Scenario:
    """Alice hands her donor key to Bob and dies; Bob moves to abort and sweeps.

    ``move_offset`` counts blocks after deliberation starts; at or beyond the
    deliberation time the move comes too late.
    """
    b = _cast("key-transfer-attack", seed, donor_death=DEATH_BLOCK)
    b.actor("bob", Role.KEY_TRANSFER, 0, holds="alice")
    _setup(b, deliberation=deliberation_time, span=DELIBERATION)
    _antes(b)
    move = ANTE_BLOCKS[-1] + move_offset
    b.at(move, "bob", "move")
    b.at(move + 1, "bob", "sweep")
    return b.build()


def whale_attack_scenario(x: int = 2, span: int = 0, reachable: bool = True,
                          seed: int = 13) -> Scenario:
    """One rich witness funds the whole threshold against a living donor."""
    b = _cast("whale-attack", seed)
    b.actor("whale", Role.WHALE, 1000)
    _setup(b, x=x, span=span)
    # two transactions from the same account still count as one witness
    b.at(21, "whale", "ante", donor="alice", amount=45)
    b.at(22, "whale", "ante", donor="alice", amount=45)
    if reachable:
        b.at(23, "alice", "move")
    return b.build()


# -- attack catalog ------------------------------------------------------------

@dataclass
class AttackCase:
    name: str
    family: str
    description: str
    build: Callable[[], Scenario]
    expected: str


@dataclass
class AttackOutcome:
    case: AttackCase
    observed: str
    result: RunResult

    @property
    def matched(self) -> bool:
        return self.observed == self.case.expected


def observe_outcome(result: RunResult) -> str:
    """Summarise a run as the phase of the donor's instance, plus attack marks."""
    phase = result.phase_of("alice")
    label = phase.value if phase else "none"
    inst = result.latest_instance("alice")
    if phase is Phase.ABORTED and inst.liveness_move_block is not None:
        movers = [r.actor for r in result.trace if r.kind == "MOVE" and r.block == inst.liveness_move_block]
        if any(result.scenario.actor(m).role is Role.KEY_TRANSFER for m in movers):
            label += "+attacker-move"
    return label


ATTACKS = (
    AttackCase("key-transfer", "key-transfer",
               "holder of the dead donor's key moves inside the window",
               lambda: key_transfer_attack_scenario(), "Aborted+attacker-move"),
    AttackCase("key-transfer-late", "key-transfer",
               "the key holder moves only after the deadline",
               lambda: key_transfer_attack_scenario(move_offset=DELIBERATION + 2), "Acknowledged"),
    AttackCase("key-transfer-zero-window", "key-transfer",
               "deliberation time zero leaves no window to move in",
               lambda: key_transfer_attack_scenario(deliberation_time=0), "Acknowledged"),
    AttackCase("whale-x2", "whale",
               "single whale ante with two distinct witnesses required",
               lambda: whale_attack_scenario(x=2), "Active"),
    AttackCase("whale-x1", "whale",
               "single whale ante, one witness suffices, donor answers",
               lambda: whale_attack_scenario(x=1), "Aborted"),
    AttackCase("whale-x1-unreachable", "whale",
               "single whale ante, one witness suffices, donor cannot answer",
               lambda: whale_attack_scenario(x=1, reachable=False), "Acknowledged"),
)


def run_attacks(which: str = "all") -> list[AttackOutcome]:
    out = []
    for case in ATTACKS:
        if which in ("all", case.family):
            result = run(case.build())
            out.append(AttackOutcome(case, observe_outcome(result), result))
    return out


# -- anonymity -----------------------------------------------------------------

OBSERVE_PRE = 70
DEATHS = 80
OBSERVE_POST = 100


def anonymity_scenario(k: int, seed: int, careless: bool = False, post_ack: bool = False) -> Scenario:
    """K donors with independent background activity open instances at random times.

    Deposits are funded through the faucet unless ``careless``. An observer
    looks at the ledger before any death; with ``post_ack`` all donors then
    die, are acknowledged, and the observer looks again.
    """
    rng = random.Random(f"anonymity:{seed}")
    network = NetworkParams()
    b = ScenarioBuilder(f"anonymity-k{k}", seed, network)
    donors = [f"d{i}" for i in range(k)]
    for d in donors:
        b.actor(d, Role.DONOR, 1000, death_block=DEATHS if post_ack else "never")
    for r in REGISTRARS:
        b.actor(r, Role.REGISTRAR, 1000)
    for w in WITNESSES:
        b.actor(w, Role.WITNESS, 100 * k)
    b.actor("eve", Role.OBSERVER, 0)
    for r in REGISTRARS:
        b.at(1, r, "stake", amount=100, expiry=300)
    for d in donors:
        start = rng.randrange(2, 40)
        b.at(start, d, "open", registrars=",".join(REGISTRARS), t=2, threshold=90,
             deliberation=DELIBERATION, registrar_fee=40, witness_fees=30,
             funding="donor" if careless else "faucet")
        for r in REGISTRARS:
            b.at(start + 1, r, "accept", donor=d)
        b.at(start + 2, d, "distribute")
        b.at(start + 3, d, "finalize")
    # background payments between donors, independent of their instances
    for d in donors:
        others = [o for o in donors if o != d]
        for _ in range(3):
            if others:
                b.at(rng.randrange(2, 60), d, "transfer", to=rng.choice(others), amount=rng.randrange(1, 10))
    b.at(OBSERVE_PRE, "eve", "observe")
    if post_ack:
        shifted = tuple(block + DEATHS - DEATH_BLOCK for block in ANTE_BLOCKS)
        for d in donors:
            _antes(b, donor=d, blocks=shifted)
        b.at(OBSERVE_POST, "eve", "observe")
    return b.build()


@dataclass
class AnonymityResult:
    donors: int
    runs: int
    pre_rates: list[Fraction]
    post_rates: list[Fraction]

    @property
    def baseline(self) -> Fraction:
        return Fraction(1, self.donors)

    @property
    def pre_rate(self) -> Fraction:
        return sum(self.pre_rates, Fraction(0)) / len(self.pre_rates)

    @property
    def post_rate(self) -> Fraction | None:
        if not self.post_rates:
            return None
        return sum(self.post_rates, Fraction(0)) / len(self.post_rates)

    @property
    def vacuous(self) -> bool:
        # with a single candidate every guess is right by construction
        return self.donors == 1

    def within_chance(self, tolerance: Fraction = Fraction(1, 10)) -> bool:
        return self.pre_rate <= self.baseline + tolerance


def measure_anonymity(k: int, runs: int, post_ack: bool = False, careless: bool = False,
                      first_seed: int = 0) -> AnonymityResult:
    if k < 1 or runs < 1:
        raise ValueError("need at least one donor and one run")
    pre, post = [], []
    for seed in range(first_seed, first_seed + runs):
        result = run(anonymity_scenario(k, seed, careless=careless, post_ack=post_ack))
        by_block = {o.block: o.rate for o in result.observations}
        pre.append(by_block[OBSERVE_PRE])
        if post_ack:
            post.append(by_block[OBSERVE_POST])
    return AnonymityResult(k, runs, pre, post)


BUNDLED = {
    "happy-path": happy_path,
    "liveness-abort": liveness_abort,
    "supersession": supersession,
    "silent-registrar": silent_registrar,
    "key-transfer-attack": key_transfer_attack_scenario,
    "whale-attack": whale_attack_scenario,
}
