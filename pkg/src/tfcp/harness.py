"""Deterministic discrete-event scenario runner.

A run executes the schedule block by block against one ledger, one
incentives book and one protocol engine. Every random draw derives from the
scenario seed, so the same scenario and seed give byte-identical traces.
"""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import crypto
from .audit import recheck_acknowledgments
from .documents import PARSERS, Announcement, CivilIdentity
from .engine import Engine, InstanceParams, InvariantViolation, Phase, ProtocolError, TfcpInstance
from .incentives import BailStatus, IncentiveError, Incentives, reconcile
from .ledger import AccountId, DocKind, Ledger, LedgerError
from .linkage import LinkageGuess, PublicView, correct_guess_rate, linkage_analyzer
from .scenario import Action, Role, Scenario, ScenarioError

log = logging.getLogger(__name__)

FAUCET_SEED = crypto.digest(b"tfcp-faucet")
TRACE_HEADER = "# tfcp-trace v1"


@dataclass
class Observation:
    block: int
    guesses: list[LinkageGuess]
    rate: Fraction


@dataclass
class RunResult:
    scenario: Scenario
    world: "World"
    problems: list[str] = field(default_factory=list)

    @property
    def trace(self):
        return self.world.ledger.trace

    @property
    def payouts(self):
        return self.world.incentives.payouts

    @property
    def acknowledgments(self):
        return self.world.engine.acknowledgments

    @property
    def observations(self) -> list[Observation]:
        return self.world.observations

    def trace_text(self) -> str:
        head = f"{TRACE_HEADER} name={self.scenario.name} seed={self.scenario.seed}\n"
        return head + "".join(r.line() + "\n" for r in self.trace)

    def instances_of(self, donor_name: str) -> list[TfcpInstance]:
        return list(self.world.opened.get(donor_name, []))

    def latest_instance(self, donor_name: str) -> TfcpInstance | None:
        opened = self.instances_of(donor_name)
        return opened[-1] if opened else None

    def phase_of(self, donor_name: str) -> Phase | None:
        inst = self.latest_instance(donor_name)
        return inst.phase if inst else None

    def balance(self, actor: str) -> int:
        return self.world.ledger.balance_of(self.world.accounts[actor])


class World:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.key_rng = random.Random(scenario.seed)
        self.engine_rng = random.Random(f"engine:{scenario.seed}")
        self.analyzer_rng = random.Random(f"analyzer:{scenario.seed}")
        self.ledger = Ledger(PARSERS)
        self.incentives = Incentives(self.ledger, scenario.network, emit=self.ledger.emit)
        self.engine = Engine(self.ledger, self.incentives, scenario.network, self.engine_rng)
        self.engine.reveal_prompt = self._on_reveal_prompt
        self.actors = {a.name: a for a in scenario.actors}
        self.keys: dict[str, crypto.KeyPair] = {}
        self.accounts: dict[str, AccountId] = {}
        self.names: dict[AccountId, str] = {}
        self.opened: dict[str, list[TfcpInstance]] = {}
        self.observations: list[Observation] = []
        self.faucet_keys = None
        for member in scenario.actors:
            keys = crypto.keygen(self.key_rng.randbytes(32))
            self.keys[member.name] = keys
            account = self.ledger.create_account(keys, member.initial_balance)
            self.accounts[member.name] = account
            self.names[account] = member.name
        if scenario.actors:
            self.faucet_keys = crypto.keygen(FAUCET_SEED)
            self.faucet = self.ledger.create_account(self.faucet_keys, scenario.network.faucet_balance)

    # -- helpers --------------------------------------------------------------

    def donor_keys_for(self, actor: str) -> tuple[str, crypto.KeyPair]:
        """The donor whose keys ``actor`` signs with: itself, or the one it holds."""
        member = self.actors[actor]
        if member.role is Role.DONOR:
            return actor, self.keys[actor]
        held = member.params.get("holds")
        if held is None:
            raise ScenarioError(f"{actor} holds no donor keys")
        return held, self.keys[held]

    def civil_name(self, donor: str) -> str:
        return self.actors[donor].params.get("civil_name", donor)

    def resolve_instance(self, donor: str, args: dict) -> TfcpInstance:
        """Find the instance a public participant would target for ``donor``.

        Uses only public information: the latest Announcement naming the
        donor's civil identity, then the latest valid instance of its deposit.
        An explicit ``instance=N`` selects the donor's N-th opened instance.
        """
        if "instance" in args:
            opened = self.opened.get(donor, [])
            idx = int(args["instance"])
            if idx >= len(opened):
                raise ProtocolError(f"{donor} has no instance #{idx}")
            return opened[idx]
        name = self.civil_name(donor)
        deposits = [d.publisher for d in self.ledger.documents_by(kind=DocKind.ANNOUNCEMENT)
                    if Announcement.decode(d.payload).civil_identity.name == name]
        if not deposits:
            raise ProtocolError(f"no announcement for {name!r}")
        iid = self.engine.latest_valid_instance(security_deposit=deposits[-1])
        if iid is None:
            raise ProtocolError(f"no valid instance for {name!r}")
        return self.engine.get(iid)

    def _current(self, donor: str) -> TfcpInstance:
        opened = self.opened.get(donor)
        if not opened:
            raise ProtocolError(f"{donor} has no instance")
        return opened[-1]

    def emit(self, kind: str, actor: str, text: str = "") -> None:
        self.ledger.emit(kind, actor, text.encode())

    # -- registrar behaviour --------------------------------------------------

    def _on_reveal_prompt(self, inst: TfcpInstance, registrar: AccountId) -> None:
        name = self.names.get(registrar)
        if name is None:
            return
        member = self.actors[name]
        mode = member.params.get("reveal", "honest")
        if mode == "silent":
            return
        delay = int(member.params.get("reveal_delay", "0"))
        iid = inst.instance_id

        def reveal():
            target = self.engine.get(iid)
            share = target.shares_delivered[registrar]
            if mode == "corrupt":
                share = crypto.Share(share.index, bytes([share.value[0] ^ 1]) + share.value[1:])
            try:
                self.engine.submit_share_reveal(target, self.keys[name], share)
            except ProtocolError as exc:
                self.emit("REJECT", name, f"reveal: {exc}")

        if delay <= 0:
            reveal()
        else:
            self.ledger.schedule_at(self.ledger.height + delay, reveal)

    # -- actions --------------------------------------------------------------

    def execute(self, row: Action) -> None:
        member = self.actors[row.actor]
        death = member.death_block if member.role is Role.DONOR else None
        if death is not None and row.block >= death:
            self.emit("SKIP", row.actor, f"{row.action}: actor is dead")
            return
        handler = getattr(self, f"_do_{row.action}")
        try:
            handler(row.actor, row.args)
        except (ProtocolError, LedgerError, IncentiveError) as exc:
            log.debug("rejected %s %s: %s", row.actor, row.action, exc)
            self.emit("REJECT", row.actor, f"{row.action}: {exc}")

    def _do_stake(self, actor, args):
        amount = int(args.get("amount", self.actors[actor].params.get("bail", self.scenario.network.min_bail)))
        expiry = int(args.get("expiry", self.actors[actor].params.get("bail_expiry", self.ledger.height + 1000)))
        self.incentives.stake_bail(self.keys[actor], amount, expiry)

    def _do_release(self, actor, args):
        bail = self.incentives.bails.get(self.accounts[actor])
        if bail is None:
            raise IncentiveError("no bail to release")
        self.incentives.release_bail(bail)

    def _do_open(self, actor, args):
        keys = self.keys[actor]
        registrar_names = args.get("registrars")
        acceptable = None
        if registrar_names:
            acceptable = tuple(self.accounts[n] for n in registrar_names.split(","))
        deliberation = int(args.get("deliberation", 10))
        params = InstanceParams(
            threshold_t=int(args.get("t", 2)),
            threshold_amount=int(args.get("threshold", 100)),
            deliberation_time=deliberation,
            civil_identity=CivilIdentity(self.civil_name(actor),
                                         self.actors[actor].params.get("birth_date", ""),
                                         self.actors[actor].params.get("birth_place", "")),
            registrar_fee=int(args.get("registrar_fee", 0)),
            witness_fees=int(args.get("witness_fees", 0)),
            acceptable_registrars=acceptable,
            min_distinct_witnesses=int(args["x"]) if "x" in args else None,
            min_signaling_span=int(args["span"]) if "span" in args else None,
            heritage=args.get("heritage", "").encode(),
        )
        deposit_keys = crypto.keygen(self.key_rng.randbytes(32))
        deposit = self.ledger.create_account(deposit_keys, 0)
        self.names[deposit] = f"{actor}.deposit{len(self.opened.get(actor, []))}"
        fund = int(args.get("fund", params.registrar_fee + params.witness_fees))
        if fund:
            if args.get("funding", "faucet") == "donor":
                # careless funding links donor and deposit on the transfer graph
                self.ledger.submit_transfer(self.accounts[actor], deposit, fund, keys.secret_key)
            else:
                self.ledger.submit_transfer(self.faucet, deposit, fund, self.faucet_keys.secret_key)
        inst = self.engine.open_instance(keys, deposit_keys, params)
        self.opened.setdefault(actor, []).append(inst)

    def _do_accept(self, actor, args):
        inst = self.resolve_pre_wills(args["donor"], args)
        self.engine.registrar_accept(inst, self.keys[actor])

    def resolve_pre_wills(self, donor: str, args: dict) -> TfcpInstance:
        if "instance" in args:
            return self.resolve_instance(donor, args)
        return self._current(donor)

    def _do_distribute(self, actor, args):
        self.engine.distribute_shares(self._current(actor), self.keys[actor])

    def _do_finalize(self, actor, args):
        self.engine.finalize_setup(self._current(actor), self.keys[actor])

    def _do_ante(self, actor, args):
        inst = self.resolve_instance(args["donor"], args)
        self.engine.record_ante(inst, self.keys[actor], int(args["amount"]))

    def _do_move(self, actor, args):
        donor, keys = self.donor_keys_for(actor)
        self.emit("MOVE", actor, donor)
        deliberating = [i for i in self.opened.get(donor, []) if i.phase is Phase.DELIBERATING]
        if deliberating and "to" not in args:
            self.engine.donor_liveness_move(deliberating[-1], keys)
            return
        to = self.accounts[args.get("to", donor)]
        self.ledger.submit_transfer(self.accounts[donor], to, int(args.get("amount", 0)), keys.secret_key)

    def _do_sweep(self, actor, args):
        donor, _ = self.donor_keys_for(actor)
        inst = self._current(donor)
        amount = self.ledger.balance_of(inst.security_deposit)
        self.ledger.submit_transfer(inst.security_deposit, self.accounts[actor], amount,
                                    inst.deposit_keys.secret_key)
        self.emit("SWEEP", actor, str(amount))

    def _do_transfer(self, actor, args):
        self.ledger.submit_transfer(self.accounts[actor], self.accounts[args["to"]],
                                    int(args["amount"]), self.keys[actor].secret_key)

    def _do_observe(self, actor, args):
        view = PublicView.from_ledger(self.ledger)
        donors = [self.accounts[a.name] for a in self.scenario.actors if a.role is Role.DONOR]
        guesses = linkage_analyzer(view, donors, self.analyzer_rng)
        rate = correct_guess_rate(guesses, self.ground_truth())
        self.observations.append(Observation(self.ledger.height, guesses, rate))
        self.emit("LINKAGE", actor, f"{rate.numerator}/{rate.denominator}")

    def ground_truth(self) -> dict[AccountId, AccountId]:
        return {inst.security_deposit: self.accounts[donor]
                for donor, insts in self.opened.items() for inst in insts}

    # -- wind-down ------------------------------------------------------------

    def wind_down(self) -> None:
        """Let pending timers fire, then release every bail that can be released."""
        while self.ledger.pending_timers():
            self.ledger.advance_to(self.ledger.next_timer_height())
        releasable = [b for b in self.incentives.bails.values()
                      if b.status is BailStatus.STAKED
                      and not self.incentives.pending_obligations(b.registrar)]
        if not releasable:
            return
        self.ledger.advance_to(max(b.expiry for b in releasable))
        for bail in sorted(releasable, key=lambda b: b.registrar):
            self.incentives.release_bail(bail)


def check_world(world: World) -> list[str]:
    problems = []
    ledger = world.ledger
    if ledger.total_supply() != ledger.initial_supply:
        problems.append(f"coin conservation: supply {ledger.total_supply()} != {ledger.initial_supply}")
    problems += reconcile(world.incentives.payouts, ledger, world.engine.instances.values(),
                          world.incentives.bail_history)
    problems += world.engine.check_invariants()
    problems += recheck_acknowledgments(ledger.trace)
    return problems


def run(scenario: Scenario, wind_down: bool = True) -> RunResult:
    scenario.validate()
    world = World(scenario)
    rows = list(scenario.schedule)
    for member in scenario.actors:
        if member.role is Role.DONOR and member.death_block is not None:
            rows.append(Action(member.death_block, member.name, "die"))
    rows.sort(key=lambda r: (r.block, r.action != "die"))
    for block, group in itertools.groupby(rows, key=lambda r: r.block):
        world.ledger.advance_to(block)
        for row in group:
            if row.action == "die":
                world.emit("DEATH", row.actor, world.accounts[row.actor].hex())
            else:
                world.execute(row)
    if wind_down:
        world.wind_down()
    result = RunResult(scenario, world)
    result.problems = check_world(world)
    return result


def run_strict(scenario: Scenario) -> RunResult:
    result = run(scenario)
    if result.problems:
        raise InvariantViolation("; ".join(result.problems))
    return result
