"""Per-donor TFCP instance state machine.

Phases move along

    Recruiting -> SharesDistributed -> Active -> Deliberating -> Acknowledged | Aborted

and any phase may move to Superseded. Every transition is checked against
that graph and recorded; an illegal transition raises ``InvariantViolation``.

Share delivery is a private off-ledger channel: shares live on the instance
object, never on the ledger, until a registrar reveals after deliberation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import crypto
from .codec import Writer
from .documents import (
    CivilIdentity,
    PreWills,
    PublicWills,
    RegistrarAcceptance,
    build_announcement,
    build_pre_wills,
    registrar_may_apply,
    strip_to_wills,
    validate_announcement,
    validate_pre_wills,
    verify_public_wills,
    DONOR_CONTEXT,
)
from .incentives import BailStatus, IncentiveError, Incentives, NetworkParams, PayoutKind
from .ledger import AccountId, DocKind, Ledger, PublishedDocument, UnknownAccount


class Phase(str, Enum):
    RECRUITING = "Recruiting"
    SHARES_DISTRIBUTED = "SharesDistributed"
    ACTIVE = "Active"
    DELIBERATING = "Deliberating"
    ACKNOWLEDGED = "Acknowledged"
    ABORTED = "Aborted"
    SUPERSEDED = "Superseded"


TERMINAL = frozenset({Phase.ACKNOWLEDGED, Phase.ABORTED, Phase.SUPERSEDED})
SUPERSEDABLE = frozenset({Phase.RECRUITING, Phase.SHARES_DISTRIBUTED, Phase.ACTIVE})
ALLOWED_TRANSITIONS = frozenset(
    {
        (Phase.RECRUITING, Phase.SHARES_DISTRIBUTED),
        (Phase.SHARES_DISTRIBUTED, Phase.ACTIVE),
        (Phase.ACTIVE, Phase.DELIBERATING),
        (Phase.DELIBERATING, Phase.ACKNOWLEDGED),
        (Phase.DELIBERATING, Phase.ABORTED),
    }
    | {(p, Phase.SUPERSEDED) for p in Phase if p is not Phase.SUPERSEDED}
)


class ProtocolError(Exception):
    """An operation was refused by the protocol rules."""


class ShareMismatch(ProtocolError):
    pass


class InvalidWills(ProtocolError):
    """The revealed Wills failed verification; the instance is Aborted-Invalid."""


class InvariantViolation(Exception):
    pass


@dataclass(frozen=True)
class Ante:
    witness: AccountId
    amount: int
    block: int
    fee_eligible: bool = True


@dataclass
class InstanceParams:
    threshold_t: int
    threshold_amount: int
    deliberation_time: int
    civil_identity: CivilIdentity
    registrar_fee: int = 0
    witness_fees: int = 0
    acceptable_registrars: tuple[AccountId, ...] | None = None
    min_distinct_witnesses: int | None = None
    min_signaling_span: int | None = None
    heritage: bytes = b""


@dataclass(eq=False)
class TfcpInstance:
    instance_id: bytes
    donor: AccountId
    security_deposit: AccountId
    params: InstanceParams
    pre_wills: PreWills
    pre_wills_doc: PublishedDocument
    min_distinct_witnesses: int
    min_signaling_span: int
    seq: int
    deposit_keys: crypto.KeyPair = field(repr=False)
    phase: Phase = Phase.RECRUITING
    pre_wills_block: int = 0
    wills_block: int | None = None
    announcement_block: int | None = None
    accepted_registrars: list[AccountId] = field(default_factory=list)
    shares_delivered: dict[AccountId, crypto.Share] = field(default_factory=dict, repr=False)
    ante_record: list[Ante] = field(default_factory=list)
    deliberation_start: int | None = None
    deliberation_deadline: int | None = None
    reveal_open: bool = False
    reveal_deadline: int | None = None
    reveals: dict[AccountId, crypto.Share] = field(default_factory=dict, repr=False)
    liveness_move_block: int | None = None
    invalid: bool = False
    abort_reason: str = ""
    settlement_shortfall: int = 0

    @property
    def threshold_t(self) -> int:
        return self.params.threshold_t

    @property
    def registrar_fee(self) -> int:
        return self.params.registrar_fee

    @property
    def witness_fees(self) -> int:
        return self.params.witness_fees

    @property
    def short_id(self) -> str:
        return self.instance_id.hex()[:16]

    def eligible_ante_total(self) -> int:
        return sum(a.amount for a in self.ante_record if a.fee_eligible)

    def eligible_for_distribution(self) -> bool:
        return len(self.accepted_registrars) >= self.threshold_t

    def revealed_registrars(self) -> list[AccountId]:
        return [r for r in self.accepted_registrars if r in self.reveals]

    def is_settled(self) -> bool:
        return self.phase in TERMINAL


@dataclass(frozen=True)
class AcknowledgmentRecord:
    donor: AccountId
    instance_id: bytes
    block: int
    public_wills: PublicWills


def _account(keys: crypto.KeyPair) -> AccountId:
    return AccountId.from_public_key(keys.public_key)


class Engine:
    def __init__(self, ledger: Ledger, incentives: Incentives, params: NetworkParams | None = None,
                 rng: random.Random | None = None):
        self.ledger = ledger
        self.incentives = incentives
        self.params = params or incentives.params
        self.rng = rng or random.Random(0)
        self.instances: dict[bytes, TfcpInstance] = {}
        self.acknowledgments: list[AcknowledgmentRecord] = []
        self.transitions: list[tuple[bytes, Phase, Phase, int]] = []
        # called as reveal_prompt(instance, registrar) when a reveal round opens
        self.reveal_prompt: Callable[[TfcpInstance, AccountId], None] | None = None
        self._shared_keys: dict[bytes, bytes] = {}
        self._publisher_keys: dict[bytes, crypto.KeyPair] = {}
        ledger.add_tx_listener(self._observe)

    # -- helpers --------------------------------------------------------------

    def _emit(self, kind: str, inst: TfcpInstance, text: str = "") -> None:
        self.ledger.emit(kind, inst.short_id, text.encode())

    def _set_phase(self, inst: TfcpInstance, new: Phase) -> None:
        old = inst.phase
        if (old, new) not in ALLOWED_TRANSITIONS:
            raise InvariantViolation(f"illegal transition {old.value} -> {new.value}")
        inst.phase = new
        self.transitions.append((inst.instance_id, old, new, self.ledger.height))
        self._emit("PHASE", inst, f"{old.value} {new.value}")

    def _require_phase(self, inst: TfcpInstance, *phases: Phase) -> None:
        if inst.phase not in phases:
            names = "/".join(p.value for p in phases)
            raise ProtocolError(f"instance is {inst.phase.value}, expected {names}")

    def _require_donor(self, inst: TfcpInstance, donor_keys: crypto.KeyPair) -> None:
        if _account(donor_keys) != inst.donor:
            raise ProtocolError("keys do not belong to this instance's donor")

    def _clear_obligations(self, inst: TfcpInstance) -> None:
        for registrar in inst.shares_delivered:
            self.incentives.clear_obligation(registrar, inst.instance_id)

    def get(self, instance_id: bytes) -> TfcpInstance:
        return self.instances[instance_id]

    # -- setup (scheme steps 1-6) ---------------------------------------------

    def open_instance(self, donor_keys: crypto.KeyPair, security_deposit_keys: crypto.KeyPair,
                      params: InstanceParams) -> TfcpInstance:
        donor = _account(donor_keys)
        sd = _account(security_deposit_keys)
        self.ledger.public_key_of(donor)
        self.ledger.public_key_of(sd)
        if params.threshold_amount <= 0 or params.deliberation_time < 0:
            raise ProtocolError("threshold must be positive and deliberation time non-negative")
        shared_key = crypto.new_shared_key(self.rng)
        try:
            pre = build_pre_wills(donor_keys, security_deposit_keys, shared_key, params.threshold_t,
                                  params.acceptable_registrars, params.registrar_fee, params.heritage)
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc
        selection = ("any" if params.acceptable_registrars is None
                     else ",".join(r.hex() for r in params.acceptable_registrars))
        payload = pre.encode()
        self.ledger.emit("SELECT", sd.hex(), selection.encode())
        doc = self.ledger.publish_document(sd, DocKind.PRE_WILLS, payload,
                                           security_deposit_keys.secret_key)
        iid = crypto.digest(Writer().text("tfcp-instance").blob(sd.value).u64(doc.block)
                            .blob(payload).getvalue())
        x = params.min_distinct_witnesses or self.params.default_x
        span = params.min_signaling_span
        if span is None:
            span = self.params.default_span if self.params.default_span is not None else params.deliberation_time
        inst = TfcpInstance(
            instance_id=iid, donor=donor, security_deposit=sd, params=params, pre_wills=pre,
            pre_wills_doc=doc, min_distinct_witnesses=x, min_signaling_span=span,
            seq=len(self.instances), deposit_keys=security_deposit_keys, pre_wills_block=doc.block,
        )
        self._shared_keys[iid] = shared_key
        self._emit("OPEN", inst, sd.hex())
        self._emit("PHASE", inst, f"- {Phase.RECRUITING.value}")
        for other in list(self.instances.values()):
            if other.phase in SUPERSEDABLE and (other.security_deposit == sd or other.donor == donor):
                self._supersede(other, inst)
        self.instances[iid] = inst
        return inst

    def _supersede(self, old: TfcpInstance, new: TfcpInstance) -> None:
        self._set_phase(old, Phase.SUPERSEDED)
        self._emit("SUPERSEDE", old, new.instance_id.hex())
        self._clear_obligations(old)
        if old.ante_record:
            self.incentives.settle_on_failure(old)

    def registrar_accept(self, inst: TfcpInstance, registrar_keys: crypto.KeyPair) -> TfcpInstance:
        self._require_phase(inst, Phase.RECRUITING)
        registrar = _account(registrar_keys)
        if not self.incentives.has_active_bail(registrar):
            raise ProtocolError(f"registrar {registrar} has no active bail")
        if not registrar_may_apply(inst.pre_wills, registrar):
            raise ProtocolError(f"registrar {registrar} is not on the acceptable list")
        if registrar in inst.accepted_registrars:
            raise ProtocolError(f"registrar {registrar} already accepted")
        report = validate_pre_wills(inst.pre_wills_doc, self.ledger, self.params.min_registrar_fee)
        if not report.valid:
            raise ProtocolError(f"pre-Wills invalid: {', '.join(report.failures())}")
        acceptance = RegistrarAcceptance(inst.security_deposit, inst.pre_wills_block, registrar)
        self.ledger.publish_document(registrar, DocKind.REGISTRAR_ACCEPTANCE, acceptance.encode(),
                                     registrar_keys.secret_key)
        inst.accepted_registrars.append(registrar)
        return inst

    def distribute_shares(self, inst: TfcpInstance, donor_keys: crypto.KeyPair) -> TfcpInstance:
        self._require_phase(inst, Phase.RECRUITING)
        self._require_donor(inst, donor_keys)
        if not inst.eligible_for_distribution():
            raise ProtocolError(f"{len(inst.accepted_registrars)} acceptances, "
                                f"need {inst.threshold_t}")
        shares = crypto.split_secret(self._shared_keys[inst.instance_id], inst.threshold_t,
                                     len(inst.accepted_registrars), self.rng)
        for registrar, share in zip(inst.accepted_registrars, shares):
            inst.shares_delivered[registrar] = share
            self.incentives.add_obligation(registrar, inst.instance_id)
            # the trace notes who received a share, never the share itself
            self._emit("DELIVER", inst, f"{registrar.hex()} {share.index}")
        self._set_phase(inst, Phase.SHARES_DISTRIBUTED)
        return inst

    def finalize_setup(self, inst: TfcpInstance, donor_keys: crypto.KeyPair) -> TfcpInstance:
        self._require_phase(inst, Phase.SHARES_DISTRIBUTED)
        self._require_donor(inst, donor_keys)
        sd = inst.security_deposit
        needed = self.incentives.immediate_fee_total(inst) + 2 * self.ledger.publication_fee
        if self.ledger.balance_of(sd) < needed:
            raise ProtocolError(f"security deposit holds {self.ledger.balance_of(sd)}, "
                                f"setup needs {needed}")
        secret = inst.deposit_keys.secret_key
        wills_doc = self.ledger.publish_document(sd, DocKind.WILLS,
                                                 strip_to_wills(inst.pre_wills).encode(), secret)
        inst.wills_block = wills_doc.block
        p = inst.params
        ann = build_announcement(p.civil_identity, wills_doc.block, sd, p.witness_fees,
                                 p.deliberation_time, p.threshold_amount,
                                 inst.min_distinct_witnesses, inst.min_signaling_span)
        ann_doc = self.ledger.publish_document(sd, DocKind.ANNOUNCEMENT, ann.encode(), secret)
        inst.announcement_block = ann_doc.block
        report = validate_announcement(ann_doc, self.ledger)
        if not report.valid:
            raise InvariantViolation(f"engine published an invalid announcement: {report.failures()}")
        try:
            self.incentives.pay_immediate_registrar_fee(inst)
        except IncentiveError as exc:
            raise InvariantViolation(str(exc)) from exc
        self._set_phase(inst, Phase.ACTIVE)
        return inst

    # -- signalling and deliberation (steps 7-8) ------------------------------

    def record_ante(self, inst: TfcpInstance, witness_keys: crypto.KeyPair, amount: int) -> TfcpInstance:
        self._require_phase(inst, Phase.ACTIVE, Phase.DELIBERATING)
        if amount <= 0:
            raise ProtocolError("ante must be positive")
        witness = _account(witness_keys)
        sd = inst.security_deposit
        self.ledger.submit_transfer(witness, sd, amount, witness_keys.secret_key)
        eligible = inst.phase is Phase.ACTIVE
        inst.ante_record.append(Ante(witness, amount, self.ledger.height, eligible))
        self.incentives.record(PayoutKind.ANTE_ESCROW, witness, sd, amount,
                               inst.instance_id, subject=witness)
        self._emit("ANTE", inst, f"{witness.hex()} {amount} {int(eligible)}")
        if inst.phase is Phase.ACTIVE:
            self._evaluate_threshold(inst)
        return inst

    def _evaluate_threshold(self, inst: TfcpInstance) -> None:
        antes = [a for a in inst.ante_record if a.fee_eligible]
        total = sum(a.amount for a in antes)
        distinct = len({a.witness for a in antes})
        span = antes[-1].block - antes[0].block
        if (total >= inst.params.threshold_amount and distinct >= inst.min_distinct_witnesses
                and span >= inst.min_signaling_span):
            self._start_deliberation(inst)

    def _start_deliberation(self, inst: TfcpInstance) -> None:
        self._set_phase(inst, Phase.DELIBERATING)
        now = self.ledger.height
        inst.deliberation_start = now
        inst.deliberation_deadline = now + inst.params.deliberation_time
        self.ledger.freeze_account(inst.security_deposit)
        if inst.deliberation_deadline <= now:
            self.expire_deliberation(inst)
        else:
            iid = inst.instance_id
            self.ledger.schedule_at(inst.deliberation_deadline, lambda: self._on_deadline(iid))

    def _on_deadline(self, instance_id: bytes) -> None:
        inst = self.instances[instance_id]
        if inst.phase is Phase.DELIBERATING and not inst.reveal_open:
            self.expire_deliberation(inst)

    def _observe(self, signer: AccountId, block: int) -> None:
        for inst in list(self.instances.values()):
            if (inst.phase is Phase.DELIBERATING and inst.donor == signer
                    and not inst.reveal_open and block < inst.deliberation_deadline):
                self._abort_alive(inst, block)

    def donor_liveness_move(self, inst: TfcpInstance, donor_keys: crypto.KeyPair) -> TfcpInstance:
        """Submit a donor-signed transaction; inside the window it aborts the instance."""
        self._require_phase(inst, Phase.DELIBERATING)
        self._require_donor(inst, donor_keys)
        if self.ledger.height >= inst.deliberation_deadline or inst.reveal_open:
            raise ProtocolError("deliberation time has elapsed")
        self.ledger.submit_transfer(inst.donor, inst.donor, 0, donor_keys.secret_key)
        if inst.phase is not Phase.ABORTED:
            raise InvariantViolation("donor move inside the window did not abort")
        return inst

    def _abort_alive(self, inst: TfcpInstance, block: int) -> None:
        inst.liveness_move_block = block
        inst.abort_reason = "donor-alive"
        self._set_phase(inst, Phase.ABORTED)
        self._emit("ABORT", inst, "donor-alive")
        self.ledger.unfreeze_account(inst.security_deposit)
        self._clear_obligations(inst)
        self.incentives.settle_on_abort(inst)

    def expire_deliberation(self, inst: TfcpInstance) -> TfcpInstance:
        self._require_phase(inst, Phase.DELIBERATING)
        if inst.reveal_open or self.ledger.height < inst.deliberation_deadline:
            raise ProtocolError("deliberation has not expired")
        inst.reveal_open = True
        # reveal window as long as the deliberation, and at least one block
        inst.reveal_deadline = self.ledger.height + max(inst.params.deliberation_time, 1)
        self._emit("EXPIRE", inst, str(inst.reveal_deadline))
        iid = inst.instance_id
        self.ledger.schedule_at(inst.reveal_deadline, lambda: self._close_reveal(self.instances[iid]))
        for registrar in list(inst.shares_delivered):
            if not inst.reveal_open:
                break
            if self.reveal_prompt is not None:
                self.reveal_prompt(inst, registrar)
        return inst

    # -- reveal and acknowledgment (step 8a) ----------------------------------

    def submit_share_reveal(self, inst: TfcpInstance, registrar_keys: crypto.KeyPair,
                            share: crypto.Share) -> TfcpInstance:
        if not inst.reveal_open:
            raise ProtocolError("no reveal round is open")
        registrar = _account(registrar_keys)
        delivered = inst.shares_delivered.get(registrar)
        if delivered is None:
            raise ProtocolError(f"registrar {registrar} holds no share for this instance")
        if registrar in inst.reveals:
            raise ProtocolError(f"registrar {registrar} already revealed")
        if share != delivered:
            self.incentives.record_violation(registrar, inst.instance_id, "invalid share")
            raise ShareMismatch(f"share from {registrar} does not match the delivered share")
        inst.reveals[registrar] = share
        self._publisher_keys.setdefault(inst.instance_id, registrar_keys)
        self._emit("REVEAL", inst, f"{registrar.hex()} {share.index} {share.value.hex()}")
        if len(inst.reveals) == len(inst.shares_delivered):
            self._close_reveal(inst)
        return inst

    def _close_reveal(self, inst: TfcpInstance) -> None:
        if not inst.reveal_open or inst.phase is not Phase.DELIBERATING:
            return
        silent = [r for r in inst.shares_delivered if r not in inst.reveals]
        for registrar in silent:
            self.incentives.record_violation(registrar, inst.instance_id, "no reveal")
        if len(inst.reveals) >= inst.threshold_t:
            try:
                self.enact_acknowledgment(inst)
            except InvalidWills:
                pass
        else:
            inst.reveal_open = False
            inst.abort_reason = "insufficient-reveals"
            self._set_phase(inst, Phase.ABORTED)
            self._emit("ABORT", inst, "insufficient-reveals")
            self.ledger.unfreeze_account(inst.security_deposit)
            self.incentives.settle_on_failure(inst)
        self._clear_obligations(inst)
        self._slash(inst, silent)

    def _slash(self, inst: TfcpInstance, offenders: list[AccountId]) -> None:
        recipients = list(inst.revealed_registrars())
        recipients += sorted({a.witness for a in inst.ante_record if a.fee_eligible})
        if not recipients:
            recipients = [inst.security_deposit]
        for registrar in offenders:
            bail = self.incentives.bails.get(registrar)
            if bail is not None and bail.status is BailStatus.STAKED:
                self.incentives.slash_bail(bail, "no reveal", recipients, inst.instance_id)

    def enact_acknowledgment(self, inst: TfcpInstance) -> AcknowledgmentRecord:
        if not inst.reveal_open or len(inst.reveals) < inst.threshold_t:
            raise ProtocolError("not enough revealed shares")
        shares = [inst.reveals[r] for r in inst.revealed_registrars()]
        key = crypto.reconstruct_secret(shares, inst.threshold_t)
        inst.reveal_open = False
        wills = strip_to_wills(inst.pre_wills)
        pw = None
        try:
            donor = AccountId(crypto.decrypt(key, wills.encrypted_donor_address, DONOR_CONTEXT))
            donor_pk = self.ledger.public_key_of(donor)
            pw = PublicWills(donor, inst.wills_block, tuple(inst.revealed_registrars()), key, donor_pk)
        except (crypto.AuthenticationError, UnknownAccount, ValueError):
            pass
        if pw is None or not verify_public_wills(pw, wills, pw.donor_public_key):
            inst.invalid = True
            inst.abort_reason = "invalid-wills"
            self._set_phase(inst, Phase.ABORTED)
            self._emit("ABORT", inst, "invalid-wills")
            self.ledger.unfreeze_account(inst.security_deposit)
            self.incentives.settle_on_failure(inst)
            raise InvalidWills("revealed Wills failed donor-signature verification")
        if any(a.donor == pw.donor for a in self.acknowledgments):
            raise InvariantViolation(f"donor {pw.donor} would be acknowledged twice")
        publisher = self._publisher_keys[inst.instance_id]
        self.ledger.publish_document(_account(publisher), DocKind.PUBLIC_WILLS, pw.encode(),
                                     publisher.secret_key)
        self._set_phase(inst, Phase.ACKNOWLEDGED)
        record = AcknowledgmentRecord(pw.donor, inst.instance_id, self.ledger.height, pw)
        self.acknowledgments.append(record)
        self._emit("ACK", inst, pw.donor.hex())
        self.incentives.settle_on_acknowledgment(inst)
        return record

    # -- queries --------------------------------------------------------------

    def latest_valid_instance(self, security_deposit: AccountId | None = None,
                              donor: AccountId | None = None) -> bytes | None:
        if security_deposit is None and donor is None:
            raise ValueError("give a security deposit or a donor")
        matches = [
            i for i in self.instances.values()
            if i.phase is not Phase.SUPERSEDED
            and (security_deposit is None or i.security_deposit == security_deposit)
            and (donor is None or i.donor == donor)
        ]
        if not matches:
            return None
        best = max(matches, key=lambda i: (i.wills_block if i.wills_block is not None else -1,
                                           i.pre_wills_block, i.seq))
        return best.instance_id

    def check_invariants(self) -> list[str]:
        problems = []
        for inst in self.instances.values():
            tag = inst.short_id
            if inst.phase in (Phase.DELIBERATING, Phase.ACKNOWLEDGED, Phase.ABORTED):
                if inst.eligible_ante_total() < inst.params.threshold_amount:
                    problems.append(f"{tag}: {inst.phase.value} below threshold")
                if inst.deliberation_deadline is None:
                    problems.append(f"{tag}: {inst.phase.value} without a deadline")
            elif inst.deliberation_deadline is not None:
                problems.append(f"{tag}: deadline set in phase {inst.phase.value}")
        for iid, old, new, _ in self.transitions:
            if (old, new) not in ALLOWED_TRANSITIONS:
                problems.append(f"{iid.hex()[:16]}: illegal transition {old.value}->{new.value}")
        donors = [a.donor for a in self.acknowledgments]
        if len(donors) != len(set(donors)):
            problems.append("a donor was acknowledged more than once")
        return problems
