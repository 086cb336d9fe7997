"""Coin-motion policy: registrar bails, witness antes, fees and settlement.

Every payout entry mirrors exactly one ledger transfer. Integer coin units;
whenever an amount does not divide evenly, leftover units go one each to the
recipients with the lowest account ids.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable

from . import crypto
from .documents import BailCommitmentDoc
from .ledger import AccountId, DocKind, Ledger

VAULT_KEYS = crypto.keygen(crypto.digest(b"tfcp-bail-vault"))
VAULT = AccountId.from_public_key(VAULT_KEYS.public_key)


class IncentiveError(Exception):
    pass


class PayoutKind(str, Enum):
    ANTE_ESCROW = "AnteEscrow"
    ANTE_REFUND = "AnteRefund"
    ANTE_FORFEIT = "AnteForfeit"
    WITNESS_FEE = "WitnessFee"
    REGISTRAR_FEE_IMMEDIATE = "RegistrarFeeImmediate"
    REGISTRAR_FEE_FINAL = "RegistrarFeeFinal"
    BAIL_STAKE = "BailStake"
    BAIL_RELEASE = "BailRelease"
    BAIL_SLASH = "BailSlash"


@dataclass(frozen=True)
class PayoutEntry:
    block: int
    kind: PayoutKind
    sender: AccountId
    recipient: AccountId
    amount: int
    instance_id: bytes = b""
    # whose stake or ante the entry concerns, when that differs from the endpoints
    subject: AccountId | None = None

    def line(self) -> str:
        return f"{self.block}|{self.kind.value}|{self.sender.hex()}|{self.recipient.hex()}|{self.amount}"


class PayoutLedger:
    def __init__(self):
        self.entries: list[PayoutEntry] = []

    def append(self, entry: PayoutEntry) -> PayoutEntry:
        self.entries.append(entry)
        return entry

    def for_instance(self, instance_id: bytes) -> list[PayoutEntry]:
        return [e for e in self.entries if e.instance_id == instance_id]

    def total(self, kind: PayoutKind, instance_id: bytes | None = None,
              subject: AccountId | None = None) -> int:
        return sum(e.amount for e in self.entries
                   if e.kind is kind
                   and (instance_id is None or e.instance_id == instance_id)
                   and (subject is None or e.subject == subject))

    def export(self) -> str:
        return "".join(e.line() + "\n" for e in self.entries)


class BailStatus(str, Enum):
    STAKED = "Staked"
    RELEASED = "Released"
    SLASHED = "Slashed"


@dataclass
class BailCommitment:
    registrar: AccountId
    amount: int
    expiry: int
    status: BailStatus = BailStatus.STAKED
    block: int = 0


@dataclass(frozen=True)
class NetworkParams:
    min_bail: int = 100
    immediate_fee_fraction: Fraction = Fraction(1, 4)
    default_x: int = 2
    # None means "same as the instance's deliberation time"
    default_span: int | None = None
    min_registrar_fee: int = 0
    faucet_balance: int = 1_000_000


def split_evenly(total: int, recipients: Iterable[AccountId]) -> list[tuple[AccountId, int]]:
    recipients = sorted(set(recipients))
    if not recipients:
        return []
    base, extra = divmod(total, len(recipients))
    return [(r, base + (1 if i < extra else 0)) for i, r in enumerate(recipients)]


def split_pro_rata(total: int, weights: dict[AccountId, int]) -> list[tuple[AccountId, int]]:
    order = sorted(a for a, w in weights.items() if w > 0)
    weight_sum = sum(weights[a] for a in order)
    if not order or weight_sum == 0:
        return []
    shares = {a: total * weights[a] // weight_sum for a in order}
    leftover = total - sum(shares.values())
    for a in order[:leftover]:
        shares[a] += 1
    return [(a, shares[a]) for a in order]


class Incentives:
    def __init__(self, ledger: Ledger, params: NetworkParams | None = None, emit=None):
        self.ledger = ledger
        self.params = params or NetworkParams()
        self.payouts = PayoutLedger()
        self.bails: dict[AccountId, BailCommitment] = {}
        self.bail_history: list[BailCommitment] = []
        self._obligations: dict[AccountId, set[bytes]] = defaultdict(set)
        self._violations: dict[AccountId, list[tuple[bytes, str]]] = defaultdict(list)
        self._emit = emit

    # -- plumbing -------------------------------------------------------------

    def _pay(self, kind: PayoutKind, sender: AccountId, sender_secret: bytes,
             recipient: AccountId, amount: int, instance_id: bytes = b"",
             subject: AccountId | None = None, protocol: bool = True) -> PayoutEntry | None:
        if amount <= 0:
            return None
        self.ledger.submit_transfer(sender, recipient, amount, sender_secret, protocol=protocol)
        return self.record(kind, sender, recipient, amount, instance_id, subject)

    def record(self, kind: PayoutKind, sender: AccountId, recipient: AccountId, amount: int,
               instance_id: bytes = b"", subject: AccountId | None = None) -> PayoutEntry:
        """Book an entry for a transfer that has just executed on the ledger."""
        entry = self.payouts.append(PayoutEntry(self.ledger.height, kind, sender, recipient,
                                                amount, instance_id, subject))
        if self._emit is not None:
            actor = instance_id.hex()[:16] if instance_id else "-"
            text = f"{kind.value} {sender.hex()} {recipient.hex()} {amount}"
            if subject is not None:
                text += f" {subject.hex()}"
            self._emit("PAYOUT", actor, text.encode())
        return entry

    def _ensure_vault(self) -> None:
        if not self.ledger.has_account(VAULT):
            self.ledger.create_account(VAULT_KEYS, 0)

    # -- bails ----------------------------------------------------------------

    def stake_bail(self, registrar_keys: crypto.KeyPair, amount: int, expiry: int) -> BailCommitment:
        registrar = AccountId.from_public_key(registrar_keys.public_key)
        if amount < self.params.min_bail:
            raise IncentiveError(f"bail {amount} below network minimum {self.params.min_bail}")
        if expiry <= self.ledger.height:
            raise IncentiveError("bail expiry must be in the future")
        current = self.bails.get(registrar)
        if current is not None and current.status is BailStatus.STAKED:
            raise IncentiveError(f"registrar {registrar} already has a staked bail")
        if self.ledger.balance_of(registrar) < amount:
            raise IncentiveError("insufficient balance for bail")
        self._ensure_vault()
        self._pay(PayoutKind.BAIL_STAKE, registrar, registrar_keys.secret_key, VAULT, amount,
                  subject=registrar, protocol=False)
        self.ledger.publish_document(registrar, DocKind.BAIL_COMMITMENT,
                                     BailCommitmentDoc(registrar, amount, expiry).encode(),
                                     registrar_keys.secret_key)
        bail = BailCommitment(registrar, amount, expiry, BailStatus.STAKED, self.ledger.height)
        self.bails[registrar] = bail
        self.bail_history.append(bail)
        return bail

    def has_active_bail(self, registrar: AccountId) -> bool:
        bail = self.bails.get(registrar)
        return (bail is not None and bail.status is BailStatus.STAKED
                and bail.expiry > self.ledger.height)

    def add_obligation(self, registrar: AccountId, instance_id: bytes) -> None:
        self._obligations[registrar].add(instance_id)

    def clear_obligation(self, registrar: AccountId, instance_id: bytes) -> None:
        self._obligations[registrar].discard(instance_id)

    def pending_obligations(self, registrar: AccountId) -> set[bytes]:
        return set(self._obligations.get(registrar, ()))

    def release_bail(self, commitment: BailCommitment) -> BailCommitment:
        if commitment.status is not BailStatus.STAKED:
            raise IncentiveError(f"bail is {commitment.status.value}, not Staked")
        if self.ledger.height < commitment.expiry:
            raise IncentiveError(f"bail is due until block {commitment.expiry}")
        if self._obligations.get(commitment.registrar):
            raise IncentiveError("registrar still has pending reveal obligations")
        self._pay(PayoutKind.BAIL_RELEASE, VAULT, VAULT_KEYS.secret_key, commitment.registrar,
                  commitment.amount, subject=commitment.registrar)
        commitment.status = BailStatus.RELEASED
        return commitment

    def record_violation(self, registrar: AccountId, instance_id: bytes, reason: str) -> None:
        self._violations[registrar].append((instance_id, reason))

    def violations(self, registrar: AccountId) -> list[tuple[bytes, str]]:
        return list(self._violations.get(registrar, ()))

    def slash_bail(self, commitment: BailCommitment, reason: str,
                   recipients: Iterable[AccountId] = (), instance_id: bytes = b"") -> BailCommitment:
        """Confiscate a bail and redistribute it evenly over ``recipients``."""
        if commitment.status is BailStatus.SLASHED:
            raise IncentiveError("bail already slashed")
        if commitment.status is not BailStatus.STAKED:
            raise IncentiveError(f"bail is {commitment.status.value}")
        if not self._violations.get(commitment.registrar):
            raise IncentiveError(f"no recorded violation for {commitment.registrar}")
        recipients = list(recipients)
        if not recipients:
            raise IncentiveError("slashed bail needs at least one recipient")
        for recipient, amount in split_evenly(commitment.amount, recipients):
            self._pay(PayoutKind.BAIL_SLASH, VAULT, VAULT_KEYS.secret_key, recipient, amount,
                      instance_id, subject=commitment.registrar)
        commitment.status = BailStatus.SLASHED
        return commitment

    # -- fees and antes -------------------------------------------------------

    def immediate_fee_total(self, instance) -> int:
        f = Fraction(self.params.immediate_fee_fraction)
        return int(f * instance.registrar_fee)

    def pay_immediate_registrar_fee(self, instance) -> list[PayoutEntry]:
        total = self.immediate_fee_total(instance)
        sd = instance.security_deposit
        if total > self.ledger.balance_of(sd):
            raise IncentiveError("security deposit cannot cover the immediate registrar fee")
        entries = []
        for registrar, amount in split_evenly(total, instance.accepted_registrars):
            entry = self._pay(PayoutKind.REGISTRAR_FEE_IMMEDIATE, sd, instance.deposit_keys.secret_key,
                              registrar, amount, instance.instance_id)
            if entry:
                entries.append(entry)
        return entries

    def _refund_antes(self, instance, entries: list) -> None:
        for ante in instance.ante_record:
            entry = self._pay(PayoutKind.ANTE_REFUND, instance.security_deposit,
                              instance.deposit_keys.secret_key, ante.witness, ante.amount,
                              instance.instance_id, subject=ante.witness)
            if entry:
                entries.append(entry)

    def settle_on_acknowledgment(self, instance) -> list[PayoutEntry]:
        if instance.phase.value != "Acknowledged":
            raise IncentiveError(f"cannot settle acknowledgment in phase {instance.phase.value}")
        sd = instance.security_deposit
        secret = instance.deposit_keys.secret_key
        iid = instance.instance_id
        entries: list[PayoutEntry] = []
        self._refund_antes(instance, entries)

        already = self.payouts.total(PayoutKind.REGISTRAR_FEE_IMMEDIATE, iid)
        remaining = max(instance.registrar_fee - already, 0)
        weights: Counter = Counter()
        for ante in instance.ante_record:
            if ante.fee_eligible:
                weights[ante.witness] += ante.amount
        plan = ([(PayoutKind.REGISTRAR_FEE_FINAL, r, a)
                 for r, a in split_evenly(remaining, instance.revealed_registrars())]
                + [(PayoutKind.WITNESS_FEE, w, a)
                   for w, a in split_pro_rata(instance.witness_fees, dict(weights))])
        for kind, recipient, amount in plan:
            # fees are paid only out of what the deposit actually holds
            paid = min(amount, self.ledger.balance_of(sd))
            instance.settlement_shortfall += amount - paid
            entry = self._pay(kind, sd, secret, recipient, paid, iid)
            if entry:
                entries.append(entry)
        return entries

    def settle_on_abort(self, instance) -> list[PayoutEntry]:
        """Donor proved alive: every ante is forfeited to the security deposit.

        The coins already sit on the deposit, so forfeiture is booked against a
        zero-net deposit-to-deposit protocol transfer of the same amount.
        """
        if instance.phase.value != "Aborted":
            raise IncentiveError(f"cannot settle abort in phase {instance.phase.value}")
        assert instance.ante_record, "an aborted deliberation always has antes"
        sd = instance.security_deposit
        entries = []
        for ante in instance.ante_record:
            entry = self._pay(PayoutKind.ANTE_FORFEIT, sd, instance.deposit_keys.secret_key, sd,
                              ante.amount, instance.instance_id, subject=ante.witness)
            if entry:
                entries.append(entry)
        return entries

    def settle_on_failure(self, instance) -> list[PayoutEntry]:
        """Refund antes without fees when an instance ends for reasons other than
        a donor move (too few reveals, invalid Wills, supersession)."""
        entries: list[PayoutEntry] = []
        self._refund_antes(instance, entries)
        return entries


def reconcile(payouts: PayoutLedger, ledger: Ledger, instances: Iterable = (),
              bails: Iterable[BailCommitment] = ()) -> list[str]:
    """Check the payout identities; returns a list of human-readable violations."""
    problems = []
    available = Counter((t.sender, t.recipient, t.amount, t.block) for t in ledger.transfers)
    for e in payouts.entries:
        key = (e.sender, e.recipient, e.amount, e.block)
        if available[key] <= 0:
            problems.append(f"payout without matching transfer: {e.line()}")
        else:
            available[key] -= 1

    for inst in instances:
        iid = inst.instance_id
        escrow = payouts.total(PayoutKind.ANTE_ESCROW, iid)
        settled = payouts.total(PayoutKind.ANTE_REFUND, iid) + payouts.total(PayoutKind.ANTE_FORFEIT, iid)
        held = 0 if inst.is_settled() else sum(a.amount for a in inst.ante_record)
        if escrow != settled + held:
            problems.append(f"instance {iid.hex()[:12]}: ante escrow {escrow} != "
                            f"refund+forfeit {settled} + held {held}")
        fees = (payouts.total(PayoutKind.REGISTRAR_FEE_IMMEDIATE, iid)
                + payouts.total(PayoutKind.REGISTRAR_FEE_FINAL, iid))
        if fees > inst.registrar_fee:
            problems.append(f"instance {iid.hex()[:12]}: registrar fees {fees} exceed {inst.registrar_fee}")

    outstanding: Counter = Counter()
    for bail in bails:
        if bail.status is BailStatus.STAKED:
            outstanding[bail.registrar] += bail.amount
    registrars = {e.subject for e in payouts.entries if e.kind is PayoutKind.BAIL_STAKE}
    for r in sorted(registrars):
        stake = payouts.total(PayoutKind.BAIL_STAKE, subject=r)
        back = payouts.total(PayoutKind.BAIL_RELEASE, subject=r) + payouts.total(PayoutKind.BAIL_SLASH, subject=r)
        if stake != back + outstanding[r]:
            problems.append(f"registrar {r}: bail stake {stake} != release+slash {back} "
                            f"+ outstanding {outstanding[r]}")
    return problems
