"""Independent checks that work from the trace alone.

Nothing here touches the engine: an auditor holding only the trace lines
can re-derive every acknowledgment's justification and the coin balance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .codec import Reader
from .documents import DONOR_CONTEXT, Announcement, Wills
from .ledger import AccountId, DocKind, Ledger, TraceRecord

# trace kinds evidencing each scheme step of the happy path, in order
SCHEME_STEPS = (
    ("select-registrars", "SELECT"),
    ("publish-pre-wills", DocKind.PRE_WILLS.value),
    ("registrar-acceptance", DocKind.REGISTRAR_ACCEPTANCE.value),
    ("share-delivery", "DELIVER"),
    ("publish-wills", DocKind.WILLS.value),
    ("publish-announcement", DocKind.ANNOUNCEMENT.value),
    ("witness-antes", "ANTE"),
    ("acknowledgment", "ACK"),
)

CONJUNCTS = ("threshold", "distinct-witnesses", "no-donor-move", "shares", "donor-signature")


@dataclass
class _Instance:
    security_deposit: str
    wills: Wills | None = None
    announcement: Announcement | None = None
    antes: list[tuple[str, int]] = field(default_factory=list)
    deliberation: tuple[int, int] | None = None  # (trace index, block)
    reveals: list[crypto.Share] = field(default_factory=list)


@dataclass
class AckCheck:
    instance: str
    donor: str
    block: int
    results: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.results.values())


def scheme_step_positions(records: list[TraceRecord]) -> list[tuple[str, int | None]]:
    """First trace index of each scheme step's evidence (None when absent)."""
    out = []
    for step, kind in SCHEME_STEPS:
        pos = next((i for i, r in enumerate(records) if r.kind == kind), None)
        out.append((step, pos))
    return out


def scheme_steps_in_order(records: list[TraceRecord]) -> bool:
    positions = [p for _, p in scheme_step_positions(records)]
    return None not in positions and positions == sorted(positions)


def acknowledgment_checks(records: list[TraceRecord]) -> list[AckCheck]:
    """Re-derive the five conditions behind every ACK event in ``records``."""
    keys: dict[str, bytes] = {}
    instances: dict[str, _Instance] = {}
    current: dict[str, str] = {}
    signed: list[tuple[int, int, str]] = []
    checks = []
    for idx, rec in enumerate(records):
        kind, actor = rec.kind, rec.actor
        if kind == "ACCOUNT":
            keys[actor] = _account_key(rec.payload)
        elif kind == "OPEN":
            sd = rec.payload.decode()
            instances[actor] = _Instance(sd)
            current[sd] = actor
        elif kind == DocKind.WILLS.value and actor in current:
            instances[current[actor]].wills = Wills.decode(rec.payload)
        elif kind == DocKind.ANNOUNCEMENT.value and actor in current:
            instances[current[actor]].announcement = Announcement.decode(rec.payload)
        elif kind == "ANTE" and actor in instances:
            witness, amount, eligible = rec.payload.decode().split()
            if eligible == "1":
                instances[actor].antes.append((witness, int(amount)))
        elif kind == "PHASE" and rec.payload == b"Active Deliberating" and actor in instances:
            instances[actor].deliberation = (idx, rec.block)
        elif kind == "REVEAL" and actor in instances:
            _, index, value = rec.payload.decode().split()
            instances[actor].reveals.append(crypto.Share(int(index), bytes.fromhex(value)))
        elif kind == "ACK" and actor in instances:
            donor = rec.payload.decode()
            checks.append(_check_ack(actor, donor, rec.block, instances[actor], keys, signed))
        if rec.sig and (kind == "TRANSFER" or kind in {k.value for k in DocKind}):
            signed.append((idx, rec.block, actor))
    return checks


def _account_key(payload: bytes) -> bytes:
    return Reader(payload).blob()


def _check_ack(iid, donor, block, inst: _Instance, keys, signed) -> AckCheck:
    results = dict.fromkeys(CONJUNCTS, False)
    ann, wills = inst.announcement, inst.wills
    if ann is not None:
        results["threshold"] = sum(a for _, a in inst.antes) >= ann.threshold_amount
        results["distinct-witnesses"] = len({w for w, _ in inst.antes}) >= ann.min_distinct_witnesses
        if inst.deliberation is not None:
            start_idx, start_block = inst.deliberation
            deadline = start_block + ann.deliberation_time
            moved = any(i > start_idx and b < deadline and a == donor for i, b, a in signed)
            results["no-donor-move"] = block >= deadline and not moved
    if wills is not None and len(inst.reveals) >= wills.threshold_t:
        try:
            key = crypto.reconstruct_secret(inst.reveals, wills.threshold_t)
            plain = crypto.decrypt(key, wills.encrypted_donor_address, DONOR_CONTEXT)
            results["shares"] = plain.hex() == donor
        except (crypto.CryptoError, ValueError):
            pass
    pk = keys.get(donor)
    if wills is not None and pk is not None:
        results["donor-signature"] = (AccountId.from_public_key(pk).hex() == donor
                                      and crypto.verify(pk, wills.digest(), wills.donor_signature))
    return AckCheck(iid, donor, block, results)


def recheck_acknowledgments(records: list[TraceRecord]) -> list[str]:
    problems = []
    for c in acknowledgment_checks(records):
        for name, ok in c.results.items():
            if not ok:
                problems.append(f"acknowledgment {c.instance} of {c.donor[:12]}: {name} not justified")
    return problems


def conservation_problems(records: list[TraceRecord]) -> list[str]:
    """Replay the ledger records and compare supply before and after."""
    ledger = Ledger.replay(records)
    if ledger.total_supply() != ledger.initial_supply:
        return [f"coin conservation: supply {ledger.total_supply()} != initial {ledger.initial_supply}"]
    return []
