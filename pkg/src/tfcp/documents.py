"""Protocol documents: canonical encoding, construction and validation.

The Wills encoding is a strict prefix of the pre-Wills encoding: the
acceptable-registrar list is the trailing region of a pre-Wills and is the
only thing stripping removes. The donor signs the digest of the Wills body
(everything before the signature field) before anything is published.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from enum import Enum

from . import crypto
from .codec import DecodeError, Reader, Writer
from .ledger import AccountId, DocKind, Ledger, PublishedDocument, UnknownAccount

DONOR_CONTEXT = b"TFCP-donor"
HERITAGE_CONTEXT = b"TFCP-heritage"


class MalformedDocument(ValueError):
    pass


class Check(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    UNCHECKABLE = "uncheckable"


@dataclass
class ValidationReport:
    checks: dict
    flags: list

    @property
    def valid(self) -> bool:
        return all(c is not Check.FAIL for c in self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, c in self.checks.items() if c is Check.FAIL]


def _check(ok: bool) -> Check:
    return Check.PASS if ok else Check.FAIL


def _ids(r: Reader) -> tuple[AccountId, ...]:
    return tuple(AccountId(b) for b in r.blobs())


# -- Wills / pre-Wills --------------------------------------------------------

@dataclass(frozen=True)
class Wills:
    encrypted_donor_address: bytes
    security_deposit: AccountId
    threshold_t: int
    registrar_fee: int
    encrypted_heritage: bytes
    donor_signature: bytes = b""

    def _body(self) -> Writer:
        return (Writer().blob(self.encrypted_donor_address).blob(self.security_deposit.value)
                .u64(self.threshold_t).u64(self.registrar_fee).blob(self.encrypted_heritage))

    def signing_bytes(self) -> bytes:
        return self._body().getvalue()

    def digest(self) -> bytes:
        return crypto.digest(b"TFCP-wills" + self.signing_bytes())

    def encode(self) -> bytes:
        return self._body().blob(self.donor_signature).getvalue()

    @classmethod
    def _read(cls, r: Reader) -> "Wills":
        return cls(r.blob(), AccountId(r.blob()), r.u64(), r.u64(), r.blob(), r.blob())

    @classmethod
    def decode(cls, data: bytes) -> "Wills":
        r = Reader(data)
        wills = cls._read(r)
        r.done()
        return wills


@dataclass(frozen=True)
class PreWills:
    encrypted_donor_address: bytes
    security_deposit: AccountId
    threshold_t: int
    registrar_fee: int
    encrypted_heritage: bytes
    donor_signature: bytes
    acceptable_registrars: tuple[AccountId, ...] | None = None

    def registrar_region(self) -> bytes:
        w = Writer(version=None)
        if self.acceptable_registrars is None:
            return w.u8(0).getvalue()
        return w.u8(1).blobs(a.value for a in self.acceptable_registrars).getvalue()

    def encode(self) -> bytes:
        return strip_to_wills(self).encode() + self.registrar_region()

    @classmethod
    def decode(cls, data: bytes) -> "PreWills":
        r = Reader(data)
        w = Wills._read(r)
        registrars = _ids(r) if r.u8() else None
        r.done()
        return cls(w.encrypted_donor_address, w.security_deposit, w.threshold_t,
                   w.registrar_fee, w.encrypted_heritage, w.donor_signature, registrars)


def strip_to_wills(pre: PreWills) -> Wills:
    return Wills(pre.encrypted_donor_address, pre.security_deposit, pre.threshold_t,
                 pre.registrar_fee, pre.encrypted_heritage, pre.donor_signature)


def build_pre_wills(donor_keys: crypto.KeyPair, security_deposit_keys: crypto.KeyPair,
                    shared_key: bytes, threshold_t: int, acceptable_registrars=None,
                    registrar_fee: int = 0, heritage: bytes = b"") -> PreWills:
    if threshold_t < 1:
        raise ValueError("threshold_t must be at least 1")
    if acceptable_registrars is not None:
        acceptable_registrars = tuple(acceptable_registrars)
        if not acceptable_registrars:
            raise ValueError("an explicit registrar list must not be empty")
    donor = AccountId.from_public_key(donor_keys.public_key)
    unsigned = Wills(
        encrypted_donor_address=crypto.encrypt(shared_key, donor.value, DONOR_CONTEXT),
        security_deposit=AccountId.from_public_key(security_deposit_keys.public_key),
        threshold_t=threshold_t,
        registrar_fee=registrar_fee,
        encrypted_heritage=crypto.encrypt(shared_key, heritage, HERITAGE_CONTEXT),
    )
    signature = crypto.sign(donor_keys.secret_key, unsigned.digest())
    return PreWills(unsigned.encrypted_donor_address, unsigned.security_deposit, threshold_t,
                    registrar_fee, unsigned.encrypted_heritage, signature, acceptable_registrars)


def _document_signature_ok(doc: PublishedDocument, ledger: Ledger) -> bool:
    try:
        pk = ledger.public_key_of(doc.publisher)
    except UnknownAccount:
        return False
    return crypto.verify(pk, doc.signing_message(), doc.signature)


def validate_pre_wills(doc: PublishedDocument, ledger: Ledger, min_fee: int = 0) -> ValidationReport:
    if doc.kind is not DocKind.PRE_WILLS:
        raise MalformedDocument(f"expected a pre-Wills, got {doc.kind.value}")
    try:
        pre = PreWills.decode(doc.payload)
    except DecodeError as exc:
        raise MalformedDocument(str(exc)) from exc
    registrars = pre.acceptable_registrars
    list_ok = registrars is None or (
        len(registrars) >= 1
        and len(set(registrars)) == len(registrars)
        and all(ledger.has_account(r) for r in registrars)
    )
    checks = {
        "security_deposit_signature": _check(_document_signature_ok(doc, ledger)),
        "publisher_is_security_deposit": _check(doc.publisher == pre.security_deposit),
        "registrar_fee": _check(pre.registrar_fee >= min_fee),
        "threshold": _check(pre.threshold_t >= 1
                            and (registrars is None or pre.threshold_t <= len(registrars))),
        "registrar_list": _check(list_ok),
        # only checkable once the shared key is revealed
        "donor_signature": Check.UNCHECKABLE,
    }
    flags = ["open-registrar-call"] if registrars is None else []
    return ValidationReport(checks, flags)


def registrar_may_apply(pre: PreWills, registrar: AccountId) -> bool:
    return pre.acceptable_registrars is None or registrar in pre.acceptable_registrars


# -- Announcement -------------------------------------------------------------

@dataclass(frozen=True)
class CivilIdentity:
    name: str
    birth_date: str = ""
    birth_place: str = ""
    extra_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Announcement:
    civil_identity: CivilIdentity
    wills_reference: int
    security_deposit: AccountId
    witness_fees: int
    deliberation_time: int
    threshold_amount: int
    min_distinct_witnesses: int = 2
    min_signaling_span: int = 0

    def encode(self) -> bytes:
        ci = self.civil_identity
        return (Writer().text(ci.name).text(ci.birth_date).text(ci.birth_place)
                .blobs(x.encode() for x in ci.extra_ids)
                .u64(self.wills_reference).blob(self.security_deposit.value)
                .u64(self.witness_fees).u64(self.deliberation_time).u64(self.threshold_amount)
                .u64(self.min_distinct_witnesses).u64(self.min_signaling_span).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "Announcement":
        r = Reader(data)
        ci = CivilIdentity(r.text(), r.text(), r.text(), tuple(b.decode() for b in r.blobs()))
        ann = cls(ci, r.u64(), AccountId(r.blob()), r.u64(), r.u64(), r.u64(), r.u64(), r.u64())
        r.done()
        return ann


def build_announcement(civil_identity: CivilIdentity, wills_reference: int,
                       security_deposit: AccountId, witness_fees: int, deliberation_time: int,
                       threshold_amount: int, min_distinct_witnesses: int = 2,
                       min_signaling_span: int | None = None) -> Announcement:
    if deliberation_time < 0:
        raise ValueError("deliberation_time must be non-negative")
    if threshold_amount <= 0:
        raise ValueError("threshold_amount must be positive")
    if min_distinct_witnesses < 1:
        raise ValueError("min_distinct_witnesses must be at least 1")
    if min_signaling_span is None:
        min_signaling_span = deliberation_time
    return Announcement(civil_identity, wills_reference, security_deposit, witness_fees,
                        deliberation_time, threshold_amount, min_distinct_witnesses,
                        min_signaling_span)


def validate_announcement(doc: PublishedDocument, ledger: Ledger) -> ValidationReport:
    if doc.kind is not DocKind.ANNOUNCEMENT:
        raise MalformedDocument(f"expected an Announcement, got {doc.kind.value}")
    try:
        ann = Announcement.decode(doc.payload)
    except DecodeError as exc:
        raise MalformedDocument(str(exc)) from exc
    wills_docs = [
        d for d in ledger.documents_by(kind=DocKind.WILLS, start=ann.wills_reference,
                                       end=ann.wills_reference)
        if d.publisher == ann.security_deposit
    ]
    checks = {
        "security_deposit_signature": _check(_document_signature_ok(doc, ledger)),
        "publisher_is_security_deposit": _check(doc.publisher == ann.security_deposit),
        "wills_reference": _check(bool(wills_docs)),
        "threshold_amount": _check(ann.threshold_amount > 0),
        "min_distinct_witnesses": _check(ann.min_distinct_witnesses >= 1),
        "civil_identity": _check(bool(ann.civil_identity.name)),
    }
    flags = ["no-adjudication"] if ann.deliberation_time == 0 else []
    return ValidationReport(checks, flags)


# -- revealed Wills -----------------------------------------------------------

@dataclass(frozen=True)
class PublicWills:
    donor: AccountId
    original_wills_block: int
    revealing_registrars: tuple[AccountId, ...]
    shared_key: bytes
    donor_public_key: bytes

    def encode(self) -> bytes:
        return (Writer().blob(self.donor.value).u64(self.original_wills_block)
                .blobs(a.value for a in self.revealing_registrars)
                .blob(self.shared_key).blob(self.donor_public_key).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "PublicWills":
        r = Reader(data)
        pw = cls(AccountId(r.blob()), r.u64(), _ids(r), r.blob(), r.blob())
        r.done()
        return pw


def verify_public_wills(pw: PublicWills, wills: Wills, donor_public_key: bytes) -> bool:
    if AccountId.from_public_key(donor_public_key) != pw.donor:
        return False
    if not crypto.verify(donor_public_key, wills.digest(), wills.donor_signature):
        return False
    try:
        revealed = crypto.decrypt(pw.shared_key, wills.encrypted_donor_address, DONOR_CONTEXT)
    except (crypto.AuthenticationError, ValueError):
        return False
    return revealed == pw.donor.value


# -- registrar-side documents -------------------------------------------------

@dataclass(frozen=True)
class RegistrarAcceptance:
    security_deposit: AccountId
    pre_wills_block: int
    registrar: AccountId

    def encode(self) -> bytes:
        return (Writer().blob(self.security_deposit.value).u64(self.pre_wills_block)
                .blob(self.registrar.value).getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "RegistrarAcceptance":
        r = Reader(data)
        doc = cls(AccountId(r.blob()), r.u64(), AccountId(r.blob()))
        r.done()
        return doc


@dataclass(frozen=True)
class BailCommitmentDoc:
    registrar: AccountId
    amount: int
    expiry: int

    def encode(self) -> bytes:
        return Writer().blob(self.registrar.value).u64(self.amount).u64(self.expiry).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "BailCommitmentDoc":
        r = Reader(data)
        doc = cls(AccountId(r.blob()), r.u64(), r.u64())
        r.done()
        return doc


PARSERS = {
    DocKind.PRE_WILLS: PreWills.decode,
    DocKind.WILLS: Wills.decode,
    DocKind.ANNOUNCEMENT: Announcement.decode,
    DocKind.PUBLIC_WILLS: PublicWills.decode,
    DocKind.REGISTRAR_ACCEPTANCE: RegistrarAcceptance.decode,
    DocKind.BAIL_COMMITMENT: BailCommitmentDoc.decode,
}


def parse_document(doc: PublishedDocument):
    return PARSERS[doc.kind](doc.payload)


def _plain(value):
    if isinstance(value, (bytes, bytearray)):
        return value.hex()
    if isinstance(value, AccountId):
        return value.hex()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    return value


def render(doc) -> str:
    """JSON text rendering for traces; byte fields become hex."""
    return json.dumps(_plain(doc), sort_keys=True)

