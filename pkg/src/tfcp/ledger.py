"""Account-based simulated ledger with discrete block time.

All protocol time is block height. Every state change is appended to an
ordered trace; replaying the ledger records of that trace from genesis
rebuilds a byte-identical state.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping

from . import crypto
from .codec import DecodeError, Reader, Writer


class DocKind(str, Enum):
    PRE_WILLS = "PREWILLS"
    WILLS = "WILLS"
    ANNOUNCEMENT = "ANNOUNCEMENT"
    PUBLIC_WILLS = "PUBLICWILLS"
    REGISTRAR_ACCEPTANCE = "ACCEPTANCE"
    BAIL_COMMITMENT = "BAILCOMMIT"


LEDGER_KINDS = frozenset({"ACCOUNT", "TRANSFER", "FREEZE", "UNFREEZE", "BLOCK"}
                         | {k.value for k in DocKind})


class LedgerError(Exception):
    pass


class UnknownAccount(LedgerError, KeyError):
    pass


class DuplicateAccount(LedgerError):
    pass


class Rejected(LedgerError):
    """A transaction was refused; the ledger state is unchanged."""


@dataclass(frozen=True, order=True)
class AccountId:
    value: bytes

    @classmethod
    def from_public_key(cls, public_key: bytes) -> "AccountId":
        return cls(crypto.digest(public_key))

    @classmethod
    def from_hex(cls, text: str) -> "AccountId":
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.value.hex()[:12]

    def __repr__(self) -> str:
        return f"AccountId({self})"


@dataclass(frozen=True)
class Transfer:
    sender: AccountId
    recipient: AccountId
    amount: int
    nonce: int
    signature: bytes
    block: int
    protocol: bool = False


@dataclass(frozen=True)
class PublishedDocument:
    publisher: AccountId
    kind: DocKind
    payload: bytes
    signature: bytes
    block: int
    nonce: int = 0

    def signing_message(self) -> bytes:
        return document_message(self.kind, self.publisher, self.payload, self.nonce)


@dataclass(frozen=True)
class TraceRecord:
    block: int
    kind: str
    actor: str
    payload: bytes = b""
    sig: bytes = b""

    def line(self) -> str:
        return f"{self.block}|{self.kind}|{self.actor}|{self.payload.hex()}|{self.sig.hex()}"

    @classmethod
    def parse(cls, line: str) -> "TraceRecord":
        parts = line.rstrip("\n").split("|")
        if len(parts) != 5:
            raise ValueError(f"trace line needs 5 fields: {line!r}")
        block, kind, actor, payload, sig = parts
        return cls(int(block), kind, actor, bytes.fromhex(payload), bytes.fromhex(sig))


@dataclass
class _Account:
    public_key: bytes
    balance: int
    nonce: int = 0
    frozen: bool = False


def transfer_message(sender: AccountId, recipient: AccountId, amount: int, nonce: int) -> bytes:
    return (Writer().text("transfer").blob(sender.value).blob(recipient.value)
            .u64(amount).u64(nonce).getvalue())


def document_message(kind: DocKind, publisher: AccountId, payload: bytes, nonce: int) -> bytes:
    return (Writer().text("document").text(kind.value).blob(publisher.value)
            .blob(payload).u64(nonce).getvalue())


def _encode_transfer(t: Transfer) -> bytes:
    return (Writer().blob(t.sender.value).blob(t.recipient.value).u64(t.amount)
            .u64(t.nonce).u8(int(t.protocol)).getvalue())


def _decode_transfer(data: bytes):
    r = Reader(data)
    out = (AccountId(r.blob()), AccountId(r.blob()), r.u64(), r.u64(), bool(r.u8()))
    r.done()
    return out


def _sign(secret_key: bytes, message: bytes) -> bytes:
    try:
        return crypto.sign(secret_key, message)
    except ValueError as exc:
        raise Rejected(f"unusable signing key: {exc}") from exc


FEE_COLLECTOR = AccountId(crypto.digest(b"tfcp-publication-fee-collector"))

TxListener = Callable[[AccountId, int], None]


class Ledger:
    def __init__(self, parsers: Mapping[DocKind, Callable[[bytes], object]] | None = None,
                 publication_fee: int = 0):
        self.parsers = dict(parsers or {})
        self.publication_fee = publication_fee
        self.height = 0
        self.initial_supply = 0
        self.trace: list[TraceRecord] = []
        self.transfers: list[Transfer] = []
        self.documents: list[PublishedDocument] = []
        self._accounts: dict[AccountId, _Account] = {}
        self._timers: list = []
        self._timer_seq = itertools.count()
        self._tx_listeners: list[TxListener] = []

    # -- accounts -------------------------------------------------------------

    def create_account(self, key_pair: crypto.KeyPair, initial_balance: int = 0) -> AccountId:
        if initial_balance < 0:
            raise ValueError("initial balance must be non-negative")
        account = AccountId.from_public_key(key_pair.public_key)
        if account in self._accounts:
            raise DuplicateAccount(f"account {account} already exists")
        self._accounts[account] = _Account(key_pair.public_key, initial_balance)
        self.initial_supply += initial_balance
        self._record("ACCOUNT", account.hex(),
                     Writer().blob(key_pair.public_key).u64(initial_balance).getvalue())
        return account

    def _get(self, account: AccountId) -> _Account:
        try:
            return self._accounts[account]
        except KeyError:
            raise UnknownAccount(f"unknown account {account}") from None

    def has_account(self, account: AccountId) -> bool:
        return account in self._accounts

    def accounts(self) -> list[AccountId]:
        return sorted(self._accounts)

    def public_key_of(self, account: AccountId) -> bytes:
        return self._get(account).public_key

    def balance_of(self, account: AccountId) -> int:
        return self._get(account).balance

    def nonce_of(self, account: AccountId) -> int:
        return self._get(account).nonce

    def is_frozen(self, account: AccountId) -> bool:
        return self._get(account).frozen

    def total_supply(self) -> int:
        return sum(a.balance for a in self._accounts.values())

    # -- transactions ---------------------------------------------------------

    def submit_transfer(self, sender: AccountId, recipient: AccountId, amount: int,
                        secret_key: bytes, *, protocol: bool = False) -> Transfer:
        """Sign and execute a transfer at the current block.

        ``protocol`` marks a settlement move enacted by the network rules; it is
        the only kind of outgoing transfer a frozen account accepts.
        """
        acct = self._get(sender)
        if amount < 0:
            raise Rejected("negative amount")
        nonce = acct.nonce
        sig = _sign(secret_key, transfer_message(sender, recipient, amount, nonce))
        return self._apply_transfer(sender, recipient, amount, nonce, sig, protocol)

    def _apply_transfer(self, sender, recipient, amount, nonce, sig, protocol) -> Transfer:
        src = self._get(sender)
        dst = self._get(recipient)
        if amount < 0:
            raise Rejected("negative amount")
        if nonce != src.nonce:
            raise Rejected(f"stale nonce {nonce}, expected {src.nonce}")
        if not crypto.verify(src.public_key, transfer_message(sender, recipient, amount, nonce), sig):
            raise Rejected("bad signature")
        if src.frozen and not protocol:
            raise Rejected(f"account {sender} is frozen")
        if amount > src.balance:
            raise Rejected(f"insufficient balance: {src.balance} < {amount}")
        src.balance -= amount
        dst.balance += amount
        src.nonce += 1
        transfer = Transfer(sender, recipient, amount, nonce, sig, self.height, protocol)
        self.transfers.append(transfer)
        self._record("TRANSFER", sender.hex(), _encode_transfer(transfer), sig)
        self._notify(sender)
        return transfer

    def publish_document(self, publisher: AccountId, kind: DocKind, payload: bytes,
                         secret_key: bytes) -> PublishedDocument:
        acct = self._get(publisher)
        sig = _sign(secret_key, document_message(kind, publisher, payload, acct.nonce))
        return self._apply_document(publisher, kind, payload, sig)

    def _apply_document(self, publisher, kind, payload, sig) -> PublishedDocument:
        acct = self._get(publisher)
        kind = DocKind(kind)
        if not crypto.verify(acct.public_key, document_message(kind, publisher, payload, acct.nonce), sig):
            raise Rejected("bad document signature")
        parser = self.parsers.get(kind)
        if parser is not None:
            try:
                parser(payload)
            except (DecodeError, ValueError) as exc:
                raise Rejected(f"payload does not parse as {kind.value}: {exc}") from exc
        if self.publication_fee > acct.balance:
            raise Rejected("cannot pay publication fee")
        if self.publication_fee:
            if FEE_COLLECTOR not in self._accounts:
                self._accounts[FEE_COLLECTOR] = _Account(b"", 0)
            acct.balance -= self.publication_fee
            self._accounts[FEE_COLLECTOR].balance += self.publication_fee
        doc = PublishedDocument(publisher, kind, bytes(payload), sig, self.height, acct.nonce)
        acct.nonce += 1
        self.documents.append(doc)
        self._record(kind.value, publisher.hex(), doc.payload, sig)
        self._notify(publisher)
        return doc

    def freeze_account(self, account: AccountId) -> None:
        acct = self._get(account)
        if not acct.frozen:
            acct.frozen = True
            self._record("FREEZE", account.hex())

    def unfreeze_account(self, account: AccountId) -> None:
        acct = self._get(account)
        if acct.frozen:
            acct.frozen = False
            self._record("UNFREEZE", account.hex())

    # -- time -----------------------------------------------------------------

    def schedule_at(self, height: int, callback: Callable[[], None]) -> None:
        """Run ``callback`` once when the chain reaches ``height``.

        Callbacks at the same height fire in registration order.
        """
        if height <= self.height:
            raise ValueError(f"cannot schedule at {height}, chain is at {self.height}")
        heapq.heappush(self._timers, (height, next(self._timer_seq), callback))

    def pending_timers(self) -> int:
        return len(self._timers)

    def next_timer_height(self) -> int | None:
        return self._timers[0][0] if self._timers else None

    def advance_block(self, n: int = 1) -> int:
        if n < 1:
            raise ValueError("advance must be by at least one block")
        target = self.height + n
        while self._timers and self._timers[0][0] <= target:
            height, _, callback = heapq.heappop(self._timers)
            self.height = height
            callback()
        self.height = target
        self._record("BLOCK", "-")
        return self.height

    def advance_to(self, height: int) -> int:
        if height > self.height:
            self.advance_block(height - self.height)
        return self.height

    # -- queries --------------------------------------------------------------

    def documents_by(self, kind: DocKind | None = None, publisher: AccountId | None = None,
                     start: int | None = None, end: int | None = None) -> list[PublishedDocument]:
        """Documents matching every given filter; ``start``/``end`` are inclusive blocks."""
        if publisher is not None:
            self._get(publisher)
        return [
            d for d in self.documents
            if (kind is None or d.kind == kind)
            and (publisher is None or d.publisher == publisher)
            and (start is None or d.block >= start)
            and (end is None or d.block <= end)
        ]

    def transfers_from(self, account: AccountId, start: int | None = None,
                       end: int | None = None) -> list[Transfer]:
        return [t for t in self.transfers if t.sender == account
                and (start is None or t.block >= start) and (end is None or t.block <= end)]

    # -- trace ----------------------------------------------------------------

    def add_tx_listener(self, listener: TxListener) -> None:
        """``listener(signer, block)`` runs after every signed transaction."""
        self._tx_listeners.append(listener)

    def _notify(self, signer: AccountId) -> None:
        for listener in list(self._tx_listeners):
            listener(signer, self.height)

    def _record(self, kind: str, actor: str, payload: bytes = b"", sig: bytes = b"") -> None:
        self.trace.append(TraceRecord(self.height, kind, actor, payload, sig))

    def emit(self, kind: str, actor: str, payload: bytes = b"") -> None:
        """Append a non-ledger event (protocol or harness) to the shared trace."""
        if kind in LEDGER_KINDS:
            raise ValueError(f"{kind} is reserved for ledger records")
        self._record(kind, actor, payload)

    def ledger_records(self) -> list[TraceRecord]:
        return [r for r in self.trace if r.kind in LEDGER_KINDS]

    def serialize_state(self) -> bytes:
        w = Writer().u64(self.height).u64(self.initial_supply).u32(len(self._accounts))
        for account in sorted(self._accounts):
            a = self._accounts[account]
            w.blob(account.value).blob(a.public_key).u64(a.balance).u64(a.nonce).u8(int(a.frozen))
        w.u32(len(self.documents))
        for d in self.documents:
            w.u64(d.block).text(d.kind.value).blob(d.publisher.value).blob(d.payload).blob(d.signature)
        w.u32(len(self.transfers))
        for t in self.transfers:
            w.u64(t.block).blob(_encode_transfer(t)).blob(t.signature)
        return w.getvalue()

    @classmethod
    def replay(cls, records: Iterable[TraceRecord], parsers=None, publication_fee: int = 0) -> "Ledger":
        """Rebuild a ledger from trace records; non-ledger records are skipped.

        Signatures are re-verified; nothing is trusted from the log beyond
        ordering and block heights.
        """
        ledger = cls(parsers, publication_fee)
        for rec in records:
            if rec.kind not in LEDGER_KINDS:
                continue
            ledger.height = rec.block
            if rec.kind == "ACCOUNT":
                r = Reader(rec.payload)
                pk, balance = r.blob(), r.u64()
                ledger.create_account(crypto.KeyPair(pk), balance)
            elif rec.kind == "TRANSFER":
                sender, recipient, amount, nonce, protocol = _decode_transfer(rec.payload)
                ledger._apply_transfer(sender, recipient, amount, nonce, rec.sig, protocol)
            elif rec.kind == "FREEZE":
                ledger.freeze_account(AccountId.from_hex(rec.actor))
            elif rec.kind == "UNFREEZE":
                ledger.unfreeze_account(AccountId.from_hex(rec.actor))
            elif rec.kind == "BLOCK":
                ledger._record("BLOCK", "-")
            else:
                ledger._apply_document(AccountId.from_hex(rec.actor), DocKind(rec.kind),
                                       rec.payload, rec.sig)
        return ledger
