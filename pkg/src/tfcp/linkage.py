"""Honest-but-curious linkage analysis over public ledger contents.

The analyzer only ever sees a ``PublicView``: an immutable snapshot of
published documents, transfers and balances, rebuilt from ledger records.
It holds no reference to the live ledger, the protocol engine, shares or
keys, so off-ledger state is unreachable by construction.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from . import crypto
from .documents import DONOR_CONTEXT, PublicWills, Wills
from .ledger import AccountId, DocKind, Ledger, PublishedDocument, Transfer

SETUP_KINDS = (DocKind.PRE_WILLS, DocKind.WILLS, DocKind.ANNOUNCEMENT)


@dataclass(frozen=True)
class PublicView:
    height: int
    documents: tuple[PublishedDocument, ...]
    transfers: tuple[Transfer, ...]
    balances: tuple[tuple[AccountId, int], ...]

    @classmethod
    def from_ledger(cls, ledger: Ledger, block: int | None = None) -> "PublicView":
        """Snapshot of what was public at ``block`` (default: now)."""
        records = [r for r in ledger.ledger_records() if block is None or r.block <= block]
        state = Ledger.replay(records, publication_fee=ledger.publication_fee)
        return cls(
            height=state.height if block is None else block,
            documents=tuple(state.documents),
            transfers=tuple(state.transfers),
            balances=tuple((a, state.balance_of(a)) for a in state.accounts()),
        )


@dataclass(frozen=True)
class LinkageGuess:
    security_deposit: AccountId
    guessed_donor: AccountId | None
    confidence: Fraction
    evidence: str = "none"


def _deposit_accounts(view: PublicView) -> list[AccountId]:
    seen = []
    for d in view.documents:
        if d.kind in SETUP_KINDS and d.publisher not in seen:
            seen.append(d.publisher)
    return seen


def _revealed_links(view: PublicView) -> dict[AccountId, AccountId]:
    """Deposit -> donor links disclosed by published PublicWills."""
    links = {}
    wills_at = defaultdict(list)
    for d in view.documents:
        if d.kind is DocKind.WILLS:
            wills_at[d.block].append(d)
    for d in view.documents:
        if d.kind is not DocKind.PUBLIC_WILLS:
            continue
        pw = PublicWills.decode(d.payload)
        for wd in wills_at.get(pw.original_wills_block, ()):
            wills = Wills.decode(wd.payload)
            try:
                plain = crypto.decrypt(pw.shared_key, wills.encrypted_donor_address, DONOR_CONTEXT)
            except crypto.AuthenticationError:
                continue
            if plain == pw.donor.value:
                links[wd.publisher] = pw.donor
    return links


def linkage_analyzer(view: PublicView, candidates: Iterable[AccountId],
                     rng: random.Random | None = None, timing_window: int = 1) -> list[LinkageGuess]:
    """Guess the donor behind every security deposit visible in ``view``.

    Attacks, strongest first: revealed PublicWills, plaintext id scan of the
    deposit's documents, direct transfers between a candidate and the deposit,
    then timing coincidence between candidate activity and deposit activity.
    Without any evidence the guess is uniform over the candidates.
    """
    candidates = sorted(set(candidates))
    rng = rng or random.Random(0)
    revealed = _revealed_links(view)
    guesses = []
    for sd in _deposit_accounts(view):
        if sd in revealed:
            guesses.append(LinkageGuess(sd, revealed[sd], Fraction(1), "public-wills"))
            continue
        payloads = [d.payload for d in view.documents if d.publisher == sd]
        hit = next((c for c in candidates if any(c.value in p for p in payloads)), None)
        if hit is not None:
            guesses.append(LinkageGuess(sd, hit, Fraction(1), "plaintext"))
            continue
        edges = [t for t in view.transfers
                 if (t.sender == sd and t.recipient in candidates)
                 or (t.recipient == sd and t.sender in candidates)]
        if edges:
            first = edges[0]
            guessed = first.sender if first.recipient == sd else first.recipient
            guesses.append(LinkageGuess(sd, guessed, Fraction(1), "transfer-graph"))
            continue
        guesses.append(_timing_guess(view, sd, candidates, rng, timing_window))
    return guesses


def _timing_guess(view, sd, candidates, rng, window) -> LinkageGuess:
    if not candidates:
        return LinkageGuess(sd, None, Fraction(0))
    sd_blocks = {d.block for d in view.documents if d.publisher == sd}
    sd_blocks |= {t.block for t in view.transfers if sd in (t.sender, t.recipient)}
    scores = {}
    for c in candidates:
        active = {t.block for t in view.transfers if t.sender == c}
        active |= {d.block for d in view.documents if d.publisher == c}
        scores[c] = sum(1 for b in active if any(abs(b - s) <= window for s in sd_blocks))
    best = max(scores.values())
    tied = [c for c in candidates if scores[c] == best]
    evidence = "timing" if best > 0 else "none"
    return LinkageGuess(sd, rng.choice(tied), Fraction(1, len(tied)), evidence)


def correct_guess_rate(guesses: Iterable[LinkageGuess], truth: Mapping[AccountId, AccountId]) -> Fraction:
    """Fraction of deposits in ``truth`` whose donor was guessed correctly."""
    by_sd = {g.security_deposit: g for g in guesses}
    if not truth:
        return Fraction(0)
    correct = sum(1 for sd, donor in truth.items()
                  if sd in by_sd and by_sd[sd].guessed_donor == donor)
    return Fraction(correct, len(truth))


def pooled_share_links(view: PublicView, pooled: Iterable[crypto.Share], t: int) -> dict[AccountId, AccountId]:
    """Deposit -> donor links learned by registrars who pool ``t`` shares early.

    This is the collusion the scheme does not defend against: with enough
    shares the Wills key is rebuilt before any reveal, and every published
    Wills it opens names its donor. Fewer than ``t`` shares learn nothing.
    """
    pooled = list(pooled)
    if len(pooled) < t:
        return {}
    key = crypto.reconstruct_secret(pooled, t)
    links = {}
    for d in view.documents:
        if d.kind is not DocKind.WILLS:
            continue
        try:
            plain = crypto.decrypt(key, Wills.decode(d.payload).encrypted_donor_address, DONOR_CONTEXT)
        except crypto.AuthenticationError:
            continue
        links[d.publisher] = AccountId(plain)
    return links
