import dataclasses
import inspect
import random
from fractions import Fraction

import pytest

from tfcp import crypto
from tfcp.builders import OBSERVE_POST, anonymity_scenario, happy_path, measure_anonymity
from tfcp.harness import run
from tfcp.ledger import AccountId, DocKind, Ledger, PublishedDocument, Transfer
from tfcp.linkage import LinkageGuess, PublicView, correct_guess_rate, linkage_analyzer, pooled_share_links


def walk(obj, seen=None):
    """Every object reachable from ``obj`` through fields and containers."""
    seen = seen if seen is not None else set()
    if id(obj) in seen:
        return
    seen.add(id(obj))
    yield obj
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from walk(getattr(obj, f.name), seen)
    elif isinstance(obj, (tuple, list, set, frozenset)):
        for item in obj:
            yield from walk(item, seen)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from walk(k, seen)
            yield from walk(v, seen)


@pytest.fixture(scope="module")
def happy():
    return run(happy_path())


def test_public_view_reaches_no_private_state(happy):
    view = PublicView.from_ledger(happy.world.ledger, block=15)
    objects = list(walk(view))
    allowed = (PublicView, PublishedDocument, Transfer, AccountId, DocKind, tuple, bytes, int, str)
    assert all(isinstance(o, allowed) for o in objects), \
        {type(o).__name__ for o in objects if not isinstance(o, allowed)}
    blobs = [o for o in objects if isinstance(o, bytes)]
    inst = happy.latest_instance("alice")
    secrets = [inst.deposit_keys.secret_key, happy.world.keys["alice"].secret_key]
    secrets += [s.value for s in inst.shares_delivered.values()]
    for secret in secrets:
        assert not any(secret in blob for blob in blobs)


def test_analyzer_takes_only_the_public_view():
    params = list(inspect.signature(linkage_analyzer).parameters)
    assert params == ["view", "candidates", "rng", "timing_window"]


def test_view_at_a_block_hides_later_documents(happy):
    early = PublicView.from_ledger(happy.world.ledger, block=3)
    late = PublicView.from_ledger(happy.world.ledger)
    assert all(d.block <= 3 for d in early.documents)
    assert len(early.documents) < len(late.documents)
    assert not any(d.kind is DocKind.PUBLIC_WILLS for d in early.documents)


def test_published_public_wills_reveal_the_donor(happy):
    view = PublicView.from_ledger(happy.world.ledger)
    alice = happy.world.accounts["alice"]
    guesses = linkage_analyzer(view, [alice, happy.world.accounts["w1"]])
    sd = happy.latest_instance("alice").security_deposit
    g = next(g for g in guesses if g.security_deposit == sd)
    assert (g.guessed_donor, g.evidence, g.confidence) == (alice, "public-wills", 1)


def test_plaintext_donor_id_in_a_document_is_found():
    ledger = Ledger()
    donor, other, sd = (crypto.keygen(bytes([n]) * 32) for n in (1, 2, 3))
    for k in (donor, other, sd):
        ledger.create_account(k, 10)
    ledger.publish_document(AccountId.from_public_key(sd.public_key), DocKind.ANNOUNCEMENT,
                            b"careless " + AccountId.from_public_key(donor.public_key).value, sd.secret_key)
    view = PublicView.from_ledger(ledger)
    ids = [AccountId.from_public_key(k.public_key) for k in (donor, other)]
    [g] = linkage_analyzer(view, ids)
    assert (g.guessed_donor, g.evidence) == (ids[0], "plaintext")


def test_timing_tie_gives_uniform_confidence():
    ledger = Ledger()
    sd = crypto.keygen(bytes([9]) * 32)
    ledger.create_account(sd, 10)
    ledger.publish_document(AccountId.from_public_key(sd.public_key), DocKind.ANNOUNCEMENT, b"x", sd.secret_key)
    ids = [AccountId(bytes([n]) * 32) for n in range(4)]
    [g] = linkage_analyzer(PublicView.from_ledger(ledger), ids, random.Random(1))
    assert g.confidence == Fraction(1, 4) and g.evidence == "none"
    assert g.guessed_donor in ids


def test_correct_guess_rate():
    a, b, sd1, sd2 = (AccountId(bytes([n]) * 32) for n in range(4))
    guesses = [LinkageGuess(sd1, a, Fraction(1)), LinkageGuess(sd2, a, Fraction(1))]
    assert correct_guess_rate(guesses, {sd1: a, sd2: b}) == Fraction(1, 2)
    assert correct_guess_rate(guesses, {}) == 0


def test_careless_funding_links_every_deposit():
    result = run(anonymity_scenario(4, seed=3, careless=True))
    [obs] = result.observations
    assert obs.rate == 1
    assert {g.evidence for g in obs.guesses} == {"transfer-graph"}


def test_faucet_funding_leaves_no_transfer_edge():
    result = run(anonymity_scenario(4, seed=3))
    [obs] = result.observations
    assert "transfer-graph" not in {g.evidence for g in obs.guesses}
    assert result.problems == []


def test_acknowledgment_reveals_every_donor():
    result = run(anonymity_scenario(3, seed=5, post_ack=True))
    rates = {o.block: o.rate for o in result.observations}
    assert rates[OBSERVE_POST] == 1
    assert len(result.acknowledgments) == 3


def test_pre_acknowledgment_rate_stays_near_chance():
    res = measure_anonymity(4, runs=30, first_seed=500)
    assert res.within_chance(Fraction(15, 100))
    assert not res.vacuous


def test_single_donor_is_vacuous():
    res = measure_anonymity(1, runs=2)
    assert res.vacuous and res.pre_rate == 1


def test_colluding_registrars_link_before_any_reveal(happy):
    inst = happy.latest_instance("alice")
    view = PublicView.from_ledger(happy.world.ledger, block=15)
    shares = list(inst.shares_delivered.values())
    assert pooled_share_links(view, shares[:2], 2) == {inst.security_deposit: happy.world.accounts["alice"]}
    assert pooled_share_links(view, shares[:1], 2) == {}
