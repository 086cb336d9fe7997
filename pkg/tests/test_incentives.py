from dataclasses import dataclass, field
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tfcp import crypto
from tfcp.engine import Ante, Phase
from tfcp.incentives import (
    VAULT,
    BailStatus,
    IncentiveError,
    Incentives,
    NetworkParams,
    PayoutKind,
    reconcile,
    split_evenly,
    split_pro_rata,
)
from tfcp.ledger import AccountId, Ledger


def kp(n):
    return crypto.keygen(bytes([n]) * 32)


def acct(n):
    return AccountId.from_public_key(kp(n).public_key)


@dataclass(eq=False)
class Inst:
    """Just the fields settlement reads from a protocol instance."""
    security_deposit: AccountId
    deposit_keys: crypto.KeyPair
    registrar_fee: int = 0
    witness_fees: int = 0
    accepted_registrars: list = field(default_factory=list)
    revealed: list = field(default_factory=list)
    ante_record: list = field(default_factory=list)
    phase: Phase = Phase.ACTIVE
    instance_id: bytes = b"i" * 32
    settlement_shortfall: int = 0

    def revealed_registrars(self):
        return list(self.revealed)

    def is_settled(self):
        return self.phase in (Phase.ACKNOWLEDGED, Phase.ABORTED, Phase.SUPERSEDED)


@pytest.fixture
def world():
    ledger = Ledger()
    for n in range(1, 9):
        ledger.create_account(kp(n), 1000)
    return ledger, Incentives(ledger)


def escrow_antes(ledger, inc, inst, antes):
    for n, amount in antes:
        ledger.submit_transfer(acct(n), inst.security_deposit, amount, kp(n).secret_key)
        inst.ante_record.append(Ante(acct(n), amount, ledger.height))
        inc.record(PayoutKind.ANTE_ESCROW, acct(n), inst.security_deposit, amount, inst.instance_id, acct(n))


# -- splitting ------------------------------------------------------------------

def test_split_evenly_gives_remainder_to_lowest_ids():
    a, b = sorted([acct(1), acct(2)])
    assert split_evenly(25, [b, a]) == [(a, 13), (b, 12)]
    assert split_evenly(0, [a]) == [(a, 0)]
    assert split_evenly(10, []) == []


def test_split_pro_rata_60_40():
    a, b = acct(1), acct(2)
    assert dict(split_pro_rata(10, {a: 60, b: 40})) == {a: 6, b: 4}
    assert split_pro_rata(10, {a: 0}) == []


@given(total=st.integers(0, 10**6), weights=st.lists(st.integers(0, 1000), min_size=1, max_size=6))
def test_pro_rata_pays_exactly_total_and_floor_plus_at_most_one(total, weights):
    ids = [acct(n) for n in range(1, len(weights) + 1)]
    w = dict(zip(ids, weights))
    out = dict(split_pro_rata(total, w))
    if sum(weights) == 0:
        assert out == {}
        return
    assert sum(out.values()) == total
    for a, amount in out.items():
        floor = total * w[a] // sum(weights)
        assert floor <= amount <= floor + 1


# -- bails ------------------------------------------------------------------------

def test_stake_minimum_exactly_and_below(world):
    ledger, inc = world
    bail = inc.stake_bail(kp(1), 100, 50)
    assert bail.status is BailStatus.STAKED and ledger.balance_of(VAULT) == 100
    assert inc.has_active_bail(acct(1))
    with pytest.raises(IncentiveError):
        inc.stake_bail(kp(2), 99, 50)
    with pytest.raises(IncentiveError):
        inc.stake_bail(kp(2), 100, 0)
    with pytest.raises(IncentiveError):
        inc.stake_bail(kp(1), 100, 50)


def test_release_at_expiry_early_and_with_obligation(world):
    ledger, inc = world
    bail = inc.stake_bail(kp(1), 100, 10)
    with pytest.raises(IncentiveError, match="due until"):
        inc.release_bail(bail)
    ledger.advance_to(10)
    inc.add_obligation(acct(1), b"x")
    with pytest.raises(IncentiveError, match="obligation"):
        inc.release_bail(bail)
    inc.clear_obligation(acct(1), b"x")
    inc.release_bail(bail)
    assert bail.status is BailStatus.RELEASED and ledger.balance_of(acct(1)) == 1000
    assert not inc.has_active_bail(acct(1))


def test_slash_needs_violation_and_is_terminal(world):
    ledger, inc = world
    bail = inc.stake_bail(kp(1), 101, 10)
    with pytest.raises(IncentiveError, match="violation"):
        inc.slash_bail(bail, "no reveal", [acct(2)])
    inc.record_violation(acct(1), b"i", "no reveal")
    inc.slash_bail(bail, "no reveal", [acct(3), acct(2)], b"i")
    lo, hi = sorted([acct(2), acct(3)])
    assert ledger.balance_of(lo) == 1051 and ledger.balance_of(hi) == 1050
    with pytest.raises(IncentiveError):
        inc.slash_bail(bail, "again", [acct(2)])
    ledger.advance_to(10)
    with pytest.raises(IncentiveError):
        inc.release_bail(bail)
    assert reconcile(inc.payouts, ledger, bails=inc.bail_history) == []


# -- fees and settlement -------------------------------------------------------------

def test_immediate_fee_25_split_13_12(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), registrar_fee=100, accepted_registrars=[acct(1), acct(2)])
    entries = inc.pay_immediate_registrar_fee(inst)
    lo, hi = sorted([acct(1), acct(2)])
    assert [(e.recipient, e.amount) for e in entries] == [(lo, 13), (hi, 12)]


def test_immediate_fee_single_registrar_and_zero_fraction():
    ledger = Ledger()
    for n in (1, 8):
        ledger.create_account(kp(n), 1000)
    inst = Inst(acct(8), kp(8), registrar_fee=100, accepted_registrars=[acct(1)])
    assert [e.amount for e in Incentives(ledger).pay_immediate_registrar_fee(inst)] == [25]
    zero = Incentives(ledger, NetworkParams(immediate_fee_fraction=Fraction(0)))
    assert zero.pay_immediate_registrar_fee(inst) == []


def test_immediate_fee_needs_deposit_balance():
    ledger = Ledger()
    ledger.create_account(kp(1))
    ledger.create_account(kp(8), 24)
    inst = Inst(acct(8), kp(8), registrar_fee=100, accepted_registrars=[acct(1)])
    with pytest.raises(IncentiveError):
        Incentives(ledger).pay_immediate_registrar_fee(inst)


def test_settle_on_acknowledgment_fees_and_refunds(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), registrar_fee=100, witness_fees=10,
                accepted_registrars=[acct(1), acct(2)], revealed=[acct(1)])
    inc.pay_immediate_registrar_fee(inst)
    escrow_antes(ledger, inc, inst, [(3, 60), (4, 40)])
    with pytest.raises(IncentiveError):
        inc.settle_on_acknowledgment(inst)
    inst.phase = Phase.ACKNOWLEDGED
    entries = inc.settle_on_acknowledgment(inst)
    got = {(e.kind, e.recipient): e.amount for e in entries}
    assert got[(PayoutKind.ANTE_REFUND, acct(3))] == 60
    assert got[(PayoutKind.ANTE_REFUND, acct(4))] == 40
    assert got[(PayoutKind.WITNESS_FEE, acct(3))] == 6
    assert got[(PayoutKind.WITNESS_FEE, acct(4))] == 4
    # the only revealer takes the whole remaining 75
    assert got[(PayoutKind.REGISTRAR_FEE_FINAL, acct(1))] == 75
    assert (PayoutKind.REGISTRAR_FEE_FINAL, acct(2)) not in got
    assert ledger.balance_of(acct(3)) == 1006
    assert reconcile(inc.payouts, ledger, [inst]) == []


def test_zero_fee_acknowledgment_refunds_only(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), revealed=[acct(1)])
    escrow_antes(ledger, inc, inst, [(3, 50)])
    inst.phase = Phase.ACKNOWLEDGED
    assert [e.kind for e in inc.settle_on_acknowledgment(inst)] == [PayoutKind.ANTE_REFUND]


def test_late_antes_refunded_without_fees(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), witness_fees=10, revealed=[acct(1)])
    escrow_antes(ledger, inc, inst, [(3, 50)])
    ledger.submit_transfer(acct(4), acct(8), 20, kp(4).secret_key)
    inst.ante_record.append(Ante(acct(4), 20, 0, fee_eligible=False))
    inc.record(PayoutKind.ANTE_ESCROW, acct(4), acct(8), 20, inst.instance_id, acct(4))
    inst.phase = Phase.ACKNOWLEDGED
    entries = inc.settle_on_acknowledgment(inst)
    fees = {e.recipient: e.amount for e in entries if e.kind is PayoutKind.WITNESS_FEE}
    assert fees == {acct(3): 10}
    assert ledger.balance_of(acct(4)) == 1000


def test_settle_on_abort_forfeits_to_deposit(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), witness_fees=10)
    escrow_antes(ledger, inc, inst, [(3, 60), (4, 40)])
    with pytest.raises(IncentiveError):
        inc.settle_on_abort(inst)
    inst.phase = Phase.ABORTED
    entries = inc.settle_on_abort(inst)
    assert [e.kind for e in entries] == [PayoutKind.ANTE_FORFEIT] * 2
    assert ledger.balance_of(acct(8)) == 1100
    assert ledger.balance_of(acct(3)) == 940
    assert reconcile(inc.payouts, ledger, [inst]) == []


def test_reconcile_spots_missing_transfer_and_unbalanced_escrow(world):
    ledger, inc = world
    inst = Inst(acct(8), kp(8), phase=Phase.ACKNOWLEDGED)
    inc.record(PayoutKind.ANTE_ESCROW, acct(3), acct(8), 5, inst.instance_id, acct(3))
    problems = reconcile(inc.payouts, ledger, [inst])
    assert any("without matching transfer" in p for p in problems)
    assert any("ante escrow" in p for p in problems)
