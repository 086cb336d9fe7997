import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfcp.engine import (
    ALLOWED_TRANSITIONS,
    InvalidWills,
    InvariantViolation,
    Phase,
    ProtocolError,
    ShareMismatch,
)
from tfcp.incentives import BailStatus, PayoutKind, reconcile
from tfcp.ledger import DocKind

from conftest import EngineWorld


def phases(world, inst):
    return [(old, new) for iid, old, new, _ in world.engine.transitions if iid == inst.instance_id]


def reveal_all(world, inst, who=None):
    for r in who if who is not None else world.registrars:
        acct = world.acct(r)
        if acct in inst.shares_delivered and acct not in inst.reveals:
            world.engine.submit_share_reveal(inst, r, inst.shares_delivered[acct])


def test_full_lifecycle_reaches_acknowledgment(world):
    inst = world.setup_active()
    assert inst.phase is Phase.ACTIVE
    world.signal(inst)
    assert inst.phase is Phase.DELIBERATING
    assert world.ledger.is_frozen(inst.security_deposit)
    world.ledger.advance_to(inst.deliberation_deadline)
    assert inst.reveal_open
    reveal_all(world, inst)
    assert inst.phase is Phase.ACKNOWLEDGED
    assert [a.donor for a in world.engine.acknowledgments] == [world.acct(world.donor)]
    assert [new for _, new in phases(world, inst)] == [
        Phase.SHARES_DISTRIBUTED, Phase.ACTIVE, Phase.DELIBERATING, Phase.ACKNOWLEDGED]
    assert len(world.ledger.documents_by(kind=DocKind.PUBLIC_WILLS)) == 1
    assert world.engine.check_invariants() == []
    assert reconcile(world.incentives.payouts, world.ledger, world.engine.instances.values(),
                     world.incentives.bail_history) == []


def test_registrar_acceptance_rules(world):
    inst = world.open(acceptable_registrars=(world.acct(world.registrars[0]), world.acct(world.registrars[1])))
    with pytest.raises(ProtocolError, match="acceptable"):
        world.engine.registrar_accept(inst, world.registrars[2])
    world.engine.registrar_accept(inst, world.registrars[0])
    with pytest.raises(ProtocolError, match="already"):
        world.engine.registrar_accept(inst, world.registrars[0])
    unbailed = world._make(b"no-bail", 500)
    open_call = world.open()
    with pytest.raises(ProtocolError, match="bail"):
        world.engine.registrar_accept(open_call, unbailed)


def test_distribution_needs_t_acceptances(world):
    inst = world.open(threshold_t=3)
    world.engine.registrar_accept(inst, world.registrars[0])
    world.engine.registrar_accept(inst, world.registrars[1])
    with pytest.raises(ProtocolError, match="need 3"):
        world.engine.distribute_shares(inst, world.donor)
    with pytest.raises(ProtocolError, match="donor"):
        world.engine.distribute_shares(inst, world.registrars[0])


def test_finalize_fails_atomically_without_funds(world):
    inst = world.open(deposit=world.new_deposit(balance=10))
    for r in world.registrars:
        world.engine.registrar_accept(inst, r)
    world.engine.distribute_shares(inst, world.donor)
    with pytest.raises(ProtocolError, match="setup needs 25"):
        world.engine.finalize_setup(inst, world.donor)
    assert inst.phase is Phase.SHARES_DISTRIBUTED
    assert world.ledger.documents_by(kind=DocKind.WILLS) == []


def test_threshold_needs_amount_distinct_witnesses_and_span(world):
    inst = world.setup_active(min_signaling_span=3)
    world.engine.record_ante(inst, world.witnesses[0], 90)
    assert inst.phase is Phase.ACTIVE  # one witness, x=2
    world.engine.record_ante(inst, world.witnesses[1], 10)
    assert inst.phase is Phase.ACTIVE  # span 0 < 3
    world.ledger.advance_block(3)
    world.engine.record_ante(inst, world.witnesses[2], 1)
    assert inst.phase is Phase.DELIBERATING


def test_ante_must_be_positive_and_phase_checked(world):
    inst = world.open()
    with pytest.raises(ProtocolError):
        world.engine.record_ante(inst, world.witnesses[0], 10)
    active = world.setup_active()
    with pytest.raises(ProtocolError):
        world.engine.record_ante(active, world.witnesses[0], 0)


def test_donor_move_inside_window_aborts_and_forfeits(world):
    inst = world.setup_active()
    world.signal(inst)
    world.ledger.advance_block(2)
    world.engine.donor_liveness_move(inst, world.donor)
    assert inst.phase is Phase.ABORTED and inst.abort_reason == "donor-alive"
    assert not world.ledger.is_frozen(inst.security_deposit)
    assert world.incentives.payouts.total(PayoutKind.ANTE_FORFEIT, inst.instance_id) == 90
    assert all(world.ledger.balance_of(world.acct(w)) == 470 for w in world.witnesses)
    world.ledger.advance_block(10)
    assert world.engine.acknowledgments == []


def test_any_donor_signed_transaction_counts_as_a_move(world):
    inst = world.setup_active()
    world.signal(inst)
    donor = world.acct(world.donor)
    world.ledger.submit_transfer(donor, world.acct(world.witnesses[0]), 1, world.donor.secret_key)
    assert inst.phase is Phase.ABORTED


def test_move_at_deadline_is_too_late(world):
    inst = world.setup_active()
    world.signal(inst)
    world.ledger.advance_to(inst.deliberation_deadline)
    with pytest.raises(ProtocolError, match="elapsed"):
        world.engine.donor_liveness_move(inst, world.donor)
    reveal_all(world, inst)
    assert inst.phase is Phase.ACKNOWLEDGED


def test_zero_deliberation_time_expires_immediately(world):
    inst = world.setup_active(deliberation_time=0)
    world.signal(inst)
    assert inst.reveal_open
    with pytest.raises(ProtocolError):
        world.engine.donor_liveness_move(inst, world.donor)


def test_one_reveal_of_two_needed_aborts_and_slashes(world):
    inst = world.setup_active()
    world.signal(inst)
    world.ledger.advance_to(inst.deliberation_deadline)
    reveal_all(world, inst, who=world.registrars[:1])
    world.ledger.advance_to(inst.reveal_deadline)
    assert inst.phase is Phase.ABORTED and inst.abort_reason == "insufficient-reveals"
    statuses = [world.incentives.bails[world.acct(r)].status for r in world.registrars]
    assert statuses == [BailStatus.STAKED, BailStatus.SLASHED, BailStatus.SLASHED]
    # antes come back; nobody is acknowledged
    assert all(world.ledger.balance_of(world.acct(w)) >= 500 for w in world.witnesses)
    assert world.engine.acknowledgments == []


def test_two_of_three_reveals_acknowledge_and_slash_the_silent_one(world):
    inst = world.setup_active()
    world.signal(inst)
    world.ledger.advance_to(inst.deliberation_deadline)
    reveal_all(world, inst, who=world.registrars[:2])
    assert inst.phase is Phase.DELIBERATING  # the window stays open for the third
    world.ledger.advance_to(inst.reveal_deadline)
    assert inst.phase is Phase.ACKNOWLEDGED
    assert world.incentives.bails[world.acct(world.registrars[2])].status is BailStatus.SLASHED
    final = world.incentives.payouts.total(PayoutKind.REGISTRAR_FEE_FINAL, inst.instance_id)
    assert final == 75


def test_corrupt_share_is_refused_and_recorded(world):
    inst = world.setup_active()
    world.signal(inst)
    world.ledger.advance_to(inst.deliberation_deadline)
    r = world.registrars[0]
    share = inst.shares_delivered[world.acct(r)]
    bad = dataclasses.replace(share, value=bytes(b ^ 1 for b in share.value))
    with pytest.raises(ShareMismatch):
        world.engine.submit_share_reveal(inst, r, bad)
    assert world.incentives.violations(world.acct(r))


def test_forged_donor_signature_ends_invalid(world):
    inst = world.open()
    inst.pre_wills = dataclasses.replace(inst.pre_wills, donor_signature=bytes(64))
    for r in world.registrars:
        world.engine.registrar_accept(inst, r)
    world.engine.distribute_shares(inst, world.donor)
    world.engine.finalize_setup(inst, world.donor)
    world.signal(inst)
    world.ledger.advance_to(inst.deliberation_deadline)
    reveal_all(world, inst, who=world.registrars[:2])
    with pytest.raises(InvalidWills):
        world.engine.enact_acknowledgment(inst)
    assert inst.phase is Phase.ABORTED and inst.invalid
    assert world.engine.acknowledgments == []
    assert world.incentives.payouts.total(PayoutKind.ANTE_REFUND, inst.instance_id) == 90


def test_new_instance_supersedes_and_refunds(world):
    first = world.setup_active()
    world.engine.record_ante(first, world.witnesses[0], 30)
    second = world.open()
    assert first.phase is Phase.SUPERSEDED
    assert world.incentives.payouts.total(PayoutKind.ANTE_REFUND, first.instance_id) == 30
    assert world.engine.latest_valid_instance(donor=world.acct(world.donor)) == second.instance_id
    with pytest.raises(ProtocolError):
        world.engine.record_ante(first, world.witnesses[1], 30)


def test_deliberating_instance_is_not_superseded(world):
    first = world.setup_active()
    world.signal(first)
    world.open()
    assert first.phase is Phase.DELIBERATING


def test_illegal_transition_raises(world):
    inst = world.open()
    with pytest.raises(InvariantViolation):
        world.engine._set_phase(inst, Phase.ACKNOWLEDGED)
    assert (Phase.ACKNOWLEDGED, Phase.DELIBERATING) not in ALLOWED_TRANSITIONS


OPS = st.lists(st.tuples(st.sampled_from(["open", "accept", "distribute", "finalize", "ante",
                                          "move", "tick", "reveal"]),
                         st.integers(0, 2), st.integers(1, 60)), max_size=40)


@settings(max_examples=40, deadline=None)
@given(OPS)
def test_random_operation_sequences_keep_invariants(ops):
    w = EngineWorld()
    w.stake_all(expiry=10_000)
    insts = []
    for op, i, n in ops:
        try:
            if op == "open":
                insts.append(w.open(deliberation_time=n % 4))
            elif op == "tick":
                w.ledger.advance_block(n % 5 + 1)
            elif not insts:
                continue
            elif op == "accept":
                w.engine.registrar_accept(insts[-1], w.registrars[i])
            elif op == "distribute":
                w.engine.distribute_shares(insts[-1], w.donor)
            elif op == "finalize":
                w.engine.finalize_setup(insts[-1], w.donor)
            elif op == "ante":
                w.engine.record_ante(insts[-1], w.witnesses[i], n)
            elif op == "move":
                w.engine.donor_liveness_move(insts[-1], w.donor)
            elif op == "reveal":
                r = w.registrars[i]
                share = insts[-1].shares_delivered.get(w.acct(r))
                if share is not None:
                    w.engine.submit_share_reveal(insts[-1], r, share)
        except ProtocolError:
            pass
    w.ledger.advance_block(50)
    assert w.engine.check_invariants() == []
    assert w.ledger.total_supply() == w.ledger.initial_supply
    assert reconcile(w.incentives.payouts, w.ledger, w.engine.instances.values(),
                     w.incentives.bail_history) == []
    acknowledged = [i for i in insts if i.phase is Phase.ACKNOWLEDGED]
    assert len(acknowledged) <= 1
