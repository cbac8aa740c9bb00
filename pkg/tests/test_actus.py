from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbsdao.actus import (
    AnnuityTerms,
    CollateralLink,
    EventType,
    FlatRateOracle,
    Guarantee,
    MarginState,
    PathRateOracle,
    RandomWalkOracle,
    ann_payment,
    ann_schedule,
    ann_step,
    arm_reset,
    cec_evaluate,
    cec_seize,
    ceg_payout,
    initial_state,
    is_reset_boundary,
    level_payment,
    next_event,
    schedule_csv,
)
from mbsdao.errors import EventOutOfOrder, NotAdjustable, NotResetBoundary, SeizeWithoutDefault, TermsInvalid
from mbsdao.ledger import TokenRef
from mbsdao.money import mul_round
from oracles import bisect_payment

# frozen from the continuous bisection oracle in oracles.py
ORACLE_PAYMENT_100K_6PCT_360 = 599.5505229
ORACLE_BALANCE_AFTER_12 = 98771.99476578
ORACLE_ARM_PAYMENT_8PCT_348 = 730.8592


def terms(principal=10_000_000, rate="0.06", n=360, **kw):
    return AnnuityTerms(principal, Fraction(rate), n, **kw)


def run_full(t, state=None):
    state = state or initial_state(t)
    while not state.matured:
        ev = next_event(state, t)
        state, _ = ann_step(state, ev, ev.payment)
    return state


def test_payment_matches_bisection_oracle():
    assert bisect_payment(100_000.0, 0.005, 360) == pytest.approx(ORACLE_PAYMENT_100K_6PCT_360, abs=1e-6)
    assert abs(ann_payment(terms()) / 100 - ORACLE_PAYMENT_100K_6PCT_360) <= 0.01
    assert ann_payment(terms()) == 59955


def test_zero_rate_payment_is_principal_over_n():
    assert ann_payment(terms(36_000_000, "0", 360)) == 100_000


def test_single_period_pays_principal_plus_one_month():
    assert ann_payment(terms(10_000_000, "0.12", 1)) == 10_100_000


def test_first_period_split():
    sched = ann_schedule(terms())
    assert sched[0].kind is EventType.IED and sched[0].disbursement == 10_000_000
    assert (sched[1].interest_due, sched[1].principal_due) == (50_000, 9_955)


def test_schedule_principal_sums_to_notional():
    sched = ann_schedule(terms())
    assert sum(e.principal_due for e in sched) == 10_000_000
    assert sched[-1].kind is EventType.MATURITY and sched[-1].balance_after == 0


def test_zero_rate_three_periods():
    sched = ann_schedule(terms(300, "0", 3))
    assert [e.principal_due for e in sched[1:]] == [100, 100, 100]
    assert all(e.interest_due == 0 for e in sched)


def test_missed_payment_accrues():
    t = terms()
    s = initial_state(t)
    s2, absorbed = ann_step(s, next_event(s, t), 0)
    assert absorbed == 0
    assert s2.notional_outstanding == s.notional_outstanding
    assert s2.accrued_interest == 50_000


def test_full_payment_reduces_by_scheduled_principal():
    t = terms()
    s = initial_state(t)
    ev = next_event(s, t)
    s2, _ = ann_step(s, ev, ev.payment)
    assert s2.notional_outstanding == s.notional_outstanding - ev.principal_due


def test_step_rejects_wrong_period():
    t = terms()
    s = initial_state(t)
    ev = next_event(s, t)
    s2, _ = ann_step(s, ev, ev.payment)
    with pytest.raises(EventOutOfOrder):
        ann_step(s2, ev, ev.payment)


def test_matured_contract_rejects_further_events():
    t = terms(300, "0", 3)
    s = run_full(t)
    assert s.matured and s.notional_outstanding == 0
    with pytest.raises(EventOutOfOrder):
        next_event(s, t)


def test_invalid_terms():
    with pytest.raises(TermsInvalid):
        terms(0)
    with pytest.raises(TermsInvalid):
        terms(rate="-0.01")
    with pytest.raises(TermsInvalid):
        terms(rate_kind="adjustable")


def test_terms_json_round_trip():
    t = terms(rate_kind="adjustable", spread="0.02", reset_every=12)
    assert AnnuityTerms.from_dict(t.to_dict()) == t


def test_schedule_csv_columns():
    head = schedule_csv(ann_schedule(terms(300, "0", 3))).splitlines()[0]
    assert head == "period,due_time,payment,interest,principal,balance"


# ------------------------------------------------------------------ ARM
def arm_terms():
    return terms(rate_kind="adjustable", spread="0", reset_every=12)


def advance(t, s, k):
    for _ in range(k):
        ev = next_event(s, t)
        s, _ = ann_step(s, ev, ev.payment)
    return s


def test_arm_reset_six_to_eight_percent():
    t = arm_terms()
    s = advance(t, initial_state(t), 12)
    assert abs(s.notional_outstanding / 100 - ORACLE_BALANCE_AFTER_12) <= 0.01
    s = arm_reset(s, t, FlatRateOracle("0.08"), t.due_time(12))
    assert abs(s.payment / 100 - ORACLE_ARM_PAYMENT_8PCT_348) <= 0.01
    end = run_full(t, s)
    assert end.notional_outstanding == 0 and end.period_index == 360


def test_reset_to_same_rate_keeps_payment():
    t = arm_terms()
    s = advance(t, initial_state(t), 12)
    s2 = arm_reset(s, t, FlatRateOracle("0.06"), t.due_time(12))
    assert abs(s2.payment - s.payment) <= 1


def test_reset_to_zero_rate_is_balance_over_remaining():
    t = arm_terms()
    s = advance(t, initial_state(t), 24)
    s2 = arm_reset(s, t, FlatRateOracle(0), t.due_time(24))
    assert s2.payment == mul_round(s.notional_outstanding, Fraction(1, 336))


def test_reset_guards():
    t = arm_terms()
    s = advance(t, initial_state(t), 5)
    with pytest.raises(NotResetBoundary):
        arm_reset(s, t, FlatRateOracle("0.07"), t.due_time(5))
    with pytest.raises(NotAdjustable):
        arm_reset(initial_state(terms()), terms(), FlatRateOracle("0.07"), 0)
    s12 = advance(t, s, 7)
    assert is_reset_boundary(s12, t)
    with pytest.raises(NotResetBoundary):
        arm_reset(s12, t, FlatRateOracle("0.07"), t.due_time(12) + 1)


def test_path_oracle_steps_and_records():
    o = PathRateOracle(["0.04", "0.05"], step_seconds=100)
    assert o.rate_at(0) == Fraction(4, 100)
    assert o.rate_at(150) == Fraction(5, 100)
    assert o.rate_at(10_000) == Fraction(5, 100)
    assert len(o.observations) == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_arm_any_reset_path_ends_at_zero(seed, every):
    t = terms(5_000_000, "0.05", 60, rate_kind="adjustable", spread="0.01", reset_every=every)
    oracle = RandomWalkOracle(seed, Fraction(4, 100), step_bp=50)
    s = initial_state(t)
    while not s.matured:
        if is_reset_boundary(s, t):
            s = arm_reset(s, t, oracle, t.due_time(s.period_index))
        ev = next_event(s, t)
        s, _ = ann_step(s, ev, ev.payment)
    assert s.notional_outstanding == 0 and s.period_index == 60


# ------------------------------------------------------------ properties
@settings(max_examples=150, deadline=None)
@given(st.integers(100, 10**9), st.integers(0, 2000), st.integers(1, 480))
def test_amortization_identity(principal, rate_bp, n):
    t = AnnuityTerms(principal, Fraction(rate_bp, 10_000), n)
    s = initial_state(t)
    while not s.matured:
        ev = next_event(s, t)
        assert ev.interest_due == mul_round(s.notional_outstanding, t.period_rate)
        s, _ = ann_step(s, ev, ev.payment)
    assert s.notional_outstanding == 0 and s.accrued_interest == 0


@given(st.integers(100, 10**9), st.integers(0, 2000), st.integers(0, 200), st.integers(1, 480))
def test_payment_monotone_in_rate_and_principal(principal, rate_bp, bump, n):
    lo = level_payment(principal, Fraction(rate_bp, 120_000), n)
    assert level_payment(principal, Fraction(rate_bp + bump, 120_000), n) >= lo
    assert level_payment(principal + bump, Fraction(rate_bp, 120_000), n) >= lo


# ---------------------------------------------------------------- CEC / CEG
REF = TokenRef("TITLE", 1)


def test_cec_margin_states():
    assert cec_evaluate(CollateralLink(100_000, REF, 120_000)) is MarginState.COVERED
    assert cec_evaluate(CollateralLink(100_000, REF, 90_000)) is MarginState.UNDER_COLLATERALIZED


def test_cec_seize_needs_default_judgment():
    link = CollateralLink(100, REF, 50)
    with pytest.raises(SeizeWithoutDefault):
        cec_seize(link, False, "0x000001")
    assert cec_seize(link, True, "0x000001").to == "0x000001"


def test_ceg_examples():
    assert ceg_payout(Guarantee("g", 1, 800), 0) == 0
    assert ceg_payout(Guarantee("g", 1, 800), 1_000) == 800
    g = Guarantee("g", 1, 800)
    assert [ceg_payout(g, 500), ceg_payout(g, 500)] == [500, 300]


@given(st.fractions(0, 1), st.integers(0, 10**6), st.lists(st.integers(0, 10**5), max_size=30))
def test_ceg_never_exceeds_cap(fraction, cap, shortfalls):
    g = Guarantee("g", fraction, cap)
    paid = sum(ceg_payout(g, s) for s in shortfalls)
    assert paid <= cap and paid == g.exhausted


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 10**9), st.integers(0, 2500), st.integers(1, 480), st.integers(0, 12))
def test_schedule_equals_stepwise_path(principal, rate_bp, n, reset):
    kw = {"rate_kind": "adjustable", "reset_every": reset} if reset else {}
    t = AnnuityTerms(principal, Fraction(rate_bp, 10_000), n, **kw)
    s = initial_state(t)
    stepped = []
    while not s.matured:
        ev = next_event(s, t)
        s, _ = ann_step(s, ev, ev.payment)
        stepped.append(ev)
    got = [e for e in ann_schedule(t)[1:] if e.kind is not EventType.RATE_RESET]
    assert got == stepped
