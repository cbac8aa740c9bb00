"""Contract kernel: annuity (ANN), collateral (CEC), guarantee (CEG), rate oracles.

Only the event subsets a mortgage pool needs are modeled:

* ANN: IED (principal disbursed), scheduled payment, rate reset, maturity.
* CEC: evaluate (margin check), monitor (re-appraisal via a new link value),
  seize (after a default judgment), release (handled by the title registry).
* CEG: attach (construct), trigger/pay (:func:`ceg_payout`), exhaust (cap
  reached), mature (caller drops the guarantee).

Interest per period is ``round_half_up(balance * nominal_rate / periods_per_year)``
in minor units. The level payment is rounded to the minor unit and the final
payment absorbs the residue, so a fully performing loan ends at exactly 0.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from fractions import Fraction
from typing import Any, Mapping, NamedTuple, Optional, Protocol, Sequence

from .errors import (
    EventOutOfOrder,
    NotAdjustable,
    NotResetBoundary,
    SeizeWithoutDefault,
    TermsInvalid,
)
from .ledger import AccountId, TokenRef
from .money import Rational, fmt, mul_round, round_half_up, to_fraction, to_minor

SECONDS_PER_YEAR = 365 * 86_400


def rate_str(r: Fraction) -> str:
    """Shortest text that round-trips through :func:`to_fraction`."""
    as_float = repr(float(r))
    return as_float if Fraction(as_float) == r else f"{r.numerator}/{r.denominator}"


class RateKind(str, Enum):
    FIXED = "fixed"
    ADJUSTABLE = "adjustable"


class EventType(str, Enum):
    IED = "IED"
    SCHEDULED_PAYMENT = "scheduled_payment"
    RATE_RESET = "rate_reset"
    MATURITY = "maturity"


class Status(str, Enum):
    PERFORMING = "performing"
    MATURED = "matured"


@dataclass(frozen=True)
class AnnuityTerms:
    principal: int
    nominal_rate: Fraction
    n_periods: int
    periods_per_year: int = 12
    initial_exchange_date: int = 0
    rate_kind: RateKind = RateKind.FIXED
    spread: Fraction = Fraction(0)
    reset_every: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "nominal_rate", to_fraction(self.nominal_rate))
        object.__setattr__(self, "spread", to_fraction(self.spread))
        object.__setattr__(self, "rate_kind", RateKind(self.rate_kind))
        if self.principal <= 0:
            raise TermsInvalid("principal must be positive")
        if self.n_periods <= 0:
            raise TermsInvalid("n_periods must be positive")
        if self.periods_per_year <= 0:
            raise TermsInvalid("periods_per_year must be positive")
        if self.nominal_rate < 0:
            raise TermsInvalid("nominal_rate must be non-negative")
        if self.spread < 0:
            raise TermsInvalid("spread must be non-negative")
        if self.rate_kind is RateKind.ADJUSTABLE and self.reset_every <= 0:
            raise TermsInvalid("adjustable terms need reset_every > 0")

    @cached_property
    def period_rate(self) -> Fraction:
        return self.nominal_rate / self.periods_per_year

    @cached_property
    def period_seconds(self) -> int:
        return SECONDS_PER_YEAR // self.periods_per_year

    @property
    def maturity_date(self) -> int:
        return self.due_time(self.n_periods)

    def due_time(self, period_index: int) -> int:
        return self.initial_exchange_date + period_index * self.period_seconds

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "principal": fmt(self.principal),
            "nominal_rate": rate_str(self.nominal_rate),
            "n_periods": self.n_periods,
            "periods_per_year": self.periods_per_year,
            "initial_exchange_date": self.initial_exchange_date,
            "rate_kind": self.rate_kind.value,
        }
        if self.rate_kind is RateKind.ADJUSTABLE:
            d["spread"] = rate_str(self.spread)
            d["reset_every"] = self.reset_every
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AnnuityTerms":
        """Terms from JSON; ``principal`` is in major units (``"100000.00"``)."""
        try:
            return cls(
                principal=to_minor(d["principal"]),
                nominal_rate=to_fraction(d["nominal_rate"]),
                n_periods=int(d["n_periods"]),
                periods_per_year=int(d.get("periods_per_year", 12)),
                initial_exchange_date=int(d.get("initial_exchange_date", 0)),
                rate_kind=RateKind(d.get("rate_kind", "fixed")),
                spread=to_fraction(d.get("spread", 0)),
                reset_every=int(d.get("reset_every", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise TermsInvalid(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "AnnuityTerms":
        return cls.from_dict(json.loads(text))


class AnnuityState(NamedTuple):
    """Contract state after ``period_index`` periods (immutable; cheap to rebuild)."""

    period_index: int
    notional_outstanding: int
    period_rate: Fraction
    payment: int
    maturity_index: int
    accrued_interest: int = 0
    status: Status = Status.PERFORMING

    @property
    def matured(self) -> bool:
        return self.status is Status.MATURED

    @property
    def payoff_amount(self) -> int:
        return self.notional_outstanding + self.accrued_interest


class CashFlowEvent(NamedTuple):
    period_index: int
    due_time: int
    interest_due: int
    principal_due: int
    kind: EventType
    balance_after: int = 0
    disbursement: int = 0

    @property
    def payment(self) -> int:
        return self.interest_due + self.principal_due


def level_payment(balance: int, period_rate: Fraction, n: int) -> int:
    """Constant payment amortizing ``balance`` over ``n`` periods, rounded to the minor unit."""
    if n <= 0:
        raise TermsInvalid("n must be positive")
    if period_rate == 0:
        return round_half_up(Fraction(balance, n))
    growth = (1 + period_rate) ** n
    return round_half_up(balance * period_rate * growth / (growth - 1))


def ann_payment(terms: AnnuityTerms) -> int:
    return level_payment(terms.principal, terms.period_rate, terms.n_periods)


def initial_state(terms: AnnuityTerms) -> AnnuityState:
    return AnnuityState(
        period_index=0,
        notional_outstanding=terms.principal,
        period_rate=terms.period_rate,
        payment=ann_payment(terms),
        maturity_index=terms.n_periods,
    )


def scheduled_split(state: AnnuityState) -> tuple[int, int]:
    """(interest, principal) scheduled for the next period from the current state.

    The final period, or any period where the level payment would overshoot
    the balance, retires the whole balance.
    """
    bal = state.notional_outstanding
    interest = mul_round(bal, state.period_rate)
    if state.period_index + 1 >= state.maturity_index or state.payment - interest >= bal:
        return interest, bal
    return interest, max(state.payment - interest, 0)


def amount_due(state: AnnuityState) -> int:
    """Cash that fully satisfies the next period, including any unpaid accrued interest."""
    interest, principal = scheduled_split(state)
    return state.accrued_interest + interest + principal


def next_event(state: AnnuityState, terms: AnnuityTerms) -> CashFlowEvent:
    if state.matured:
        raise EventOutOfOrder("contract has matured")
    interest, principal = scheduled_split(state)
    k = state.period_index + 1
    final = principal == state.notional_outstanding
    return CashFlowEvent(
        period_index=k,
        due_time=terms.due_time(k),
        interest_due=interest,
        principal_due=principal,
        kind=EventType.MATURITY if final else EventType.SCHEDULED_PAYMENT,
        balance_after=state.notional_outstanding - principal,
    )


def ann_step(state: AnnuityState, event: CashFlowEvent, paid: int) -> tuple[AnnuityState, int]:
    """Accrue one period and apply ``paid``: accrued interest first, then principal.

    Returns the new state and the cash actually absorbed (``paid`` capped at
    the payoff amount). A short payment leaves the unpaid interest accrued.
    """
    if paid < 0:
        raise ValueError("paid must be non-negative")
    if state.matured:
        raise EventOutOfOrder("contract has matured")
    if event.kind not in (EventType.SCHEDULED_PAYMENT, EventType.MATURITY):
        raise EventOutOfOrder(f"ann_step cannot consume a {event.kind.value} event")
    if event.period_index != state.period_index + 1:
        raise EventOutOfOrder(f"expected period {state.period_index + 1}, got {event.period_index}")
    return settle(state, event.interest_due, paid)


def settle(state: AnnuityState, interest_due: int, paid: int) -> tuple[AnnuityState, int]:
    """Unchecked core of :func:`ann_step` for the next period, given its interest."""
    bal = state.notional_outstanding
    accrued = state.accrued_interest + interest_due
    absorbed = min(paid, accrued + bal)
    to_interest = min(absorbed, accrued)
    new_bal = bal - (absorbed - to_interest)
    new_accrued = accrued - to_interest
    done = new_bal == 0 and new_accrued == 0
    new = AnnuityState(state.period_index + 1, new_bal, state.period_rate, state.payment,
                       state.maturity_index, new_accrued,
                       Status.MATURED if done else Status.PERFORMING)
    return new, absorbed


def apply_prepayment(state: AnnuityState, amount: int) -> AnnuityState:
    """Unscheduled principal reduction: accrued interest first; payment unchanged, term shortens."""
    if amount < 0:
        raise ValueError("amount must be non-negative")
    if amount > state.payoff_amount:
        raise ValueError("prepayment exceeds payoff amount")
    to_interest = min(amount, state.accrued_interest)
    new_bal = state.notional_outstanding - (amount - to_interest)
    new_accrued = state.accrued_interest - to_interest
    done = new_bal == 0 and new_accrued == 0
    return state._replace(
        notional_outstanding=new_bal,
        accrued_interest=new_accrued,
        status=Status.MATURED if done else state.status,
    )


def ann_schedule(terms: AnnuityTerms) -> list[CashFlowEvent]:
    """IED followed by every payment at the initial rate; the last is the maturity event.

    Adjustable terms also get zero-cash ``rate_reset`` markers at each reset
    boundary, projected at the initial rate.
    """
    out = [
        CashFlowEvent(
            period_index=0,
            due_time=terms.initial_exchange_date,
            interest_due=0,
            principal_due=0,
            kind=EventType.IED,
            balance_after=terms.principal,
            disbursement=terms.principal,
        )
    ]
    # Same arithmetic as scheduled_split + settle with every payment made in
    # full, unrolled over plain ints because schedules are built per loan.
    rate = terms.period_rate
    num2, den = 2 * rate.numerator, rate.denominator
    den2 = 2 * den
    payment = ann_payment(terms)
    n = terms.n_periods
    t0, step = terms.initial_exchange_date, terms.period_seconds
    resets = terms.reset_every if terms.rate_kind is RateKind.ADJUSTABLE else 0
    bal = terms.principal
    for k in range(1, n + 1):
        if resets and k > 1 and (k - 1) % resets == 0:
            out.append(CashFlowEvent(k - 1, t0 + (k - 1) * step, 0, 0, EventType.RATE_RESET, bal))
        interest = (bal * num2 + den) // den2
        principal = bal if k >= n or payment - interest >= bal else max(payment - interest, 0)
        bal -= principal
        kind = EventType.MATURITY if bal == 0 else EventType.SCHEDULED_PAYMENT
        out.append(CashFlowEvent(k, t0 + k * step, interest, principal, kind, bal))
        if bal == 0:
            break
    return out


def schedule_csv(events: Sequence[CashFlowEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["period", "due_time", "payment", "interest", "principal", "balance"])
    for e in events:
        if e.kind is EventType.RATE_RESET:
            continue
        pay = -e.disbursement if e.kind is EventType.IED else e.payment
        w.writerow([e.period_index, e.due_time, fmt(pay), fmt(e.interest_due),
                    fmt(e.principal_due), fmt(e.balance_after)])
    return buf.getvalue()


# ------------------------------------------------------------------ rate oracles
class RateOracle(Protocol):
    def rate_at(self, t: int) -> Fraction: ...


@dataclass
class FlatRateOracle:
    rate: Fraction

    def __post_init__(self) -> None:
        self.rate = to_fraction(self.rate)

    def rate_at(self, t: int) -> Fraction:
        return self.rate


@dataclass
class PathRateOracle:
    """Step-function index: ``rates[k]`` holds on ``[start + k*step, start + (k+1)*step)``.

    Times past the end of the path keep the last rate.
    """

    rates: Sequence[Rational]
    step_seconds: int = SECONDS_PER_YEAR // 12
    start: int = 0
    observations: list[tuple[int, Fraction]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if not self.rates:
            raise ValueError("empty rate path")
        self.rates = [to_fraction(r) for r in self.rates]

    def rate_at(self, t: int) -> Fraction:
        k = max(0, (t - self.start) // self.step_seconds)
        r = self.rates[min(k, len(self.rates) - 1)]  # type: ignore[index]
        self.observations.append((t, r))
        return r  # type: ignore[return-value]


@dataclass
class RandomWalkOracle:
    """Seeded monthly random walk in whole basis points, floored at zero."""

    seed: int
    start_rate: Fraction
    step_bp: int = 10
    step_seconds: int = SECONDS_PER_YEAR // 12
    _path: list[Fraction] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.start_rate = to_fraction(self.start_rate)
        self._rng = random.Random(self.seed)
        self._path = [self.start_rate]

    def rate_at(self, t: int) -> Fraction:
        k = max(0, t // self.step_seconds)
        while len(self._path) <= k:
            move = self._rng.choice((-1, 0, 1)) * self.step_bp
            self._path.append(max(Fraction(0), self._path[-1] + Fraction(move, 10_000)))
        return self._path[k]


def arm_reset(state: AnnuityState, terms: AnnuityTerms, oracle: RateOracle, t: int) -> AnnuityState:
    """Re-price an adjustable loan at a reset boundary.

    The new period rate is ``(index + spread) / periods_per_year``; the payment
    is re-levelled over the remaining periods so maturity does not move.
    """
    if terms.rate_kind is not RateKind.ADJUSTABLE:
        raise NotAdjustable("fixed-rate terms cannot reset")
    k = state.period_index
    if k <= 0 or k >= state.maturity_index or k % terms.reset_every or t != terms.due_time(k):
        raise NotResetBoundary(f"t={t} (period {k}) is not a reset boundary")
    annual = max(Fraction(0), to_fraction(oracle.rate_at(t)) + terms.spread)
    rate = annual / terms.periods_per_year
    remaining = state.maturity_index - k
    return state._replace(period_rate=rate, payment=level_payment(state.notional_outstanding, rate, remaining))


def is_reset_boundary(state: AnnuityState, terms: AnnuityTerms) -> bool:
    k = state.period_index
    return (
        terms.rate_kind is RateKind.ADJUSTABLE
        and 0 < k < state.maturity_index
        and k % terms.reset_every == 0
    )


# ------------------------------------------------------------------ CEC
class MarginState(str, Enum):
    COVERED = "covered"
    UNDER_COLLATERALIZED = "under_collateralized"


@dataclass(frozen=True)
class CollateralLink:
    exposure: int
    collateral_ref: TokenRef
    collateral_value: int

    @property
    def margin_state(self) -> MarginState:
        return cec_evaluate(self)

    def monitor(self, exposure: Optional[int] = None, collateral_value: Optional[int] = None) -> "CollateralLink":
        return replace(
            self,
            exposure=self.exposure if exposure is None else exposure,
            collateral_value=self.collateral_value if collateral_value is None else collateral_value,
        )


@dataclass(frozen=True)
class SeizeInstruction:
    token: TokenRef
    to: AccountId
    exposure: int


def cec_evaluate(link: CollateralLink) -> MarginState:
    if link.collateral_value >= link.exposure:
        return MarginState.COVERED
    return MarginState.UNDER_COLLATERALIZED


def cec_seize(link: CollateralLink, default_judgment: bool, creditor: AccountId) -> SeizeInstruction:
    if not default_judgment:
        raise SeizeWithoutDefault(f"no default judgment against {link.collateral_ref}")
    return SeizeInstruction(link.collateral_ref, creditor, link.exposure)


# ------------------------------------------------------------------ CEG
@dataclass
class Guarantee:
    guarantor: AccountId
    coverage_fraction: Fraction
    coverage_cap: int
    exhausted: int = 0

    def __post_init__(self) -> None:
        self.coverage_fraction = to_fraction(self.coverage_fraction)
        if not 0 <= self.coverage_fraction <= 1:
            raise ValueError("coverage_fraction outside [0, 1]")
        if self.coverage_cap < 0:
            raise ValueError("coverage_cap must be non-negative")

    @property
    def remaining(self) -> int:
        return self.coverage_cap - self.exhausted

    @property
    def is_exhausted(self) -> bool:
        return self.exhausted >= self.coverage_cap


def ceg_payout(g: Guarantee, shortfall: int) -> int:
    """Pay ``round_half_up(shortfall * coverage_fraction)``, capped by what is left of the cap."""
    if shortfall < 0:
        raise ValueError("shortfall must be non-negative")
    pay = min(mul_round(shortfall, g.coverage_fraction), g.remaining)
    g.exhausted += pay
    return pay
