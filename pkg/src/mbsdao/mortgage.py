"""Mortgage lifecycle: origination, servicing, delinquency, foreclosure, prepayment.

A :class:`MortgageDesk` is the mortgage smart contract. It holds titles in
custody under lien, mints the Borrower and Cash-Flow role NFTs, and routes
every collected unit of cash to whoever holds the cash-flow claim at that
moment (the NFT owner, or share holders pro-rata once the claim is split).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional

from . import actus
from .actus import AnnuityState, AnnuityTerms, CollateralLink, Guarantee
from .errors import (
    LenderUnderfunded,
    LoanTerminal,
    NotInDefault,
    NotOwner,
    Overpayment,
    TitleEncumbered,
    VoteNotPassed,
)
from .ledger import AccountId, Ledger, TokenClass, TokenKind, TokenRef
from .money import fmt, largest_remainder
from .tokenization import TitleRegistry, TitleToken

BORROWER_CLASS = "BORROWER"
CASHFLOW_CLASS = "CASHFLOW"


class Delinquency(str, Enum):
    CURRENT = "current"
    D30 = "d30"
    D60 = "d60"
    D90 = "d90"
    DEFAULT_JUDGMENT = "default_judgment"
    FORECLOSED = "foreclosed"
    PREPAID = "prepaid"
    MATURED = "matured"


TERMINAL = frozenset({Delinquency.FORECLOSED, Delinquency.PREPAID, Delinquency.MATURED})
_LADDER = (Delinquency.D30, Delinquency.D60, Delinquency.D90, Delinquency.DEFAULT_JUDGMENT)


@dataclass(frozen=True)
class DelinquencyPolicy:
    """Missed-payment counts at which each delinquency bucket starts."""

    d30: int = 1
    d60: int = 2
    d90: int = 3
    default_judgment: int = 4

    def __post_init__(self) -> None:
        if not 0 < self.d30 <= self.d60 <= self.d90 <= self.default_judgment:
            raise ValueError("thresholds must be positive and non-decreasing")

    def state_for(self, missed: int) -> Delinquency:
        state = Delinquency.CURRENT
        for bucket, limit in zip(_LADDER, (self.d30, self.d60, self.d90, self.default_judgment)):
            if missed >= limit:
                state = bucket
        return state


@dataclass
class MortgageAccount:
    id: int
    terms: AnnuityTerms
    ann_state: AnnuityState
    collateral: CollateralLink
    title: TitleToken
    borrower_token: TokenRef
    cashflow_token: TokenRef
    guarantee: Optional[Guarantee] = None
    delinquency: Delinquency = Delinquency.CURRENT
    missed_payments: int = 0
    arrears: int = 0
    share_class: Optional[str] = None
    foreclosure_authorized: bool = False
    history: list[tuple[int, int, int, int, str]] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.delinquency in TERMINAL

    @property
    def balance(self) -> int:
        return self.ann_state.notional_outstanding

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "due", "paid", "arrears", "state"])
        for period, due, paid, arrears, state in self.history:
            w.writerow([period, fmt(due), fmt(paid), fmt(arrears), state])
        return buf.getvalue()


class Collection(NamedTuple):
    """Outcome of one servicing call, split for pool accounting."""

    paid: int
    interest: int
    principal: int
    scheduled: int
    distribution: dict[AccountId, int]


@dataclass(frozen=True)
class Foreclosure:
    exposure: int
    recovery: int
    guarantee_paid: int
    loss: int
    distribution: dict[AccountId, int]


class MortgageDesk:
    """The mortgage contract: one ledger account plus the role-token classes."""

    def __init__(self, ledger: Ledger, registry: TitleRegistry,
                 policy: DelinquencyPolicy = DelinquencyPolicy(), keep_history: bool = True):
        self.ledger = ledger
        self.registry = registry
        self.policy = policy
        self.keep_history = keep_history
        self.account = ledger.create_account("mortgage-contract")
        self.reo_buyer = ledger.create_account("reo-market")
        ledger.register_class(TokenClass(BORROWER_CLASS, TokenKind.NON_FUNGIBLE))
        ledger.register_class(TokenClass(CASHFLOW_CLASS, TokenKind.NON_FUNGIBLE))
        self.loans: dict[int, MortgageAccount] = {}
        self._default_listeners: list[Callable[[MortgageAccount], None]] = []

    def on_default(self, listener: Callable[[MortgageAccount], None]) -> None:
        """Subscribe to default judgments (e.g. to open a foreclosure proposal)."""
        self._default_listeners.append(listener)

    # ------------------------------------------------------------- holders
    def borrower(self, m: MortgageAccount) -> AccountId:
        return self.ledger.owner_of(m.borrower_token)

    def cashflow_holders(self, m: MortgageAccount) -> dict[AccountId, int]:
        if m.share_class is not None:
            return self.ledger.holders(m.share_class)
        return {self.ledger.owner_of(m.cashflow_token): 1}

    def route(self, m: MortgageAccount, source: AccountId, amount: int, memo: str) -> dict[AccountId, int]:
        """Pay ``amount`` from ``source`` to the current cash-flow holder(s)."""
        if amount <= 0:
            return {}
        if m.share_class is None:
            acct = self.ledger.owner_of(m.cashflow_token)
            self.ledger.pay(source, acct, amount, memo)
            return {acct: amount}
        holders = self.cashflow_holders(m)
        if len(holders) == 1:
            (acct,) = holders
            self.ledger.pay(source, acct, amount, memo)
            return {acct: amount}
        accts = list(holders)
        out = {}
        for acct, amt in zip(accts, largest_remainder(amount, [holders[a] for a in accts])):
            if amt:
                self.ledger.pay(source, acct, amt, memo)
                out[acct] = amt
        return out

    # ---------------------------------------------------------- origination
    def originate(
        self,
        borrower: AccountId,
        lender: AccountId,
        title: TitleToken,
        terms: AnnuityTerms,
        guarantee: Optional[Guarantee] = None,
        collateral_value: Optional[int] = None,
    ) -> MortgageAccount:
        if title.encumbered:
            raise TitleEncumbered(title.parcel_id)
        if self.registry.owner(title) != borrower:
            raise NotOwner(f"{borrower} does not own {title.parcel_id}")
        if self.ledger.balance_of(lender) < terms.principal:
            raise LenderUnderfunded(f"{lender} cannot fund {fmt(terms.principal)}")
        mid = len(self.loans) + 1
        self.registry.place_in_custody(title, self.account)
        self.registry.encumber(title, self.account)
        self.ledger.pay(lender, borrower, terms.principal, f"IED m{mid}")
        meta = {"mortgage_id": mid, "parcel_id": title.parcel_id}
        btok = self.ledger.mint(BORROWER_CLASS, borrower, metadata=meta, memo=f"borrower m{mid}")
        ctok = self.ledger.mint(CASHFLOW_CLASS, lender, metadata=meta, memo=f"cashflow m{mid}")
        value = terms.principal if collateral_value is None else collateral_value
        m = MortgageAccount(
            id=mid,
            terms=terms,
            ann_state=actus.initial_state(terms),
            collateral=CollateralLink(terms.principal, title.token, value),
            title=title,
            borrower_token=btok,
            cashflow_token=ctok,
            guarantee=guarantee,
        )
        self.loans[mid] = m
        return m

    def fractionalize_cashflow(self, m: MortgageAccount, holder: AccountId, n_shares: int,
                               allocation: dict[AccountId, int]) -> str:
        """Swap the Cash-Flow NFT for ``n_shares`` fungible debt shares."""
        if m.share_class is not None:
            raise ValueError(f"m{m.id} is already fractionalized")
        if self.ledger.owner_of(m.cashflow_token) != holder:
            raise NotOwner(f"{holder} does not hold the cash-flow claim of m{m.id}")
        if sum(allocation.values()) != n_shares:
            raise ValueError("allocation must sum to n_shares")
        cls = f"DEBT-m{m.id}"
        self.ledger.register_class(TokenClass(cls, TokenKind.FUNGIBLE, max_supply=n_shares))
        self.ledger.transfer(m.cashflow_token, holder, self.account, memo=f"fractionalize m{m.id}")
        for acct in sorted(allocation):
            if allocation[acct]:
                self.ledger.mint(cls, acct, allocation[acct], memo=f"debt shares m{m.id}")
        m.share_class = cls
        return cls

    def authorize_foreclosure(self, mortgage_id: int) -> None:
        """Called when the creditors' vote to foreclose has been executed."""
        self.loans[mortgage_id].foreclosure_authorized = True

    # ------------------------------------------------------------ servicing
    def _at(self, t: Optional[int]) -> None:
        if t is not None and t > self.ledger.now:
            self.ledger.advance_to(t)

    def collect(self, m: MortgageAccount, paid: int, t: Optional[int] = None,
                payer: Optional[AccountId] = None) -> Collection:
        """Apply one period's payment; short payments become arrears, not errors."""
        if m.terminal:
            raise LoanTerminal(f"m{m.id} is {m.delinquency.value}")
        state = m.ann_state
        if paid < 0:
            raise ValueError("paid must be non-negative")
        k = state.period_index + 1
        interest_due, principal_due = actus.scheduled_split(state)
        due_time = m.terms.due_time(k)
        if t is not None and t < due_time:
            raise ValueError(f"payment for period {k} before due time {due_time}")
        if paid > state.notional_outstanding + state.accrued_interest + interest_due:
            raise Overpayment(f"{fmt(paid)} exceeds payoff of m{m.id}")
        self._at(t)
        scheduled = interest_due + principal_due
        new_state, absorbed = actus.settle(state, interest_due, paid)
        interest = state.accrued_interest + interest_due - new_state.accrued_interest
        principal = state.notional_outstanding - new_state.notional_outstanding
        m.ann_state = new_state

        if absorbed < scheduled:
            m.arrears += scheduled - absorbed
            m.missed_payments += 1
        elif m.arrears:
            m.arrears = max(0, m.arrears - (absorbed - scheduled))
            if m.arrears == 0:
                m.missed_payments = 0
        if absorbed:
            payer = payer or self.borrower(m)
            dist = self.route(m, payer, absorbed, f"collect m{m.id} p{k}")
        else:
            self.ledger.notice(f"missed m{m.id} p{k}", self.borrower(m))
            dist = {}
        if new_state.matured:
            m.arrears = 0
            m.missed_payments = 0
            self._close(m, Delinquency.MATURED)
        elif m.missed_payments or m.delinquency is not Delinquency.CURRENT:
            self.advance_delinquency(m)
        if self.keep_history:
            m.history.append((k, scheduled, absorbed, m.arrears, m.delinquency.value))
        return Collection(absorbed, interest, principal, scheduled, dist)

    def advance_delinquency(self, m: MortgageAccount, t: Optional[int] = None) -> MortgageAccount:
        """Re-derive the delinquency bucket from the missed-payment count."""
        if m.terminal:
            return m
        self._at(t)
        before = m.delinquency
        if before is Delinquency.DEFAULT_JUDGMENT and m.missed_payments:
            return m
        m.delinquency = self.policy.state_for(m.missed_payments)
        if m.delinquency is Delinquency.DEFAULT_JUDGMENT and before is not Delinquency.DEFAULT_JUDGMENT:
            self.ledger.notice(f"default-judgment m{m.id}", self.borrower(m))
            for listener in self._default_listeners:
                listener(m)
        return m

    def prepay(self, m: MortgageAccount, amount: int, t: Optional[int] = None,
               payer: Optional[AccountId] = None) -> MortgageAccount:
        """Unscheduled payment; paying the full payoff closes the loan and frees the title."""
        if m.terminal or m.delinquency is Delinquency.DEFAULT_JUDGMENT:
            raise LoanTerminal(f"m{m.id} is {m.delinquency.value}")
        if amount <= 0:
            raise ValueError("prepayment must be positive")
        if amount > m.ann_state.payoff_amount:
            raise Overpayment(f"{fmt(amount)} exceeds payoff {fmt(m.ann_state.payoff_amount)}")
        self._at(t)
        payer = payer or self.borrower(m)
        self.route(m, payer, amount, f"prepay m{m.id}")
        m.ann_state = actus.apply_prepayment(m.ann_state, amount)
        m.arrears = max(0, m.arrears - amount)
        if m.ann_state.matured:
            m.arrears = 0
            m.missed_payments = 0
            self._close(m, Delinquency.PREPAID)
        elif m.arrears == 0 and m.missed_payments:
            m.missed_payments = 0
            m.delinquency = Delinquency.CURRENT
        return m

    def _close(self, m: MortgageAccount, state: Delinquency) -> None:
        m.delinquency = state
        self.registry.release(m.title, self.account)
        self.registry.return_to_self_custody(m.title, self.borrower(m))
        m.collateral = m.collateral.monitor(exposure=0)

    # ----------------------------------------------------------- foreclosure
    def foreclose(self, m: MortgageAccount, recovery_value: int,
                  buyer: Optional[AccountId] = None) -> Foreclosure:
        """Seize the title, sell it for ``recovery_value``, call the guarantee, book the loss.

        The buyer (default: the desk's REO market account, funded on demand)
        pays the recovery to the cash-flow holders and receives the title.
        """
        if m.delinquency is not Delinquency.DEFAULT_JUDGMENT:
            raise NotInDefault(f"m{m.id} is {m.delinquency.value}")
        if m.share_class is not None and not m.foreclosure_authorized:
            raise VoteNotPassed(f"creditors of m{m.id} have not authorized foreclosure")
        if recovery_value < 0:
            raise ValueError("recovery_value must be non-negative")
        exposure = m.ann_state.notional_outstanding
        link = m.collateral.monitor(exposure=exposure)
        instr = actus.cec_seize(link, True, self.account)
        recovery = min(recovery_value, exposure)
        gpaid = actus.ceg_payout(m.guarantee, exposure - recovery) if m.guarantee else 0
        loss = exposure - recovery - gpaid

        buyer = buyer or self.reo_buyer
        if buyer == self.reo_buyer and self.ledger.balance_of(buyer) < recovery:
            self.ledger.faucet(buyer, recovery - self.ledger.balance_of(buyer), memo="reo funds")
        self.registry.release(m.title, instr.to)
        dist: dict[AccountId, int] = {}
        for acct, amt in self.route(m, buyer, recovery, f"recovery m{m.id}").items():
            dist[acct] = dist.get(acct, 0) + amt
        if gpaid:
            for acct, amt in self.route(m, m.guarantee.guarantor, gpaid, f"guarantee m{m.id}").items():  # type: ignore[union-attr]
                dist[acct] = dist.get(acct, 0) + amt
        self.registry.transfer_title(m.title, instr.to, buyer)
        m.collateral = link.monitor(exposure=0)
        m.delinquency = Delinquency.FORECLOSED
        self.ledger.notice(f"foreclosed m{m.id} loss={loss}", self.account)
        return Foreclosure(exposure, recovery, gpaid, loss, dist)
