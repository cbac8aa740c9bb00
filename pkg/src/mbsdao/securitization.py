"""Pooling of cash-flow NFTs and tranche distribution.

Three schemes share one contract surface:

* ``passthrough``: every holder gets a pro-rata share of collections.
* ``waterfall``: interest by priority at each tranche's coupon, excess
  interest to the most junior tranche; principal sequential senior-first;
  losses written down bottom-up.
* ``io_po``: interest to the IO class, all principal (including recoveries)
  to the PO class.

The distribution functions are pure. :class:`Securitizer` wires them to the
ledger: it holds pooled NFTs, mints security classes and pays holders.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Sequence

from .errors import AlreadyPooled, EmptyPool, NotOwner, SchemeInvalid
from .ledger import AccountId, Ledger, TokenClass, TokenKind, TokenRef
from .money import largest_remainder, mul_round, to_fraction
from .mortgage import CASHFLOW_CLASS, MortgageAccount, MortgageDesk


class SchemeKind(str, Enum):
    PASSTHROUGH = "passthrough"
    WATERFALL = "waterfall"
    IO_PO = "io_po"


@dataclass(frozen=True)
class Collections:
    interest: int = 0
    scheduled_principal: int = 0
    prepaid_principal: int = 0
    recoveries: int = 0

    def __post_init__(self) -> None:
        if min(self.interest, self.scheduled_principal, self.prepaid_principal, self.recoveries) < 0:
            raise ValueError("collection components must be non-negative")

    @property
    def principal(self) -> int:
        return self.scheduled_principal + self.prepaid_principal + self.recoveries

    @property
    def total(self) -> int:
        return self.interest + self.principal

    def __add__(self, other: "Collections") -> "Collections":
        return Collections(
            self.interest + other.interest,
            self.scheduled_principal + other.scheduled_principal,
            self.prepaid_principal + other.prepaid_principal,
            self.recoveries + other.recoveries,
        )


@dataclass
class Tranche:
    name: str
    priority: int
    face: int
    outstanding: int
    coupon: Fraction = Fraction(0)
    token_class: str = ""

    def __post_init__(self) -> None:
        self.coupon = to_fraction(self.coupon)
        if not 0 <= self.outstanding <= self.face:
            raise SchemeInvalid(f"tranche {self.name}: outstanding outside [0, face]")


@dataclass
class Pool:
    id: str
    account: AccountId
    members: list[TokenRef]
    principal: int
    balance: int
    collections_this_period: Collections = Collections()
    cumulative_loss: int = 0


@dataclass
class TrancheScheme:
    kind: SchemeKind
    n_shares: int = 0
    tranches: list[Tranche] = field(default_factory=list)

    def validate(self, pool_principal: int) -> None:
        if self.kind is SchemeKind.PASSTHROUGH and self.n_shares <= 0:
            raise SchemeInvalid("pass-through needs n_shares > 0")
        if self.kind is SchemeKind.WATERFALL:
            if not self.tranches:
                raise SchemeInvalid("waterfall needs tranches")
            prios = [t.priority for t in self.tranches]
            if len(set(prios)) != len(prios):
                raise SchemeInvalid("tranche priorities must be distinct")
            if sum(t.face for t in self.tranches) != pool_principal:
                raise SchemeInvalid("tranche faces must sum to pool principal")


@dataclass(frozen=True)
class WaterfallCash:
    interest: dict[str, int]
    principal: dict[str, int]
    residual: int

    def per_tranche(self) -> dict[str, int]:
        return {k: self.interest[k] + self.principal[k] for k in self.interest}

    @property
    def total(self) -> int:
        return sum(self.interest.values()) + sum(self.principal.values())


# ----------------------------------------------------------- pure distribution
def distribute_passthrough(collections: Collections | int, holdings: Mapping[AccountId, int],
                           n_shares: Optional[int] = None) -> dict[AccountId, int]:
    """Pro-rata split with largest-remainder pennies; ties go to the lowest account id."""
    total = collections.total if isinstance(collections, Collections) else collections
    if n_shares is not None and sum(holdings.values()) != n_shares:
        raise SchemeInvalid(f"holdings sum {sum(holdings.values())} != n_shares {n_shares}")
    accts = sorted(holdings)
    return dict(zip(accts, largest_remainder(total, [holdings[a] for a in accts])))


def by_seniority(tranches: Iterable[Tranche]) -> list[Tranche]:
    return sorted(tranches, key=lambda t: t.priority)


def distribute_waterfall(collections: Collections, tranches: Sequence[Tranche],
                         periods_per_year: int = 12) -> tuple[list[Tranche], WaterfallCash]:
    """Sequential-pay one period; returns updated tranches and the cash each receives.

    Coupon interest is owed on the opening outstanding. Interest left after
    every coupon, and principal left after every tranche is retired, goes
    to the most junior tranche, so the cash out equals collections exactly.
    """
    order = [replace(t) for t in by_seniority(tranches)]
    interest = {t.name: 0 for t in order}
    principal = {t.name: 0 for t in order}
    avail = collections.interest
    for t in order:
        pay = min(avail, mul_round(t.outstanding, t.coupon / periods_per_year))
        interest[t.name] += pay
        avail -= pay
    residual = avail
    avail = collections.principal
    for t in order:
        pay = min(avail, t.outstanding)
        principal[t.name] += pay
        t.outstanding -= pay
        avail -= pay
    residual += avail
    if order:
        interest[order[-1].name] += residual
    return order, WaterfallCash(interest, principal, residual)


def allocate_losses(tranches: Sequence[Tranche], loss: int) -> tuple[list[Tranche], int]:
    """Write ``loss`` down from the most junior tranche up; returns (tranches, unabsorbed excess)."""
    if loss < 0:
        raise ValueError("loss must be non-negative")
    order = [replace(t) for t in by_seniority(tranches)]
    left = loss
    for t in reversed(order):
        hit = min(left, t.outstanding)
        t.outstanding -= hit
        left -= hit
    return order, left


def split_io_po(collections: Collections) -> tuple[int, int]:
    return collections.interest, collections.principal


def waterfall_tranches(pool_principal: int, shares: Sequence[tuple[str, Any]],
                       coupon: Fraction | float | str) -> list[Tranche]:
    """Build a senior-first stack whose faces split the pool exactly by ``shares``."""
    faces = largest_remainder(pool_principal, [to_fraction(s) for _, s in shares])
    return [Tranche(name, i, f, f, to_fraction(coupon)) for i, ((name, _), f) in enumerate(zip(shares, faces))]


def scheme_from_dict(d: Mapping[str, Any], pool_principal: int, coupon: Fraction) -> TrancheScheme:
    """Scheme JSON: ``{"kind": "waterfall", "tranches": [{"name": "A", "share": "0.7"}, ...]}``."""
    try:
        kind = SchemeKind(d["kind"])
    except (KeyError, ValueError) as exc:
        raise SchemeInvalid(f"bad scheme kind: {exc}") from exc
    if kind is SchemeKind.PASSTHROUGH:
        return TrancheScheme(kind, n_shares=int(d.get("n_shares", 1_000_000)))
    if kind is SchemeKind.IO_PO:
        return TrancheScheme(kind)
    specs = d.get("tranches") or [{"name": "A", "share": "0.7"}, {"name": "M", "share": "0.2"},
                                   {"name": "J", "share": "0.1"}]
    tranches = waterfall_tranches(pool_principal, [(s["name"], s["share"]) for s in specs], coupon)
    for t, s in zip(tranches, specs):
        if "coupon" in s:
            t.coupon = to_fraction(s["coupon"])
    return TrancheScheme(kind, tranches=tranches)


def tranche_report_csv(rows: Iterable[tuple[int, str, int, int, int, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["period", "tranche", "interest_paid", "principal_paid", "writedown", "outstanding"])
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


# --------------------------------------------------------------- ledger wiring
@dataclass
class PeriodDistribution:
    per_class: dict[str, int]
    per_holder: dict[AccountId, int]
    writedowns: dict[str, int]
    split: dict[str, tuple[int, int]] = field(default_factory=dict)
    unabsorbed_loss: int = 0


class Securitizer:
    """Pool contract: owns pooled cash-flow NFTs and pays security holders."""

    def __init__(self, ledger: Ledger, desk: MortgageDesk, periods_per_year: int = 12):
        self.ledger = ledger
        self.desk = desk
        self.periods_per_year = periods_per_year
        self._pooled: dict[TokenRef, str] = {}
        self.pools: dict[str, Pool] = {}
        self.schemes: dict[str, TrancheScheme] = {}

    def loan_for(self, token: TokenRef) -> MortgageAccount:
        meta = self.ledger.metadata(token)
        return self.desk.loans[meta["mortgage_id"]]

    def form_pool(self, tokens: Sequence[TokenRef], owner: AccountId) -> Pool:
        if not tokens:
            raise EmptyPool("a pool needs at least one cash-flow token")
        if len(set(tokens)) != len(tokens):
            raise AlreadyPooled("duplicate token in pool request")
        for tok in tokens:
            if tok.class_id != CASHFLOW_CLASS:
                raise ValueError(f"{tok} is not a cash-flow token")
            if tok in self._pooled:
                raise AlreadyPooled(f"{tok} already in pool {self._pooled[tok]}")
            if self.ledger.owner_of(tok) != owner:
                raise NotOwner(f"{owner} does not hold {tok}")
        pid = f"P{len(self.pools) + 1}"
        account = self.ledger.create_account(f"pool-{pid}")
        principal = 0
        for tok in tokens:
            self.ledger.transfer(tok, owner, account, memo=f"pool {pid}")
            self._pooled[tok] = pid
            principal += self.loan_for(tok).balance
        pool = Pool(pid, account, list(tokens), principal, principal)
        self.pools[pid] = pool
        return pool

    def weighted_coupon(self, pool: Pool) -> Fraction:
        """Balance-weighted average note rate of the pool's loans."""
        loans = [self.loan_for(t) for t in pool.members]
        total = sum(m.balance for m in loans)
        if total == 0:
            return Fraction(0)
        return sum((Fraction(m.balance) * m.terms.nominal_rate for m in loans), Fraction(0)) / total

    def issue(self, pool: Pool, scheme: TrancheScheme,
              allocations: Mapping[str, Mapping[AccountId, int]]) -> TrancheScheme:
        """Mint the security classes and hand them to investors.

        ``allocations`` maps ``"PT"``, ``"IO"``, ``"PO"`` or a tranche name to
        ``{account: units}``; each class's units must add to its supply.
        """
        scheme.validate(pool.principal)
        supplies = self._class_supplies(pool, scheme)
        for key, supply in supplies.items():
            alloc = allocations.get(key)
            if alloc is None or sum(alloc.values()) != supply:
                raise SchemeInvalid(f"allocation for {key} must sum to {supply}")
        for key, supply in supplies.items():
            cid = f"{pool.id}-{key}"
            self.ledger.register_class(TokenClass(cid, TokenKind.FUNGIBLE, max_supply=supply))
            for acct in sorted(allocations[key]):
                if allocations[key][acct]:
                    self.ledger.mint(cid, acct, allocations[key][acct], memo=f"issue {cid}")
        for t in scheme.tranches:
            t.token_class = f"{pool.id}-{t.name}"
        self.schemes[pool.id] = scheme
        return scheme

    @staticmethod
    def _class_supplies(pool: Pool, scheme: TrancheScheme) -> dict[str, int]:
        if scheme.kind is SchemeKind.PASSTHROUGH:
            return {"PT": scheme.n_shares}
        if scheme.kind is SchemeKind.IO_PO:
            return {"IO": pool.principal, "PO": pool.principal}
        return {t.name: t.face for t in by_seniority(scheme.tranches)}

    def class_amounts(self, pool: Pool, collections: Collections) -> tuple[dict[str, int], Optional[WaterfallCash]]:
        scheme = self.schemes[pool.id]
        if scheme.kind is SchemeKind.PASSTHROUGH:
            return {"PT": collections.total}, None
        if scheme.kind is SchemeKind.IO_PO:
            io_amt, po_amt = split_io_po(collections)
            return {"IO": io_amt, "PO": po_amt}, None
        scheme.tranches, cash = distribute_waterfall(collections, scheme.tranches, self.periods_per_year)
        return cash.per_tranche(), cash

    def pay_period(self, pool: Pool, collections: Collections, loss: int = 0) -> PeriodDistribution:
        """Distribute one period's net collections from the pool account, then book losses."""
        per_class, cash = self.class_amounts(pool, collections)
        if cash is not None:
            split = {k: (cash.interest[k], cash.principal[k]) for k in cash.interest}
        elif "PT" in per_class:
            split = {"PT": (collections.interest, collections.principal)}
        else:
            split = {"IO": (per_class["IO"], 0), "PO": (0, per_class["PO"])}
        per_holder: dict[AccountId, int] = {}
        for key, amount in per_class.items():
            if amount <= 0:
                continue
            cid = f"{pool.id}-{key}"
            for acct, amt in distribute_passthrough(amount, self.ledger.holders(cid)).items():
                if amt:
                    self.ledger.pay(pool.account, acct, amt, f"distribute {cid}")
                    per_holder[acct] = per_holder.get(acct, 0) + amt
        pool.balance -= collections.principal + loss
        pool.cumulative_loss += loss
        pool.collections_this_period = collections
        scheme = self.schemes[pool.id]
        writedowns: dict[str, int] = {}
        excess = 0
        if scheme.kind is SchemeKind.WATERFALL:
            before = {t.name: t.outstanding for t in scheme.tranches}
            scheme.tranches, excess = allocate_losses(scheme.tranches, loss)
            writedowns = {t.name: before[t.name] - t.outstanding for t in scheme.tranches}
        return PeriodDistribution(per_class, per_holder, writedowns, split, excess)


def scheme_to_dict(scheme: TrancheScheme) -> dict[str, Any]:
    d: dict[str, Any] = {"kind": scheme.kind.value}
    if scheme.kind is SchemeKind.PASSTHROUGH:
        d["n_shares"] = scheme.n_shares
    if scheme.kind is SchemeKind.WATERFALL:
        d["tranches"] = [
            {"name": t.name, "priority": t.priority, "face": t.face, "outstanding": t.outstanding,
             "coupon": str(t.coupon), "token_class": t.token_class}
            for t in by_seniority(scheme.tranches)
        ]
    return d


def scheme_json(scheme: TrancheScheme) -> str:
    return json.dumps(scheme_to_dict(scheme), indent=2)
