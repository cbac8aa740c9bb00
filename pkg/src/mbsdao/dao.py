"""Token-weighted governance for an MBS pool.

Voting power is ``sum(balance(class) * votes_per_token(class))`` over the
governance classes, snapshotted when a proposal opens so tokens moved
mid-vote cannot be counted twice. Execution is an explicit call after a
proposal has passed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .errors import (
    AlreadyExecuted,
    DaoDissolved,
    EmptySeed,
    NotPassed,
    NotTokenholder,
    UnknownProposal,
    VotingClosed,
)
from .ledger import AccountId, Ledger, TokenClass, TokenKind, TokenRef
from .money import largest_remainder, to_fraction


class Choice(str, Enum):
    YES = "yes"
    NO = "no"
    ABSTAIN = "abstain"


class ProposalStatus(str, Enum):
    OPEN = "open"
    PASSED = "passed"
    FAILED = "failed"
    EXECUTED = "executed"


@dataclass(frozen=True)
class GovernanceClass:
    class_id: str
    votes_per_token: int
    max_supply: Optional[int] = None

    def __post_init__(self) -> None:
        if self.votes_per_token < 0:
            raise ValueError("votes_per_token must be non-negative")


@dataclass(frozen=True)
class SetParameter:
    key: str
    value: Any


@dataclass(frozen=True)
class AuthorizeForeclosure:
    mortgage_id: int


@dataclass(frozen=True)
class AcquireAsset:
    token: TokenRef
    seller: AccountId
    price: int
    amount: Optional[int] = None


@dataclass(frozen=True)
class Dissolve:
    pass


ProposalKind = Union[SetParameter, AuthorizeForeclosure, AcquireAsset, Dissolve]


@dataclass
class Tally:
    yes: int = 0
    no: int = 0
    abstain: int = 0

    @property
    def cast(self) -> int:
        return self.yes + self.no + self.abstain


@dataclass
class Proposal:
    id: int
    kind: ProposalKind
    proposer: AccountId
    opened_at: int
    closes_at: int
    weights: dict[AccountId, int]
    total_votes: int
    votes: dict[AccountId, Choice] = field(default_factory=dict)
    status: ProposalStatus = ProposalStatus.OPEN

    def tally_counts(self) -> Tally:
        t = Tally()
        for acct, choice in self.votes.items():
            w = self.weights.get(acct, 0)
            if choice is Choice.YES:
                t.yes += w
            elif choice is Choice.NO:
                t.no += w
            else:
                t.abstain += w
        return t


@dataclass
class DaoParameters:
    quorum_fraction: Fraction = Fraction(1, 5)
    pass_threshold: Fraction = Fraction(1, 2)
    dissolve_threshold: Fraction = Fraction(2, 3)
    voting_period: int = 144
    acquisition_criteria: str = "fixed-rate ANN, LTV <= 0.80"

    def __post_init__(self) -> None:
        for name in ("quorum_fraction", "pass_threshold", "dissolve_threshold"):
            v = to_fraction(getattr(self, name))
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
            setattr(self, name, v)
        if self.voting_period <= 0:
            raise ValueError("voting_period must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "quorum_fraction": str(self.quorum_fraction),
            "pass_threshold": str(self.pass_threshold),
            "dissolve_threshold": str(self.dissolve_threshold),
            "voting_period": self.voting_period,
            "acquisition_criteria": self.acquisition_criteria,
        }


def decide(tally: Tally, total_votes: int, quorum: Fraction, threshold: Fraction) -> bool:
    """Quorum on all cast votes (abstain included); threshold on yes share of yes+no."""
    if total_votes <= 0 or tally.cast < quorum * total_votes:
        return False
    return tally.yes > threshold * (tally.yes + tally.no)


@dataclass
class Treasury:
    account: AccountId
    seed: int = 0
    royalties: int = 0
    sale_proceeds: int = 0
    acquisitions: int = 0
    distributions: int = 0

    @property
    def expected_balance(self) -> int:
        return self.seed + self.royalties + self.sale_proceeds - self.acquisitions - self.distributions


class Dao:
    def __init__(self, ledger: Ledger, classes: Sequence[GovernanceClass],
                 parameters: Optional[DaoParameters] = None, name: str = "dao"):
        if not classes:
            raise ValueError("at least one governance class required")
        if not any(c.votes_per_token > 0 for c in classes):
            raise ValueError("at least one class needs positive voting weight")
        self.ledger = ledger
        self.name = name
        self.classes = list(classes)
        self.parameters = parameters or DaoParameters()
        self.treasury = Treasury(ledger.create_account(f"{name}-treasury"))
        self.proposals: dict[int, Proposal] = {}
        self.dissolved = False
        self.foreclosure_hook: Optional[Callable[[int], None]] = None
        self.authorized_foreclosures: set[int] = set()
        ledger.on_royalty(self.treasury.account, lambda amount, ev: self.credit_royalty(amount))

    # ---------------------------------------------------------------- setup
    @classmethod
    def init_dao(
        cls,
        ledger: Ledger,
        classes: Sequence[GovernanceClass],
        parameters: Optional[DaoParameters],
        seed_contributions: Mapping[AccountId, int],
        issue: int = 10_000,
        grants: Optional[Mapping[str, Mapping[AccountId, int]]] = None,
        name: str = "dao",
        royalty_rate: Any = 0,
    ) -> "Dao":
        """Collect seed money into the treasury and mint the first class pro-rata.

        ``grants`` mints fixed allocations of further classes (founder tiers);
        every class carries ``royalty_rate`` on secondary sales, paid to the
        treasury.
        """
        if not seed_contributions or any(v < 0 for v in seed_contributions.values()) \
                or sum(seed_contributions.values()) <= 0:
            raise EmptySeed("seed contributions must be positive")
        dao = cls(ledger, classes, parameters, name)
        for gc in classes:
            ledger.register_class(TokenClass(gc.class_id, TokenKind.FUNGIBLE, max_supply=gc.max_supply,
                                             royalty_rate=royalty_rate,
                                             royalty_recipient=dao.treasury.account,
                                             voting_weight=gc.votes_per_token))
        contributors = sorted(a for a, v in seed_contributions.items() if v > 0)
        for acct in contributors:
            ledger.pay(acct, dao.treasury.account, seed_contributions[acct], f"{name} seed")
            dao.treasury.seed += seed_contributions[acct]
        shares = largest_remainder(issue, [seed_contributions[a] for a in contributors])
        first = classes[0].class_id
        for acct, n in zip(contributors, shares):
            if n:
                ledger.mint(first, acct, n, memo=f"{name} seed tokens")
        for cid, alloc in (grants or {}).items():
            for acct in sorted(alloc):
                if alloc[acct]:
                    ledger.mint(cid, acct, alloc[acct], memo=f"{name} grant")
        return dao

    # -------------------------------------------------------------- weights
    def voting_power(self, account: AccountId) -> int:
        return sum(self.ledger.balance_of(account, c.class_id) * c.votes_per_token for c in self.classes)

    def weights_snapshot(self) -> dict[AccountId, int]:
        out: dict[AccountId, int] = {}
        for c in self.classes:
            if c.votes_per_token == 0:
                continue
            for acct, bal in self.ledger.holders(c.class_id).items():
                out[acct] = out.get(acct, 0) + bal * c.votes_per_token
        return {a: out[a] for a in sorted(out)}

    # ----------------------------------------------------------- lifecycle
    def proposal(self, pid: int) -> Proposal:
        try:
            return self.proposals[pid]
        except KeyError:
            raise UnknownProposal(str(pid)) from None

    def propose(self, kind: ProposalKind, proposer: AccountId) -> Proposal:
        if self.dissolved:
            raise DaoDissolved(self.name)
        if self.voting_power(proposer) < 1:
            raise NotTokenholder(f"{proposer} holds no voting tokens")
        weights = self.weights_snapshot()
        opened = self.ledger.clock.block_time()
        p = Proposal(
            id=len(self.proposals) + 1,
            kind=kind,
            proposer=proposer,
            opened_at=opened,
            closes_at=opened + self.parameters.voting_period * self.ledger.block_interval,
            weights=weights,
            total_votes=sum(weights.values()),
        )
        self.proposals[p.id] = p
        self.ledger.notice(f"{self.name} propose #{p.id} {describe(kind)}", proposer)
        return p

    def vote(self, proposal: Proposal | int, account: AccountId, choice: Choice | str,
             t: Optional[int] = None) -> None:
        """Record (or replace) ``account``'s vote; only the latest vote counts."""
        p = self.proposal(proposal) if isinstance(proposal, int) else proposal
        now = self.ledger.clock.block_time() if t is None else t
        if p.status is not ProposalStatus.OPEN or not p.opened_at <= now <= p.closes_at:
            raise VotingClosed(f"proposal #{p.id} is not accepting votes at {now}")
        if p.weights.get(account, 0) <= 0:
            raise NotTokenholder(f"{account} had no voting power when #{p.id} opened")
        p.votes[account] = Choice(choice)
        self.ledger.notice(f"{self.name} vote #{p.id} {Choice(choice).value}", account)

    def threshold_for(self, p: Proposal) -> Fraction:
        return self.parameters.dissolve_threshold if isinstance(p.kind, Dissolve) else self.parameters.pass_threshold

    def tally(self, proposal: Proposal | int, t: Optional[int] = None) -> ProposalStatus:
        p = self.proposal(proposal) if isinstance(proposal, int) else proposal
        now = self.ledger.clock.block_time() if t is None else t
        if p.status is not ProposalStatus.OPEN or now < p.closes_at:
            return p.status
        ok = decide(p.tally_counts(), p.total_votes, self.parameters.quorum_fraction, self.threshold_for(p))
        p.status = ProposalStatus.PASSED if ok else ProposalStatus.FAILED
        return p.status

    def is_executed(self, ref: str) -> bool:
        """True when ``ref`` (``"3"`` or ``"#3"``) names an executed proposal."""
        try:
            p = self.proposals.get(int(str(ref).lstrip("#")))
        except ValueError:
            return False
        return p is not None and p.status is ProposalStatus.EXECUTED

    def execute(self, proposal: Proposal | int) -> Any:
        p = self.proposal(proposal) if isinstance(proposal, int) else proposal
        if p.status is ProposalStatus.EXECUTED:
            raise AlreadyExecuted(f"#{p.id}")
        if p.status is not ProposalStatus.PASSED:
            raise NotPassed(f"#{p.id} is {p.status.value}")
        if self.dissolved:
            raise DaoDissolved(self.name)
        k = p.kind
        if isinstance(k, SetParameter):
            result = self._set_parameter(k.key, k.value)
        elif isinstance(k, AuthorizeForeclosure):
            self.authorized_foreclosures.add(k.mortgage_id)
            if self.foreclosure_hook is not None:
                self.foreclosure_hook(k.mortgage_id)
            result = k.mortgage_id
        elif isinstance(k, AcquireAsset):
            result = self._acquire(k)
        else:
            result = self._dissolve()
        p.status = ProposalStatus.EXECUTED
        self.ledger.notice(f"{self.name} execute #{p.id}", self.treasury.account)
        return result

    def _set_parameter(self, key: str, value: Any) -> Any:
        if key not in DaoParameters.__dataclass_fields__:
            raise KeyError(f"unknown parameter {key!r}")
        current = self.parameters.to_dict()
        current[key] = value
        self.parameters = DaoParameters(
            quorum_fraction=to_fraction(current["quorum_fraction"]),
            pass_threshold=to_fraction(current["pass_threshold"]),
            dissolve_threshold=to_fraction(current["dissolve_threshold"]),
            voting_period=int(current["voting_period"]),
            acquisition_criteria=str(current["acquisition_criteria"]),
        )
        return getattr(self.parameters, key)

    def _acquire(self, k: AcquireAsset) -> TokenRef:
        self.ledger.transfer(k.token, k.seller, self.treasury.account, price=k.price, amount=k.amount,
                             memo=f"{self.name} acquire")
        self.treasury.acquisitions += k.price
        return k.token

    def sell_asset(self, token: TokenRef, buyer: AccountId, price: int, amount: Optional[int] = None) -> None:
        """Treasury disposal; proceeds are booked net of the royalty withheld by the ledger."""
        if self.dissolved:
            raise DaoDissolved(self.name)
        ev = self.ledger.transfer(token, self.treasury.account, buyer, price=price, amount=amount,
                                  memo=f"{self.name} sell")
        self.treasury.sale_proceeds += price - ev.royalty

    def _dissolve(self) -> dict[AccountId, int]:
        """Distribute every stable unit pro-rata to current voting power."""
        weights = self.weights_snapshot()
        holders = [a for a in weights if weights[a] > 0 and a != self.treasury.account]
        total = self.ledger.balance_of(self.treasury.account)
        payout: dict[AccountId, int] = {}
        if total and holders:
            for acct, amt in zip(holders, largest_remainder(total, [weights[a] for a in holders])):
                if amt:
                    self.ledger.pay(self.treasury.account, acct, amt, f"{self.name} dissolve")
                    payout[acct] = amt
        self.treasury.distributions += sum(payout.values())
        self.dissolved = True
        return payout

    def credit_royalty(self, amount: int) -> Treasury:
        """Ledger callback for royalties already settled into the treasury account."""
        if amount < 0:
            raise ValueError("royalty must be non-negative")
        self.treasury.royalties += amount
        return self.treasury

    def treasury_balance(self) -> int:
        return self.ledger.balance_of(self.treasury.account)

    def treasury_consistent(self) -> bool:
        return self.treasury_balance() == self.treasury.expected_balance

    # ------------------------------------------------------------- export
    def proposals_jsonl(self) -> str:
        lines = []
        for p in self.proposals.values():
            c = p.tally_counts()
            lines.append(json.dumps({
                "id": p.id, "kind": describe(p.kind), "proposer": p.proposer,
                "opened_at": p.opened_at, "closes_at": p.closes_at, "status": p.status.value,
                "yes": c.yes, "no": c.no, "abstain": c.abstain, "total_votes": p.total_votes,
                "votes": {a: v.value for a, v in sorted(p.votes.items())},
            }, separators=(",", ":")))
        return "".join(line + "\n" for line in lines)

    def to_state(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "classes": [{"class_id": c.class_id, "votes_per_token": c.votes_per_token,
                         "max_supply": c.max_supply} for c in self.classes],
            "parameters": self.parameters.to_dict(),
            "treasury": vars(self.treasury).copy(),
            "dissolved": self.dissolved,
            "authorized_foreclosures": sorted(self.authorized_foreclosures),
            "proposals": [
                {"id": p.id, "kind": kind_to_dict(p.kind), "proposer": p.proposer,
                 "opened_at": p.opened_at, "closes_at": p.closes_at, "weights": p.weights,
                 "total_votes": p.total_votes, "votes": {a: v.value for a, v in p.votes.items()},
                 "status": p.status.value}
                for p in self.proposals.values()
            ],
        }

    @classmethod
    def from_state(cls, ledger: Ledger, state: Mapping[str, Any]) -> "Dao":
        classes = [GovernanceClass(**c) for c in state["classes"]]
        prm = state["parameters"]
        dao = cls.__new__(cls)
        dao.ledger = ledger
        dao.name = state["name"]
        dao.classes = classes
        dao.parameters = DaoParameters(
            quorum_fraction=to_fraction(prm["quorum_fraction"]),
            pass_threshold=to_fraction(prm["pass_threshold"]),
            dissolve_threshold=to_fraction(prm["dissolve_threshold"]),
            voting_period=int(prm["voting_period"]),
            acquisition_criteria=prm["acquisition_criteria"],
        )
        dao.treasury = Treasury(**state["treasury"])
        dao.dissolved = state["dissolved"]
        dao.foreclosure_hook = None
        dao.authorized_foreclosures = set(state.get("authorized_foreclosures", []))
        dao.proposals = {}
        for pd in state["proposals"]:
            dao.proposals[pd["id"]] = Proposal(
                id=pd["id"], kind=kind_from_dict(pd["kind"]), proposer=pd["proposer"],
                opened_at=pd["opened_at"], closes_at=pd["closes_at"], weights=dict(pd["weights"]),
                total_votes=pd["total_votes"],
                votes={a: Choice(v) for a, v in pd["votes"].items()},
                status=ProposalStatus(pd["status"]),
            )
        ledger.on_royalty(dao.treasury.account, lambda amount, ev: dao.credit_royalty(amount))
        return dao


def describe(kind: ProposalKind) -> str:
    if isinstance(kind, SetParameter):
        return f"set_parameter({kind.key}={kind.value})"
    if isinstance(kind, AuthorizeForeclosure):
        return f"authorize_foreclosure(m{kind.mortgage_id})"
    if isinstance(kind, AcquireAsset):
        return f"acquire_asset({kind.token} for {kind.price})"
    return "dissolve"


def kind_to_dict(kind: ProposalKind) -> dict[str, Any]:
    if isinstance(kind, SetParameter):
        return {"type": "set_parameter", "key": kind.key, "value": str(kind.value)}
    if isinstance(kind, AuthorizeForeclosure):
        return {"type": "authorize_foreclosure", "mortgage_id": kind.mortgage_id}
    if isinstance(kind, AcquireAsset):
        return {"type": "acquire_asset", "class": kind.token.class_id, "serial": kind.token.serial,
                "seller": kind.seller, "price": kind.price, "amount": kind.amount}
    return {"type": "dissolve"}


def kind_from_dict(d: Mapping[str, Any]) -> ProposalKind:
    t = d["type"]
    if t == "set_parameter":
        return SetParameter(d["key"], d["value"])
    if t == "authorize_foreclosure":
        return AuthorizeForeclosure(int(d["mortgage_id"]))
    if t == "acquire_asset":
        return AcquireAsset(TokenRef(d["class"], d.get("serial")), d["seller"], int(d["price"]), d.get("amount"))
    if t == "dissolve":
        return Dissolve()
    raise ValueError(f"unknown proposal type {t!r}")
