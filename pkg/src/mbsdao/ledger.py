"""Deterministic single-chain ledger.

Accounts, fungible and non-fungible token classes, priced transfers with
royalty enforcement, and an append-only event log stamped by a block clock.
Every mutation funnels through :meth:`Ledger._apply`, which is also what
:meth:`Ledger.from_state` uses to rebuild a ledger from its log.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import threading
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from types import MappingProxyType
from typing import Any, Callable, Iterable, Iterator, Mapping, NamedTuple, Optional

from .errors import (
    InsufficientFunds,
    NotOwner,
    SupplyExceeded,
    UnknownAccount,
    UnknownClass,
    UnknownToken,
)
from .money import mul_round, to_fraction

AccountId = str
STABLE = "STABLE"
DEFAULT_BLOCK_INTERVAL = 600

EVENT_FIELDS = (
    "seq",
    "block_time",
    "kind",
    "class",
    "serial",
    "amount",
    "from",
    "to",
    "price",
    "royalty",
    "occurred_at",
    "memo",
)


class TokenKind(str, Enum):
    FUNGIBLE = "fungible"
    NON_FUNGIBLE = "non_fungible"


class EventKind(str, Enum):
    MINT = "mint"
    BURN = "burn"
    TRANSFER = "transfer"
    SALE = "sale"
    INTRA_WALLET = "intra_wallet"
    NOTICE = "notice"


def account_label(n: int) -> AccountId:
    return f"0x{n:06x}"


@dataclass(frozen=True)
class TokenClass:
    class_id: str
    kind: TokenKind = TokenKind.FUNGIBLE
    max_supply: Optional[int] = None
    royalty_rate: Fraction = Fraction(0)
    royalty_recipient: Optional[AccountId] = None
    voting_weight: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TokenKind(self.kind))
        rate = to_fraction(self.royalty_rate)
        if not 0 <= rate <= 1:
            raise ValueError(f"royalty_rate {rate} outside [0, 1]")
        object.__setattr__(self, "royalty_rate", rate)
        if self.max_supply is not None and self.max_supply < 0:
            raise ValueError("max_supply must be non-negative")
        if self.voting_weight < 0:
            raise ValueError("voting_weight must be non-negative")

    @property
    def fungible(self) -> bool:
        return self.kind is TokenKind.FUNGIBLE

    def to_dict(self) -> dict[str, Any]:
        return {
            "class_id": self.class_id,
            "kind": self.kind.value,
            "max_supply": self.max_supply,
            "royalty_rate": str(self.royalty_rate),
            "royalty_recipient": self.royalty_recipient,
            "voting_weight": self.voting_weight,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TokenClass":
        return cls(
            class_id=d["class_id"],
            kind=TokenKind(d.get("kind", "fungible")),
            max_supply=d.get("max_supply"),
            royalty_rate=to_fraction(d.get("royalty_rate", 0)),
            royalty_recipient=d.get("royalty_recipient"),
            voting_weight=int(d.get("voting_weight", 0)),
        )


@dataclass(frozen=True, order=True)
class TokenRef:
    """A non-fungible unit (``serial`` set) or a whole fungible class (``serial`` None)."""

    class_id: str
    serial: Optional[int] = None

    def __str__(self) -> str:
        return self.class_id if self.serial is None else f"{self.class_id}#{self.serial}"


class TransferEvent(NamedTuple):
    seq: int
    block_time: int
    kind: str
    class_id: str
    serial: Optional[int]
    amount: int
    from_: Optional[AccountId]
    to: Optional[AccountId]
    price: Optional[int]
    royalty: int
    occurred_at: int
    memo: str

    @property
    def token(self) -> TokenRef:
        return TokenRef(self.class_id, self.serial)

    def to_dict(self) -> dict[str, Any]:
        return dict(zip(EVENT_FIELDS, self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TransferEvent":
        """Inverse of :meth:`to_dict`; external logs may omit the trailing fields."""
        serial = d.get("serial")
        amount = d.get("amount")
        return cls(
            seq=int(d["seq"]),
            block_time=int(d["block_time"]),
            kind=str(d["kind"]),
            class_id=str(d["class"]),
            serial=serial,
            amount=(1 if serial is not None else 0) if amount is None else int(amount),
            from_=d.get("from"),
            to=d.get("to"),
            price=d.get("price"),
            royalty=int(d.get("royalty") or 0),
            occurred_at=int(d.get("occurred_at", d["block_time"])),
            memo=d.get("memo") or "",
        )


@dataclass
class BlockClock:
    current_time: int = 0
    block_interval: int = DEFAULT_BLOCK_INTERVAL

    def __post_init__(self) -> None:
        if self.block_interval <= 0:
            raise ValueError("block_interval must be positive")

    def advance_to(self, t: int) -> None:
        if t < self.current_time:
            raise ValueError(f"clock cannot go backwards ({t} < {self.current_time})")
        self.current_time = t

    def block_time(self, t: Optional[int] = None) -> int:
        """First block boundary at or after ``t`` (default: now)."""
        t = self.current_time if t is None else t
        b = self.block_interval
        return -(-t // b) * b


@dataclass(frozen=True)
class LedgerSnapshot:
    seq: int
    block_time: int
    owners: Mapping[tuple[str, int], AccountId]
    balances: Mapping[str, Mapping[AccountId, int]]

    def balance_of(self, account: AccountId, class_id: str = STABLE) -> int:
        return self.balances.get(class_id, {}).get(account, 0)


# (ledger, token, sender, recipient, authorized_by) -> None, raising to refuse
TransferGuard = Callable[["Ledger", TokenRef, AccountId, AccountId, Optional[AccountId]], None]
RoyaltyListener = Callable[[int, TransferEvent], None]


class Ledger:
    """Single-writer simulated chain.

    Money is the built-in fungible class ``STABLE`` counted in minor units.
    All mutating calls take an internal lock, so one ledger may be shared
    across threads; :meth:`snapshot` hands out immutable read views.
    """

    def __init__(self, block_interval: int = DEFAULT_BLOCK_INTERVAL, genesis_time: int = 0):
        self.clock = BlockClock(genesis_time, block_interval)
        self._lock = threading.RLock()
        self._n_accounts = 0
        self._accounts: set[AccountId] = set()
        self._labels: dict[AccountId, str] = {}
        self._classes: dict[str, TokenClass] = {}
        self._balances: dict[str, dict[AccountId, int]] = {}
        self._supply: dict[str, int] = {}
        self._owners: dict[tuple[str, int], AccountId] = {}
        self._minted_to: dict[tuple[str, int], AccountId] = {}
        self._moved: set[tuple[str, int]] = set()
        self._issuers: dict[str, set[AccountId]] = {}
        self._next_serial: dict[str, int] = {}
        self._metadata: dict[tuple[str, int], Any] = {}
        self._events: list[TransferEvent] = []
        self._guards: dict[str, list[TransferGuard]] = {}
        self._royalty_listeners: dict[AccountId, list[RoyaltyListener]] = {}
        self._wallet_group: dict[AccountId, AccountId] = {}
        self.register_class(TokenClass(STABLE, TokenKind.FUNGIBLE))

    # ------------------------------------------------------------------ clock
    @property
    def now(self) -> int:
        return self.clock.current_time

    @property
    def block_interval(self) -> int:
        return self.clock.block_interval

    def advance_to(self, t: int) -> None:
        with self._lock:
            self.clock.advance_to(t)

    def advance(self, seconds: int) -> None:
        self.advance_to(self.now + seconds)

    # --------------------------------------------------------------- accounts
    def create_account(self, label: str = "") -> AccountId:
        with self._lock:
            self._n_accounts += 1
            acct = account_label(self._n_accounts)
            self._accounts.add(acct)
            if label:
                self._labels[acct] = label
            return acct

    def accounts(self) -> list[AccountId]:
        return sorted(self._accounts)

    def label(self, account: AccountId) -> str:
        return self._labels.get(account, "")

    def account_for(self, name: str) -> AccountId:
        """Resolve an account id or a label to an account id."""
        if name in self._accounts:
            return name
        for acct, label in self._labels.items():
            if label == name:
                return acct
        raise UnknownAccount(name)

    def link_accounts(self, a: AccountId, b: AccountId) -> None:
        """Flag two accounts as controlled by the same owner (intra-wallet moves)."""
        self._require_account(a)
        self._require_account(b)
        ga, gb = self._group(a), self._group(b)
        if ga != gb:
            root = min(ga, gb)
            for acct, g in list(self._wallet_group.items()):
                if g in (ga, gb):
                    self._wallet_group[acct] = root
            self._wallet_group[a] = self._wallet_group[b] = root

    def same_owner(self, a: Optional[AccountId], b: Optional[AccountId]) -> bool:
        if a is None or b is None:
            return False
        return a == b or self._group(a) == self._group(b)

    def _group(self, a: AccountId) -> AccountId:
        return self._wallet_group.get(a, a)

    def _require_account(self, acct: Optional[AccountId]) -> None:
        if acct not in self._accounts:
            raise UnknownAccount(str(acct))

    # ---------------------------------------------------------------- classes
    def register_class(self, cls: TokenClass) -> TokenClass:
        with self._lock:
            if cls.class_id in self._classes:
                raise ValueError(f"class {cls.class_id!r} already registered")
            if cls.royalty_recipient is not None:
                self._require_account(cls.royalty_recipient)
            self._classes[cls.class_id] = cls
            self._balances[cls.class_id] = {}
            self._supply[cls.class_id] = 0
            self._issuers[cls.class_id] = set()
            self._next_serial[cls.class_id] = 1
            return cls

    def token_class(self, class_id: str) -> TokenClass:
        try:
            return self._classes[class_id]
        except KeyError:
            raise UnknownClass(class_id) from None

    def classes(self) -> list[TokenClass]:
        return list(self._classes.values())

    def add_guard(self, class_id: str, guard: TransferGuard) -> None:
        self.token_class(class_id)
        self._guards.setdefault(class_id, []).append(guard)

    def on_royalty(self, recipient: AccountId, listener: RoyaltyListener) -> None:
        self._royalty_listeners.setdefault(recipient, []).append(listener)

    # ------------------------------------------------------------------ reads
    def owner_of(self, token: TokenRef) -> AccountId:
        try:
            return self._owners[(token.class_id, token.serial)]  # type: ignore[index]
        except KeyError:
            raise UnknownToken(str(token)) from None

    def exists(self, token: TokenRef) -> bool:
        return (token.class_id, token.serial) in self._owners

    def balance_of(self, account: AccountId, class_id: str = STABLE) -> int:
        try:
            return self._balances[class_id].get(account, 0)
        except KeyError:
            raise UnknownClass(class_id) from None

    def holders(self, class_id: str) -> dict[AccountId, int]:
        """Non-zero balances of a class, sorted by account id."""
        bal = self._balances.get(class_id)
        if bal is None:
            raise UnknownClass(class_id)
        return {a: bal[a] for a in sorted(bal) if bal[a]}

    def supply(self, class_id: str) -> int:
        self.token_class(class_id)
        return self._supply[class_id]

    def metadata(self, token: TokenRef) -> Any:
        key = (token.class_id, token.serial)
        if key not in self._owners:
            raise UnknownToken(str(token))
        return self._metadata.get(key)

    def minted_to(self, token: TokenRef) -> AccountId:
        try:
            return self._minted_to[(token.class_id, token.serial)]  # type: ignore[index]
        except KeyError:
            raise UnknownToken(str(token)) from None

    @property
    def seq(self) -> int:
        return len(self._events)

    def events(
        self,
        class_id: Optional[str] = None,
        kind: Optional[str] = None,
        account: Optional[AccountId] = None,
        since_seq: int = 0,
    ) -> list[TransferEvent]:
        out: Iterable[TransferEvent] = self._events[since_seq:]
        if class_id is not None:
            out = (e for e in out if e.class_id == class_id)
        if kind is not None:
            k = EventKind(kind).value
            out = (e for e in out if e.kind == k)
        if account is not None:
            out = (e for e in out if account in (e.from_, e.to))
        return list(out)

    def __iter__(self) -> Iterator[TransferEvent]:
        return iter(list(self._events))

    def volume(self, class_id: Optional[str] = None) -> int:
        """Priced volume of sales, excluding intra-wallet moves."""
        return sum(
            e.price
            for e in self._events
            if e.kind == EventKind.SALE.value
            and e.price
            and (class_id is None or e.class_id == class_id)
        )

    def snapshot(self) -> LedgerSnapshot:
        with self._lock:
            return LedgerSnapshot(
                seq=self.seq,
                block_time=self.clock.block_time(),
                owners=MappingProxyType(dict(self._owners)),
                balances=MappingProxyType(
                    {c: MappingProxyType(dict(b)) for c, b in self._balances.items()}
                ),
            )

    # -------------------------------------------------------------- mutations
    def mint(
        self,
        class_id: str,
        recipient: AccountId,
        amount: Optional[int] = None,
        metadata: Any = None,
        memo: str = "",
    ) -> TokenRef:
        with self._lock:
            cls = self.token_class(class_id)
            self._require_account(recipient)
            if cls.fungible:
                if amount is None or amount <= 0:
                    raise ValueError("fungible mint needs a positive amount")
                serial = None
            else:
                if metadata is None:
                    raise ValueError("non-fungible mint needs metadata")
                if amount not in (None, 1):
                    raise ValueError("non-fungible mint amount must be 1")
                amount = 1
                serial = self._next_serial[class_id]
            if cls.max_supply is not None and self._supply[class_id] + amount > cls.max_supply:
                raise SupplyExceeded(
                    f"{class_id}: {self._supply[class_id]} + {amount} > {cls.max_supply}"
                )
            if serial is not None:
                self._metadata[(class_id, serial)] = metadata
            self._emit(EventKind.MINT.value, class_id, serial, amount, None, recipient, None, 0, memo)
            return TokenRef(class_id, serial)

    def faucet(self, account: AccountId, amount: int, memo: str = "faucet") -> None:
        """Credit stable units from outside the simulated economy."""
        self.mint(STABLE, account, amount, memo=memo)

    def burn(self, token: TokenRef, holder: AccountId, amount: Optional[int] = None, memo: str = "") -> TransferEvent:
        with self._lock:
            cls = self.token_class(token.class_id)
            if cls.fungible:
                if amount is None or amount <= 0:
                    raise ValueError("fungible burn needs a positive amount")
                if self._balances[token.class_id].get(holder, 0) < amount:
                    raise InsufficientFunds(f"{holder} holds < {amount} {token.class_id}")
            else:
                if self.owner_of(token) != holder:
                    raise NotOwner(f"{holder} does not own {token}")
                amount = 1
            return self._emit(EventKind.BURN.value, token.class_id, token.serial, amount, holder, None, None, 0, memo)

    def transfer(
        self,
        token: TokenRef,
        from_: AccountId,
        to: AccountId,
        price: Optional[int] = None,
        amount: Optional[int] = None,
        authorized_by: Optional[AccountId] = None,
        memo: str = "",
    ) -> TransferEvent:
        """Move a token; a ``price`` makes it a sale settled in stable units.

        Secondary sales pay ``round_half_up(price * royalty_rate)`` to the
        class's royalty recipient; the seller receives the remainder.
        """
        with self._lock:
            cls = self.token_class(token.class_id)
            self._require_account(from_)
            self._require_account(to)
            if cls.fungible:
                if amount is None or amount <= 0:
                    raise ValueError("fungible transfer needs a positive amount")
                if self._balances[token.class_id].get(from_, 0) < amount:
                    raise (InsufficientFunds if token.class_id == STABLE else NotOwner)(
                        f"{from_} holds < {amount} {token.class_id}"
                    )
            else:
                if self.owner_of(token) != from_:
                    raise NotOwner(f"{from_} does not own {token}")
                amount = 1
            for guard in self._guards.get(token.class_id, ()):
                guard(self, token, from_, to, authorized_by)

            intra = self.same_owner(from_, to)
            royalty = 0
            if price is not None:
                if price < 0:
                    raise ValueError("price must be non-negative")
                if token.class_id == STABLE:
                    raise ValueError("stable units cannot be sold for stable units")
                if from_ != to and self._balances[STABLE].get(to, 0) < price:
                    raise InsufficientFunds(f"buyer {to} cannot cover {price}")
                if not intra and not self._is_primary(cls, token, from_):
                    royalty = mul_round(price, cls.royalty_rate) if cls.royalty_recipient else 0
            if intra:
                kind = EventKind.INTRA_WALLET.value
            elif price is not None:
                kind = EventKind.SALE.value
            else:
                kind = EventKind.TRANSFER.value
            ev = self._emit(kind, token.class_id, token.serial, amount, from_, to, price, royalty, memo)
            if royalty:
                for listener in self._royalty_listeners.get(cls.royalty_recipient, ()):  # type: ignore[arg-type]
                    listener(royalty, ev)
            return ev

    def pay(self, from_: AccountId, to: AccountId, amount: int, memo: str = "") -> TransferEvent:
        """Stable-unit payment; hot path for servicing cash."""
        with self._lock:
            if amount <= 0:
                raise ValueError("payment must be positive")
            bal = self._balances[STABLE]
            if bal.get(from_, 0) < amount:
                raise InsufficientFunds(f"{from_} holds < {amount}")
            if to not in self._accounts:
                raise UnknownAccount(to)
            g = self._wallet_group
            intra = from_ == to or g.get(from_, from_) == g.get(to, to)
            return self._emit("intra_wallet" if intra else "transfer", STABLE, None, amount, from_, to, None, 0, memo)

    def notice(self, memo: str, account: Optional[AccountId] = None, class_id: str = STABLE,
               serial: Optional[int] = None) -> TransferEvent:
        """Record a non-moving event (missed payment, lien, governance action)."""
        with self._lock:
            return self._emit(EventKind.NOTICE.value, class_id, serial, 0, account, account, None, 0, memo)

    def _is_primary(self, cls: TokenClass, token: TokenRef, seller: AccountId) -> bool:
        if cls.fungible:
            return seller in self._issuers[cls.class_id]
        key = (token.class_id, token.serial)
        return key not in self._moved and self._minted_to.get(key) == seller

    def _emit(self, kind: str, class_id: str, serial: Optional[int], amount: int,
              from_: Optional[AccountId], to: Optional[AccountId], price: Optional[int],
              royalty: int, memo: str) -> TransferEvent:
        t = self.clock.current_time
        b = self.clock.block_interval
        ev = TransferEvent(len(self._events) + 1, -(-t // b) * b, kind, class_id, serial, amount,
                           from_, to, price, royalty, t, memo)
        self._apply(ev)
        return ev

    def _apply(self, ev: TransferEvent) -> None:
        kind, c, s, amount = ev.kind, ev.class_id, ev.serial, ev.amount
        bal = self._balances[c]
        if kind == "notice":
            pass
        elif kind == "mint":
            if s is None:
                bal[ev.to] = bal.get(ev.to, 0) + amount  # type: ignore[index]
            else:
                self._owners[(c, s)] = ev.to  # type: ignore[assignment]
                self._minted_to[(c, s)] = ev.to  # type: ignore[assignment]
                bal[ev.to] = bal.get(ev.to, 0) + 1  # type: ignore[index]
                self._next_serial[c] = max(self._next_serial[c], s + 1)
            self._supply[c] += amount
            self._issuers[c].add(ev.to)  # type: ignore[arg-type]
        elif kind == "burn":
            bal[ev.from_] -= amount  # type: ignore[index]
            if s is not None:
                del self._owners[(c, s)]
            self._supply[c] -= amount
        else:
            bal[ev.from_] -= amount  # type: ignore[index]
            bal[ev.to] = bal.get(ev.to, 0) + amount  # type: ignore[index]
            if s is not None:
                self._owners[(c, s)] = ev.to  # type: ignore[assignment]
                self._moved.add((c, s))
            if ev.price and ev.from_ != ev.to:
                stable = self._balances[STABLE]
                stable[ev.to] -= ev.price  # type: ignore[index]
                stable[ev.from_] = stable.get(ev.from_, 0) + ev.price - ev.royalty  # type: ignore[index]
                if ev.royalty:
                    r = self._classes[c].royalty_recipient
                    stable[r] = stable.get(r, 0) + ev.royalty  # type: ignore[index]
        self._events.append(ev)

    # ---------------------------------------------------------- serialization
    def iter_jsonl(self) -> Iterator[str]:
        for e in self._events:
            yield e.to_json()

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.iter_jsonl())

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.iter_jsonl():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def balances_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["account", "class", "balance"])
        for c in sorted(self._balances):
            for acct, amt in sorted(self._balances[c].items()):
                if amt:
                    w.writerow([acct, c, amt])
        return buf.getvalue()

    def to_state(self) -> dict[str, Any]:
        return {
            "block_interval": self.clock.block_interval,
            "current_time": self.clock.current_time,
            "n_accounts": self._n_accounts,
            "labels": dict(sorted(self._labels.items())),
            "classes": [c.to_dict() for c in self._classes.values() if c.class_id != STABLE],
            "metadata": [[c, s, m] for (c, s), m in sorted(self._metadata.items())],
            "wallet_groups": dict(sorted(self._wallet_group.items())),
            "events": [e.to_dict() for e in self._events],
        }

    @classmethod
    def from_state(cls, state: Mapping[str, Any]) -> "Ledger":
        """Rebuild a ledger by replaying its serialized event log."""
        led = cls(block_interval=state["block_interval"])
        for _ in range(state["n_accounts"]):
            led.create_account()
        led._labels.update(state.get("labels", {}))
        led._wallet_group.update(state.get("wallet_groups", {}))
        for cd in state.get("classes", []):
            led.register_class(TokenClass.from_dict(cd))
        for c, s, m in state.get("metadata", []):
            led._metadata[(c, s)] = m
        for d in state.get("events", []):
            led._apply(TransferEvent.from_dict(d))
        led.clock.current_time = state["current_time"]
        return led


def events_csv(events: Iterable[TransferEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for e in events:
        w.writerow(["" if v is None else v for v in e])
    return buf.getvalue()


def read_events_jsonl(lines: Iterable[str]) -> list[TransferEvent]:
    return [TransferEvent.from_dict(json.loads(line)) for line in lines if line.strip()]
