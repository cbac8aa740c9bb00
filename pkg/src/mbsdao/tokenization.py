"""Property-title registry on top of the ledger.

Titles are NFTs of one ledger class whose metadata is a :class:`PropertyRecord`.
A ledger transfer guard enforces liens: while a lien is active the title can
only move with the lienholder's authorization. Off-ledger documents are kept
as a content hash only.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Mapping, Optional

from .errors import (
    AlreadyEncumbered,
    DuplicateParcel,
    Encumbered,
    IncompleteRedemption,
    NotLienholder,
    NotOwner,
    TransferRejected,
    UnknownToken,
    WeightsInvalid,
)
from .ledger import AccountId, Ledger, TokenClass, TokenKind, TokenRef
from .money import Rational

TERRAIN_KEYS = ("gravel", "rock", "vegetation")
ELEVATIONS = ("upper", "mid", "lower")
DEFAULT_DISCLAIMER = "Simulated title token. Conveys no recognized legal ownership of land."
SELF_CUSTODY = "self"


def content_hash(*documents: bytes) -> str:
    """SHA-256 over length-prefixed documents; stands in for an IPFS content id."""
    h = hashlib.sha256()
    for doc in documents:
        h.update(len(doc).to_bytes(8, "big"))
        h.update(doc)
    return "sha256:" + h.hexdigest()


@dataclass(frozen=True)
class PropertyRecord:
    parcel_id: str
    street_address: str = ""
    legal_description: str = ""
    land_area: Decimal = Decimal("0")
    region: str = ""
    elevation: str = "mid"
    slope: str = ""
    terrain_weights: Mapping[str, Decimal] = field(
        default_factory=lambda: {"gravel": Decimal(0), "rock": Decimal(0), "vegetation": Decimal(100)}
    )
    content_hash: str = ""
    disclaimer: str = DEFAULT_DISCLAIMER

    def __post_init__(self) -> None:
        object.__setattr__(self, "land_area", Decimal(str(self.land_area)))
        object.__setattr__(
            self, "terrain_weights", {k: Decimal(str(v)) for k, v in self.terrain_weights.items()}
        )

    def weights_valid(self) -> bool:
        w = self.terrain_weights
        return (
            set(w) == set(TERRAIN_KEYS)
            and all(v >= 0 for v in w.values())
            and sum(w.values()) == 100
        )

    def check(self) -> list[tuple[str, bool]]:
        """Named invariant checks, in a fixed order (used by the CLI validator)."""
        return [
            ("parcel_id present", bool(self.parcel_id)),
            ("terrain weights are gravel/rock/vegetation", set(self.terrain_weights) == set(TERRAIN_KEYS)),
            ("terrain weights non-negative", all(v >= 0 for v in self.terrain_weights.values())),
            ("terrain weights sum to 100", sum(self.terrain_weights.values()) == 100),
            ("elevation is upper/mid/lower", self.elevation in ELEVATIONS),
            ("land area non-negative", self.land_area >= 0),
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "parcel_id": self.parcel_id,
            "street_address": self.street_address,
            "legal_description": self.legal_description,
            "land_area": str(self.land_area),
            "region": self.region,
            "elevation": self.elevation,
            "slope": self.slope,
            "terrain_weights": {k: str(self.terrain_weights[k]) for k in sorted(self.terrain_weights)},
            "content_hash": self.content_hash,
            "disclaimer": self.disclaimer,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PropertyRecord":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PropertyRecord":
        return cls.from_dict(json.loads(text))


@dataclass
class LienRecord:
    creditor: AccountId
    recorded_at: int
    released_at: Optional[int] = None

    @property
    def active(self) -> bool:
        return self.released_at is None


@dataclass
class TitleToken:
    token: TokenRef
    property: PropertyRecord
    lien: Optional[LienRecord] = None
    custody: str = SELF_CUSTODY
    lien_history: list[LienRecord] = field(default_factory=list)

    @property
    def parcel_id(self) -> str:
        return self.property.parcel_id

    @property
    def encumbered(self) -> bool:
        return self.lien is not None and self.lien.active


@dataclass(frozen=True)
class StatementOfAuthority:
    property: str
    agent: AccountId
    authorizing_procedure: str
    issued_at: int


@dataclass(frozen=True)
class FractionalCustody:
    parcel_id: str
    share_class: str
    n_shares: int
    custodian: AccountId


class TitleRegistry:
    def __init__(
        self,
        ledger: Ledger,
        class_id: str = "TITLE",
        royalty_rate: Rational = 0,
        royalty_recipient: Optional[AccountId] = None,
    ):
        self.ledger = ledger
        self.class_id = class_id
        ledger.register_class(
            TokenClass(class_id, TokenKind.NON_FUNGIBLE, royalty_rate=royalty_rate,
                       royalty_recipient=royalty_recipient)
        )
        ledger.add_guard(class_id, self._lien_guard)
        self.custodian = ledger.create_account("fractional-custody")
        self._titles: dict[str, TitleToken] = {}
        self._by_serial: dict[int, str] = {}
        self._fractions: dict[str, FractionalCustody] = {}
        self.statements: list[StatementOfAuthority] = []

    # ---------------------------------------------------------------- queries
    def title(self, parcel_id: str) -> TitleToken:
        try:
            return self._titles[parcel_id]
        except KeyError:
            raise UnknownToken(parcel_id) from None

    def titles(self) -> list[TitleToken]:
        return list(self._titles.values())

    def owner(self, title: TitleToken) -> AccountId:
        return self.ledger.owner_of(title.token)

    def fraction(self, title: TitleToken) -> Optional[FractionalCustody]:
        return self._fractions.get(title.parcel_id)

    def _lien_guard(self, ledger: Ledger, token: TokenRef, from_: AccountId, to: AccountId,
                    authorized_by: Optional[AccountId]) -> None:
        parcel = self._by_serial.get(token.serial)  # type: ignore[arg-type]
        if parcel is None:
            return
        t = self._titles[parcel]
        if t.encumbered and authorized_by != t.lien.creditor:  # type: ignore[union-attr]
            raise TransferRejected(f"{parcel} is under lien to {t.lien.creditor}")  # type: ignore[union-attr]

    # -------------------------------------------------------------- mutations
    def mint_title(self, record: PropertyRecord, owner: AccountId) -> TitleToken:
        if not record.weights_valid():
            raise WeightsInvalid(f"{record.parcel_id}: terrain weights {dict(record.terrain_weights)}")
        if record.parcel_id in self._titles:
            raise DuplicateParcel(record.parcel_id)
        ref = self.ledger.mint(self.class_id, owner, metadata=record.to_dict(),
                               memo=f"title {record.parcel_id}")
        title = TitleToken(ref, record)
        self._titles[record.parcel_id] = title
        self._by_serial[ref.serial] = record.parcel_id  # type: ignore[index]
        return title

    def transfer_title(self, title: TitleToken, from_: AccountId, to: AccountId,
                       price: Optional[int] = None, authorized_by: Optional[AccountId] = None) -> None:
        self.ledger.transfer(title.token, from_, to, price=price, authorized_by=authorized_by,
                             memo=f"title {title.parcel_id}")
        title.custody = SELF_CUSTODY

    def place_in_custody(self, title: TitleToken, contract: AccountId,
                         authorized_by: Optional[AccountId] = None) -> None:
        """Move the title into a contract account (mortgage or fractional vault)."""
        owner = self.owner(title)
        self.ledger.transfer(title.token, owner, contract, authorized_by=authorized_by,
                             memo=f"custody {title.parcel_id}")
        title.custody = f"contract:{contract}"

    def return_to_self_custody(self, title: TitleToken, to: AccountId) -> None:
        holder = self.owner(title)
        lienholder = title.lien.creditor if title.encumbered else None  # type: ignore[union-attr]
        if holder != to:
            self.ledger.transfer(title.token, holder, to, authorized_by=lienholder,
                                 memo=f"release-custody {title.parcel_id}")
        title.custody = SELF_CUSTODY

    def encumber(self, title: TitleToken, creditor: AccountId) -> LienRecord:
        if title.encumbered:
            raise AlreadyEncumbered(title.parcel_id)
        self.ledger.notice(f"lien {title.parcel_id} creditor={creditor}", creditor,
                           self.class_id, title.token.serial)
        lien = LienRecord(creditor, self.ledger.clock.block_time())
        title.lien = lien
        title.lien_history.append(lien)
        return lien

    def release(self, title: TitleToken, caller: AccountId) -> TitleToken:
        if not title.encumbered:
            raise NotLienholder(f"{title.parcel_id} has no active lien")
        if caller != title.lien.creditor:  # type: ignore[union-attr]
            raise NotLienholder(f"{caller} is not lienholder of {title.parcel_id}")
        self.ledger.notice(f"lien-release {title.parcel_id}", caller, self.class_id, title.token.serial)
        # released strictly after recording even when both land in one block
        title.lien.released_at = max(self.ledger.clock.block_time(), title.lien.recorded_at + 1)  # type: ignore[union-attr]
        title.lien = None
        return title

    def fractionalize(self, title: TitleToken, caller: AccountId, n_shares: int,
                      holders: Mapping[AccountId, int]) -> str:
        """Vault the title and mint ``n_shares`` fungible shares per ``holders``."""
        if title.encumbered:
            raise Encumbered(title.parcel_id)
        if self.owner(title) != caller:
            raise NotOwner(f"{caller} does not own {title.parcel_id}")
        if n_shares <= 0 or sum(holders.values()) != n_shares or any(v < 0 for v in holders.values()):
            raise ValueError("share allocation must be non-negative and sum to n_shares")
        share_class = f"SHARE-{title.parcel_id}"
        self.ledger.register_class(TokenClass(share_class, TokenKind.FUNGIBLE, max_supply=n_shares))
        self.place_in_custody(title, self.custodian)
        for acct in sorted(holders):
            if holders[acct]:
                self.ledger.mint(share_class, acct, holders[acct], memo=f"fractionalize {title.parcel_id}")
        self._fractions[title.parcel_id] = FractionalCustody(title.parcel_id, share_class, n_shares, self.custodian)
        return share_class

    def redeem(self, title: TitleToken, redeemer: AccountId) -> TitleToken:
        """Burn 100% of the shares and hand the title to ``redeemer``."""
        frac = self._fractions.get(title.parcel_id)
        if frac is None:
            raise UnknownToken(f"{title.parcel_id} is not fractionalized")
        if self.ledger.balance_of(redeemer, frac.share_class) != frac.n_shares:
            raise IncompleteRedemption(f"{redeemer} must present all {frac.n_shares} shares")
        self.ledger.burn(TokenRef(frac.share_class), redeemer, frac.n_shares,
                         memo=f"redeem {title.parcel_id}")
        self.ledger.transfer(title.token, frac.custodian, redeemer, memo=f"redeem {title.parcel_id}")
        title.custody = SELF_CUSTODY
        del self._fractions[title.parcel_id]
        return title

    def issue_statement_of_authority(
        self,
        parcel_id: str,
        agent: AccountId,
        authorizing_procedure: str,
        verify: Optional[Callable[[str], bool]] = None,
    ) -> StatementOfAuthority:
        """Record who may act for the title holder off-chain.

        ``verify`` (e.g. a DAO's ``is_executed``) must accept the procedure
        reference when the statement is issued on behalf of a DAO.
        """
        self.title(parcel_id)
        if verify is not None and not verify(authorizing_procedure):
            raise ValueError(f"no executed governance action {authorizing_procedure!r}")
        st = StatementOfAuthority(parcel_id, agent, authorizing_procedure, self.ledger.clock.block_time())
        self.ledger.notice(f"statement-of-authority {parcel_id} agent={agent} by={authorizing_procedure}", agent)
        self.statements.append(st)
        return st
