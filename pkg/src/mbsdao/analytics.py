"""Market analytics over event logs: wash-sale pairs and ISPO inflow series.

Wash detection looks for an NFT that moves x -> y and then y -> x within a
time window. Both legs' prices count as flagged volume. Each event joins at
most one pair, matched greedily to the earliest open leg. Times are block
times, which is what an explorer export shows.

ISPO series use :class:`~decimal.Decimal`: rewards and prices arrive as
decimal quotes, and the quote value per epoch is rounded half-up to cents.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

from .errors import LengthMismatch
from .ledger import AccountId, EventKind, TransferEvent
from .money import fmt

DEFAULT_WASH_WINDOW = 3600
EPOCH_DAYS = 5
CENT = Decimal("0.01")

_MOVES = (EventKind.TRANSFER.value, EventKind.SALE.value)


@dataclass(frozen=True)
class WashFlag:
    seq_a: int
    seq_b: int
    token: str
    x: AccountId
    y: AccountId
    window_seconds: int
    flagged_volume: int
    gap_seconds: int = 0


def priced_volume(events: Iterable[TransferEvent]) -> int:
    """Sum of sale prices, excluding moves between one owner's wallets."""
    return sum(e.price or 0 for e in events if e.kind in _MOVES and e.price)


def detect_wash_sales(
    events: Sequence[TransferEvent], window_seconds: int = DEFAULT_WASH_WINDOW
) -> tuple[list[WashFlag], int, int]:
    """Return ``(flags, flagged_volume, clean_volume)``; volumes are minor units.

    ``events`` must be in sequence order. Price equality is not required.
    """
    if window_seconds < 0:
        raise ValueError("window_seconds must be non-negative")
    # open legs per (token, from, to), oldest first
    open_legs: dict[tuple[str, Optional[int], AccountId, AccountId], list[TransferEvent]] = {}
    flags: list[WashFlag] = []
    last_seq = 0
    for e in events:
        if e.seq <= last_seq:
            raise ValueError(f"events out of order at seq {e.seq}")
        last_seq = e.seq
        if e.kind not in _MOVES or e.serial is None or e.from_ is None or e.to is None:
            continue
        if e.from_ == e.to:
            continue
        rev = open_legs.get((e.class_id, e.serial, e.to, e.from_))
        matched = None
        if rev:
            # drop legs that fell out of the window; they can never match later
            while rev and e.block_time - rev[0].block_time > window_seconds:
                rev.pop(0)
            if rev:
                matched = rev.pop(0)
        if matched is None:
            open_legs.setdefault((e.class_id, e.serial, e.from_, e.to), []).append(e)
            continue
        flags.append(WashFlag(
            seq_a=matched.seq,
            seq_b=e.seq,
            token=f"{e.class_id}#{e.serial}",
            x=matched.from_,  # type: ignore[arg-type]
            y=matched.to,  # type: ignore[arg-type]
            window_seconds=window_seconds,
            flagged_volume=(matched.price or 0) + (e.price or 0),
            gap_seconds=e.block_time - matched.block_time,
        ))
    flagged = sum(f.flagged_volume for f in flags)
    return flags, flagged, priced_volume(events) - flagged


def wash_flags_csv(flags: Sequence[WashFlag]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seq_a", "seq_b", "token", "x", "y", "gap_seconds", "window_seconds", "flagged_volume"])
    for f in flags:
        w.writerow([f.seq_a, f.seq_b, f.token, f.x, f.y, f.gap_seconds, f.window_seconds, fmt(f.flagged_volume)])
    return buf.getvalue()


# ------------------------------------------------------------------- ISPO
@dataclass(frozen=True)
class IspoEpoch:
    epoch: int
    rewards: Decimal
    retention_rate: Decimal
    inflow: Decimal
    price: Decimal
    inflow_quote: Decimal

    @property
    def start_day(self) -> int:
        return self.epoch * EPOCH_DAYS


@dataclass(frozen=True)
class IspoSeries:
    epochs: list[IspoEpoch]
    total_inflow: Decimal
    total_quote: Decimal

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "start_day", "rewards", "retention_rate", "inflow", "price", "inflow_quote"])
        for e in self.epochs:
            w.writerow([e.epoch, e.start_day, e.rewards, e.retention_rate, e.inflow, e.price, e.inflow_quote])
        w.writerow(["total", "", "", "", self.total_inflow, "", self.total_quote])
        return buf.getvalue()


def _dec(x: object) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


def ispo_inflows(epoch_rewards: Sequence[object], retention: object, prices: Sequence[object]) -> IspoSeries:
    """Per-epoch inflow = rewards * retention; quote = inflow * price, rounded to cents."""
    if len(epoch_rewards) != len(prices):
        raise LengthMismatch(f"{len(epoch_rewards)} reward epochs vs {len(prices)} prices")
    r = _dec(retention)
    if not Decimal(0) <= r <= Decimal(1):
        raise ValueError("retention must be in [0, 1]")
    epochs = []
    for k, (reward, price) in enumerate(zip(epoch_rewards, prices)):
        rw, px = _dec(reward), _dec(price)
        if rw < 0 or px < 0:
            raise ValueError(f"epoch {k}: rewards and price must be non-negative")
        inflow = rw * r
        epochs.append(IspoEpoch(k, rw, r, inflow, px, (inflow * px).quantize(CENT, ROUND_HALF_UP)))
    return IspoSeries(
        epochs,
        sum((e.inflow for e in epochs), Decimal(0)),
        sum((e.inflow_quote for e in epochs), Decimal(0)),
    )
