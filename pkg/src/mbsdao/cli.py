"""Command-line front end.

Every subcommand is a thin wrapper over library calls; the same outputs can
be produced from Python. Files are written atomically into ``--out``; without
``--out`` the primary output goes to standard output.

Exit codes: 0 success, 1 invariant violation or refused operation, 2 usage
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from decimal import Decimal
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .actus import AnnuityTerms, ann_schedule, schedule_csv
from .analytics import DEFAULT_WASH_WINDOW, detect_wash_sales, ispo_inflows, wash_flags_csv
from .dao import (
    AuthorizeForeclosure,
    Choice,
    Dao,
    DaoParameters,
    Dissolve,
    GovernanceClass,
    SetParameter,
)
from .errors import ConfigInvalid, MbsDaoError, TermsInvalid
from .ledger import Ledger, events_csv, read_events_jsonl
from .money import fmt, to_minor
from .mortgage import DelinquencyPolicy, MortgageDesk
from .scenario import (
    ReportingMode,
    ScenarioConfig,
    build_book,
    lag_table,
    reporting_lag_report,
    run,
)
from .securitization import scheme_to_dict, tranche_report_csv
from .tokenization import PropertyRecord, TitleRegistry

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

DEFAULT_DAO = {
    "name": "dao",
    "classes": [
        {"class_id": "CITIZEN", "votes_per_token": 1, "max_supply": 10_000},
        {"class_id": "FOUNDING", "votes_per_token": 1, "max_supply": 50},
        {"class_id": "FIRST", "votes_per_token": 1, "max_supply": 1},
    ],
    "contributions": {"alice": "600.00", "bob": "300.00", "carol": "100.00"},
    "issue": 10_000,
    "grants": {},
    "royalty_rate": "0.10",
    "parameters": {},
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output
class Output:
    """Collects named files and writes each one atomically."""

    def __init__(self, out_dir: Optional[str]):
        self.dir = Path(out_dir) if out_dir else None
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str, primary: bool = False) -> None:
        if self.dir is None:
            if primary:
                sys.stdout.write(text)
            return
        atomic_write(self.dir / name, text)


def atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _config(args: argparse.Namespace) -> ScenarioConfig:
    d = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        d = dict(d, seed=args.seed)
    return ScenarioConfig.from_dict(d)


def _jsonl(rows: Sequence[dict[str, Any]]) -> str:
    return "".join(json.dumps(r, separators=(",", ":"), sort_keys=True) + "\n" for r in rows)


def _csv(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _table(rows: Sequence[dict[str, Any]], fmt_name: str) -> str:
    return _jsonl(rows) if fmt_name == "jsonl" else _csv(rows)


# ---------------------------------------------------------------- commands
def cmd_originate(args: argparse.Namespace, out: Output) -> int:
    try:
        terms = AnnuityTerms.from_dict(_read_json(args.terms))
    except TermsInvalid as exc:
        raise UsageError(f"invalid terms: {exc}") from exc
    record = PropertyRecord.from_dict(_read_json(args.property)) if args.property else \
        PropertyRecord(parcel_id="PARCEL-00001")
    ledger = Ledger()
    registry = TitleRegistry(ledger)
    desk = MortgageDesk(ledger, registry, DelinquencyPolicy())
    borrower = ledger.create_account("borrower")
    lender = ledger.create_account("lender")
    ledger.faucet(lender, terms.principal, memo="lender capital")
    title = registry.mint_title(record, borrower)
    m = desk.originate(borrower, lender, title, terms)
    events = ann_schedule(terms)
    if args.format == "jsonl":
        rows = [{"period": e.period_index, "due_time": e.due_time, "kind": e.kind.value,
                 "interest": fmt(e.interest_due), "principal": fmt(e.principal_due),
                 "payment": fmt(e.payment), "balance": fmt(e.balance_after)} for e in events]
        out.write("schedule.jsonl", _jsonl(rows), primary=True)
    else:
        out.write("schedule.csv", schedule_csv(events), primary=True)
    out.write("events.jsonl", ledger.to_jsonl())
    print(f"originated m{m.id}: principal {fmt(terms.principal)}, payment {fmt(m.ann_state.payment)}, "
          f"{terms.n_periods} periods", file=sys.stderr)
    return EXIT_OK


def cmd_pool(args: argparse.Namespace, out: Output) -> int:
    book = build_book(_config(args), issued=False)
    pool = book.pool
    assert pool is not None
    rows = [{"mortgage_id": m.id, "token": str(m.cashflow_token), "principal": fmt(m.terms.principal),
             "nominal_rate": str(m.terms.nominal_rate), "payment": fmt(m.ann_state.payment),
             "rate_kind": m.terms.rate_kind.value} for m in book.loans]
    summary = {"pool": pool.id, "account": pool.account, "members": len(pool.members),
               "principal": fmt(pool.principal),
               "weighted_coupon": f"{float(book.securitizer.weighted_coupon(pool)):.6f}"}
    out.write("pool.json", json.dumps(summary, indent=2) + "\n", primary=True)
    out.write(f"loans.{args.format}", _table(rows, args.format))
    return EXIT_OK


def cmd_issue(args: argparse.Namespace, out: Output) -> int:
    scheme = _read_json(args.scheme) if args.scheme else None
    book = build_book(_config(args), scheme=scheme)
    ledger, pool = book.ledger, book.pool
    assert pool is not None and book.scheme is not None
    rows = []
    for key in book.securitizer._class_supplies(pool, book.scheme):
        cls = f"{pool.id}-{key}"
        for acct, bal in ledger.holders(cls).items():
            rows.append({"class": cls, "holder": acct, "label": ledger.label(acct), "units": bal})
    out.write("scheme.json", json.dumps(scheme_to_dict(book.scheme), indent=2) + "\n", primary=True)
    out.write(f"holdings.{args.format}", _table(rows, args.format))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, out: Output) -> int:
    if args.seed is None:
        raise UsageError("simulate requires --seed")
    cfg = _config(args)
    if args.mode:
        cfg.reporting_mode = args.mode
    result = run(cfg)
    violations = result.violations()
    out.write("events.jsonl", result.ledger.to_jsonl())
    out.write("reports.jsonl", result.reports_jsonl())
    out.write("reports.csv", result.reports_csv())
    out.write("tranches.csv", tranche_report_csv(result.tranche_rows))
    stats = reporting_lag_report(result.reports, cfg.reporting_mode, lag_days=cfg.lag_days)
    out.write("lag.txt", lag_table([stats]))
    summary = {
        "seed": cfg.seed,
        "months": len(result.reports),
        "events": result.ledger.seq,
        "event_log_sha256": result.ledger.digest(),
        "cumulative_loss": fmt(result.pool.cumulative_loss),
        "violations": violations,
    }
    out.write("summary.json", json.dumps(summary, indent=2) + "\n", primary=True)
    for v in violations:
        print(f"invariant violated: {v}", file=sys.stderr)
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_lag_report(args: argparse.Namespace, out: Output) -> int:
    cfg = _config(args)
    stats = []
    for mode in ReportingMode:
        cfg.reporting_mode = mode.value
        result = run(cfg)
        stats.append(reporting_lag_report(result.reports, mode, lag_days=cfg.lag_days))
    table = lag_table(stats)
    out.write("lag.txt", table, primary=True)
    if out.dir is not None:
        sys.stdout.write(table)
    return EXIT_OK if all(s.within_bound for s in stats) else EXIT_VIOLATION


def cmd_wash_detect(args: argparse.Namespace, out: Output) -> int:
    if args.input:
        with open(args.input, encoding="utf-8") as fh:
            events = read_events_jsonl(fh)
    else:
        events = read_events_jsonl(sys.stdin)
    try:
        flags, flagged, clean = detect_wash_sales(events, args.window)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out.write("wash_flags.csv", wash_flags_csv(flags))
    print(f"pairs {len(flags)} flagged {fmt(flagged)} clean {fmt(clean)} total {fmt(flagged + clean)}")
    return EXIT_OK


def cmd_ispo(args: argparse.Namespace, out: Output) -> int:
    if args.input:
        with open(args.input, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            rewards = [Decimal(r["rewards"]) for r in rows]
            prices = [Decimal(r["price"]) for r in rows]
        except (KeyError, ArithmeticError) as exc:
            raise UsageError(f"ISPO input needs numeric 'rewards' and 'price' columns: {exc}") from exc
    else:
        if args.seed is None:
            raise UsageError("ispo needs --input or --seed for a synthetic series")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.seed)))
        rewards = [Decimal(f"{x:.6f}") for x in rng.uniform(1500, 2500, args.epochs)]
        prices = [Decimal(f"{x:.4f}") for x in rng.uniform(0.30, 0.60, args.epochs)]
    series = ispo_inflows(rewards, Decimal(args.retention), prices)
    out.write("ispo.csv", series.to_csv(), primary=True)
    print(f"epochs {len(series.epochs)} inflow {series.total_inflow} quote {series.total_quote}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args: argparse.Namespace, out: Output) -> int:
    if args.state:
        ledger = Ledger.from_state(_read_json(args.state)["ledger"])
        events = list(ledger)
        out.write("balances.csv", ledger.balances_csv())
    elif args.events:
        with open(args.events, encoding="utf-8") as fh:
            events = read_events_jsonl(fh)
    else:
        raise UsageError("export needs --state or --events")
    text = "".join(e.to_json() + "\n" for e in events) if args.format == "jsonl" else events_csv(events)
    out.write(f"events.{args.format}", text, primary=True)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, out: Output) -> int:
    checks: list[tuple[str, bool]] = []
    if args.property:
        checks += PropertyRecord.from_dict(_read_json(args.property)).check()
    if args.terms:
        try:
            AnnuityTerms.from_dict(_read_json(args.terms))
            checks.append(("terms valid", True))
        except TermsInvalid:
            checks.append(("terms valid", False))
    if args.config:
        try:
            ScenarioConfig.from_dict(dict(_read_json(args.config), seed=args.seed or 0))
            checks.append(("scenario config valid", True))
        except ConfigInvalid:
            checks.append(("scenario config valid", False))
    if not checks:
        raise UsageError("validate needs --property, --terms or --config")
    text = "".join(f"{'PASS' if ok else 'FAIL'}  {name}\n" for name, ok in checks)
    out.write("validate.txt", text, primary=True)
    if out.dir is not None:
        sys.stdout.write(text)
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_VIOLATION


# -------------------------------------------------------------------- dao
def _load_dao(path: str) -> tuple[Ledger, Dao, dict[str, Any]]:
    state = _read_json(path)
    ledger = Ledger.from_state(state["ledger"])
    return ledger, Dao.from_state(ledger, state["dao"]), state


def _save_dao(path: str, ledger: Ledger, dao: Dao) -> None:
    atomic_write(Path(path), json.dumps({"ledger": ledger.to_state(), "dao": dao.to_state()}, indent=1) + "\n")


def dao_init(config: dict[str, Any]) -> tuple[Ledger, Dao]:
    """Library form of ``dao init``: fund the named contributors and seed the DAO."""
    cfg = dict(DEFAULT_DAO, **config)
    ledger = Ledger()
    accounts = {name: ledger.create_account(name) for name in sorted(cfg["contributions"])}
    contributions = {}
    for name, amount in cfg["contributions"].items():
        minor = to_minor(amount)
        ledger.faucet(accounts[name], minor, memo="contributor funds")
        contributions[accounts[name]] = minor
    grants = {cid: {ledger.account_for(n): int(v) for n, v in alloc.items()}
              for cid, alloc in cfg["grants"].items()}
    prm = DaoParameters(**cfg["parameters"])
    classes = [GovernanceClass(**c) for c in cfg["classes"]]
    dao = Dao.init_dao(ledger, classes, prm, contributions, issue=int(cfg["issue"]), grants=grants,
                       name=cfg["name"], royalty_rate=cfg["royalty_rate"])
    return ledger, dao


def cmd_dao(args: argparse.Namespace, out: Output) -> int:
    if not args.state:
        raise UsageError("dao commands need --state <file>")
    if args.action == "init":
        ledger, dao = dao_init(_read_json(args.config) if args.config else {})
        _save_dao(args.state, ledger, dao)
        print(f"dao {dao.name}: treasury {fmt(dao.treasury_balance())}", file=sys.stderr)
        return EXIT_OK
    ledger, dao, _ = _load_dao(args.state)
    if args.action == "propose":
        if not args.as_:
            raise UsageError("propose needs --as <account>")
        if args.kind == "set_parameter":
            if args.key is None or args.value is None:
                raise UsageError("set_parameter needs --key and --value")
            kind: Any = SetParameter(args.key, args.value)
        elif args.kind == "authorize_foreclosure":
            if args.mortgage is None:
                raise UsageError("authorize_foreclosure needs --mortgage")
            kind = AuthorizeForeclosure(args.mortgage)
        else:
            kind = Dissolve()
        p = dao.propose(kind, ledger.account_for(args.as_))
        print(f"proposal #{p.id} open until {p.closes_at}")
    elif args.action == "vote":
        if args.proposal is None or not args.as_ or not args.choice:
            raise UsageError("vote needs --proposal, --as and --choice")
        dao.vote(args.proposal, ledger.account_for(args.as_), Choice(args.choice))
    elif args.action == "tally":
        if args.proposal is None:
            raise UsageError("tally needs --proposal")
        p = dao.proposal(args.proposal)
        if args.close and ledger.now < p.closes_at:
            ledger.advance_to(p.closes_at)
        status = dao.tally(p)
        c = p.tally_counts()
        print(f"proposal #{p.id}: {status.value} yes {c.yes} no {c.no} abstain {c.abstain} of {p.total_votes}")
    elif args.action == "execute":
        if args.proposal is None:
            raise UsageError("execute needs --proposal")
        result = dao.execute(args.proposal)
        if isinstance(result, dict):
            for acct, amt in sorted(result.items()):
                print(f"{acct} {ledger.label(acct)} {fmt(amt)}")
        if not dao.treasury_consistent():
            print("invariant violated: treasury balance does not match its ledger", file=sys.stderr)
            return EXIT_VIOLATION
    _save_dao(args.state, ledger, dao)
    out.write("proposals.jsonl", dao.proposals_jsonl())
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (required by simulate)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory (files are written atomically)")
    common.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="tabular output format")

    parser = argparse.ArgumentParser(prog="mbsdao", description="Tokenized mortgage pipeline simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("originate", parents=[common], help="originate one loan and print its schedule")
    p.add_argument("--terms", required=True, help="annuity terms JSON")
    p.add_argument("--property", help="property record JSON")
    p.set_defaults(func=cmd_originate)

    p = sub.add_parser("pool", parents=[common], help="originate a book and pool its cash-flow NFTs")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("issue", parents=[common], help="pool a book and issue securities")
    p.add_argument("--scheme", help="scheme JSON (passthrough, waterfall or io_po)")
    p.set_defaults(func=cmd_issue)

    p = sub.add_parser("dao", parents=[common], help="DAO governance on a JSON state file")
    p.add_argument("action", choices=("init", "propose", "vote", "tally", "execute"))
    p.add_argument("--state", help="DAO state file (created by init)")
    p.add_argument("--as", dest="as_", help="acting account id or label")
    p.add_argument("--kind", choices=("set_parameter", "authorize_foreclosure", "dissolve"), default="dissolve")
    p.add_argument("--key")
    p.add_argument("--value")
    p.add_argument("--mortgage", type=int)
    p.add_argument("--proposal", type=int)
    p.add_argument("--choice", choices=[c.value for c in Choice])
    p.add_argument("--close", action="store_true", help="advance the clock to the end of voting first")
    p.set_defaults(func=cmd_dao)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario")
    p.add_argument("--mode", choices=[m.value for m in ReportingMode], help="override reporting_mode")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lag-report", parents=[common], help="compare on-chain and traditional reporting lag")
    p.set_defaults(func=cmd_lag_report)

    p = sub.add_parser("wash-detect", parents=[common], help="flag reversal pairs in a JSONL event log")
    p.add_argument("--window", type=int, default=DEFAULT_WASH_WINDOW, help="seconds (default 3600)")
    p.add_argument("--input", help="event log (default: standard input)")
    p.set_defaults(func=cmd_wash_detect)

    p = sub.add_parser("ispo", parents=[common], help="ISPO inflow series as CSV")
    p.add_argument("--input", help="CSV with rewards,price columns")
    p.add_argument("--retention", default="0.99")
    p.add_argument("--epochs", type=int, default=150)
    p.set_defaults(func=cmd_ispo)

    p = sub.add_parser("export", parents=[common], help="export an event log as CSV or JSONL")
    p.add_argument("--state", help="DAO state file")
    p.add_argument("--events", help="JSONL event log")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", parents=[common], help="check property, terms or config files")
    p.add_argument("--property")
    p.add_argument("--terms")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, Output(args.out))
    except (UsageError, ConfigInvalid) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MbsDaoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
