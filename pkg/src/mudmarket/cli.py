"""``mudmarket`` command line.

State lives in a line-delimited JSON chain journal.  Each invocation replays
the journal into a fresh :class:`~mudmarket.contract.Marketplace`, runs one
command, and appends whatever blocks the command produced.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import enum
import fcntl
import json
import sys
from decimal import Decimal
from pathlib import Path

from . import mudfile
from .contract import RATING_WINDOW, DeviceSpec, Marketplace
from .errors import JournalError, MarketError
from .ledger import ETHER, dumps, gas_preset, genesis
from .market import SCENARIOS, ScenarioReport, gas_report, run_all, run_scenario
from .offstore import BlobStore, StoreIndex


class UsageError(Exception):
    pass


DEFAULTS = {
    "journal": "mudmarket.journal.jsonl",
    "store": "mudstore",
    "preset": "paper",
    "gas_per_eth": 43_000_000,
    "usd_per_eth": "1633",
    "rating_window": RATING_WINDOW,
    "seed": 0,
}


@dataclasses.dataclass
class Config:
    journal: Path
    store: Path
    preset: str
    gas_per_eth: int
    usd_per_eth: Decimal
    rating_window: int
    seed: int

    def schedule(self):
        return gas_preset(self.preset, self.gas_per_eth, self.usd_per_eth)


def load_config(args) -> Config:
    values = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    for key in DEFAULTS:
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return Config(
        journal=Path(values["journal"]),
        store=Path(values["store"]),
        preset=values["preset"],
        gas_per_eth=int(values["gas_per_eth"]),
        usd_per_eth=Decimal(str(values["usd_per_eth"])),
        rating_window=int(values["rating_window"]),
        seed=int(values["seed"]),
    )


# -- output -----------------------------------------------------------------


def jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if isinstance(obj, StoreIndex):
            return obj.digest
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, Decimal):
        return str(obj)
    if isinstance(obj, int) and not isinstance(obj, bool) and abs(obj) >= 2**53:
        return str(obj)
    return obj


def emit(args, payload, text: str | None = None):
    if args.format == "json" or text is None:
        print(json.dumps(jsonable(payload), sort_keys=True, indent=None if args.format == "json" else 2))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


# -- journal handling -------------------------------------------------------


@contextlib.contextmanager
def locked(path: Path, exclusive: bool):
    lock_path = path.with_name(path.name + ".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def load_market(cfg: Config) -> Marketplace:
    if not cfg.journal.exists():
        raise JournalError(f"no journal at {cfg.journal}; run 'mudmarket init' first")
    with open(cfg.journal) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return Marketplace.from_records(records)


def append_lines(cfg: Config, lines: list[str]):
    if lines:
        with open(cfg.journal, "a") as fh:
            fh.writelines(line + "\n" for line in lines)


def mutate(cfg: Config, action):
    """Run ``action(market)`` under the journal lock and persist new blocks."""
    with locked(cfg.journal, exclusive=True):
        market = load_market(cfg)
        height, now = len(market.chain.blocks), market.chain.now
        result = action(market)
        new = [dumps(b.to_dict()) for b in market.chain.blocks[height:]]
        if not new and market.chain.now != now:
            new = [dumps({"kind": "clock", "now": market.chain.now})]
        append_lines(cfg, new)
        return market, result


def read_only(cfg: Config) -> Marketplace:
    with locked(cfg.journal, exclusive=False):
        return load_market(cfg)


def parse_deadline(market: Marketplace, text: str) -> int:
    return market.now + int(text[1:]) if text.startswith("+") else int(text)


def parse_wei(eth: str | None, wei: str | None) -> int:
    if wei is not None:
        return int(wei)
    return int(Decimal(eth) * ETHER)


# -- commands ---------------------------------------------------------------


def cmd_init(args, cfg):
    if cfg.journal.exists() and not args.force:
        raise JournalError(f"{cfg.journal} exists; pass --force to overwrite")
    chain = genesis(args.accounts, parse_wei(args.balance_eth, None), cfg.schedule())
    market = Marketplace(chain, cfg.rating_window)
    cfg.journal.parent.mkdir(parents=True, exist_ok=True)
    with locked(cfg.journal, exclusive=True):
        cfg.journal.write_text("".join(line + "\n" for line in market.journal_lines()))
    users = {chain.label(a): a for a in chain.users}
    emit(args, {"journal": str(cfg.journal), "accounts": users},
         "\n".join(f"{k:>4} {v}" for k, v in users.items()))


def cmd_advance(args, cfg):
    market, _ = mutate(cfg, lambda m: m.chain.advance_time(args.seconds))
    emit(args, {"now": market.now}, f"now {market.now}")


def _receipt_out(args, market, receipt, extra=None):
    payload = {**receipt.to_dict(), **(extra or {})}
    text = (f"{receipt.function} by {market.chain.label(receipt.sender)}: block {receipt.block_number}, "
            f"{receipt.payload_bytes} B, gas {receipt.gas_used:,}, fee {receipt.fee_wei} wei")
    if extra:
        text += "".join(f"\n{k}: {v}" for k, v in extra.items())
    emit(args, payload, text)


def cmd_request(args, cfg):
    device = DeviceSpec(args.manufacturer, args.device_name, args.model, args.firmware, args.cpe)

    def action(m):
        return m.request(m.chain.resolve(args.sender), device, parse_wei(args.budget_eth, args.budget_wei),
                         parse_deadline(m, args.deadline))

    market, uid = mutate(cfg, action)
    _receipt_out(args, market, market.chain.blocks[-1].transactions[0], {"uid": uid})


def cmd_offer(args, cfg):
    ace_count, size_kb, scope = args.ace_count, args.file_size_kb, args.flow_scope
    if args.from_mud:
        info = mudfile.stats(mudfile.parse(Path(args.from_mud).read_text()))
        ace_count = info.ace_count if ace_count is None else ace_count
        size_kb = info.size_kb if size_kb is None else size_kb
        scope = info.flow_scope if scope is None else scope
    if ace_count is None or size_kb is None or scope is None:
        raise UsageError("offer: give --ace-count, --file-size-kb and --flow-scope, or --from-mud FILE")

    def action(m):
        return m.offer(m.chain.resolve(args.sender), args.uid, ace_count, size_kb, scope,
                       args.network_setting, parse_wei(args.price_eth, args.price_wei),
                       parse_deadline(m, args.deadline))

    market, _ = mutate(cfg, action)
    _receipt_out(args, market, market.chain.blocks[-1].transactions[0])


def cmd_select(args, cfg):
    def action(m):
        return m.select(m.chain.resolve(args.sender), args.uid, [m.chain.resolve(s) for s in args.supplier])

    market, receipt = mutate(cfg, action)
    _receipt_out(args, market, receipt)


def cmd_submit(args, cfg):
    if (args.index is None) == (args.file is None):
        raise UsageError("submit: give exactly one of --index or --file")
    index = args.index
    if args.file:
        index = BlobStore(cfg.store).put(Path(args.file).read_bytes()).digest

    def action(m):
        return m.submit(m.chain.resolve(args.sender), args.uid, index, parse_deadline(m, args.deadline))

    market, receipt = mutate(cfg, action)
    _receipt_out(args, market, receipt, {"store_index": index})


def cmd_rate(args, cfg):
    def action(m):
        return m.rate(m.chain.resolve(args.sender), args.uid, m.chain.resolve(args.supplier), args.score)

    market, receipt = mutate(cfg, action)
    _receipt_out(args, market, receipt)


def cmd_expire(args, cfg):
    market, transitions = mutate(cfg, lambda m: m.expire())
    lines = [f"{t.kind} {t.request_uid[:12]} {market.chain.label(t.supplier) if t.supplier else '-'} "
             f"{t.old or '-'} -> {t.new or '-'}" + (f" {t.amount} wei" if t.amount else "")
             for t in transitions]
    emit(args, {"transitions": transitions}, "\n".join(lines) or "nothing due")


def cmd_view(args, cfg):
    market = read_only(cfg)
    chain = market.chain
    q = args.query
    if q == "open":
        result = market.view("open_requests")
        text = "\n".join(f"{r.uid} {chain.label(r.consumer)} {r.device.manufacturer} {r.device.device_name} "
                         f"budget {r.budget} deadline {r.deadline}" for r in result) or "no open requests"
    elif q == "offers":
        result = market.view("offers_for", args.arg)
        text = "\n".join(f"{chain.label(o.supplier):>4} {o.status.value:<18} price {o.price} "
                         f"aces {o.ace_count} size {o.file_size_kb:.2f} KB scope {o.flow_scope}"
                         for o in result) or "no offers"
    elif q == "history":
        result = market.view("history", args.arg)
        text = None
    elif q == "supplier":
        addr = chain.resolve(args.arg)
        result = {"history": market.view("supplier_history", addr), "reputation": market.reputation(addr)}
        text = None
    elif q == "reputation":
        result = market.view("reputation", chain.resolve(args.arg))
        text = "unrated" if result is None else f"{result:g}"
    else:  # balances
        result = {chain.label(a): acct.balance for a, acct in chain.accounts.items()}
        result.update({"fee-sink": chain.fee_sink.balance, "escrow": chain.escrow.balance, "now": chain.now})
        text = "\n".join(f"{k:>8} {v}" for k, v in result.items())
    emit(args, result, text)


def cmd_store(args, cfg):
    store = BlobStore(cfg.store)
    if args.store_cmd == "put":
        index = store.put(Path(args.file).read_bytes())
        emit(args, {"index": index.digest}, index.digest)
    elif args.store_cmd == "get":
        content = store.get(args.index)
        if args.output:
            Path(args.output).write_bytes(content)
        else:
            sys.stdout.buffer.write(content)
    else:
        ok = store.verify(args.index, Path(args.file).read_bytes())
        emit(args, {"valid": ok}, "valid" if ok else "MISMATCH")
        if not ok:
            return 1


def cmd_mud(args, cfg):
    profile = mudfile.parse(Path(args.file).read_text())
    if args.mud_cmd == "parse":
        summary = {
            "mud_url": profile.mud_url,
            "ace_count": profile.ace_count,
            "aces": [{"name": a.name, "direction": a.direction.value, "scope": a.scope.value,
                      "match": a.match_kind, "value": a.match_value, "protocol": a.protocol,
                      "src_port": a.src_port, "dst_port": a.dst_port} for a in profile.aces],
        }
        text = "\n".join(f"{a['name']:<32} {a['direction']:<11} {a['scope']:<6} {a['match']:<17} "
                         f"{a['value'] or ''}" for a in summary["aces"])
        emit(args, summary, text)
    elif args.mud_cmd == "variant":
        seed = cfg.seed if args.seed is None else args.seed
        out = mudfile.serialize(mudfile.derive_variant(profile, args.tier, seed))
        if args.output:
            Path(args.output).write_text(out)
        else:
            sys.stdout.write(out)
    else:
        info = mudfile.stats(profile)
        emit(args, info, f"aces {info.ace_count}  size {info.size_kb:.3f} KB  scope {info.flow_scope}")


def _write_reports(reports, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        (out / f"{rep.scenario}.transcript.jsonl").write_text(rep.transcript_text())
        (out / f"{rep.scenario}.report.json").write_text(
            json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n")


def _read_reports(directory: Path) -> list[ScenarioReport]:
    reports = []
    for sid in SCENARIOS:
        path = directory / f"{sid}.report.json"
        if not path.exists():
            continue
        transcript = (directory / f"{sid}.transcript.jsonl").read_text().splitlines()
        reports.append(ScenarioReport.from_dict(json.loads(path.read_text()), transcript))
    return reports


def _summary_line(rep: ScenarioReport) -> str:
    counts = "/".join("-" if c is None else str(c) for c in rep.counts)
    tiers = " ".join(f"{s}:{t}" for s, t in rep.tiers.items())
    return f"{rep.scenario}  offers {rep.offers if rep.offers is not None else '-'}  " \
           f"selected/submitted/rated {counts}  {tiers}  digest {rep.digest[:16]}"


def cmd_scenario(args, cfg):
    seed = cfg.seed if args.seed is None else args.seed
    if args.scenario_cmd == "run":
        reports = [run_scenario(args.id, seed, schedule=cfg.schedule())]
    else:
        reports = run_all(seed, schedule=cfg.schedule())
    if args.out:
        _write_reports(reports, Path(args.out))
    emit(args, [r.to_dict() for r in reports], "\n".join(_summary_line(r) for r in reports))


def cmd_gas_report(args, cfg):
    reports = _read_reports(Path(args.reports)) if args.reports else []
    if not reports:
        seed = cfg.seed if args.seed is None else args.seed
        reports = run_all(seed, schedule=cfg.schedule())
    report = gas_report(reports, cfg.schedule())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    emit(args, report.to_dict(), report.to_text())


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mudmarket", description="Marketplace for IoT MUD profiles on a simulated ledger.")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--journal", help="chain journal path")
    p.add_argument("--store", help="blob store root directory")
    p.add_argument("--preset", choices=["paper", "linear"], help="gas schedule preset")
    p.add_argument("--gas-per-eth", type=int, dest="gas_per_eth")
    p.add_argument("--usd-per-eth", dest="usd_per_eth")
    p.add_argument("--rating-window", type=int, dest="rating_window", help="seconds")
    p.add_argument("--format", choices=["text", "json"], default="text")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="create a fresh chain journal")
    s.add_argument("--accounts", type=int, default=10)
    s.add_argument("--balance-eth", default="100")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("advance", help="move the chain clock forward")
    s.add_argument("seconds", type=int)
    s.set_defaults(func=cmd_advance)

    def money(sp, name):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument(f"--{name}-eth", dest=f"{name}_eth")
        g.add_argument(f"--{name}-wei", dest=f"{name}_wei")

    s = sub.add_parser("request", help="publish a request for a device's MUD data")
    s.add_argument("--as", dest="sender", required=True)
    s.add_argument("--manufacturer", default="")
    s.add_argument("--device-name", default="")
    s.add_argument("--model", default="")
    s.add_argument("--firmware", default="")
    s.add_argument("--cpe")
    money(s, "budget")
    s.add_argument("--deadline", required=True, help="absolute time or +seconds")
    s.set_defaults(func=cmd_request)

    s = sub.add_parser("offer", help="offer MUD data for a request")
    s.add_argument("--as", dest="sender", required=True)
    s.add_argument("--uid", required=True)
    s.add_argument("--ace-count", type=int)
    s.add_argument("--file-size-kb", type=float)
    s.add_argument("--flow-scope")
    s.add_argument("--from-mud", help="fill metadata from a MUD file")
    s.add_argument("--network-setting", default="")
    money(s, "price")
    s.add_argument("--deadline", required=True)
    s.set_defaults(func=cmd_offer)

    s = sub.add_parser("select", help="approve offers (none given = select none)")
    s.add_argument("--as", dest="sender", required=True)
    s.add_argument("--uid", required=True)
    s.add_argument("--supplier", action="append", default=[])
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("submit", help="share the store index of the MUD data")
    s.add_argument("--as", dest="sender", required=True)
    s.add_argument("--uid", required=True)
    s.add_argument("--index")
    s.add_argument("--file", help="put this file into the store and submit its index")
    s.add_argument("--deadline", required=True, help="rating deadline")
    s.set_defaults(func=cmd_submit)

    s = sub.add_parser("rate", help="rate a supplier's submission (0-100)")
    s.add_argument("--as", dest="sender", required=True)
    s.add_argument("--uid", required=True)
    s.add_argument("--supplier", required=True)
    s.add_argument("--score", type=int, required=True)
    s.set_defaults(func=cmd_rate)

    s = sub.add_parser("expire", help="apply passed deadlines (refunds, default ratings)")
    s.set_defaults(func=cmd_expire)

    s = sub.add_parser("view", help="read public records")
    s.add_argument("query", choices=["open", "offers", "history", "supplier", "reputation", "balances"])
    s.add_argument("arg", nargs="?")
    s.set_defaults(func=cmd_view)

    s = sub.add_parser("store", help="content-addressed blob store")
    ss = s.add_subparsers(dest="store_cmd", required=True)
    x = ss.add_parser("put")
    x.add_argument("file")
    x = ss.add_parser("get")
    x.add_argument("index")
    x.add_argument("-o", "--output")
    x = ss.add_parser("verify")
    x.add_argument("index")
    x.add_argument("file")
    s.set_defaults(func=cmd_store)

    s = sub.add_parser("mud", help="MUD profile tools")
    ms = s.add_subparsers(dest="mud_cmd", required=True)
    x = ms.add_parser("parse")
    x.add_argument("file")
    x = ms.add_parser("variant")
    x.add_argument("file")
    x.add_argument("--tier", required=True, choices=[t.value for t in mudfile.QualityTier])
    x.add_argument("--seed", type=int)
    x.add_argument("-o", "--output")
    x = ms.add_parser("stats")
    x.add_argument("file")
    s.set_defaults(func=cmd_mud)

    s = sub.add_parser("scenario", help="run the scripted scenarios")
    sc = s.add_subparsers(dest="scenario_cmd", required=True)
    x = sc.add_parser("run")
    x.add_argument("id", choices=SCENARIOS, type=str.upper)
    x.add_argument("--seed", type=int)
    x.add_argument("--out", help="directory for transcript and report files")
    x = sc.add_parser("all")
    x.add_argument("--seed", type=int)
    x.add_argument("--out", help="directory for transcript and report files")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("gas-report", help="average gas/fee/USD per contract function")
    s.add_argument("--reports", help="directory written by 'scenario all --out'")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="also write the report as JSON here")
    s.set_defaults(func=cmd_gas_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "seed"):
        args.seed = None
    try:
        cfg = load_config(args)
        return args.func(args, cfg) or 0
    except UsageError as exc:
        parser.error(str(exc))
    except MarketError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__.lower()}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
