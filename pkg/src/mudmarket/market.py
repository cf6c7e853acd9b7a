"""Agents, selection strategies and the scripted marketplace scenarios.

A scenario runs on a fresh 10-user chain.  U1-U6 act as consumers and U7-U10
as suppliers.  Every random choice (offer order, quality tier, prices, the
rule an LQ variant drops) comes from one seeded ``random.Random`` and is
written to the scenario transcript, so ``(scenario, seed)`` fixes the
transcript byte for byte.
"""

from __future__ import annotations

import hashlib
import random
import tempfile
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .contract import DAY, DeviceSpec, Marketplace, OfferRecord, OfferStatus, Uid
from .errors import ContractError, ScenarioError
from .ledger import CONTRACT_FUNCTIONS, ETHER, Address, GasSchedule, dumps, gas_preset, genesis
from .mudfile import MudProfile, QualityTier, derive_variant, identify_tier, load_fixture, parse, serialize, stats
from .offstore import BlobStore

N_USERS = 10
INITIAL_BALANCE = 100 * ETHER
CONSUMERS = tuple(f"U{i}" for i in range(1, 7))
SUPPLIERS = tuple(f"U{i}" for i in range(7, 11))

DEFAULT_BUDGET = 2 * ETHER
OVER_BUDGET_PRICE = 5 * ETHER // 2
REQUEST_WINDOW = 3600
OFFER_WINDOW = 1800
RATING_DEADLINE = DAY
STEP = 60

# scenario -> (consumer, suppliers, #selected, #submitted, #rated); None where the table has "---"
TABLE1 = {
    "BS01": ("U1", ("U7",), 1, 1, 1),
    "BS02": ("U2", ("U7",), 1, 1, 0),
    "BS03": ("U3", SUPPLIERS, 1, 1, 1),
    "BS04": ("U4", SUPPLIERS, 3, 3, 3),
    "ES01": ("U5", SUPPLIERS, 3, 0, 0),
    "ES02": ("U1", SUPPLIERS, 0, 0, 0),
    "ES03": ("U2", (), 0, 0, 0),
    "SS01": ("U3", SUPPLIERS, 3, 3, 3),
    "SS02": ("U4", SUPPLIERS, 3, 3, 3),
    "SS03": ("U5", SUPPLIERS, 3, 3, 3),
    "VS01": ("U6", (), None, None, None),
}
SCENARIOS = tuple(TABLE1)

# function -> (bytes on chain, gas, fee in ETH, cost in USD) as published
PAPER_TABLE2 = {
    "request": (709, 736_408, Decimal("0.017165673"), Decimal("28.02")),
    "offer": (262, 199_358, Decimal("0.004647035"), Decimal("7.58")),
    "select": (388, 173_681, Decimal("0.004048504"), Decimal("6.60")),
    "submit": (301, 218_216, Decimal("0.005086615"), Decimal("8.30")),
    "rate": (143, 140_474, Decimal("0.003274449"), Decimal("5.34")),
}

DEVICES = {
    "amazon_echo": DeviceSpec(
        "Amazon", "Echo", "Echo Dot (2nd Gen)", "2018-04-27",
        "cpe:2.3:o:amazon:echo_firmware:2018-04-27:*:*:*:*:*:*:*",
    ),
    "lifx_bulb": DeviceSpec("LIFX", "LIFX Lightbulb", "LIFX A19", "2.80"),
    "samsung_camera": DeviceSpec("Samsung", "SmartCam", "SNH-1011N", "1.06"),
}

RATING_POLICY = {QualityTier.HQ: 100, QualityTier.MQR: 40, QualityTier.MQO: 40, QualityTier.LQ: 10}


def rate_policy(tier: QualityTier | str) -> int:
    return RATING_POLICY[QualityTier(tier)]


# -- selection strategies ---------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    kind: str
    k: int = 1

    KINDS = ("first-arrival", "first-k", "largest-size", "lowest-price", "highest-reputation")
    BUDGETED = ("largest-size", "lowest-price")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.kind == "first-arrival" and self.k != 1:
            raise ValueError("first-arrival always selects one offer")

    @classmethod
    def first_arrival(cls):
        return cls("first-arrival", 1)

    @classmethod
    def first_k(cls, k):
        return cls("first-k", k)

    @classmethod
    def largest_size_within_budget(cls, k):
        return cls("largest-size", k)

    @classmethod
    def lowest_price_within_budget(cls, k):
        return cls("lowest-price", k)

    @classmethod
    def highest_reputation(cls, k):
        return cls("highest-reputation", k)


def select_offers(
    strategy: Strategy,
    offers: list[OfferRecord],
    budget: int,
    reputations: dict[Address, float | None] | None = None,
) -> list[Address]:
    """Suppliers to approve, best first.  Ties fall back to arrival order."""
    reputations = reputations or {}
    pool = list(offers)
    if strategy.kind in Strategy.BUDGETED:
        pool = [o for o in pool if o.price <= budget]
    if strategy.kind in ("first-arrival", "first-k"):
        key = lambda o: o.arrival
    elif strategy.kind == "largest-size":
        key = lambda o: (-o.file_size_kb, o.arrival)
    elif strategy.kind == "lowest-price":
        key = lambda o: (o.price, o.arrival)
    else:
        def key(o):
            rep = reputations.get(o.supplier)
            return (rep is None, -(rep or 0), o.arrival)
    return [o.supplier for o in sorted(pool, key=key)[: strategy.k]]


# -- agents -----------------------------------------------------------------


@dataclass
class SupplierAgent:
    address: Address
    inventory: dict[str, MudProfile]
    rng: random.Random
    price_cents: tuple[int, int] = (10, 100)  # hundredths of an ETH
    fixed_price: int | None = None

    def can_offer(self, device: DeviceSpec) -> bool:
        return device.key() in self.inventory

    def pick_tier(self) -> QualityTier:
        return self.rng.choice(list(QualityTier))

    def price(self) -> int:
        if self.fixed_price is not None:
            return self.fixed_price
        return self.rng.randint(*self.price_cents) * ETHER // 100

    def prepare(self, device: DeviceSpec, tier: QualityTier) -> tuple[MudProfile, int | None]:
        if not self.can_offer(device):
            raise ScenarioError(f"supplier has no MUD data for {device.key()}")
        lq_seed = self.rng.getrandbits(32) if tier is QualityTier.LQ else None
        return derive_variant(self.inventory[device.key()], tier, lq_seed), lq_seed


# -- reports ----------------------------------------------------------------


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    offers: int | None
    selected: int | None
    submitted: int | None
    rated: int | None
    calls: list[dict]
    balances: dict[str, int]
    transcript: list[str]
    tiers: dict[str, str] = field(default_factory=dict)
    ratings: dict[str, int] = field(default_factory=dict)

    @property
    def counts(self) -> tuple:
        return (self.selected, self.submitted, self.rated)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.transcript_text().encode()).hexdigest()

    def transcript_text(self) -> str:
        return "".join(line + "\n" for line in self.transcript)

    def conforms(self) -> bool:
        return self.counts == TABLE1[self.scenario][2:]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "offers": self.offers,
            "selected": self.selected,
            "submitted": self.submitted,
            "rated": self.rated,
            "tiers": self.tiers,
            "ratings": self.ratings,
            "calls": self.calls,
            "balances": {k: str(v) for k, v in self.balances.items()},
            "digest": self.digest,
        }

    @classmethod
    def from_dict(cls, d: dict, transcript: list[str] | None = None) -> "ScenarioReport":
        return cls(
            d["scenario"], d["seed"], d["offers"], d["selected"], d["submitted"], d["rated"],
            d["calls"], {k: int(v) for k, v in d["balances"].items()}, transcript or [],
            d.get("tiers", {}), d.get("ratings", {}),
        )


# -- the scripted world -----------------------------------------------------


class World:
    """One chain, one contract, one blob store and the ten users."""

    def __init__(self, seed: int, label: str, store_root: str | Path, schedule: GasSchedule | None = None):
        self.chain = genesis(N_USERS, INITIAL_BALANCE, schedule or gas_preset("paper"))
        self.market = Marketplace(self.chain)
        self.store = BlobStore(store_root)
        self.rng = random.Random(f"mudmarket:{label}:{seed}")
        self.catalog = {DEVICES[name].key(): load_fixture(name) for name in DEVICES}
        self.suppliers = {
            name: SupplierAgent(self.addr(name), dict(self.catalog), random.Random(self.rng.getrandbits(64)))
            for name in SUPPLIERS
        }
        self.transcript: list[str] = []
        self.pending: dict[tuple[Uid, Address], MudProfile] = {}
        self.tiers: dict[tuple[Uid, Address], QualityTier] = {}
        self.chain.advance_time(1_000)

    def addr(self, label: str) -> Address:
        return self.chain.user(int(label[1:]))

    def log(self, event: str, **fields):
        self.transcript.append(dumps({"event": event, "t": self.chain.now, **fields}))

    def log_tx(self, receipt):
        self.log("tx", by=self.chain.label(receipt.sender), **receipt.to_dict())

    def step(self, seconds: int = STEP):
        self.chain.advance_time(seconds)

    def _call(self, fn, *args):
        try:
            return fn(*args)
        except ContractError as exc:
            raise ScenarioError(f"contract rejected {fn.__name__}: [{exc.code}] {exc}") from exc

    # contract actions, each followed by a transcript line

    def request(self, consumer: str, device: str, budget: int = DEFAULT_BUDGET) -> Uid:
        self.step()
        uid = self._call(self.market.request, self.addr(consumer), DEVICES[device], budget,
                         self.chain.now + REQUEST_WINDOW)
        self.log_tx(self.chain.blocks[-1].transactions[0])
        return uid

    def offer(self, supplier: str, uid: Uid, tier: QualityTier | None = None, price: int | None = None):
        self.step()
        agent = self.suppliers[supplier]
        device = self.market.requests[uid].device
        tier = tier or agent.pick_tier()
        profile, lq_seed = agent.prepare(device, tier)
        info = stats(profile)
        price = agent.price() if price is None else price
        self.log("prepare", supplier=supplier, tier=tier.value, lq_seed=lq_seed, ace_count=info.ace_count)
        self._call(self.market.offer, agent.address, uid, info.ace_count, info.size_kb, info.flow_scope,
                   "lab-testbed", price, self.chain.now + OFFER_WINDOW)
        self.log_tx(self.chain.blocks[-1].transactions[0])
        self.pending[(uid, agent.address)] = profile
        self.tiers[(uid, agent.address)] = tier

    def select(self, consumer: str, uid: Uid, strategy: Strategy) -> list[Address]:
        self.step()
        req = self.market.requests[uid]
        offers = self.market.offers_for(uid)
        reps = {o.supplier: self.market.reputation(o.supplier) for o in offers}
        chosen = select_offers(strategy, offers, req.budget, reps)
        self.log("strategy", kind=strategy.kind, k=strategy.k,
                 chosen=[self.chain.label(a) for a in chosen])
        receipt = self._call(self.market.select, self.addr(consumer), uid, chosen)
        self.log_tx(receipt)
        return chosen

    def submit(self, supplier: Address, uid: Uid):
        self.step()
        index = self.store.put(serialize(self.pending[(uid, supplier)]).encode())
        self.log("store.put", supplier=self.chain.label(supplier), index=index.digest)
        receipt = self._call(self.market.submit, supplier, uid, index, self.chain.now + RATING_DEADLINE)
        self.log_tx(receipt)

    def retrieve_and_rate(self, consumer: str, uid: Uid, supplier: Address) -> int:
        """Fetch the shared file, grade it against the catalog, rate it."""
        self.step()
        sub = self.market.submissions[(uid, supplier)]
        profile = parse(self.store.get(sub.store_index))
        reference = self.catalog[self.market.requests[uid].device.key()]
        tier = identify_tier(profile, reference)
        if tier is None:
            raise ScenarioError("retrieved profile matches no known quality tier")
        score = rate_policy(tier)
        self.log("retrieve", supplier=self.chain.label(supplier), tier=tier.value, score=score)
        receipt = self._call(self.market.rate, self.addr(consumer), uid, supplier, score)
        self.log_tx(receipt)
        return score

    def sweep(self):
        transitions = self.market.expire()
        if transitions:
            self.log_tx(self.chain.blocks[-1].transactions[0])
        return transitions

    def offer_round(self, uid: Uid, suppliers=SUPPLIERS, tiers: dict | None = None, prices: dict | None = None):
        order = list(suppliers)
        self.rng.shuffle(order)
        self.log("arrival-order", suppliers=order)
        tiers, prices = tiers or {}, prices or {}
        for i, s in enumerate(order):
            self.offer(s, uid, tiers.get(i), prices.get(s))
        return order

    def deliver_all(self, consumer: str, uid: Uid, chosen, rate: bool = True):
        for s in chosen:
            self.submit(s, uid)
        if rate:
            for s in chosen:
                self.retrieve_and_rate(consumer, uid, s)


# -- scenario scripts -------------------------------------------------------


def _bs01(w: World) -> Uid:
    uid = w.request("U1", "amazon_echo")
    w.offer("U7", uid, QualityTier.HQ)
    chosen = w.select("U1", uid, Strategy.first_arrival())
    w.deliver_all("U1", uid, chosen)
    return uid


def _bs02(w: World) -> Uid:
    uid = w.request("U2", "lifx_bulb")
    w.offer("U7", uid, QualityTier.HQ)
    chosen = w.select("U2", uid, Strategy.first_arrival())
    w.deliver_all("U2", uid, chosen, rate=False)
    w.step(RATING_DEADLINE + 1)
    w.sweep()
    return uid


def _bs03(w: World) -> Uid:
    uid = w.request("U3", "samsung_camera")
    w.offer_round(uid)
    chosen = w.select("U3", uid, Strategy.first_arrival())
    w.deliver_all("U3", uid, chosen)
    return uid


def _bs04(w: World) -> Uid:
    uid = w.request("U4", "amazon_echo")
    # the three first arrivals deliver HQ, MQO and LQ in a seeded order
    graded = [QualityTier.HQ, QualityTier.MQO, QualityTier.LQ]
    w.rng.shuffle(graded)
    w.offer_round(uid, tiers=dict(enumerate(graded)))
    chosen = w.select("U4", uid, Strategy.first_k(3))
    w.deliver_all("U4", uid, chosen)
    return uid


def _es01(w: World) -> Uid:
    uid = w.request("U5", "lifx_bulb")
    w.offer_round(uid)
    w.select("U5", uid, Strategy.first_k(3))
    w.step(OFFER_WINDOW + 1)
    w.sweep()
    return uid


def _es02(w: World) -> Uid:
    uid = w.request("U1", "samsung_camera")
    w.offer_round(uid)
    w.step()
    receipt = w._call(w.market.select, w.addr("U1"), uid, [])
    w.log_tx(receipt)
    w.step(OFFER_WINDOW + 1)
    w.sweep()
    return uid


def _es03(w: World) -> Uid:
    uid = w.request("U2", "amazon_echo")
    w.step(REQUEST_WINDOW + 1)
    w.sweep()
    return uid


def _ss(strategy: Strategy, consumer: str, device: str):
    def script(w: World) -> Uid:
        uid = w.request(consumer, device)
        # U10 asks for more than the budget, so "within budget" leaves three
        w.offer_round(uid, prices={"U10": OVER_BUDGET_PRICE})
        chosen = w.select(consumer, uid, strategy)
        w.deliver_all(consumer, uid, chosen)
        return uid
    return script


_ss01 = _ss(Strategy.largest_size_within_budget(3), "U3", "lifx_bulb")
_ss02 = _ss(Strategy.lowest_price_within_budget(3), "U4", "samsung_camera")
_ss03_core = _ss(Strategy.highest_reputation(3), "U5", "amazon_echo")


def _ss03(w: World) -> Uid:
    if not w.market.ratings:
        w.log("warm-up", script="BS04")
        _bs04(w)
    return _ss03_core(w)


SCRIPTS = {
    "BS01": _bs01, "BS02": _bs02, "BS03": _bs03, "BS04": _bs04,
    "ES01": _es01, "ES02": _es02, "ES03": _es03,
    "SS01": _ss01, "SS02": _ss02, "SS03": _ss03,
}


def _vs01(w: World) -> None:
    uids = {sid: SCRIPTS[sid](w) for sid in SCRIPTS}
    w.step()
    viewer = "U6"
    w.log("view", by=viewer, query="open_requests",
          result=[r.uid for r in w.market.view("open_requests")])
    for sid, uid in uids.items():
        h = w.market.view("history", uid)
        w.log("view", by=viewer, query="history", scenario=sid, uid=uid,
              status=h["request"].status.value,
              offers={w.chain.label(o.supplier): o.status.value for o in h["offers"]},
              shared={w.chain.label(s.supplier): s.store_index.digest for s in h["submissions"]},
              calls=len(h["calls"]))
    for s in SUPPLIERS:
        addr = w.addr(s)
        w.log("view", by=viewer, query="supplier_history", supplier=s,
              offers=len(w.market.view("supplier_history", addr)),
              reputation=w.market.view("reputation", addr))


# -- runner -----------------------------------------------------------------


def _report(w: World, sid: str, seed: int, uid: Uid | None) -> ScenarioReport:
    violations = w.market.invariant_violations()
    if violations:
        raise ScenarioError(f"{sid}: contract invariants broken: {'; '.join(violations)}")
    balances = {w.chain.label(a): acct.balance for a, acct in w.chain.accounts.items()}
    w.log("balances", **{k: str(v) for k, v in balances.items()},
          fee_sink=str(w.chain.fee_sink.balance), escrow=str(w.chain.escrow.balance))
    calls = [
        {"function": r.function, "by": w.chain.label(r.sender), "payload_bytes": r.payload_bytes,
         "gas_used": r.gas_used, "fee_wei": r.fee_wei}
        for r in w.chain.receipts() if r.function in CONTRACT_FUNCTIONS
    ]
    if uid is None:
        return ScenarioReport(sid, seed, None, None, None, None, calls, balances, w.transcript)
    offers = w.market.offers_for(uid)
    selected = [o for o in offers if o.status in
                (OfferStatus.SELECTED, OfferStatus.SUBMITTED, OfferStatus.EXPIRED_UNSUBMITTED)]
    submitted = [o for o in offers if o.status is OfferStatus.SUBMITTED]
    rated = {w.chain.label(s): r.score for (u, s), r in w.market.ratings.items()
             if u == uid and not r.is_default}
    tiers = {w.chain.label(o.supplier): w.tiers[(uid, o.supplier)].value for o in selected}
    return ScenarioReport(sid, seed, len(offers), len(selected), len(submitted), len(rated),
                          calls, balances, w.transcript, tiers, rated)


def run_scenario(
    scenario: str,
    seed: int = 0,
    store_root: str | Path | None = None,
    schedule: GasSchedule | None = None,
) -> ScenarioReport:
    """Run one Table-1 scenario on a fresh chain and check its counts."""
    scenario = scenario.upper()
    if scenario not in TABLE1:
        raise ScenarioError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
    with tempfile.TemporaryDirectory(prefix="mudstore-") as tmp:
        w = World(seed, scenario, store_root or tmp, schedule)
        w.log("scenario", id=scenario, seed=seed, schedule=w.chain.schedule.name)
        if scenario == "VS01":
            _vs01(w)
            uid = None
        else:
            uid = SCRIPTS[scenario](w)
        w.log("summary", uid=uid)
        report = _report(w, scenario, seed, uid)
    if not report.conforms():
        raise ScenarioError(f"{scenario}: counts {report.counts} differ from table {TABLE1[scenario][2:]}")
    return report


def run_all(seed: int = 0, store_root: str | Path | None = None,
            schedule: GasSchedule | None = None) -> list[ScenarioReport]:
    return [run_scenario(sid, seed, store_root, schedule) for sid in SCENARIOS]


# -- gas report -------------------------------------------------------------


@dataclass(frozen=True)
class GasRow:
    function: str
    calls: int
    mean_bytes: Decimal
    mean_gas: Decimal
    fee_eth: Decimal
    cost_usd: Decimal


@dataclass
class GasReport:
    rows: list[GasRow]
    schedule: GasSchedule

    @property
    def total_gas(self) -> Decimal:
        return sum((r.mean_gas for r in self.rows), Decimal(0))

    @property
    def total_fee_eth(self) -> Decimal:
        return sum((r.fee_eth for r in self.rows), Decimal(0))

    @property
    def total_usd(self) -> Decimal:
        return sum((r.cost_usd for r in self.rows), Decimal(0))

    def row(self, function: str) -> GasRow:
        for r in self.rows:
            if r.function == function:
                return r
        raise KeyError(function)

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "rows": [
                {
                    "function": r.function,
                    "calls": r.calls,
                    "bytes": str(_q(r.mean_bytes, "0.1")),
                    "gas": str(_q(r.mean_gas, "1")),
                    "fee_eth": str(_q(r.fee_eth, "0.000000001")),
                    "cost_usd": str(_q(r.cost_usd, "0.01")),
                    "published": _published_row(r.function),
                }
                for r in self.rows
            ],
            "total": {
                "gas": str(_q(self.total_gas, "1")),
                "fee_eth": str(_q(self.total_fee_eth, "0.000000001")),
                "cost_usd": str(_q(self.total_usd, "0.01")),
            },
        }

    def to_text(self) -> str:
        head = ["function", "calls", "bytes", "published bytes", "gas", "fee (ETH)", "cost (USD)", "published USD"]
        body = []
        for r in self.rows:
            paper = PAPER_TABLE2.get(r.function)
            body.append([
                r.function, str(r.calls), str(_q(r.mean_bytes, "0.1")),
                str(paper[0]) if paper else "-", f"{_q(r.mean_gas, '1'):,}",
                str(_q(r.fee_eth, "0.000000001")), str(_q(r.cost_usd, "0.01")),
                str(paper[3]) if paper else "-",
            ])
        if self.rows:
            body.append(["full cycle", "", "", "", f"{_q(self.total_gas, '1'):,}",
                         str(_q(self.total_fee_eth, "0.000000001")), str(_q(self.total_usd, "0.01")),
                         str(sum(PAPER_TABLE2[r.function][3] for r in self.rows if r.function in PAPER_TABLE2))])
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
        fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
        return "\n".join(lines) + "\n"


def _q(value: Decimal, unit: str) -> Decimal:
    return value.quantize(Decimal(unit), rounding=ROUND_HALF_UP)


def _published_row(function: str) -> dict | None:
    if function not in PAPER_TABLE2:
        return None
    b, g, f, u = PAPER_TABLE2[function]
    return {"bytes": b, "gas": g, "fee_eth": str(f), "cost_usd": str(u)}


def gas_report(reports: list[ScenarioReport], schedule: GasSchedule | None = None) -> GasReport:
    """Per-function averages over every call recorded in ``reports``."""
    schedule = schedule or gas_preset("paper")
    rows = []
    for fn in CONTRACT_FUNCTIONS:
        calls = [c for rep in reports for c in rep.calls if c["function"] == fn]
        if not calls:
            continue
        n = Decimal(len(calls))
        mean_gas = sum(Decimal(c["gas_used"]) for c in calls) / n
        mean_bytes = sum(Decimal(c["payload_bytes"]) for c in calls) / n
        fee_eth = mean_gas / Decimal(schedule.gas_per_eth)
        rows.append(GasRow(fn, len(calls), mean_bytes, mean_gas, fee_eth, fee_eth * schedule.usd_per_eth))
    return GasReport(rows, schedule)


__all__ = [
    "DEVICES", "PAPER_TABLE2", "SCENARIOS", "TABLE1", "GasReport", "ScenarioReport", "Strategy",
    "SupplierAgent", "World", "gas_report", "rate_policy", "run_all", "run_scenario",
    "select_offers",
]
