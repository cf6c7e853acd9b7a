"""The MUD exchange contract: request, offer, select, submit, rate.

Payment follows escrow-at-select, release-at-submit, refund-at-expiry.  Every
mutating call validates first, then commits exactly one ledger transaction,
then updates contract state, so a rejected call changes nothing.

Deadlines are inclusive: an action is allowed while ``chain.now <= deadline``.
"""

from __future__ import annotations

import enum
import hashlib
import re
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

from .errors import (
    AlreadySubmitted,
    ContractError,
    DuplicateOffer,
    DuplicateRating,
    InvalidArgument,
    JournalError,
    NoSubmission,
    NotConsumer,
    NotSelected,
    OfferNotSelectable,
    PastDeadline,
    RequestNotOpen,
    SelfDealing,
    UnknownRequest,
    WindowExpired,
)
from .ledger import ESCROW_ADDRESS, Address, Chain, TxReceipt, chain_from_genesis_record, dumps
from .offstore import StoreIndex

DAY = 86_400
RATING_WINDOW = 7 * DAY

Uid = str  # 64 hex characters


class RequestStatus(str, enum.Enum):
    OPEN = "Open"
    SELECTING = "Selecting"
    CLOSED = "Closed"
    EXPIRED = "Expired"


class OfferStatus(str, enum.Enum):
    PENDING = "Pending"
    SELECTED = "Selected"
    SUBMITTED = "Submitted"
    EXPIRED_UNSELECTED = "ExpiredUnselected"
    EXPIRED_UNSUBMITTED = "ExpiredUnsubmitted"


OFFER_EDGES = {
    OfferStatus.PENDING: {OfferStatus.SELECTED, OfferStatus.EXPIRED_UNSELECTED},
    OfferStatus.SELECTED: {OfferStatus.SUBMITTED, OfferStatus.EXPIRED_UNSUBMITTED},
}
REQUEST_EDGES = {
    RequestStatus.OPEN: {RequestStatus.SELECTING, RequestStatus.CLOSED, RequestStatus.EXPIRED},
    RequestStatus.SELECTING: {RequestStatus.CLOSED},
}

_CPE_RE = re.compile(r"^cpe:2\.3:[aho*\-](:(?:[^:\\]|\\.)*){10}$")


@dataclass(frozen=True)
class DeviceSpec:
    manufacturer: str = ""
    device_name: str = ""
    model: str = ""
    firmware: str = ""
    cpe: str | None = None

    def __post_init__(self):
        if not any([self.manufacturer, self.device_name, self.model, self.firmware, self.cpe]):
            raise InvalidArgument("device spec needs at least one non-empty field")
        if self.cpe is not None and not _CPE_RE.match(self.cpe):
            raise InvalidArgument(f"not a 13-component CPE 2.3 name: {self.cpe!r}")

    def key(self) -> str:
        return "|".join([self.manufacturer, self.device_name, self.model, self.firmware]).lower()

    def fields(self) -> list[str]:
        return [self.manufacturer, self.device_name, self.model, self.firmware, self.cpe or ""]


@dataclass
class RequestRecord:
    uid: Uid
    consumer: Address
    device: DeviceSpec
    budget: int
    deadline: int
    created_at: int
    block_number: int
    status: RequestStatus = RequestStatus.OPEN


@dataclass
class OfferRecord:
    request_uid: Uid
    supplier: Address
    ace_count: int
    file_size_kb: float
    flow_scope: str
    network_setting: str
    price: int
    deadline: int
    created_at: int
    block_number: int
    status: OfferStatus = OfferStatus.PENDING
    over_budget: bool = False
    submit_deadline: int | None = None

    @property
    def arrival(self) -> tuple[int, str]:
        return (self.block_number, self.supplier)


@dataclass(frozen=True)
class SubmissionRecord:
    request_uid: Uid
    supplier: Address
    store_index: StoreIndex
    submitted_at: int
    rating_deadline: int


@dataclass(frozen=True)
class RatingRecord:
    request_uid: Uid
    supplier: Address
    score: int | None  # None is the Default sentinel
    rated_at: int

    @property
    def is_default(self) -> bool:
        return self.score is None


@dataclass
class EscrowLedger:
    held: dict[tuple[Uid, Address], int] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.held.values())


@dataclass(frozen=True)
class Transition:
    kind: str  # request | offer | rating | refund
    request_uid: Uid
    supplier: Address | None
    old: str | None
    new: str | None
    amount: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def make_uid(timestamp: int, consumer: Address, nonce: int = 0) -> Uid:
    material = timestamp.to_bytes(8, "big") + bytes.fromhex(consumer)
    if nonce:
        material += bytes([nonce])
    return hashlib.sha256(material).hexdigest()


def encode_args(values: Iterable) -> bytes:
    """Canonical call-argument encoding: 4-byte big-endian length + UTF-8.

    Lists are written as a 4-byte element count followed by their elements.
    """
    out = bytearray()
    for value in values:
        if isinstance(value, (list, tuple)):
            out += len(value).to_bytes(4, "big")
            out += encode_args(value)
            continue
        if isinstance(value, bool) or value is None:
            raise TypeError(f"cannot encode {value!r}")
        raw = str(value).encode("utf-8")
        out += len(raw).to_bytes(4, "big") + raw
    return bytes(out)


def _check_wei(name: str, value: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise InvalidArgument(f"{name} must be a non-negative integer number of wei")
    return value


class Marketplace:
    """Exchange contract bound to one :class:`~mudmarket.ledger.Chain`."""

    def __init__(self, chain: Chain, rating_window: int = RATING_WINDOW):
        if rating_window <= 0:
            raise InvalidArgument("rating window must be positive")
        self.chain = chain
        self.rating_window = rating_window
        self.requests: dict[Uid, RequestRecord] = {}
        self.offers: dict[tuple[Uid, Address], OfferRecord] = {}
        self.submissions: dict[tuple[Uid, Address], SubmissionRecord] = {}
        self.ratings: dict[tuple[Uid, Address], RatingRecord] = {}
        self.escrow = EscrowLedger()
        self._lock = threading.RLock()

    @property
    def now(self) -> int:
        return self.chain.now

    def genesis_record(self) -> dict:
        return {**self.chain.genesis_record(), "rating_window": self.rating_window}

    def journal_lines(self) -> list[str]:
        return [dumps(self.genesis_record()), *self.chain.journal_lines()[1:]]

    # -- helpers --------------------------------------------------------

    def _request(self, uid: Uid) -> RequestRecord:
        try:
            return self.requests[uid]
        except KeyError:
            raise UnknownRequest(f"no request with uid {uid}") from None

    def _set_offer(self, offer: OfferRecord, status: OfferStatus):
        if status not in OFFER_EDGES.get(offer.status, ()):
            raise AssertionError(f"illegal offer transition {offer.status.value} -> {status.value}")
        offer.status = status

    def _set_request(self, req: RequestRecord, status: RequestStatus):
        if status not in REQUEST_EDGES.get(req.status, ()):
            raise AssertionError(f"illegal request transition {req.status.value} -> {status.value}")
        req.status = status

    def _offers_of(self, uid: Uid) -> list[OfferRecord]:
        return sorted((o for (u, _), o in self.offers.items() if u == uid), key=lambda o: o.arrival)

    def _maybe_close(self, req: RequestRecord) -> Transition | None:
        if req.status is not RequestStatus.SELECTING:
            return None
        live = [o for o in self._offers_of(req.uid) if o.status is OfferStatus.SELECTED]
        if live:
            return None
        self._set_request(req, RequestStatus.CLOSED)
        return Transition("request", req.uid, None, RequestStatus.SELECTING.value, RequestStatus.CLOSED.value)

    def _next_uid(self, consumer: Address) -> Uid:
        for nonce in range(256):
            uid = make_uid(self.now, consumer, nonce)
            if uid not in self.requests:
                return uid
        raise ContractError("too many requests from one consumer in one second", code="uid-exhausted")

    # -- the five functions --------------------------------------------

    def request(self, consumer: Address, device: DeviceSpec, budget: int, deadline: int) -> Uid:
        with self._lock:
            self.chain._account(consumer)
            _check_wei("budget", budget)
            if deadline <= self.now:
                raise PastDeadline(f"request deadline {deadline} is not after now ({self.now})")
            uid = self._next_uid(consumer)
            payload = encode_args([*device.fields(), budget, deadline])
            args = {"device": asdict(device), "budget": str(budget), "deadline": deadline, "uid": uid}
            receipt = self.chain.apply_tx(consumer, "request", len(payload), args=args)
            self.requests[uid] = RequestRecord(
                uid, consumer, device, budget, deadline, self.now, receipt.block_number
            )
            return uid

    def offer(
        self,
        supplier: Address,
        request_uid: Uid,
        ace_count: int,
        file_size_kb: float,
        flow_scope: str,
        network_setting: str,
        price: int,
        deadline: int,
    ) -> tuple[Uid, Address]:
        with self._lock:
            self.chain._account(supplier)
            req = self._request(request_uid)
            if req.status is not RequestStatus.OPEN:
                raise RequestNotOpen(f"request {request_uid} is {req.status.value}")
            if self.now > req.deadline:
                raise PastDeadline(f"request {request_uid} expired at {req.deadline}")
            if supplier == req.consumer:
                raise SelfDealing("a consumer cannot offer on its own request")
            if (request_uid, supplier) in self.offers:
                raise DuplicateOffer("each supplier may make a single offer per request")
            _check_wei("price", price)
            if not isinstance(ace_count, int) or ace_count < 0 or file_size_kb < 0:
                raise InvalidArgument("ace_count and file_size_kb must be non-negative")
            if deadline <= self.now:
                raise PastDeadline(f"offer deadline {deadline} is not after now ({self.now})")
            payload = encode_args(
                [request_uid, ace_count, repr(float(file_size_kb)), flow_scope, network_setting, price, deadline]
            )
            args = {
                "request_uid": request_uid,
                "ace_count": ace_count,
                "file_size_kb": float(file_size_kb),
                "flow_scope": flow_scope,
                "network_setting": network_setting,
                "price": str(price),
                "deadline": deadline,
            }
            receipt = self.chain.apply_tx(supplier, "offer", len(payload), args=args)
            self.offers[(request_uid, supplier)] = OfferRecord(
                request_uid,
                supplier,
                ace_count,
                float(file_size_kb),
                flow_scope,
                network_setting,
                price,
                deadline,
                self.now,
                receipt.block_number,
                over_budget=price > req.budget,
            )
            return (request_uid, supplier)

    def select(self, consumer: Address, request_uid: Uid, suppliers: Iterable[Address]) -> TxReceipt:
        """Approve zero or more offers and move their prices into escrow.

        One call per request.  An empty ``suppliers`` closes the request.
        """
        with self._lock:
            suppliers = list(suppliers)
            req = self._request(request_uid)
            if consumer != req.consumer:
                raise NotConsumer("only the requesting consumer may select")
            if req.status is not RequestStatus.OPEN:
                raise RequestNotOpen(f"request {request_uid} is {req.status.value}")
            if self.now > req.deadline:
                raise PastDeadline(f"request {request_uid} expired at {req.deadline}")
            if len(set(suppliers)) != len(suppliers):
                raise InvalidArgument("supplier named twice")
            chosen = []
            for s in suppliers:
                o = self.offers.get((request_uid, s))
                if o is None or o.status is not OfferStatus.PENDING:
                    raise OfferNotSelectable(f"no pending offer from {self.chain.label(s)}")
                if self.now > o.deadline:
                    raise OfferNotSelectable(f"offer from {self.chain.label(s)} expired at {o.deadline}")
                chosen.append(o)
            payload = encode_args([request_uid, suppliers])
            transfers = [(consumer, ESCROW_ADDRESS, o.price) for o in chosen]
            args = {"request_uid": request_uid, "suppliers": suppliers}
            receipt = self.chain.apply_tx(consumer, "select", len(payload), transfers, args=args)
            for o in chosen:
                self._set_offer(o, OfferStatus.SELECTED)
                # submission window: the offer's own deadline duration, restarted at selection
                o.submit_deadline = self.now + (o.deadline - o.created_at)
                self.escrow.held[(request_uid, o.supplier)] = o.price
            self._set_request(req, RequestStatus.SELECTING if chosen else RequestStatus.CLOSED)
            return receipt

    def submit(self, supplier: Address, request_uid: Uid, store_index: StoreIndex | str, deadline: int) -> TxReceipt:
        with self._lock:
            if isinstance(store_index, str):
                store_index = StoreIndex(store_index)
            req = self._request(request_uid)
            o = self.offers.get((request_uid, supplier))
            if o is None or o.status in (OfferStatus.PENDING, OfferStatus.EXPIRED_UNSELECTED):
                raise NotSelected(f"{self.chain.label(supplier)} was not selected for {request_uid}")
            if o.status is OfferStatus.SUBMITTED:
                raise AlreadySubmitted("this offer already has a submission")
            if o.status is OfferStatus.EXPIRED_UNSUBMITTED or self.now > o.submit_deadline:
                raise WindowExpired(f"submission window closed at {o.submit_deadline}")
            if deadline <= self.now:
                raise PastDeadline(f"rating deadline {deadline} is not after now ({self.now})")
            payload = encode_args([request_uid, store_index.digest, deadline])
            args = {"request_uid": request_uid, "store_index": store_index.digest, "deadline": deadline}
            price = self.escrow.held[(request_uid, supplier)]
            receipt = self.chain.apply_tx(
                supplier, "submit", len(payload), [(ESCROW_ADDRESS, supplier, price)], args=args
            )
            del self.escrow.held[(request_uid, supplier)]
            self._set_offer(o, OfferStatus.SUBMITTED)
            rating_deadline = min(deadline, self.now + self.rating_window)
            self.submissions[(request_uid, supplier)] = SubmissionRecord(
                request_uid, supplier, store_index, self.now, rating_deadline
            )
            self._maybe_close(req)
            return receipt

    def rate(self, consumer: Address, request_uid: Uid, supplier: Address, score: int) -> TxReceipt:
        with self._lock:
            req = self._request(request_uid)
            if consumer != req.consumer:
                raise NotConsumer("only the requesting consumer may rate")
            sub = self.submissions.get((request_uid, supplier))
            if sub is None:
                raise NoSubmission(f"no submission from {self.chain.label(supplier)} for {request_uid}")
            if (request_uid, supplier) in self.ratings:
                raise DuplicateRating("this submission is already rated")
            if self.now > sub.rating_deadline:
                raise WindowExpired(f"rating window closed at {sub.rating_deadline}")
            if not isinstance(score, int) or isinstance(score, bool) or not 0 <= score <= 100:
                raise InvalidArgument("score must be an integer between 0 and 100")
            payload = encode_args([request_uid, supplier, score])
            args = {"request_uid": request_uid, "supplier": supplier, "score": score}
            receipt = self.chain.apply_tx(consumer, "rate", len(payload), args=args)
            self.ratings[(request_uid, supplier)] = RatingRecord(request_uid, supplier, score, self.now)
            return receipt

    # -- deadline sweep -------------------------------------------------

    def expire(self) -> list[Transition]:
        """Apply every deadline that has passed.  Idempotent.

        Refunds are committed as one gas-free contract transaction; nothing is
        written when there is nothing to do.
        """
        with self._lock:
            now = self.now
            plan: list[Transition] = []
            refunds = []
            for req in self.requests.values():
                if req.status is RequestStatus.OPEN and now > req.deadline:
                    plan.append(Transition("request", req.uid, None, req.status.value, RequestStatus.EXPIRED.value))
            expiring = {t.request_uid for t in plan}
            for (uid, supplier), o in self.offers.items():
                req_open = self.requests[uid].status is RequestStatus.OPEN and uid not in expiring
                if o.status is OfferStatus.PENDING and (now > o.deadline or not req_open):
                    plan.append(Transition("offer", uid, supplier, o.status.value, OfferStatus.EXPIRED_UNSELECTED.value))
                elif o.status is OfferStatus.SELECTED and now > o.submit_deadline:
                    plan.append(
                        Transition("offer", uid, supplier, o.status.value, OfferStatus.EXPIRED_UNSUBMITTED.value)
                    )
                    amount = self.escrow.held[(uid, supplier)]
                    consumer = self.requests[uid].consumer
                    plan.append(Transition("refund", uid, supplier, None, None, amount))
                    refunds.append((ESCROW_ADDRESS, consumer, amount))
            for key, sub in self.submissions.items():
                if key not in self.ratings and now > sub.rating_deadline:
                    plan.append(Transition("rating", sub.request_uid, sub.supplier, None, "Default"))
            ending = {(t.request_uid, t.supplier) for t in plan if t.new == OfferStatus.EXPIRED_UNSUBMITTED.value}
            for uid in dict.fromkeys(u for u, _ in ending):
                live = [o for o in self._offers_of(uid)
                        if o.status is OfferStatus.SELECTED and (uid, o.supplier) not in ending]
                if self.requests[uid].status is RequestStatus.SELECTING and not live:
                    plan.append(Transition("request", uid, None, RequestStatus.SELECTING.value,
                                           RequestStatus.CLOSED.value))
            if not plan:
                return []

            self.chain.apply_system_tx("expire", refunds, args={"transitions": [t.to_dict() for t in plan]})
            for t in plan:
                if t.kind == "request":
                    self._set_request(self.requests[t.request_uid], RequestStatus(t.new))
                elif t.kind == "offer":
                    self._set_offer(self.offers[(t.request_uid, t.supplier)], OfferStatus(t.new))
                elif t.kind == "refund":
                    del self.escrow.held[(t.request_uid, t.supplier)]
                elif t.kind == "rating":
                    self.ratings[(t.request_uid, t.supplier)] = RatingRecord(t.request_uid, t.supplier, None, now)
            return plan

    def invariant_violations(self) -> list[str]:
        """Empty when conservation and escrow safety hold."""
        problems = []
        if self.chain.total_wei() != self.chain.initial_total:
            problems.append(f"wei not conserved: {self.chain.total_wei()} != {self.chain.initial_total}")
        if self.chain.escrow.balance != self.escrow.total():
            problems.append("escrow account balance differs from escrow ledger")
        selected = {k: o.price for k, o in self.offers.items() if o.status is OfferStatus.SELECTED}
        if selected != self.escrow.held:
            problems.append("escrow ledger does not match selected-but-unsubmitted offers")
        if any(a.balance < 0 for a in self.chain.accounts.values()):
            problems.append("negative balance")
        return problems

    # -- public views ---------------------------------------------------

    def open_requests(self) -> list[RequestRecord]:
        return [
            replace(r) for r in self.requests.values()
            if r.status is RequestStatus.OPEN and self.now <= r.deadline
        ]

    def offers_for(self, uid: Uid) -> list[OfferRecord]:
        return [replace(o) for o in self._offers_of(uid)]

    def calls_for(self, uid: Uid) -> list[TxReceipt]:
        out = []
        for r in self.chain.receipts():
            if r.args.get("uid") == uid or r.args.get("request_uid") == uid:
                out.append(r)
            elif r.function == "expire" and any(t["request_uid"] == uid for t in r.args["transitions"]):
                out.append(r)
        return out

    def history(self, uid: Uid) -> dict:
        req = self.requests.get(uid)
        if req is None:
            return {}
        return {
            "request": replace(req),
            "offers": self.offers_for(uid),
            "submissions": [s for (u, _), s in self.submissions.items() if u == uid],
            "ratings": [r for (u, _), r in self.ratings.items() if u == uid],
            "calls": self.calls_for(uid),
        }

    def supplier_history(self, supplier: Address) -> list[dict]:
        rows = []
        for (uid, s), o in sorted(self.offers.items(), key=lambda kv: kv[1].arrival):
            if s != supplier:
                continue
            rows.append({
                "offer": replace(o),
                "submission": self.submissions.get((uid, s)),
                "rating": self.ratings.get((uid, s)),
            })
        return rows

    def reputation(self, supplier: Address) -> float | None:
        scores = [r.score for (_, s), r in self.ratings.items() if s == supplier and not r.is_default]
        if not scores:
            return None
        return sum(scores) / len(scores)

    def view(self, query: str, arg: str | None = None):
        if query == "open_requests":
            return self.open_requests()
        if query == "offers_for":
            return self.offers_for(arg)
        if query == "history":
            return self.history(arg)
        if query == "supplier_history":
            return self.supplier_history(arg)
        if query == "reputation":
            return self.reputation(arg)
        raise InvalidArgument(f"unknown view {query!r}")

    # -- replay ---------------------------------------------------------

    def apply_receipt(self, recorded: TxReceipt) -> TxReceipt:
        """Re-execute a recorded call and check it reproduces the receipt."""
        a = recorded.args
        fn = recorded.function
        if fn == "request":
            self.request(recorded.sender, DeviceSpec(**a["device"]), int(a["budget"]), a["deadline"])
        elif fn == "offer":
            self.offer(recorded.sender, a["request_uid"], a["ace_count"], a["file_size_kb"], a["flow_scope"],
                       a["network_setting"], int(a["price"]), a["deadline"])
        elif fn == "select":
            self.select(recorded.sender, a["request_uid"], a["suppliers"])
        elif fn == "submit":
            self.submit(recorded.sender, a["request_uid"], a["store_index"], a["deadline"])
        elif fn == "rate":
            self.rate(recorded.sender, a["request_uid"], a["supplier"], a["score"])
        elif fn == "expire":
            self.expire()
        else:
            raise JournalError(f"unknown function {fn!r} in journal")
        produced = self.chain.blocks[-1].transactions[0]
        if produced.to_dict() != recorded.to_dict():
            raise JournalError(f"replay of block {recorded.block_number} ({fn}) diverged from the journal")
        return produced

    @classmethod
    def from_records(cls, records: Iterable[dict], rating_window: int = RATING_WINDOW) -> "Marketplace":
        """Rebuild chain and contract state from parsed journal records."""
        records = iter(records)
        try:
            head = next(records)
        except StopIteration:
            raise JournalError("empty journal") from None
        market = cls(chain_from_genesis_record(head), rating_window=head.get("rating_window", rating_window))
        for rec in records:
            kind = rec.get("kind")
            if kind == "clock":
                market.chain.now = int(rec["now"])
            elif kind == "block":
                if rec["number"] != len(market.chain.blocks):
                    raise JournalError(f"expected block {len(market.chain.blocks)}, found {rec['number']}")
                market.chain.now = int(rec["timestamp"])
                for tx in rec["transactions"]:
                    market.apply_receipt(TxReceipt.from_dict(tx))
            else:
                raise JournalError(f"unknown journal record kind {kind!r}")
        return market
